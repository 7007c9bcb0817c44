//! Snapshot files: `ODIMSNAP`, a little-endian `u32` header length, a JSON
//! header, then every parameter as a little-endian `f64`.

use std::io::{Read, Write};
use std::path::Path;

use odim_core::genmodel::{LOGVAR_MAX, LOGVAR_MIN};
use odim_core::trainer::Snapshot;
use odim_core::{Architecture, Gmm2Fit, MlpParams};
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 8] = b"ODIMSNAP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a snapshot file")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    Version(u32),
    #[error("bad snapshot header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("snapshot parameters: {0}")]
    Params(#[from] odim_core::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    member: usize,
    seed: u64,
    wd: f64,
    update_count: usize,
    gmm: Gmm2Fit,
    arch: Architecture,
    num_params: usize,
    logvar_clamp: [f64; 2],
}

/// Writes `snap`; `seed` is the member's derived seed, kept for reference.
pub fn write_snapshot<W: Write>(mut out: W, snap: &Snapshot, seed: u64) -> Result<(), SnapshotError> {
    let header = Header {
        version: FORMAT_VERSION,
        member: snap.member,
        seed,
        wd: snap.wd,
        update_count: snap.update_count,
        gmm: snap.gmm,
        arch: *snap.params.arch(),
        num_params: snap.params.len(),
        logvar_clamp: [LOGVAR_MIN, LOGVAR_MAX],
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(MAGIC)?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    let mut blob = Vec::with_capacity(8 * snap.params.len());
    for v in snap.params.values() {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&blob)?;
    out.flush()?;
    Ok(())
}

/// Reads a snapshot and the seed recorded with it.
pub fn read_snapshot<R: Read>(mut input: R) -> Result<(Snapshot, u64), SnapshotError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    let mut len = [0u8; 4];
    input.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    input.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    if header.version != FORMAT_VERSION {
        return Err(SnapshotError::Version(header.version));
    }
    let mut blob = vec![0u8; 8 * header.num_params];
    input.read_exact(&mut blob)?;
    let values = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let params = MlpParams::from_values(header.arch, values)?;
    let snap = Snapshot {
        member: header.member,
        params,
        wd: header.wd,
        update_count: header.update_count,
        gmm: header.gmm,
    };
    Ok((snap, header.seed))
}

pub fn save(path: &Path, snap: &Snapshot, seed: u64) -> Result<(), SnapshotError> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_snapshot(f, snap, seed)
}

pub fn load(path: &Path) -> Result<(Snapshot, u64), SnapshotError> {
    read_snapshot(std::io::BufReader::new(std::fs::File::open(path)?))
}
