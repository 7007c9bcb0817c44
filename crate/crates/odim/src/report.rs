//! Output files: `scores.csv`, `metrics.json`, `trajectory.jsonl` and
//! per-member snapshots.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use odim_core::TrainConfig;
use serde_json::{json, Map, Value};

use crate::cli::CliError;
use crate::ensemble::EnsembleRun;
use crate::snapshot;

/// `index,score[,label]`, scores with 17 significant digits.
pub fn scores_csv(scores: &[f64], labels: Option<&[u8]>) -> String {
    let mut s = String::with_capacity(32 * scores.len());
    s.push_str(if labels.is_some() { "index,score,label\n" } else { "index,score\n" });
    for (i, v) in scores.iter().enumerate() {
        let _ = write!(s, "{i},{v:.16e}");
        if let Some(l) = labels {
            let _ = write!(s, ",{}", l[i]);
        }
        s.push('\n');
    }
    s
}

/// The resolved configuration as one flat JSON object; nested groups get
/// their name as a key prefix and absent options are `null`.
pub fn flatten_config(cfg: &TrainConfig) -> Result<Map<String, Value>, CliError> {
    let v = serde_json::to_value(cfg).map_err(|e| CliError::Runtime(e.into()))?;
    let mut out = Map::new();
    flatten_into("", v, &mut out);
    Ok(out)
}

fn flatten_into(prefix: &str, v: Value, out: &mut Map<String, Value>) {
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                let key = if prefix.is_empty() { k } else { format!("{prefix}_{k}") };
                flatten_into(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other);
        }
    }
}

pub fn write_outputs(
    dir: &Path,
    run: &EnsembleRun,
    cfg: &TrainConfig,
    mut metrics: Map<String, Value>,
    snapshots: bool,
) -> Result<(), CliError> {
    let r = &run.report;
    write(&dir.join("scores.csv"), scores_csv(&r.scores, r.labels.as_deref()))?;

    metrics.insert("auc".into(), json!(r.auc));
    metrics.insert("pr".into(), json!(r.ap));
    metrics.insert("runtime_seconds".into(), json!(run.elapsed.as_secs_f64()));
    metrics.insert("member_wd".into(), json!(run.snapshots.iter().map(|s| s.wd).collect::<Vec<_>>()));
    metrics.insert(
        "member_best_update".into(),
        json!(run.snapshots.iter().map(|s| s.update_count).collect::<Vec<_>>()),
    );
    metrics.insert(
        "member_total_updates".into(),
        json!(r
            .trajectories
            .iter()
            .map(|t| t.checkpoints.last().map_or(0, |c| c.update))
            .collect::<Vec<_>>()),
    );
    metrics.insert("warnings".into(), json!(r.warnings));
    let text = serde_json::to_string_pretty(&Value::Object(metrics)).map_err(|e| CliError::Runtime(e.into()))?;
    write(&dir.join("metrics.json"), text + "\n")?;

    let mut lines = String::new();
    for rec in &run.log {
        lines.push_str(&serde_json::to_string(rec).map_err(|e| CliError::Runtime(e.into()))?);
        lines.push('\n');
    }
    write(&dir.join("trajectory.jsonl"), lines)?;

    if snapshots {
        let sdir = dir.join("snapshots");
        std::fs::create_dir_all(&sdir)
            .with_context(|| format!("creating {}", sdir.display()))
            .map_err(CliError::Runtime)?;
        for s in &run.snapshots {
            let path = sdir.join(format!("member_{:03}.bin", s.member));
            snapshot::save(&path, s, cfg.member_seed(s.member))
                .with_context(|| format!("writing {}", path.display()))
                .map_err(CliError::Runtime)?;
        }
    }
    Ok(())
}

fn write(path: &Path, text: String) -> Result<(), CliError> {
    let mut f = std::fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(CliError::Runtime)?;
    f.write_all(text.as_bytes())
        .with_context(|| format!("writing {}", path.display()))
        .map_err(CliError::Runtime)
}
