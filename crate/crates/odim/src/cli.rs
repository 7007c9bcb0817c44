//! Command-line front end: `detect`, `semi`, `dp` and `propcheck`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use odim_core::optim::DpConfig;
use odim_core::propcheck::{prop1_scaling_experiment_with, prop2_norm_experiment, Direction, Prop1Config};
use odim_core::trainer::{DpTraining, EnsembleAveraging, PreparedRun, SemiConfig};
use odim_core::{ScalerKind, SeededRng, TrainConfig};
use serde_json::{json, Map, Value};

use crate::dataset::{load_csv, load_index_list, Dataset, DatasetError, DatasetFile, LabelColumn};
use crate::ensemble::{default_threads, run_ensemble};
use crate::report;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("invalid data: {0}")]
    Data(odim_core::Error),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Dataset(_) | CliError::Data(_) => EXIT_DATA,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "odim", version, about = "Unsupervised outlier detection with under-fitted importance-weighted autoencoders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score every row of a dataset.
    Detect(DetectArgs),
    /// Detection with a few known outliers pushed away by an upper-bound term.
    Semi(SemiArgs),
    /// Detection trained with clipped, noised per-sample gradients.
    Dp(DpArgs),
    /// Gradient-scaling and norm-gap numerical checks.
    Propcheck(PropcheckArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScalerArg {
    Minmax,
    Standard,
}

impl From<ScalerArg> for ScalerKind {
    fn from(s: ScalerArg) -> Self {
        match s {
            ScalerArg::Minmax => ScalerKind::MinMax,
            ScalerArg::Standard => ScalerKind::Standardize,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AveragingArg {
    Raw,
    Minmax,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Input CSV; every column except the label must be numeric.
    #[arg(long)]
    pub data: PathBuf,
    /// Label column, by header name or zero-based index.
    #[arg(long)]
    pub label_col: Option<String>,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    /// The first line holds data rather than column names.
    #[arg(long)]
    pub no_header: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 5)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 50)]
    pub hidden: usize,
    /// Importance samples per loss evaluation.
    #[arg(long, default_value_t = 50)]
    pub samples_k: usize,
    /// Updates between bimodality checkpoints.
    #[arg(long, default_value_t = 10)]
    pub nu: usize,
    /// Patience, in checkpoints.
    #[arg(long, default_value_t = 10)]
    pub npat: usize,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub ensemble: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ScalerArg::Minmax)]
    pub scaler: ScalerArg,
    #[arg(long, value_enum, default_value_t = AveragingArg::Raw)]
    pub averaging: AveragingArg,
    /// Hard cap on updates per member.
    #[arg(long)]
    pub max_updates: Option<usize>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, default_value = "odim-out")]
    pub out_dir: PathBuf,
    /// Skip writing member snapshot files.
    #[arg(long)]
    pub no_snapshots: bool,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            k: self.samples_k,
            update_unit: self.nu,
            patience: self.npat,
            ensemble: self.ensemble,
            batch_size: self.batch,
            learning_rate: self.lr,
            latent_dim: self.latent_dim,
            hidden: self.hidden,
            seed: self.seed,
            scaler: self.scaler.into(),
            averaging: match self.averaging {
                AveragingArg::Raw => EnsembleAveraging::Raw,
                AveragingArg::Minmax => EnsembleAveraging::MinMax,
            },
            max_updates: self.max_updates,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SemiArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// File of zero-based row indices of known outliers.
    #[arg(long, conflicts_with = "labeled_fraction")]
    pub labeled: Option<PathBuf>,
    /// Instead of a file, reveal this fraction of the outliers in the label column.
    #[arg(long)]
    pub labeled_fraction: Option<f64>,
    /// Weight of the upper-bound term.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Order of the upper bound (> 1).
    #[arg(long, default_value_t = 2.0)]
    pub u: f64,
}

#[derive(Debug, Clone, Args)]
pub struct DpArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Per-sample clipping norm; `inf` disables clipping.
    #[arg(long, default_value_t = 20.0)]
    pub clip: f64,
    #[arg(long, default_value_t = 1.02)]
    pub noise_mult: f64,
    /// Update budget per member.
    #[arg(long, default_value_t = 1000)]
    pub dp_updates: usize,
}

#[derive(Debug, Clone, Args)]
pub struct PropcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub input_dim: usize,
    #[arg(long, default_value_t = 5)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 10_000)]
    pub inits: usize,
    /// Input ℓ₁ norms to sweep.
    #[arg(long, value_delimiter = ',', default_value = "10,30,100,300,1000")]
    pub norms: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    /// Sweep along a random direction instead of the all-ones vector.
    #[arg(long)]
    pub random_direction: bool,
    #[arg(long, default_value_t = 200)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 10)]
    pub norm_gap_dim: usize,
    #[arg(long, default_value_t = 10_000)]
    pub norm_gap_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write `propcheck.json` here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("odim: {e:#}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Detect(a) => cmd_detect(&a),
        Command::Semi(a) => cmd_semi(&a),
        Command::Dp(a) => cmd_dp(&a),
        Command::Propcheck(a) => cmd_propcheck(&a),
    }
}

fn load(d: &DataArgs) -> Result<Dataset, CliError> {
    if !d.delimiter.is_ascii() {
        return Err(CliError::Usage(String::from("delimiter must be a single ASCII character")));
    }
    let file = DatasetFile {
        path: d.data.clone(),
        delimiter: d.delimiter as u8,
        has_header: !d.no_header,
        label: d.label_col.as_deref().map(LabelColumn::parse),
    };
    Ok(load_csv(&file)?)
}

fn validate(cfg: &TrainConfig) -> Result<(), CliError> {
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))
}

pub fn cmd_detect(a: &DetectArgs) -> Result<(), CliError> {
    let cfg = a.train.config();
    validate(&cfg)?;
    let ds = load(&a.data)?;
    let prepared = PreparedRun::unsupervised(&ds.x, ds.labels.as_deref(), &cfg).map_err(CliError::Data)?;
    execute("detect", prepared, &a.data, &a.train, &ds, Map::new())
}

pub fn cmd_semi(a: &SemiArgs) -> Result<(), CliError> {
    let cfg = TrainConfig {
        semi: Some(SemiConfig { gamma: a.gamma, u: a.u }),
        ..a.train.config()
    };
    validate(&cfg)?;
    let ds = load(&a.data)?;
    let labeled = match (&a.labeled, a.labeled_fraction) {
        (Some(path), _) => load_index_list(path)?,
        (None, Some(f)) => {
            if !(0.0..=1.0).contains(&f) {
                return Err(CliError::Usage(String::from("--labeled-fraction must lie in [0, 1]")));
            }
            let labels = ds
                .labels
                .as_deref()
                .ok_or_else(|| CliError::Usage(String::from("--labeled-fraction needs --label-col")))?;
            reveal_outliers(labels, f, cfg.seed)
        }
        (None, None) => return Err(CliError::Usage(String::from("give --labeled or --labeled-fraction"))),
    };
    let prepared =
        PreparedRun::semisupervised(&ds.x, ds.labels.as_deref(), &labeled, &cfg).map_err(CliError::Data)?;
    let mut extra = Map::new();
    extra.insert("labeled_count".into(), json!(labeled.len()));
    execute("semi", prepared, &a.data, &a.train, &ds, extra)
}

pub fn cmd_dp(a: &DpArgs) -> Result<(), CliError> {
    let cfg = TrainConfig {
        dp: Some(DpTraining {
            mechanism: DpConfig {
                clip: a.clip,
                noise_multiplier: a.noise_mult,
            },
            updates: a.dp_updates,
        }),
        ..a.train.config()
    };
    validate(&cfg)?;
    let ds = load(&a.data)?;
    let prepared = PreparedRun::unsupervised(&ds.x, ds.labels.as_deref(), &cfg).map_err(CliError::Data)?;
    execute("dp", prepared, &a.data, &a.train, &ds, Map::new())
}

/// Known outliers revealed for the semi-supervised command: a seeded
/// shuffle of the positive rows, of which the first `ceil(f · n)` are kept.
pub fn reveal_outliers(labels: &[u8], fraction: f64, seed: u64) -> Vec<usize> {
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    SeededRng::derive(seed, 0x1ABE1).shuffle(&mut pos);
    pos.truncate((fraction * pos.len() as f64).ceil() as usize);
    pos.sort_unstable();
    pos
}

fn execute(
    command: &str,
    prepared: PreparedRun,
    data: &DataArgs,
    train: &TrainArgs,
    ds: &Dataset,
    extra: Map<String, Value>,
) -> Result<(), CliError> {
    let cfg = prepared.config().clone();
    let threads = train.threads.unwrap_or_else(default_threads).max(1);
    let run = run_ensemble(prepared, threads).map_err(|e| CliError::Runtime(e.into()))?;
    for w in &run.report.warnings {
        eprintln!("odim: warning: {w}");
    }

    let mut echo = report::flatten_config(&cfg)?;
    echo.insert("command".into(), json!(command));
    echo.insert("data".into(), json!(data.data.display().to_string()));
    echo.insert("label_col".into(), json!(data.label_col));
    echo.insert("threads".into(), json!(threads));
    echo.insert("n_rows".into(), json!(ds.x.rows()));
    echo.insert("n_features".into(), json!(ds.x.cols()));
    echo.extend(extra);

    let out = &train.out_dir;
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    report::write_outputs(out, &run, &cfg, echo, !train.no_snapshots)?;

    match (run.report.auc, run.report.ap) {
        (Some(auc), Some(ap)) => println!(
            "auc {auc:.4}  pr {ap:.4}  runtime {:.2}s  -> {}",
            run.elapsed.as_secs_f64(),
            out.display()
        ),
        _ => println!("runtime {:.2}s  -> {}", run.elapsed.as_secs_f64(), out.display()),
    }
    Ok(())
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(anyhow::Error::new(e).context(format!("writing {}", path.display())))
}

pub fn cmd_propcheck(a: &PropcheckArgs) -> Result<(), CliError> {
    let cfg = Prop1Config {
        input_dim: a.input_dim,
        latent_dim: a.latent_dim,
        n_inits: a.inits,
        norms: a.norms.clone(),
        sigma: a.sigma,
        eta: a.eta,
        direction: if a.random_direction {
            Direction::Random
        } else {
            Direction::AllOnes
        },
        bootstrap: a.bootstrap,
    };
    let usage = |e: odim_core::Error| CliError::Usage(e.to_string());
    let prop1 = prop1_scaling_experiment_with(&cfg, &mut SeededRng::derive(a.seed, 1)).map_err(usage)?;
    let prop2 =
        prop2_norm_experiment(a.norm_gap_dim, a.norm_gap_samples, &mut SeededRng::derive(a.seed, 2)).map_err(usage)?;
    let doc = json!({
        "seed": a.seed,
        "gradient_scaling": { "config": cfg, "report": prop1 },
        "norm_gap": {
            "input_dim": a.norm_gap_dim,
            "samples": a.norm_gap_samples,
            "report": prop2,
        },
    });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Runtime(e.into()))?;
    println!("{text}");
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let path = dir.join("propcheck.json");
        std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
    }
    eprintln!(
        "slope {:.3} (95% CI {:.3}..{:.3}); min-max gap {:.4}, standardized gap {:.4}",
        prop1.slope_l1, prop1.slope_ci.0, prop1.slope_ci.1, prop2.minmax.gap, prop2.standardized.gap
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_training_defaults() {
        let cli = Cli::try_parse_from(["odim", "detect", "--data", "x.csv"]).unwrap();
        let Command::Detect(a) = cli.command else { panic!() };
        assert_eq!(a.train.config(), TrainConfig::default());
    }

    #[test]
    fn dp_defaults() {
        let cli = Cli::try_parse_from(["odim", "dp", "--data", "x.csv"]).unwrap();
        let Command::Dp(a) = cli.command else { panic!() };
        assert_eq!((a.clip, a.noise_mult), (20.0, 1.02));
        let cli = Cli::try_parse_from(["odim", "dp", "--data", "x.csv", "--clip", "inf"]).unwrap();
        let Command::Dp(a) = cli.command else { panic!() };
        assert!(a.clip.is_infinite());
    }

    #[test]
    fn reveal_is_seeded_subset_of_outliers() {
        let labels = [0, 1, 1, 0, 1, 1, 1, 0, 1, 1];
        let a = reveal_outliers(&labels, 0.3, 5);
        assert_eq!(a, reveal_outliers(&labels, 0.3, 5));
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|&i| labels[i] == 1));
        assert!(reveal_outliers(&labels, 0.0, 5).is_empty());
    }

    #[test]
    fn bad_flags_are_usage_errors() {
        assert_eq!(run(["odim", "detect"]), EXIT_USAGE);
        assert_eq!(run(["odim", "detect", "--data", "x.csv", "--ensemble", "0"]), EXIT_USAGE);
        assert_eq!(run(["odim", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["odim", "--help"]), EXIT_OK);
    }
}
