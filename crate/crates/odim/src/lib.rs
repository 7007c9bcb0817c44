//! Command-line companion to `odim-core`: CSV ingestion, concurrent
//! ensemble training, snapshot files and report writers.

pub mod cli;
pub mod dataset;
pub mod ensemble;
pub mod report;
pub mod snapshot;

pub use dataset::{load_csv, Dataset, DatasetError, DatasetFile, LabelColumn};
pub use ensemble::{run_ensemble, EnsembleRun, TrajectoryRecord};
