//! Outlier detection from the inlier-memorization effect.
//!
//! Under-fitted deep generative models assign lower loss to the dense bulk of
//! a dataset before they memorize its sparse tail. This crate trains small
//! Gaussian VAEs with the importance-weighted objective, watches the
//! per-sample loss distribution become bimodal, snapshots each model where a
//! two-component Gaussian mixture of the losses is most separated, and
//! averages the snapshots' losses into outlier scores.
//!
//! The crate is `no_std` (it needs `alloc`); file formats and the command
//! line live in the companion `odim` crate.

#![no_std]
// `!(x > 0.0)` style guards are meant to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod genmodel;
pub mod math;
pub mod metrics;
pub mod mixturegate;
pub mod numkernel;
pub mod optim;
pub mod preprocess;
pub mod propcheck;
pub mod trainer;

pub use error::{Error, Result};
pub use genmodel::{Architecture, InitScheme, MlpParams, Objective};
pub use metrics::{average_precision, roc_auc, LabeledScores};
pub use mixturegate::{fit_gmm2, normalize_losses, wasserstein_gauss, Gmm2Fit};
pub use numkernel::{DataMatrix, Matrix, SeededRng};
pub use optim::{AdamState, DpConfig};
pub use preprocess::{ScalerKind, ScalerParams};
pub use trainer::{
    run_odim, run_odim_observed, run_odim_semisupervised, score_ensemble, train_member, PreparedRun, ScoreReport,
    Snapshot, TrainConfig,
};
