//! Ensemble training with the Wasserstein early-stopping gate.
//!
//! Each member trains on minibatch IWAE gradients. Every `update_unit`
//! updates the full-dataset per-sample losses are evaluated, a two-component
//! mixture is fitted to their normalized values, and the parameters are
//! snapshotted whenever the distance between the components reaches a new
//! maximum. A member stops after `patience` consecutive non-improving
//! checkpoints. Final scores average the snapshots' per-sample losses.
//!
//! Random streams: the member seed is `split_seed(seed, member)`, and
//! initialization, minibatch order, reparameterization noise, evaluation
//! noise, DP noise and labeled-batch sampling each draw from their own
//! sub-stream of it. Final scoring uses one seed shared by all members.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::genmodel::{
    init_params, per_sample_losses, Activation, Architecture, InitScheme, MlpParams, Objective, OutputMean,
    Workspace,
};
use crate::metrics::LabeledScores;
use crate::mixturegate::{bimodality, normalize_losses, Gmm2Fit};
use crate::numkernel::{split_seed, Matrix, SeededRng};
use crate::optim::{AdamState, DpConfig, GradientAggregator};
use crate::preprocess::{fit_scaler, transform, ScalerKind};

const STREAM_INIT: u64 = 1;
const STREAM_BATCH: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_EVAL: u64 = 4;
const STREAM_DP: u64 = 5;
const STREAM_LABELED: u64 = 6;
const STREAM_SCORE: u64 = 0x5C0E;

/// Minimum dataset size for the mixture fit.
pub const MIN_ROWS: usize = 4;

/// Semi-supervised weighting of the chi-upper-bound term on labeled outliers.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SemiConfig {
    pub gamma: f64,
    pub u: f64,
}

impl Default for SemiConfig {
    fn default() -> Self {
        SemiConfig { gamma: 1.0, u: 2.0 }
    }
}

/// Private training: clipped and noised per-sample gradients, with a hard
/// budget on the number of updates.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DpTraining {
    pub mechanism: DpConfig,
    pub updates: usize,
}

/// How member losses are combined into the final score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EnsembleAveraging {
    /// Plain mean of raw per-sample losses.
    #[default]
    Raw,
    /// Mean of per-member min-max normalized losses.
    MinMax,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    /// Importance samples per loss evaluation.
    pub k: usize,
    /// Updates between two bimodality checkpoints.
    pub update_unit: usize,
    /// Consecutive non-improving checkpoints tolerated.
    pub patience: usize,
    pub ensemble: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub latent_dim: usize,
    pub hidden: usize,
    pub activation: Activation,
    pub init: InitScheme,
    pub seed: u64,
    pub scaler: ScalerKind,
    pub averaging: EnsembleAveraging,
    /// Optional hard cap on updates per member.
    pub max_updates: Option<usize>,
    pub dp: Option<DpTraining>,
    pub semi: Option<SemiConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 50,
            update_unit: 10,
            patience: 10,
            ensemble: 10,
            batch_size: 128,
            learning_rate: 5e-4,
            latent_dim: 5,
            hidden: 50,
            activation: Activation::LeakyRelu,
            init: InitScheme::HeUniform,
            seed: 0,
            scaler: ScalerKind::MinMax,
            averaging: EnsembleAveraging::Raw,
            max_updates: None,
            dp: None,
            semi: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("k", self.k),
            ("update_unit", self.update_unit),
            ("patience", self.patience),
            ("ensemble", self.ensemble),
            ("batch_size", self.batch_size),
            ("latent_dim", self.latent_dim),
            ("hidden", self.hidden),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::argument(format!("{name} must be at least 1")));
            }
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::argument("learning rate must be positive"));
        }
        if let Some(dp) = &self.dp {
            dp.mechanism.validate()?;
            if dp.updates == 0 {
                return Err(Error::argument("DP update budget must be at least 1"));
            }
            if self.semi.is_some() {
                return Err(Error::argument("private training does not support the semi-supervised term"));
            }
        }
        if let Some(semi) = &self.semi {
            Objective::cubo(semi.u)?;
            if !(semi.gamma >= 0.0) {
                return Err(Error::argument("CUBO weight gamma must be non-negative"));
            }
        }
        if self.max_updates == Some(0) {
            return Err(Error::argument("max_updates must be at least 1"));
        }
        Ok(())
    }

    pub fn architecture(&self, input_dim: usize) -> Architecture {
        Architecture {
            input_dim,
            latent_dim: self.latent_dim,
            hidden: self.hidden,
            activation: self.activation,
            output: OutputMean::Sigmoid,
        }
    }

    /// Total update budget per member, combining `max_updates` and the DP budget.
    pub fn update_budget(&self) -> Option<usize> {
        match (self.max_updates, self.dp.map(|d| d.updates)) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    pub fn member_seed(&self, member: usize) -> u64 {
        split_seed(self.seed, member as u64)
    }

    pub fn scoring_seed(&self) -> u64 {
        split_seed(self.seed, STREAM_SCORE)
    }
}

/// Parameters frozen at the best checkpoint of one member.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub member: usize,
    pub params: MlpParams,
    pub wd: f64,
    pub update_count: usize,
    pub gmm: Gmm2Fit,
}

/// One evaluated checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Checkpoint {
    pub update: usize,
    pub wd: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MemberTrajectory {
    pub member: usize,
    pub checkpoints: Vec<Checkpoint>,
    pub best_update: usize,
    pub best_wd: f64,
}

/// Data handed to a [`TrainObserver`] after each checkpoint.
#[derive(Debug)]
pub struct CheckpointEvent<'a> {
    pub member: usize,
    pub checkpoint: usize,
    pub update: usize,
    pub wd: f64,
    pub gmm: &'a Gmm2Fit,
    pub improved: bool,
    /// Per-sample losses, in the caller's row order.
    pub losses: &'a [f64],
}

pub trait TrainObserver {
    fn on_checkpoint(&mut self, event: &CheckpointEvent<'_>);
}

impl TrainObserver for () {
    fn on_checkpoint(&mut self, _: &CheckpointEvent<'_>) {}
}

impl<F: FnMut(&CheckpointEvent<'_>)> TrainObserver for F {
    fn on_checkpoint(&mut self, event: &CheckpointEvent<'_>) {
        self(event)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    Improved,
    Waiting,
    Stop,
}

/// Patience counter over a stream of bimodality scores.
///
/// The first observation always counts as an improvement; afterwards only a
/// strictly larger value does. After `patience` consecutive misses the gate
/// reports [`GateDecision::Stop`].
#[derive(Debug, Clone)]
pub struct PatienceGate {
    patience: usize,
    best: Option<f64>,
    best_index: usize,
    misses: usize,
    seen: usize,
}

impl PatienceGate {
    pub fn new(patience: usize) -> Self {
        PatienceGate {
            patience,
            best: None,
            best_index: 0,
            misses: 0,
            seen: 0,
        }
    }

    pub fn observe(&mut self, wd: f64) -> GateDecision {
        let index = self.seen;
        self.seen += 1;
        if self.best.is_none_or(|b| wd > b) {
            self.best = Some(wd);
            self.best_index = index;
            self.misses = 0;
            return GateDecision::Improved;
        }
        self.misses += 1;
        if self.misses >= self.patience {
            GateDecision::Stop
        } else {
            GateDecision::Waiting
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_index(&self) -> usize {
        self.best_index
    }

    pub fn misses(&self) -> usize {
        self.misses
    }
}

/// Shuffle-once-per-epoch minibatches without replacement.
#[derive(Debug)]
struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
}

impl EpochSampler {
    fn new(pool: Vec<usize>, batch: usize) -> Self {
        let batch = batch.min(pool.len());
        let pos = pool.len();
        EpochSampler { order: pool, pos, batch }
    }

    fn next_batch(&mut self, rng: &mut SeededRng) -> &[usize] {
        if self.pos + self.batch > self.order.len() {
            rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let out = &self.order[self.pos..self.pos + self.batch];
        self.pos += self.batch;
        out
    }
}

/// Labeled-outlier minibatches: epoch shuffling when there are enough rows,
/// otherwise `batch` draws with replacement.
#[derive(Debug)]
enum LabeledSampler {
    Epoch(EpochSampler),
    WithReplacement { pool: Vec<usize>, batch: usize, buf: Vec<usize> },
}

impl LabeledSampler {
    fn new(pool: Vec<usize>, batch: usize) -> Self {
        if pool.len() >= batch {
            LabeledSampler::Epoch(EpochSampler::new(pool, batch))
        } else {
            LabeledSampler::WithReplacement {
                pool,
                batch,
                buf: Vec::with_capacity(batch),
            }
        }
    }

    fn next_batch(&mut self, rng: &mut SeededRng) -> &[usize] {
        match self {
            LabeledSampler::Epoch(s) => s.next_batch(rng),
            LabeledSampler::WithReplacement { pool, batch, buf } => {
                buf.clear();
                for _ in 0..*batch {
                    buf.push(pool[rng.below(pool.len())]);
                }
                buf
            }
        }
    }
}

/// Result of training one member.
#[derive(Debug, Clone)]
pub struct MemberOutcome {
    pub snapshot: Snapshot,
    pub trajectory: MemberTrajectory,
    pub total_updates: usize,
}

struct MemberTrainer<'a> {
    x: &'a Matrix,
    params: MlpParams,
    adam: AdamState,
    ws: Workspace,
    eps: Vec<f64>,
    sample_grad: MlpParams,
    update: Vec<f64>,
    agg: GradientAggregator,
    batches: EpochSampler,
    batch_rng: SeededRng,
    noise_rng: SeededRng,
    dp_rng: SeededRng,
    labeled: Option<(LabeledSampler, SeededRng, SemiConfig)>,
}

impl<'a> MemberTrainer<'a> {
    fn new(x: &'a Matrix, cfg: &'a TrainConfig, member: usize, labeled: &[usize]) -> Result<Self> {
        let seed = cfg.member_seed(member);
        let arch = cfg.architecture(x.cols());
        let params = init_params(&mut SeededRng::derive(seed, STREAM_INIT), arch, cfg.init)?;
        let n_params = params.len();
        let labeled = match cfg.semi {
            Some(semi) if semi.gamma > 0.0 && !labeled.is_empty() => Some((
                LabeledSampler::new(labeled.to_vec(), cfg.batch_size),
                SeededRng::derive(seed, STREAM_LABELED),
                semi,
            )),
            _ => None,
        };
        Ok(MemberTrainer {
            x,
            adam: AdamState::new(n_params, cfg.learning_rate),
            ws: Workspace::new(&arch, cfg.k),
            eps: vec![0.0; cfg.k * arch.latent_dim],
            sample_grad: params.zeros_like(),
            update: vec![0.0; n_params],
            agg: GradientAggregator::new(n_params, cfg.dp.map(|d| d.mechanism)),
            batches: EpochSampler::new((0..x.rows()).collect(), cfg.batch_size),
            batch_rng: SeededRng::derive(seed, STREAM_BATCH),
            noise_rng: SeededRng::derive(seed, STREAM_NOISE),
            dp_rng: SeededRng::derive(seed, STREAM_DP),
            params,
            labeled,
        })
    }

    fn step(&mut self) -> Result<()> {
        self.agg.reset();
        let batch = self.batches.next_batch(&mut self.batch_rng);
        for &i in batch {
            self.noise_rng.fill_normal(&mut self.eps);
            self.sample_grad.values_mut().iter_mut().for_each(|g| *g = 0.0);
            self.ws.evaluate(
                &self.params,
                self.x.row(i),
                &self.eps,
                Objective::Iwae,
                Some((&mut self.sample_grad, 1.0)),
            );
            self.agg.push(self.sample_grad.values_mut(), &mut self.dp_rng);
        }
        self.agg.mean_into(&mut self.update)?;

        if let Some((sampler, rng, semi)) = &mut self.labeled {
            let objective = Objective::Cubo { u: semi.u };
            let batch = sampler.next_batch(rng);
            let scale = semi.gamma / batch.len() as f64;
            for &i in batch {
                self.noise_rng.fill_normal(&mut self.eps);
                self.sample_grad.values_mut().iter_mut().for_each(|g| *g = 0.0);
                self.ws.evaluate(
                    &self.params,
                    self.x.row(i),
                    &self.eps,
                    objective,
                    Some((&mut self.sample_grad, 1.0)),
                );
                for (u, g) in self.update.iter_mut().zip(self.sample_grad.values()) {
                    *u += scale * g;
                }
            }
        }

        if self.update.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("training gradient"));
        }
        self.adam.step(self.params.values_mut(), &self.update)?;
        self.params.clamp_decoder_logvar();
        Ok(())
    }
}

/// Trains one member and returns its best snapshot, trajectory and update count.
///
/// `labeled` lists labeled-outlier rows; it is ignored unless `cfg.semi` is
/// set with a positive weight.
pub fn train_member_observed(
    x: &Matrix,
    cfg: &TrainConfig,
    member: usize,
    labeled: &[usize],
    observer: &mut dyn TrainObserver,
) -> Result<MemberOutcome> {
    cfg.validate()?;
    if x.rows() < MIN_ROWS {
        return Err(Error::DatasetTooSmall { n: x.rows(), min: MIN_ROWS });
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("training data"));
    }
    if let Some(&bad) = labeled.iter().find(|&&i| i >= x.rows()) {
        return Err(Error::argument(format!("labeled row {bad} out of range")));
    }
    let eval_seed = split_seed(cfg.member_seed(member), STREAM_EVAL);
    let budget = cfg.update_budget();
    let mut trainer = MemberTrainer::new(x, cfg, member, labeled)?;
    let mut gate = PatienceGate::new(cfg.patience);
    let mut best: Option<Snapshot> = None;
    let mut checkpoints = Vec::new();
    let mut updates = 0usize;

    loop {
        let block = match budget {
            Some(b) => cfg.update_unit.min(b - updates),
            None => cfg.update_unit,
        };
        for _ in 0..block {
            trainer.step()?;
        }
        updates += block;

        let index = checkpoints.len();
        let losses = per_sample_losses(&trainer.params, x, cfg.k, split_seed(eval_seed, index as u64))?;
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("per-sample losses"));
        }
        let (gmm, wd) = bimodality(&losses)?;
        checkpoints.push(Checkpoint { update: updates, wd });
        let decision = gate.observe(wd);
        let improved = decision == GateDecision::Improved;
        if improved {
            best = Some(Snapshot {
                member,
                params: trainer.params.clone(),
                wd,
                update_count: updates,
                gmm,
            });
        }
        observer.on_checkpoint(&CheckpointEvent {
            member,
            checkpoint: index,
            update: updates,
            wd,
            gmm: &gmm,
            improved,
            losses: &losses,
        });
        let exhausted = budget.is_some_and(|b| updates >= b);
        if decision == GateDecision::Stop || exhausted {
            break;
        }
    }

    let snapshot = best.expect("the first checkpoint always improves the gate");
    let trajectory = MemberTrajectory {
        member,
        checkpoints,
        best_update: snapshot.update_count,
        best_wd: snapshot.wd,
    };
    Ok(MemberOutcome {
        snapshot,
        trajectory,
        total_updates: updates,
    })
}

/// Trains one member on already scaled data and returns its best snapshot.
pub fn train_member(x_scaled: &Matrix, cfg: &TrainConfig, member: usize) -> Result<Snapshot> {
    train_member_observed(x_scaled, cfg, member, &[], &mut ()).map(|o| o.snapshot)
}

/// Ensemble scores, member trajectories, and metrics when labels are known.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScoreReport {
    /// Per-sample scores; higher means more outlier-like.
    pub scores: Vec<f64>,
    pub labels: Option<Vec<u8>>,
    pub trajectories: Vec<MemberTrajectory>,
    pub auc: Option<f64>,
    pub ap: Option<f64>,
    /// Non-fatal conditions worth surfacing to the user.
    pub warnings: Vec<String>,
}

impl ScoreReport {
    /// Attaches labels and computes AUC / AP. Single-class labels leave the
    /// metrics empty.
    pub fn attach_labels(&mut self, labels: &[u8]) -> Result<()> {
        if labels.len() != self.scores.len() {
            return Err(Error::shape("labels", self.scores.len(), labels.len()));
        }
        match LabeledScores::new(&self.scores, labels) {
            Ok(ls) => {
                self.auc = Some(ls.roc_auc());
                self.ap = Some(ls.average_precision());
            }
            Err(Error::UndefinedMetric(_)) => {
                self.warnings.push(String::from("labels contain a single class; metrics skipped"));
            }
            Err(e) => return Err(e),
        }
        self.labels = Some(labels.to_vec());
        Ok(())
    }
}

/// Averages per-sample losses over snapshots, all evaluated with one shared seed.
pub fn score_ensemble(
    x_scaled: &Matrix,
    snapshots: &[Snapshot],
    k: usize,
    eval_seed: u64,
    averaging: EnsembleAveraging,
) -> Result<Vec<f64>> {
    if snapshots.is_empty() {
        return Err(Error::argument("ensemble needs at least one snapshot"));
    }
    let mut sum = vec![0.0; x_scaled.rows()];
    for s in snapshots {
        let mut losses = per_sample_losses(&s.params, x_scaled, k, eval_seed)?;
        if averaging == EnsembleAveraging::MinMax {
            losses = normalize_losses(&losses);
        }
        for (acc, l) in sum.iter_mut().zip(&losses) {
            *acc += l;
        }
    }
    let b = snapshots.len() as f64;
    sum.iter_mut().for_each(|s| *s /= b);
    Ok(sum)
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Row order under which training is run: lexicographic in the row values,
/// so the outcome does not depend on how the caller ordered the rows.
fn canonical_order(x: &Matrix) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.rows()).collect();
    idx.sort_by(|&a, &b| lexicographic(x.row(a), x.row(b)).then(a.cmp(&b)));
    idx
}

/// Forwards events with losses mapped back to the caller's row order.
struct Reordered<'a> {
    inner: &'a mut dyn TrainObserver,
    order: &'a [usize],
    buf: Vec<f64>,
}

impl TrainObserver for Reordered<'_> {
    fn on_checkpoint(&mut self, event: &CheckpointEvent<'_>) {
        for (pos, &orig) in self.order.iter().enumerate() {
            self.buf[orig] = event.losses[pos];
        }
        self.inner.on_checkpoint(&CheckpointEvent {
            losses: &self.buf,
            ..*event
        });
    }
}

/// Scaled, canonically ordered data ready for member training.
///
/// Members are independent given a `PreparedRun`, so callers may train them
/// in any order or concurrently and hand the outcomes to [`PreparedRun::finish`].
#[derive(Debug, Clone)]
pub struct PreparedRun {
    cfg: TrainConfig,
    /// `order[pos]` is the caller row at canonical position `pos`.
    order: Vec<usize>,
    position: Vec<usize>,
    x: Matrix,
    labeled: Vec<usize>,
    labels: Option<Vec<u8>>,
    warnings: Vec<String>,
}

impl PreparedRun {
    fn build(
        x_raw: &Matrix,
        labels: Option<&[u8]>,
        labeled: &[usize],
        cfg: TrainConfig,
        warnings: Vec<String>,
    ) -> Result<Self> {
        cfg.validate()?;
        if x_raw.rows() < MIN_ROWS {
            return Err(Error::DatasetTooSmall { n: x_raw.rows(), min: MIN_ROWS });
        }
        if !x_raw.is_finite() {
            return Err(Error::NonFinite("input data"));
        }
        if let Some(l) = labels {
            if l.len() != x_raw.rows() {
                return Err(Error::shape("labels", x_raw.rows(), l.len()));
            }
        }
        let order = canonical_order(x_raw);
        let mut position = vec![0usize; order.len()];
        for (pos, &orig) in order.iter().enumerate() {
            position[orig] = pos;
        }
        let x_canon = x_raw.select_rows(&order);
        let scaler = fit_scaler(&x_canon, cfg.scaler)?;
        let x = transform(&x_canon, &scaler)?;
        let mut labeled_canon: Vec<usize> = Vec::with_capacity(labeled.len());
        for &i in labeled {
            if i >= x_raw.rows() {
                return Err(Error::argument(format!("labeled row {i} out of range")));
            }
            labeled_canon.push(position[i]);
        }
        labeled_canon.sort_unstable();
        Ok(PreparedRun {
            cfg,
            order,
            position,
            x,
            labeled: labeled_canon,
            labels: labels.map(<[u8]>::to_vec),
            warnings,
        })
    }

    /// Unsupervised run; any `cfg.semi` is ignored.
    pub fn unsupervised(x_raw: &Matrix, labels: Option<&[u8]>, cfg: &TrainConfig) -> Result<Self> {
        let mut cfg = cfg.clone();
        cfg.semi = None;
        PreparedRun::build(x_raw, labels, &[], cfg, Vec::new())
    }

    /// Semi-supervised run. `cfg.semi` defaults to `gamma = 1, u = 2` when
    /// unset; an empty labeled set falls back to the unsupervised run with a
    /// warning.
    pub fn semisupervised(
        x_raw: &Matrix,
        labels: Option<&[u8]>,
        labeled_outliers: &[usize],
        cfg: &TrainConfig,
    ) -> Result<Self> {
        let mut cfg = cfg.clone();
        if labeled_outliers.is_empty() {
            cfg.semi = None;
            let warning = String::from("no labeled outliers given; running unsupervised");
            return PreparedRun::build(x_raw, labels, &[], cfg, vec![warning]);
        }
        if cfg.semi.is_none() {
            cfg.semi = Some(SemiConfig::default());
        }
        PreparedRun::build(x_raw, labels, labeled_outliers, cfg, Vec::new())
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Training matrix: scaled, in canonical row order.
    pub fn scaled(&self) -> &Matrix {
        &self.x
    }

    /// Maps a vector in canonical order back to the caller's row order.
    pub fn to_caller_order(&self, canonical: &[f64]) -> Vec<f64> {
        self.position.iter().map(|&p| canonical[p]).collect()
    }

    /// Trains one member; observer events carry losses in the caller's order.
    pub fn train_member(&self, member: usize, observer: &mut dyn TrainObserver) -> Result<MemberOutcome> {
        let mut reorder = Reordered {
            inner: observer,
            order: &self.order,
            buf: vec![0.0; self.order.len()],
        };
        train_member_observed(&self.x, &self.cfg, member, &self.labeled, &mut reorder)
    }

    /// Scores the ensemble from member outcomes given in member order.
    pub fn finish(self, outcomes: Vec<MemberOutcome>) -> Result<(ScoreReport, Vec<Snapshot>)> {
        if outcomes.len() != self.cfg.ensemble {
            return Err(Error::shape("ensemble outcomes", self.cfg.ensemble, outcomes.len()));
        }
        if outcomes.iter().enumerate().any(|(i, o)| o.snapshot.member != i) {
            return Err(Error::argument("member outcomes must be in member order"));
        }
        let (snapshots, trajectories): (Vec<_>, Vec<_>) =
            outcomes.into_iter().map(|o| (o.snapshot, o.trajectory)).unzip();
        let cfg = &self.cfg;
        let canon_scores = score_ensemble(&self.x, &snapshots, cfg.k, cfg.scoring_seed(), cfg.averaging)?;
        let mut report = ScoreReport {
            scores: self.to_caller_order(&canon_scores),
            labels: None,
            trajectories,
            auc: None,
            ap: None,
            warnings: Vec::new(),
        };
        if let Some(l) = &self.labels {
            report.attach_labels(l)?;
        }
        let mut warnings = self.warnings;
        warnings.append(&mut report.warnings);
        report.warnings = warnings;
        Ok((report, snapshots))
    }

    /// Trains every member in order on the current thread, then scores.
    pub fn run(self, observer: &mut dyn TrainObserver) -> Result<(ScoreReport, Vec<Snapshot>)> {
        let outcomes = (0..self.cfg.ensemble)
            .map(|m| self.train_member(m, observer))
            .collect::<Result<Vec<_>>>()?;
        self.finish(outcomes)
    }
}

/// Full pipeline: scale, train the ensemble, score every row.
pub fn run_odim(x_raw: &Matrix, labels: Option<&[u8]>, cfg: &TrainConfig) -> Result<ScoreReport> {
    run_odim_observed(x_raw, labels, cfg, &mut ()).map(|(r, _)| r)
}

/// [`run_odim`] with a checkpoint observer; also returns the snapshots.
pub fn run_odim_observed(
    x_raw: &Matrix,
    labels: Option<&[u8]>,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(ScoreReport, Vec<Snapshot>)> {
    PreparedRun::unsupervised(x_raw, labels, cfg)?.run(observer)
}

/// Semi-supervised variant: each update adds `gamma ×` the chi-upper-bound
/// gradient on a minibatch of the labeled outliers. See
/// [`PreparedRun::semisupervised`] for defaults and the empty-set fallback.
pub fn run_odim_semisupervised(
    x_raw: &Matrix,
    labels: Option<&[u8]>,
    labeled_outliers: &[usize],
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(ScoreReport, Vec<Snapshot>)> {
    PreparedRun::semisupervised(x_raw, labels, labeled_outliers, cfg)?.run(observer)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_gate(patience: usize, seq: &[f64]) -> (Option<usize>, usize, f64) {
        let mut gate = PatienceGate::new(patience);
        for (i, &wd) in seq.iter().enumerate() {
            if gate.observe(wd) == GateDecision::Stop {
                return (Some(i), gate.best_index(), gate.best().unwrap());
            }
        }
        (None, gate.best_index(), gate.best().unwrap())
    }

    /// Independent restatement of the stopping rule.
    fn oracle(patience: usize, seq: &[f64]) -> (Option<usize>, usize, f64) {
        let mut best_i = 0;
        for i in 0..seq.len() {
            if seq[i] > seq[best_i] {
                best_i = i;
            }
            if i - best_i == patience {
                return (Some(i), best_i, seq[best_i]);
            }
        }
        (None, best_i, seq[best_i])
    }

    #[test]
    fn gate_injected_sequence() {
        let seq = [1.0, 2.0, 2.0, 2.0, 2.0, 5.0];
        let (stop, best, wd) = run_gate(3, &seq);
        assert_eq!(stop, Some(4));
        assert_eq!((best, wd), (1, 2.0));
    }

    #[test]
    fn gate_matches_oracle_exhaustively() {
        for patience in 1..=4 {
            for len in 1..=8u32 {
                for code in 0..3usize.pow(len) {
                    let mut c = code;
                    let seq: Vec<f64> = (0..len)
                        .map(|_| {
                            let v = (c % 3 + 1) as f64;
                            c /= 3;
                            v
                        })
                        .collect();
                    assert_eq!(run_gate(patience, &seq), oracle(patience, &seq), "{patience} {seq:?}");
                }
            }
        }
    }

    #[test]
    fn epoch_sampler_covers_each_row_once_per_epoch() {
        let mut s = EpochSampler::new((0..10).collect(), 3);
        let mut rng = SeededRng::new(1);
        let mut seen = Vec::new();
        for _ in 0..3 {
            seen.extend_from_slice(s.next_batch(&mut rng));
        }
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 9);
        let mut tiny = EpochSampler::new((0..2).collect(), 128);
        assert_eq!(tiny.next_batch(&mut rng).len(), 2);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { k: 0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            semi: Some(SemiConfig { gamma: 1.0, u: 1.0 }),
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let both = TrainConfig {
            semi: Some(SemiConfig::default()),
            dp: Some(DpTraining { mechanism: DpConfig::default(), updates: 10 }),
            ..TrainConfig::default()
        };
        assert!(both.validate().is_err());
    }

    #[test]
    fn tiny_dataset_rejected() {
        let x = Matrix::zeros(3, 2);
        assert!(matches!(
            run_odim(&x, None, &TrainConfig::default()),
            Err(Error::DatasetTooSmall { n: 3, min: 4 })
        ));
    }
}
