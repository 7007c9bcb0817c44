//! Concurrent ensemble training on top of [`PreparedRun`].

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use odim_core::trainer::{CheckpointEvent, MemberOutcome, PreparedRun, ScoreReport, Snapshot};
use serde::Serialize;

/// One line of the training log.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TrajectoryRecord {
    pub member: usize,
    pub checkpoint: usize,
    pub update: usize,
    pub wd: f64,
    pub improved: bool,
    /// Seconds since the run started.
    pub wall_clock: f64,
}

#[derive(Debug)]
pub struct EnsembleRun {
    pub report: ScoreReport,
    pub snapshots: Vec<Snapshot>,
    /// Sorted by member, then checkpoint.
    pub log: Vec<TrajectoryRecord>,
    pub elapsed: Duration,
}

pub fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Trains all members on up to `threads` workers and scores the ensemble.
///
/// Members pull work from a shared counter; each is trained from its own
/// seed, so the result does not depend on `threads` or scheduling.
pub fn run_ensemble(prepared: PreparedRun, threads: usize) -> odim_core::Result<EnsembleRun> {
    let start = Instant::now();
    let members = prepared.config().ensemble;
    let workers = threads.clamp(1, members);
    let next = AtomicUsize::new(0);
    let log = Mutex::new(Vec::new());
    let results: Mutex<Vec<Option<odim_core::Result<MemberOutcome>>>> = Mutex::new((0..members).map(|_| None).collect());

    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let m = next.fetch_add(1, Ordering::Relaxed);
                if m >= members {
                    break;
                }
                let mut observer = |e: &CheckpointEvent<'_>| {
                    let rec = TrajectoryRecord {
                        member: e.member,
                        checkpoint: e.checkpoint,
                        update: e.update,
                        wd: e.wd,
                        improved: e.improved,
                        wall_clock: start.elapsed().as_secs_f64(),
                    };
                    log.lock().unwrap().push(rec);
                };
                let out = prepared.train_member(m, &mut observer);
                let failed = out.is_err();
                results.lock().unwrap()[m] = Some(out);
                if failed {
                    next.store(members, Ordering::Relaxed);
                }
            });
        }
    });

    let mut outcomes = Vec::with_capacity(members);
    for r in results.into_inner().unwrap() {
        match r {
            Some(Ok(o)) => outcomes.push(o),
            Some(Err(e)) => return Err(e),
            None => {}
        }
    }
    let (report, snapshots) = prepared.finish(outcomes)?;
    let mut log = log.into_inner().unwrap();
    log.sort_by_key(|r| (r.member, r.checkpoint));
    Ok(EnsembleRun {
        report,
        snapshots,
        log,
        elapsed: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use odim_core::{Matrix, SeededRng, TrainConfig};

    fn data() -> Matrix {
        let mut rng = SeededRng::new(3);
        let v: Vec<f64> = (0..80 * 3).map(|_| rng.uniform()).collect();
        Matrix::from_vec(80, 3, v).unwrap()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            k: 4,
            update_unit: 5,
            patience: 2,
            ensemble: 3,
            batch_size: 16,
            hidden: 6,
            latent_dim: 2,
            max_updates: Some(40),
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let x = data();
        let seq = PreparedRun::unsupervised(&x, None, &cfg()).unwrap().run(&mut ()).unwrap().0;
        for threads in [1, 2, 8] {
            let par = run_ensemble(PreparedRun::unsupervised(&x, None, &cfg()).unwrap(), threads).unwrap();
            let a: Vec<u64> = par.report.scores.iter().map(|s| s.to_bits()).collect();
            let b: Vec<u64> = seq.scores.iter().map(|s| s.to_bits()).collect();
            assert_eq!(a, b);
            assert_eq!(par.report.trajectories, seq.trajectories);
            let n: usize = seq.trajectories.iter().map(|t| t.checkpoints.len()).sum();
            assert_eq!(par.log.len(), n);
            assert!(par.log.windows(2).all(|w| (w[0].member, w[0].checkpoint) < (w[1].member, w[1].checkpoint)));
        }
    }
}
