//! Ranking metrics: ROC-AUC (Mann–Whitney with midranks) and average precision.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Scores (higher = more outlier-like) paired with 0/1 labels (1 = outlier).
#[derive(Debug, Clone, Copy)]
pub struct LabeledScores<'a> {
    scores: &'a [f64],
    labels: &'a [u8],
    positives: usize,
}

impl<'a> LabeledScores<'a> {
    pub fn new(scores: &'a [f64], labels: &'a [u8]) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::shape("labeled scores", scores.len(), labels.len()));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::NonFinite("scores"));
        }
        let mut positives = 0;
        for &l in labels {
            match l {
                0 => {}
                1 => positives += 1,
                _ => return Err(Error::argument("labels must be 0 or 1")),
            }
        }
        if positives == 0 || positives == labels.len() {
            return Err(Error::UndefinedMetric("both classes must be present"));
        }
        Ok(LabeledScores {
            scores,
            labels,
            positives,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn prevalence(&self) -> f64 {
        self.positives as f64 / self.len() as f64
    }

    fn order_ascending(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[a].total_cmp(&self.scores[b]));
        idx
    }

    /// Probability that a random outlier outscores a random inlier, ties ½.
    pub fn roc_auc(&self) -> f64 {
        let idx = self.order_ascending();
        // Twice the midrank is an integer, so the U statistic stays exact.
        let mut twice_rank_sum: u64 = 0;
        let mut i = 0;
        while i < idx.len() {
            let mut j = i + 1;
            while j < idx.len() && self.scores[idx[j]] == self.scores[idx[i]] {
                j += 1;
            }
            // 1-based ranks i+1 ..= j share the midrank (i + 1 + j) / 2.
            let twice_mid = (i + 1 + j) as u64;
            let pos = idx[i..j].iter().filter(|&&k| self.labels[k] == 1).count() as u64;
            twice_rank_sum += pos * twice_mid;
            i = j;
        }
        let n1 = self.positives as u64;
        let n0 = (self.len() - self.positives) as u64;
        let twice_u = twice_rank_sum - n1 * (n1 + 1);
        twice_u as f64 / (2 * n1 * n0) as f64
    }

    /// `Σ_k (R_k - R_{k-1}) P_k` over descending thresholds, ties grouped.
    pub fn average_precision(&self) -> f64 {
        let mut idx = self.order_ascending();
        idx.reverse();
        let p = self.positives as f64;
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut ap = 0.0;
        let mut i = 0;
        while i < idx.len() {
            let mut j = i + 1;
            while j < idx.len() && self.scores[idx[j]] == self.scores[idx[i]] {
                j += 1;
            }
            let dtp = idx[i..j].iter().filter(|&&k| self.labels[k] == 1).count();
            tp += dtp;
            fp += (j - i) - dtp;
            if dtp > 0 {
                ap += (dtp as f64 / p) * (tp as f64 / (tp + fp) as f64);
            }
            i = j;
        }
        ap
    }
}

pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    Ok(LabeledScores::new(scores, labels)?.roc_auc())
}

pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    Ok(LabeledScores::new(scores, labels)?.average_precision())
}
