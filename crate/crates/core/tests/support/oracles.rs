//! Slow, direct reference implementations used as test oracles.
#![allow(dead_code)]

/// Pairwise Mann–Whitney count: `(2·#{s⁺ > s⁻} + #{s⁺ = s⁻}) / (2 P N)`.
pub fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut twice = 0u64;
    let (mut p, mut n) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li == 1 {
            p += 1;
        } else {
            n += 1;
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj == 0 {
                if scores[i] > scores[j] {
                    twice += 2;
                } else if scores[i] == scores[j] {
                    twice += 1;
                }
            }
        }
    }
    twice as f64 / (2 * p * n) as f64
}

/// Threshold sweep over distinct scores, highest first, recounting the
/// confusion matrix from scratch at every threshold.
pub fn brute_ap(scores: &[f64], labels: &[u8]) -> f64 {
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_tp = 0usize;
    for t in thresholds {
        let tp = scores.iter().zip(labels).filter(|(s, l)| **s >= t && **l == 1).count();
        let fp = scores.iter().zip(labels).filter(|(s, l)| **s >= t && **l == 0).count();
        if tp > prev_tp {
            let recall_step = (tp - prev_tp) as f64 / positives as f64;
            ap += recall_step * (tp as f64 / (tp + fp) as f64);
        }
        prev_tp = tp;
    }
    ap
}

fn normal_cdf(x: f64, mu: f64, sigma: f64) -> f64 {
    0.5 * libm::erfc(-(x - mu) / (sigma * std::f64::consts::SQRT_2))
}

/// Quantile of `N(mu, sigma²)` by bisection on its CDF.
fn normal_quantile(q: f64, mu: f64, sigma: f64) -> f64 {
    let (mut lo, mut hi) = (mu - 40.0 * sigma, mu + 40.0 * sigma);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if normal_cdf(mid, mu, sigma) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `W₂ = sqrt(∫₀¹ (F₁⁻¹(q) − F₂⁻¹(q))² dq)`, integrated numerically with
/// `q = Φ(t)` and composite Simpson over `t ∈ [−8, 8]`.
pub fn w2_quantile_integral(mu1: f64, s1: f64, mu2: f64, s2: f64) -> f64 {
    let (a, b, m) = (-8.0f64, 8.0f64, 3200usize);
    let h = (b - a) / m as f64;
    let mut total = 0.0;
    for k in 0..=m {
        let t = a + k as f64 * h;
        let q = normal_cdf(t, 0.0, 1.0);
        let dq = (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let diff = normal_quantile(q, mu1, s1) - normal_quantile(q, mu2, s2);
        let w = if k == 0 || k == m { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
        total += w * diff * diff * dq;
    }
    (total * h / 3.0).sqrt()
}
