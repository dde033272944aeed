//! Brute-force reference implementations used to cross-check the metrics:
//! explicit label sets, all positive/negative pairs, and a full threshold
//! sweep. Quadratic, so only for small inputs.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::neuralcore::Tensor;

use super::{report, BitMatrix, MetricsResult, PredictionRun};

fn set_of(row: &[bool]) -> BTreeSet<usize> {
    row.iter().enumerate().filter(|(_, b)| **b).map(|(j, _)| j).collect()
}

fn div_or_zero(num: usize, den: usize, nan: &mut usize) -> f64 {
    if den == 0 {
        *nan += 1;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `(precision, recall, f1, accuracy, nan_replacements)` from label sets.
pub fn set_metrics(predicted: &BitMatrix, truth: &BitMatrix) -> (f64, f64, f64, f64, usize) {
    let n = predicted.rows();
    let mut nan = 0;
    let mut sums = [0.0; 4];
    for i in 0..n {
        let p = set_of(predicted.row(i));
        let t = set_of(truth.row(i));
        let inter = p.intersection(&t).count();
        let union = p.union(&t).count();
        sums[0] += div_or_zero(inter, p.len(), &mut nan);
        sums[1] += div_or_zero(inter, t.len(), &mut nan);
        sums[2] += div_or_zero(2 * inter, p.len() + t.len(), &mut nan);
        sums[3] += div_or_zero(inter, union, &mut nan);
    }
    let nf = n.max(1) as f64;
    (sums[0] / nf, sums[1] / nf, sums[2] / nf, sums[3] / nf, nan)
}

pub fn hamming(predicted: &BitMatrix, truth: &BitMatrix) -> f64 {
    let mut wrong = 0;
    for i in 0..predicted.rows() {
        for j in 0..predicted.cols() {
            if predicted.get(i, j) != truth.get(i, j) {
                wrong += 1;
            }
        }
    }
    wrong as f64 / (predicted.rows() * predicted.cols()).max(1) as f64
}

/// Share of positive/negative pairs ranked correctly, ties counting half.
pub fn pairwise_auc(scores: &[f64], truth: &[bool]) -> Option<f64> {
    let mut credit = 0.0;
    let mut pairs = 0usize;
    for (i, &si) in scores.iter().enumerate() {
        if !truth[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if truth[j] {
                continue;
            }
            pairs += 1;
            if si > sj {
                credit += 1.0;
            } else if si == sj {
                credit += 0.5;
            }
        }
    }
    (pairs > 0).then(|| credit / pairs as f64)
}

/// AP by sweeping every distinct score as a `score ≥ t` threshold.
pub fn sweep_ap(scores: &[f64], truth: &[bool]) -> Option<f64> {
    let npos = truth.iter().filter(|b| **b).count();
    if npos == 0 {
        return None;
    }
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).expect("finite scores"));
    thresholds.dedup();
    let mut ap = 0.0;
    let mut r_prev = 0.0;
    for t in thresholds {
        let picked: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
        let tp = picked.iter().filter(|&&i| truth[i]).count();
        let p = tp as f64 / picked.len() as f64;
        let r = tp as f64 / npos as f64;
        ap += (r - r_prev) * p;
        r_prev = r;
    }
    Some(ap)
}

/// Precision@k by repeatedly taking the highest remaining score (lowest
/// index on ties).
pub fn selection_precision_at_k(probs: &[Vec<f64>], truth: &BitMatrix, k: usize) -> f64 {
    let mut total = 0.0;
    let mut counted = 0;
    for (i, row) in probs.iter().enumerate() {
        let t = set_of(truth.row(i));
        if t.is_empty() {
            continue;
        }
        let mut taken = BTreeSet::new();
        for _ in 0..k {
            let mut best: Option<usize> = None;
            for j in 0..row.len() {
                if taken.contains(&j) {
                    continue;
                }
                if best.is_none_or(|b| row[j] > row[b]) {
                    best = Some(j);
                }
            }
            taken.insert(best.expect("k ≤ q"));
        }
        total += taken.intersection(&t).count() as f64 / k as f64;
        counted += 1;
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}

/// Largest absolute disagreement per metric across all trials.
#[derive(Debug, Clone)]
pub struct OracleSummary {
    pub trials: usize,
    pub max_diff: Vec<(&'static str, f64)>,
    pub nan_mismatches: usize,
    pub elapsed: Duration,
}

impl OracleSummary {
    pub fn worst(&self) -> f64 {
        self.max_diff.iter().map(|(_, d)| *d).fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.nan_mismatches == 0 && self.worst() <= tol
    }
}

/// A random run with coarse score grids (so ties occur), sparse predictions
/// (so empty predicted rows occur) and at least one true label per row.
pub fn random_run(rng: &mut ChaCha8Rng, n: usize, q: usize) -> PredictionRun<f64> {
    let coarse = rng.random_bool(0.5);
    let probs: Vec<f64> = (0..n * q)
        .map(|_| {
            if coarse {
                f64::from(rng.random_range(1..20u32)) / 20.0
            } else {
                rng.random_range(0.001..0.999)
            }
        })
        .collect();
    let mut truth = BitMatrix::zeros(n, q);
    let mut predicted = BitMatrix::zeros(n, q);
    for i in 0..n {
        for j in 0..q {
            truth.set(i, j, rng.random_bool(0.25));
            predicted.set(i, j, rng.random_bool(0.2));
        }
        if !truth.row(i).iter().any(|b| *b) {
            let j = rng.random_range(0..q);
            truth.set(i, j, true);
        }
    }
    PredictionRun {
        probs: Tensor::from_vec(&[n, q], probs).expect("shape"),
        predicted,
        truth,
        labels: (0..q).map(|j| format!("L{j}")).collect(),
    }
}

/// Compares [`report`] against the brute-force definitions on `trials`
/// seeded random runs of shape `n × q`.
pub fn run_suite(seed: u64, trials: usize, n: usize, q: usize) -> MetricsResult<OracleSummary> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = [
        "precision",
        "recall",
        "f1",
        "accuracy",
        "hamming_loss",
        "ap",
        "auc",
        "precision_at_5",
    ];
    let mut max_diff = [0.0f64; 8];
    let mut nan_mismatches = 0;
    for _ in 0..trials {
        let run = random_run(&mut rng, n, q);
        let rep = report(&run)?;
        let (p, r, f, a, nan) = set_metrics(&run.predicted, &run.truth);
        let rows: Vec<Vec<f64>> = (0..n).map(|i| run.probs.row(i).to_vec()).collect();
        let mut diffs = [
            (rep.precision - p).abs(),
            (rep.recall - r).abs(),
            (rep.f1 - f).abs(),
            (rep.accuracy - a).abs(),
            (rep.hamming_loss - hamming(&run.predicted, &run.truth)).abs(),
            0.0,
            0.0,
            0.0,
        ];
        for j in 0..q {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let t = run.truth.column(j);
            match (rep.ap[j], sweep_ap(&col, &t)) {
                (Some(x), Some(y)) => diffs[5] = diffs[5].max((x - y).abs()),
                (None, None) => {}
                _ => nan_mismatches += 1,
            }
            match (rep.auc[j], pairwise_auc(&col, &t)) {
                (Some(x), Some(y)) => diffs[6] = diffs[6].max((x - y).abs()),
                (None, None) => {}
                _ => nan_mismatches += 1,
            }
        }
        if q >= 5 {
            diffs[7] = (rep.precision_at_5.unwrap_or(f64::NAN) - selection_precision_at_k(&rows, &run.truth, 5)).abs();
        }
        if rep.nan_replacements != nan {
            nan_mismatches += 1;
        }
        for (m, d) in max_diff.iter_mut().zip(diffs) {
            // NaN compares false, so record it explicitly
            *m = if d.is_nan() { f64::INFINITY } else { m.max(d) };
        }
    }
    Ok(OracleSummary {
        trials,
        max_diff: names.into_iter().zip(max_diff).collect(),
        nan_mismatches,
        elapsed: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_hand_values() {
        assert_eq!(pairwise_auc(&[0.9, 0.8, 0.3], &[true, false, true]), Some(0.5));
        assert!((sweep_ap(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap() - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn small_suite_agrees() {
        let s = run_suite(11, 50, 32, 10).unwrap();
        assert!(s.passed(1e-12), "{s:?}");
    }
}
