//! Multi-label evaluation: example-based precision/recall/F1/accuracy,
//! hamming loss, macro AUC, average precision with PR curves, and
//! precision@k.
//!
//! Undefined per-example quantities (an empty predicted set, say) are
//! replaced by 0 and counted in `nan_replacements`.

mod bits;
pub mod oracle;

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neuralcore::Tensor;
use crate::scalar::Scalar;

pub use bits::BitMatrix;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("writing curves: {0}")]
    Csv(#[from] csv::Error),
}

pub type MetricsResult<T> = Result<T, MetricsError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExampleMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub nan_replacements: usize,
}

fn same_shape(a: &BitMatrix, b: &BitMatrix) -> MetricsResult<()> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(MetricsError::Shape(format!(
            "{}×{} vs {}×{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

/// Per-example set metrics averaged over examples.
pub fn example_based_metrics(predicted: &BitMatrix, truth: &BitMatrix) -> MetricsResult<ExampleMetrics> {
    same_shape(predicted, truth)?;
    let n = predicted.rows();
    let mut acc = ExampleMetrics {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        accuracy: 0.0,
        nan_replacements: 0,
    };
    if n == 0 {
        return Ok(acc);
    }
    let mut nan = 0;
    let mut ratio = |num: usize, den: usize| {
        if den == 0 {
            nan += 1;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let (mut p_sum, mut r_sum, mut f_sum, mut a_sum) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        let (p, t) = (predicted.row(i), truth.row(i));
        let inter = p.iter().zip(t).filter(|(a, b)| **a && **b).count();
        let np = p.iter().filter(|v| **v).count();
        let nt = t.iter().filter(|v| **v).count();
        p_sum += ratio(inter, np);
        r_sum += ratio(inter, nt);
        f_sum += ratio(2 * inter, np + nt);
        a_sum += ratio(inter, np + nt - inter);
    }
    let nf = n as f64;
    acc.precision = p_sum / nf;
    acc.recall = r_sum / nf;
    acc.f1 = f_sum / nf;
    acc.accuracy = a_sum / nf;
    acc.nan_replacements = nan;
    Ok(acc)
}

/// Fraction of label bits that differ: `(1/(n·q)) Σ xor`.
pub fn hamming_loss(predicted: &BitMatrix, truth: &BitMatrix) -> MetricsResult<f64> {
    same_shape(predicted, truth)?;
    let total = predicted.rows() * predicted.cols();
    if total == 0 {
        return Ok(0.0);
    }
    let wrong = predicted.data().iter().zip(truth.data()).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / total as f64)
}

fn desc(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

/// ROC AUC of one label by the rank-sum (Mann-Whitney) statistic; tied
/// scores share their average rank, which credits each tied pair 0.5.
/// `None` when the column has only one class.
pub fn roc_auc(scores: &[f64], truth: &[bool]) -> Option<f64> {
    let npos = truth.iter().filter(|t| **t).count();
    let nneg = truth.len() - npos;
    if npos == 0 || nneg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 averaged
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| truth[k]).count() as f64;
        i = j + 1;
    }
    let (p, q) = (npos as f64, nneg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Precision-recall points of one label, one per distinct score in
/// descending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub label: String,
    pub points: Vec<PrPoint>,
}

/// Uninterpolated AP, `Σ_n (R_n − R_{n−1}) P_n`, taken over the distinct
/// score thresholds so tied scores enter together. `None` without positives.
pub fn average_precision(scores: &[f64], truth: &[bool]) -> Option<(f64, Vec<PrPoint>)> {
    let npos = truth.iter().filter(|t| **t).count();
    if npos == 0 || scores.len() != truth.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| desc(scores[a], scores[b]));
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut r_prev = 0.0;
    let mut points = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            tp += usize::from(truth[order[i]]);
            seen += 1;
            i += 1;
        }
        let p = tp as f64 / seen as f64;
        let r = tp as f64 / npos as f64;
        ap += (r - r_prev) * p;
        r_prev = r;
        points.push(PrPoint {
            threshold: s,
            recall: r,
            precision: p,
        });
    }
    Some((ap, points))
}

fn columns<F: Scalar>(probs: &Tensor<F>) -> Vec<Vec<f64>> {
    let (n, q) = (probs.rows(), probs.row_len());
    let mut cols = vec![Vec::with_capacity(n); q];
    for i in 0..n {
        for (c, v) in cols.iter_mut().zip(probs.row(i)) {
            c.push(v.to_f64_lossy());
        }
    }
    cols
}

fn check_probs<F: Scalar>(probs: &Tensor<F>, truth: &BitMatrix) -> MetricsResult<()> {
    if probs.shape().len() != 2 || probs.rows() != truth.rows() || probs.row_len() != truth.cols() {
        return Err(MetricsError::Shape(format!(
            "probabilities {:?} vs truth {}×{}",
            probs.shape(),
            truth.rows(),
            truth.cols()
        )));
    }
    Ok(())
}

/// Mean per-label AUC over labels that have both classes, the per-label
/// values, and how many labels were excluded.
pub fn macro_auc<F: Scalar>(probs: &Tensor<F>, truth: &BitMatrix) -> MetricsResult<(f64, Vec<Option<f64>>, usize)> {
    check_probs(probs, truth)?;
    let per: Vec<Option<f64>> = columns(probs)
        .iter()
        .enumerate()
        .map(|(j, s)| roc_auc(s, &truth.column(j)))
        .collect();
    let defined: Vec<f64> = per.iter().flatten().copied().collect();
    let mean = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    Ok((mean, per.clone(), per.len() - defined.len()))
}

/// Per-example fraction of the `k` highest-probability labels that are true
/// (ties to the lower label index), averaged over examples with a non-empty
/// truth row.
pub fn precision_at_k<F: Scalar>(probs: &Tensor<F>, truth: &BitMatrix, k: usize) -> MetricsResult<f64> {
    check_probs(probs, truth)?;
    let q = truth.cols();
    if k == 0 || k > q {
        return Err(MetricsError::Invalid(format!("precision@{k} with {q} labels")));
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    let mut idx: Vec<usize> = Vec::with_capacity(q);
    for i in 0..truth.rows() {
        let t = truth.row(i);
        if !t.iter().any(|b| *b) {
            continue;
        }
        let p = probs.row(i);
        idx.clear();
        idx.extend(0..q);
        // stable sort keeps lower indices first among equal scores
        idx.sort_by(|&a, &b| desc(p[a].to_f64_lossy(), p[b].to_f64_lossy()));
        let hits = idx[..k].iter().filter(|&&j| t[j]).count();
        total += hits as f64 / k as f64;
        counted += 1;
    }
    Ok(if counted == 0 { 0.0 } else { total / counted as f64 })
}

/// Probabilities, thresholded predictions and ground truth for one split.
#[derive(Debug, Clone)]
pub struct PredictionRun<F> {
    pub probs: Tensor<F>,
    pub predicted: BitMatrix,
    pub truth: BitMatrix,
    pub labels: Vec<String>,
}

impl<F: Scalar> PredictionRun<F> {
    /// Predicts bit `(i, j)` iff `probs[i, j] ≥ threshold`.
    pub fn from_probs(probs: Tensor<F>, truth: BitMatrix, labels: Vec<String>, threshold: f64) -> MetricsResult<Self> {
        check_probs(&probs, &truth)?;
        if labels.len() != truth.cols() {
            return Err(MetricsError::Shape(format!(
                "{} label names for {} columns",
                labels.len(),
                truth.cols()
            )));
        }
        let predicted = BitMatrix::threshold(&probs, threshold);
        Ok(PredictionRun {
            probs,
            predicted,
            truth,
            labels,
        })
    }

    /// The run restricted to its first `m` labels.
    pub fn first_labels(&self, m: usize) -> MetricsResult<Self> {
        let q = self.truth.cols();
        if m == 0 || m > q {
            return Err(MetricsError::Invalid(format!("first {m} of {q} labels")));
        }
        let n = self.truth.rows();
        let mut probs = Tensor::zeros(&[n, m]);
        for i in 0..n {
            probs.row_mut(i).copy_from_slice(&self.probs.row(i)[..m]);
        }
        Ok(PredictionRun {
            probs,
            predicted: self.predicted.first_columns(m),
            truth: self.truth.first_columns(m),
            labels: self.labels[..m].to_vec(),
        })
    }
}

/// Every metric of a run. Field order is the JSON key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_examples: usize,
    pub n_labels: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub hamming_loss: f64,
    pub macro_auc: f64,
    /// `None` when there are fewer than five labels.
    pub precision_at_5: Option<f64>,
    pub mean_ap: f64,
    pub ap: Vec<Option<f64>>,
    pub auc: Vec<Option<f64>>,
    /// Undefined per-example ratios replaced by 0.
    pub nan_replacements: usize,
    /// Labels left out of the AUC mean for lacking a positive or a negative.
    pub auc_excluded: usize,
    /// Labels left out of the AP mean for lacking a positive.
    pub ap_excluded: usize,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

pub fn report<F: Scalar>(run: &PredictionRun<F>) -> MetricsResult<MetricsReport> {
    Ok(report_with_curves(run)?.0)
}

/// [`report`] plus the per-label PR curves (labels without positives have
/// no curve).
pub fn report_with_curves<F: Scalar>(run: &PredictionRun<F>) -> MetricsResult<(MetricsReport, Vec<PrCurve>)> {
    let ex = example_based_metrics(&run.predicted, &run.truth)?;
    let hamming = hamming_loss(&run.predicted, &run.truth)?;
    let (auc_mean, auc, auc_excluded) = macro_auc(&run.probs, &run.truth)?;
    let q = run.truth.cols();
    let p5 = if q >= 5 {
        Some(precision_at_k(&run.probs, &run.truth, 5)?)
    } else {
        None
    };
    let mut ap = Vec::with_capacity(q);
    let mut curves = Vec::new();
    for (j, col) in columns(&run.probs).iter().enumerate() {
        match average_precision(col, &run.truth.column(j)) {
            Some((v, points)) => {
                ap.push(Some(v));
                curves.push(PrCurve {
                    label: run.labels.get(j).cloned().unwrap_or_else(|| j.to_string()),
                    points,
                });
            }
            None => ap.push(None),
        }
    }
    let defined: Vec<f64> = ap.iter().flatten().copied().collect();
    let mean_ap = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    let report = MetricsReport {
        n_examples: run.truth.rows(),
        n_labels: q,
        precision: ex.precision,
        recall: ex.recall,
        f1: ex.f1,
        accuracy: ex.accuracy,
        hamming_loss: hamming,
        macro_auc: auc_mean,
        precision_at_5: p5,
        mean_ap,
        ap_excluded: q - defined.len(),
        ap,
        auc,
        nan_replacements: ex.nan_replacements,
        auc_excluded,
    };
    Ok((report, curves))
}

/// CSV with columns `label,threshold,recall,precision`.
pub fn write_pr_csv<W: Write>(curves: &[PrCurve], out: W) -> MetricsResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["label", "threshold", "recall", "precision"])?;
    for c in curves {
        for p in &c.points {
            w.write_record([
                c.label.clone(),
                p.threshold.to_string(),
                p.recall.to_string(),
                p.precision.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| MetricsError::Csv(e.into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(rows: &[&[u8]]) -> BitMatrix {
        BitMatrix::from_rows(&rows.iter().map(|r| r.iter().map(|&b| b == 1).collect()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn set_example() {
        let m = example_based_metrics(&bits(&[&[1, 1, 0]]), &bits(&[&[0, 1, 1]])).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.5, 0.5, 0.5));
        assert!((m.accuracy - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.nan_replacements, 0);
    }

    #[test]
    fn empty_prediction_replaced() {
        let m = example_based_metrics(&bits(&[&[0, 0]]), &bits(&[&[1, 0]])).unwrap();
        assert_eq!((m.precision, m.recall, m.f1, m.accuracy), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(m.nan_replacements, 1);
    }

    #[test]
    fn perfect_prediction() {
        let t = bits(&[&[1, 0, 1], &[0, 1, 0]]);
        let m = example_based_metrics(&t, &t).unwrap();
        assert_eq!((m.precision, m.recall, m.f1, m.accuracy), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(hamming_loss(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn hamming_third() {
        assert!((hamming_loss(&bits(&[&[1, 0, 0]]), &bits(&[&[1, 1, 0]])).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.3], &[true, false, true]), Some(0.5));
        assert_eq!(roc_auc(&[0.4; 4], &[true, false, true, false]), Some(0.5));
        assert_eq!(roc_auc(&[0.9, 0.1], &[true, false]), Some(1.0));
        assert_eq!(roc_auc(&[0.9, 0.1], &[true, true]), None);
    }

    #[test]
    fn ap_examples() {
        let (ap, pts) = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(pts.len(), 3);
        assert_eq!(pts.last().unwrap().recall, 1.0);
        assert_eq!(average_precision(&[0.1, 0.9], &[true, true]).unwrap().0, 1.0);
        assert_eq!(average_precision(&[0.3], &[true]).unwrap().0, 1.0);
        assert!(average_precision(&[0.3], &[false]).is_none());
    }

    #[test]
    fn ap_groups_ties() {
        // a tied positive and negative enter together: P = 1/2 at R = 1
        let (ap, _) = average_precision(&[0.5, 0.5], &[false, true]).unwrap();
        assert_eq!(ap, 0.5);
    }

    #[test]
    fn precision_at_5() {
        let probs = Tensor::<f64>::from_f64(&[1, 6], &[0.9, 0.8, 0.7, 0.6, 0.5, 0.4]).unwrap();
        let t = bits(&[&[1, 0, 1, 0, 0, 0]]);
        assert!((precision_at_k(&probs, &t, 5).unwrap() - 0.4).abs() < 1e-15);
        assert!(precision_at_k(&probs, &t, 7).is_err());
        // ties go to the lower index
        let flat = Tensor::<f64>::from_f64(&[1, 6], &[0.5; 6]).unwrap();
        let t = bits(&[&[0, 0, 0, 0, 0, 1]]);
        assert_eq!(precision_at_k(&flat, &t, 5).unwrap(), 0.0);
    }

    #[test]
    fn first_labels_matches_truncation() {
        let probs = Tensor::<f64>::from_f64(&[2, 3], &[0.9, 0.2, 0.6, 0.1, 0.7, 0.4]).unwrap();
        let truth = bits(&[&[1, 0, 1], &[0, 1, 1]]);
        let run = PredictionRun::from_probs(probs, truth, vec!["a".into(), "b".into(), "c".into()], 0.5).unwrap();
        let sub = run.first_labels(2).unwrap();
        let p2 = Tensor::<f64>::from_f64(&[2, 2], &[0.9, 0.2, 0.1, 0.7]).unwrap();
        let t2 = bits(&[&[1, 0], &[0, 1]]);
        let direct = PredictionRun::from_probs(p2, t2, vec!["a".into(), "b".into()], 0.5).unwrap();
        assert_eq!(report(&sub).unwrap(), report(&direct).unwrap());
    }

    #[test]
    fn pr_csv_layout() {
        let (_, points) = average_precision(&[0.9, 0.1], &[true, false]).unwrap();
        let mut buf = Vec::new();
        write_pr_csv(
            &[PrCurve {
                label: "401".into(),
                points,
            }],
            &mut buf,
        )
        .unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "label,threshold,recall,precision\n401,0.9,1,1\n401,0.1,1,0.5\n");
    }
}
