use serde::{Deserialize, Serialize};

use crate::metrics::BitMatrix;
use crate::neuralcore::{Tensor, BCE_EPSILON};
use crate::scalar::{sigmoid, Scalar};

use super::data::{Features, LabeledFeatures};
use super::parallel::parallel_map;
use super::train::EpochRecord;
use super::{ModelError, ModelResult};

/// One binary logistic regression, `p = σ(w·x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub w: Vec<f64>,
    pub b: f64,
    /// The training column was all ones or all zeros.
    pub degenerate: bool,
}

impl LogisticRegression {
    pub fn zeros(d: usize) -> Self {
        LogisticRegression {
            w: vec![0.0; d],
            b: 0.0,
            degenerate: false,
        }
    }

    fn logit<F: Scalar>(&self, x: &Features<F>, w: &[F], r: usize) -> F {
        x.row_dot(r, w) + F::of(self.b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogregOvr {
    pub models: Vec<LogisticRegression>,
}

impl LogregOvr {
    pub fn degenerate_labels(&self) -> Vec<usize> {
        (0..self.models.len()).filter(|&j| self.models[j].degenerate).collect()
    }

    pub fn predict_proba<F: Scalar>(&self, x: &Features<F>) -> ModelResult<Tensor<F>> {
        let n = x.len();
        let d = match x.shape()? {
            super::InputShape::Flat(d) => d,
            s => return Err(ModelError::Input(format!("logistic regression needs flat features, got {s:?}"))),
        };
        let k = self.models.len();
        let mut out = Tensor::zeros(&[n, k]);
        for (j, m) in self.models.iter().enumerate() {
            if m.w.len() != d {
                return Err(ModelError::Shape(format!("model has {} weights, features have {d} columns", m.w.len())));
            }
            let w: Vec<F> = m.w.iter().map(|&v| F::of(v)).collect();
            for r in 0..n {
                out.row_mut(r)[j] = sigmoid(m.logit(x, &w, r));
            }
        }
        Ok(out)
    }
}

fn clipped_bce(p: f64, y: bool) -> f64 {
    let c = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    if y {
        -c.ln()
    } else {
        -(1.0 - c).ln()
    }
}

fn mean_loss<F: Scalar>(m: &LogisticRegression, w: &[F], x: &Features<F>, y: &[bool]) -> f64 {
    if y.is_empty() {
        return f64::NAN;
    }
    let total: f64 = (0..y.len())
        .map(|r| clipped_bce(sigmoid(m.logit(x, w, r)).to_f64_lossy(), y[r]))
        .sum();
    total / y.len() as f64
}

/// Full-batch gradient descent on mean clipped BCE from zero weights. The
/// step is `lr · 4 / (1 + mean ‖x‖²)`, which keeps descent stable whatever
/// the feature scale. Returns the model plus per-iteration (train, val)
/// losses.
fn train_one<F: Scalar>(
    x: &Features<F>,
    y: &[bool],
    val: Option<(&Features<F>, &[bool])>,
    iters: usize,
    lr: f64,
    d: usize,
) -> (LogisticRegression, Vec<(f64, f64)>) {
    let n = y.len();
    let mut m = LogisticRegression::zeros(d);
    m.degenerate = y.iter().all(|&v| v) || y.iter().all(|&v| !v);
    let sq: f64 = (0..n).map(|r| x.row_sq_norm(r).to_f64_lossy()).sum::<f64>() / n as f64;
    let step = F::of(lr * 4.0 / (1.0 + sq));
    let inv_n = F::of(1.0 / n as f64);
    let mut w = vec![F::zero(); d];
    let mut g = vec![F::zero(); d];
    let mut history = Vec::with_capacity(iters);
    for _ in 0..iters {
        g.iter_mut().for_each(|v| *v = F::zero());
        let mut gb = F::zero();
        for r in 0..n {
            let p = sigmoid(m.logit(x, &w, r));
            let t = if y[r] { F::one() } else { F::zero() };
            let e = (p - t) * inv_n;
            x.row_axpy(r, e, &mut g);
            gb += e;
        }
        for (wi, &gi) in w.iter_mut().zip(&g) {
            *wi -= step * gi;
        }
        m.b -= (step * gb).to_f64_lossy();
        let train_loss = mean_loss(&m, &w, x, y);
        let val_loss = val.map_or(train_loss, |(vx, vy)| mean_loss(&m, &w, vx, vy));
        history.push((train_loss, val_loss));
    }
    m.w = w.iter().map(|v| v.to_f64_lossy()).collect();
    (m, history)
}

/// `k` independent logistic regressions, one per label column. Deterministic;
/// labels are spread over `threads` workers.
pub fn train_logreg_ovr<F: Scalar>(
    x: &Features<F>,
    labels: &BitMatrix,
    val: Option<&LabeledFeatures<F>>,
    iters: usize,
    lr: f64,
    threads: usize,
) -> ModelResult<(LogregOvr, Vec<EpochRecord>)> {
    if x.is_empty() {
        return Err(ModelError::Empty);
    }
    if x.len() != labels.rows() {
        return Err(ModelError::Shape("feature and label rows differ".into()));
    }
    let d = match x.shape()? {
        super::InputShape::Flat(d) => d,
        s => return Err(ModelError::Input(format!("logistic regression needs flat features, got {s:?}"))),
    };
    let val = val.filter(|v| !v.is_empty());
    if let Some(v) = val {
        if v.features.shape()? != super::InputShape::Flat(d) || v.labels.cols() != labels.cols() {
            return Err(ModelError::Shape("validation features do not match training features".into()));
        }
    }
    let k = labels.cols();
    let results = parallel_map(k, threads, |j| -> ModelResult<_> {
        let y = labels.column(j);
        let vy = val.map(|v| v.labels.column(j));
        let vpair = val.zip(vy.as_deref()).map(|(v, vy)| (&v.features, vy));
        Ok(train_one(x, &y, vpair, iters, lr, d))
    })?;
    let mut history: Vec<EpochRecord> = (1..=iters)
        .map(|epoch| EpochRecord {
            epoch,
            train_loss: 0.0,
            val_loss: 0.0,
        })
        .collect();
    let mut models = Vec::with_capacity(k);
    for (m, h) in results {
        for (rec, (t, v)) in history.iter_mut().zip(h) {
            rec.train_loss += t / k as f64;
            rec.val_loss += v / k as f64;
        }
        models.push(m);
    }
    Ok((LogregOvr { models }, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d(n: usize) -> (Features<f64>, BitMatrix) {
        let xs: Vec<f64> = (0..n).map(|i| -2.0 + 4.0 * (i as f64 + 0.5) / n as f64).collect();
        let labels = BitMatrix::from_rows(&xs.iter().map(|&x| vec![x > 0.0]).collect::<Vec<_>>()).unwrap();
        (Features::Dense(Tensor::from_vec(&[n, 1], xs).unwrap()), labels)
    }

    #[test]
    fn separable_one_d() {
        let (x, y) = one_d(40);
        let (ovr, h) = train_logreg_ovr(&x, &y, None, 100, 1.0, 1).unwrap();
        let p = ovr.predict_proba(&x).unwrap();
        let pred = BitMatrix::threshold(&p, 0.5);
        assert_eq!(pred, y);
        assert_eq!(h.len(), 100);
        assert!(h[99].train_loss < h[0].train_loss);
    }

    #[test]
    fn zero_iterations_is_half() {
        let (x, y) = one_d(5);
        let (ovr, _) = train_logreg_ovr(&x, &y, None, 0, 1.0, 1).unwrap();
        let p = ovr.predict_proba(&x).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn one_model_per_label_and_degenerate_flag() {
        let x = Features::Dense(Tensor::<f64>::from_f64(&[4, 2], &[1., 0., 0., 1., 1., 1., 0., 0.]).unwrap());
        let y = BitMatrix::from_rows(&[
            vec![true, false, true],
            vec![false, false, true],
            vec![true, false, true],
            vec![false, false, true],
        ])
        .unwrap();
        let (ovr, _) = train_logreg_ovr(&x, &y, None, 10, 1.0, 2).unwrap();
        assert_eq!(ovr.models.len(), 3);
        assert_eq!(ovr.degenerate_labels(), [1, 2]);
    }

    #[test]
    fn sparse_matches_dense() {
        let dense = Tensor::<f64>::from_f64(&[3, 3], &[1., 0., 2., 0., 0., 1., 3., 1., 0.]).unwrap();
        let sparse = crate::neuralcore::SparseRows {
            cols: 3,
            rows: vec![vec![(0, 1.0), (2, 2.0)], vec![(2, 1.0)], vec![(0, 3.0), (1, 1.0)]],
        };
        let y = BitMatrix::from_rows(&[vec![true], vec![false], vec![true]]).unwrap();
        let (a, _) = train_logreg_ovr(&Features::Dense(dense), &y, None, 20, 1.0, 1).unwrap();
        let (b, _) = train_logreg_ovr(&Features::Sparse(sparse), &y, None, 20, 1.0, 1).unwrap();
        for (u, v) in a.models[0].w.iter().zip(&b.models[0].w) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
