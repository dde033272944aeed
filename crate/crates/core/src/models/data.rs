use crate::features::SequenceExample;
use crate::metrics::BitMatrix;
use crate::neuralcore::{SparseRows, Tensor};
use crate::scalar::Scalar;

use super::spec::InputKind;
use super::{ModelError, ModelResult};

/// A feature matrix in one of the three tracks.
#[derive(Debug, Clone, PartialEq)]
pub enum Features<F> {
    Sparse(SparseRows<F>),
    Dense(Tensor<F>),
    Sequence(Vec<SequenceExample>),
}

/// Per-example input width: columns for flat features, length for sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputShape {
    Flat(usize),
    Sequence(usize),
}

impl<F: Scalar> Features<F> {
    pub fn len(&self) -> usize {
        match self {
            Features::Sparse(s) => s.rows.len(),
            Features::Dense(t) => t.rows(),
            Features::Sequence(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> InputKind {
        match self {
            Features::Sparse(_) => InputKind::Sparse,
            Features::Dense(_) => InputKind::Dense,
            Features::Sequence(_) => InputKind::Sequence,
        }
    }

    pub fn shape(&self) -> ModelResult<InputShape> {
        Ok(match self {
            Features::Sparse(s) => InputShape::Flat(s.cols),
            Features::Dense(t) => InputShape::Flat(if t.shape().len() == 2 { t.row_len() } else { 0 }),
            Features::Sequence(v) => {
                let n = v.first().map_or(0, |s| s.indices.len());
                if v.iter().any(|s| s.indices.len() != n) {
                    return Err(ModelError::Shape("sequences of different lengths".into()));
                }
                InputShape::Sequence(n)
            }
        })
    }

    pub fn select(&self, rows: &[usize]) -> Features<F> {
        match self {
            Features::Sparse(s) => Features::Sparse(SparseRows {
                cols: s.cols,
                rows: rows.iter().map(|&r| s.rows[r].clone()).collect(),
            }),
            Features::Dense(t) => {
                let k = t.row_len();
                let mut out = Tensor::zeros(&[rows.len(), k]);
                for (i, &r) in rows.iter().enumerate() {
                    out.row_mut(i).copy_from_slice(t.row(r));
                }
                Features::Dense(out)
            }
            Features::Sequence(v) => Features::Sequence(rows.iter().map(|&r| v[r].clone()).collect()),
        }
    }

    /// `Σ_c x[r,c]·w[c]`.
    pub fn row_dot(&self, r: usize, w: &[F]) -> F {
        match self {
            Features::Sparse(s) => s.rows[r].iter().map(|&(c, v)| v * w[c as usize]).sum(),
            Features::Dense(t) => crate::neuralcore::dot(t.row(r), w),
            Features::Sequence(_) => F::zero(),
        }
    }

    /// `g += alpha · x[r]`.
    pub fn row_axpy(&self, r: usize, alpha: F, g: &mut [F]) {
        match self {
            Features::Sparse(s) => {
                for &(c, v) in &s.rows[r] {
                    g[c as usize] += alpha * v;
                }
            }
            Features::Dense(t) => {
                for (o, &v) in g.iter_mut().zip(t.row(r)) {
                    *o += alpha * v;
                }
            }
            Features::Sequence(_) => {}
        }
    }

    pub fn row_sq_norm(&self, r: usize) -> F {
        match self {
            Features::Sparse(s) => s.rows[r].iter().map(|&(_, v)| v * v).sum(),
            Features::Dense(t) => t.row(r).iter().map(|&v| v * v).sum(),
            Features::Sequence(_) => F::zero(),
        }
    }
}

/// Features paired with their multi-hot label rows.
#[derive(Debug, Clone)]
pub struct LabeledFeatures<F> {
    pub features: Features<F>,
    pub labels: BitMatrix,
}

impl<F: Scalar> LabeledFeatures<F> {
    pub fn new(features: Features<F>, labels: BitMatrix) -> ModelResult<Self> {
        if features.len() != labels.rows() {
            return Err(ModelError::Shape(format!(
                "{} feature rows vs {} label rows",
                features.len(),
                labels.rows()
            )));
        }
        Ok(LabeledFeatures { features, labels })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        LabeledFeatures {
            features: self.features.select(rows),
            labels: self.labels.select_rows(rows),
        }
    }
}
