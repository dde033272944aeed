use serde::{Deserialize, Serialize};

use crate::neuralcore::Tensor;
use crate::scalar::Scalar;

use super::{MetricsError, MetricsResult};

/// Row-major `n × q` matrix of label bits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        BitMatrix {
            rows,
            cols,
            data: vec![false; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> MetricsResult<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(MetricsError::Shape("ragged label rows".into()));
        }
        Ok(BitMatrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn threshold<F: Scalar>(probs: &Tensor<F>, threshold: f64) -> Self {
        let t = F::of(threshold);
        BitMatrix {
            rows: probs.rows(),
            cols: probs.row_len(),
            data: probs.data().iter().map(|&p| p >= t).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.data[i * self.cols + j] = v;
    }

    pub fn column(&self, j: usize) -> Vec<bool> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn first_columns(&self, m: usize) -> Self {
        let mut out = BitMatrix::zeros(self.rows, m);
        for i in 0..self.rows {
            out.data[i * m..(i + 1) * m].copy_from_slice(&self.row(i)[..m]);
        }
        out
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        BitMatrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Fraction of set bits.
    pub fn density(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().filter(|b| **b).count() as f64 / self.data.len() as f64
    }

    pub fn to_tensor<F: Scalar>(&self) -> Tensor<F> {
        let data = self.data.iter().map(|&b| if b { F::one() } else { F::zero() }).collect();
        Tensor::from_vec(&[self.rows, self.cols], data).expect("bit matrix shape")
    }
}
