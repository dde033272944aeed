use crate::scalar::Scalar;

use super::{NnError, NnResult, Tensor};

/// Time-major batch of sequences.
///
/// The first `shared.len()` steps are identical for every example and are
/// stored once as `[1 × dim]` rows; the remaining steps are `[batch × dim]`.
/// Front-padded token sequences share their common padding prefix this way.
///
/// When a `SeqBatch` carries gradients, a shared row holds the *sum* of the
/// per-example gradients at that step.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBatch<F> {
    pub batch: usize,
    pub dim: usize,
    pub shared: Vec<Tensor<F>>,
    pub steps: Vec<Tensor<F>>,
}

impl<F: Scalar> SeqBatch<F> {
    pub fn new(batch: usize, dim: usize, shared: Vec<Tensor<F>>, steps: Vec<Tensor<F>>) -> NnResult<Self> {
        if shared.iter().any(|t| t.shape() != [1, dim]) || steps.iter().any(|t| t.shape() != [batch, dim]) {
            return Err(NnError::Shape("inconsistent sequence batch".into()));
        }
        Ok(SeqBatch { batch, dim, shared, steps })
    }

    pub fn len(&self) -> usize {
        self.shared.len() + self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Expands the shared prefix into full `[batch × dim]` steps.
    pub fn materialize(self) -> Self {
        if self.shared.is_empty() {
            return self;
        }
        let SeqBatch { batch, dim, shared, steps } = self;
        let mut all = Vec::with_capacity(shared.len() + steps.len());
        for s in shared {
            all.push(broadcast_row(&s, batch));
        }
        all.extend(steps);
        SeqBatch {
            batch,
            dim,
            shared: Vec::new(),
            steps: all,
        }
    }

    /// Gradient counterpart of [`materialize`](Self::materialize): sums the
    /// first `prefix` per-example steps into shared rows.
    pub fn fold_prefix(self, prefix: usize) -> NnResult<Self> {
        let have = self.shared.len();
        if prefix == have {
            return Ok(self);
        }
        if prefix < have || prefix > self.len() {
            return Err(NnError::Shape(format!("cannot fold {have} shared steps into {prefix}")));
        }
        let SeqBatch { batch, dim, mut shared, steps } = self;
        let mut rest = steps.into_iter();
        for _ in have..prefix {
            let t = rest.next().expect("length checked");
            let mut row = Tensor::zeros(&[1, dim]);
            super::add_column_sums(t.data(), row.data_mut(), batch, dim);
            shared.push(row);
        }
        Ok(SeqBatch {
            batch,
            dim,
            shared,
            steps: rest.collect(),
        })
    }

    /// `[batch × time × dim]` copy.
    pub fn to_btd(&self) -> Tensor<F> {
        let t_len = self.len();
        let mut out = Tensor::zeros(&[self.batch, t_len, self.dim]);
        let d = self.dim;
        for b in 0..self.batch {
            let row = out.row_mut(b);
            for (t, s) in self.shared.iter().enumerate() {
                row[t * d..(t + 1) * d].copy_from_slice(s.data());
            }
            let off = self.shared.len();
            for (t, s) in self.steps.iter().enumerate() {
                row[(off + t) * d..(off + t + 1) * d].copy_from_slice(s.row(b));
            }
        }
        out
    }

    pub fn from_btd(x: &Tensor<F>) -> NnResult<Self> {
        let (b, t_len, d) = match x.shape() {
            [b, t, d] => (*b, *t, *d),
            s => return Err(NnError::Shape(format!("expected [b × t × d], got {s:?}"))),
        };
        let mut steps = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let mut s = Tensor::zeros(&[b, d]);
            for e in 0..b {
                s.row_mut(e).copy_from_slice(&x.row(e)[t * d..(t + 1) * d]);
            }
            steps.push(s);
        }
        Ok(SeqBatch {
            batch: b,
            dim: d,
            shared: Vec::new(),
            steps,
        })
    }
}

pub(crate) fn broadcast_row<F: Scalar>(row: &Tensor<F>, batch: usize) -> Tensor<F> {
    let d = row.len();
    let mut out = Tensor::zeros(&[batch, d]);
    for b in 0..batch {
        out.row_mut(b).copy_from_slice(row.data());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn materialize_and_btd_round_trip() {
        let shared = vec![Tensor::<f64>::from_f64(&[1, 2], &[0., 0.]).unwrap()];
        let steps = vec![Tensor::from_f64(&[2, 2], &[1., 2., 3., 4.]).unwrap()];
        let s = SeqBatch::new(2, 2, shared, steps).unwrap();
        let btd = s.to_btd();
        assert_eq!(btd.data(), &[0., 0., 1., 2., 0., 0., 3., 4.]);
        let m = s.clone().materialize();
        assert_eq!(m.to_btd(), btd);
        assert_eq!(SeqBatch::from_btd(&btd).unwrap(), m);
    }

    #[test]
    fn fold_sums_rows() {
        let steps = vec![
            Tensor::<f64>::from_f64(&[2, 1], &[1., 2.]).unwrap(),
            Tensor::from_f64(&[2, 1], &[5., 7.]).unwrap(),
        ];
        let g = SeqBatch::new(2, 1, vec![], steps).unwrap().fold_prefix(1).unwrap();
        assert_eq!(g.shared[0].data(), &[3.0]);
        assert_eq!(g.steps.len(), 1);
    }
}
