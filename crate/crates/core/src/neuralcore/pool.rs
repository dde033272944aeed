use crate::scalar::Scalar;

use super::{NnError, NnResult, Tensor};

fn pool_windows(m: usize, pool: usize) -> usize {
    m.div_ceil(pool)
}

fn pool_slice<F: Scalar>(x: &[F], out: &mut [F], arg: &mut [usize], m: usize, f: usize, pool: usize) {
    for p in 0..pool_windows(m, pool) {
        let start = p * pool;
        let end = (start + pool).min(m);
        for c in 0..f {
            let mut best = start;
            let mut bv = x[start * f + c];
            for t in start + 1..end {
                let v = x[t * f + c];
                // strict comparison keeps the first index on ties
                if v > bv {
                    bv = v;
                    best = t;
                }
            }
            out[p * f + c] = bv;
            arg[p * f + c] = best;
        }
    }
}

/// Per-channel max over windows of `pool` steps of `input: [m × f]`. The last
/// window may be shorter. Returns the pooled `[⌈m/pool⌉ × f]` tensor and the
/// time index each output came from.
pub fn max_pool1d<F: Scalar>(input: &Tensor<F>, pool: usize) -> NnResult<(Tensor<F>, Vec<usize>)> {
    if pool == 0 {
        return Err(NnError::Invalid("pool size must be ≥ 1".into()));
    }
    let (m, f) = match input.shape() {
        [m, f] => (*m, *f),
        s => return Err(NnError::Shape(format!("max_pool1d expects [m × f], got {s:?}"))),
    };
    let w = pool_windows(m, pool);
    let mut out = Tensor::zeros(&[w, f]);
    let mut arg = vec![0; w * f];
    pool_slice(input.data(), out.data_mut(), &mut arg, m, f, pool);
    Ok((out, arg))
}

/// Routes each pooled gradient to its argmax position.
pub fn max_pool1d_backward<F: Scalar>(argmax: &[usize], dout: &Tensor<F>, m: usize) -> NnResult<Tensor<F>> {
    let f = dout.row_len();
    if argmax.len() != dout.len() {
        return Err(NnError::Shape("max_pool1d backward".into()));
    }
    let mut dx = Tensor::zeros(&[m, f]);
    for (i, &d) in dout.data().iter().enumerate() {
        let c = i % f;
        dx.data_mut()[argmax[i] * f + c] += d;
    }
    Ok(dx)
}

/// Max over the whole time axis of `input: [m × f]`, giving `[f]`.
pub fn max_over_time<F: Scalar>(input: &Tensor<F>) -> NnResult<(Tensor<F>, Vec<usize>)> {
    let m = input.rows();
    if m == 0 {
        return Err(NnError::Shape("max_over_time of empty sequence".into()));
    }
    let (pooled, arg) = max_pool1d(input, m)?;
    let f = pooled.row_len();
    Ok((pooled.reshape(&[f])?, arg))
}

struct PoolCache {
    shape: Vec<usize>,
    argmax: Vec<usize>,
}

/// Batched max pooling over `[batch × time × channels]`.
pub struct MaxPool1d {
    pub pool: usize,
    cache: Option<PoolCache>,
}

impl MaxPool1d {
    pub fn new(pool: usize) -> Self {
        MaxPool1d { pool, cache: None }
    }

    pub fn output_len(&self, m: usize) -> usize {
        pool_windows(m, self.pool)
    }

    pub fn forward<F: Scalar>(&mut self, input: &Tensor<F>) -> NnResult<Tensor<F>> {
        let (b, m, f) = match input.shape() {
            [b, m, f] => (*b, *m, *f),
            s => return Err(NnError::Shape(format!("pool layer expects [b × m × f], got {s:?}"))),
        };
        if self.pool == 0 {
            return Err(NnError::Invalid("pool size must be ≥ 1".into()));
        }
        let w = pool_windows(m, self.pool);
        let mut out = Tensor::zeros(&[b, w, f]);
        let mut argmax = vec![0; b * w * f];
        for e in 0..b {
            pool_slice(
                input.row(e),
                out.row_mut(e),
                &mut argmax[e * w * f..(e + 1) * w * f],
                m,
                f,
                self.pool,
            );
        }
        self.cache = Some(PoolCache {
            shape: input.shape().to_vec(),
            argmax,
        });
        Ok(out)
    }

    pub fn backward<F: Scalar>(&self, dout: &Tensor<F>) -> NnResult<Tensor<F>> {
        let cache = self.cache.as_ref().ok_or(NnError::NoCache("max_pool1d"))?;
        let (b, m, f) = (cache.shape[0], cache.shape[1], cache.shape[2]);
        if dout.len() != cache.argmax.len() {
            return Err(NnError::Shape("pool layer backward".into()));
        }
        let per = dout.len() / b.max(1);
        let mut dx = Tensor::zeros(&[b, m, f]);
        for e in 0..b {
            let d = &dout.data()[e * per..(e + 1) * per];
            let arg = &cache.argmax[e * per..(e + 1) * per];
            let row = dx.row_mut(e);
            for (i, (&dv, &t)) in d.iter().zip(arg).enumerate() {
                row[t * f + i % f] += dv;
            }
        }
        Ok(dx)
    }
}

/// Max-over-time pooling layer: `[batch × time × channels]` to `[batch × channels]`.
pub struct GlobalMaxPool {
    inner: MaxPool1d,
}

impl Default for GlobalMaxPool {
    fn default() -> Self {
        Self::new()
    }
}

impl GlobalMaxPool {
    pub fn new() -> Self {
        GlobalMaxPool {
            inner: MaxPool1d::new(1),
        }
    }

    pub fn forward<F: Scalar>(&mut self, input: &Tensor<F>) -> NnResult<Tensor<F>> {
        let (b, m, f) = match input.shape() {
            [b, m, f] => (*b, *m, *f),
            s => return Err(NnError::Shape(format!("global pool expects [b × m × f], got {s:?}"))),
        };
        if m == 0 {
            return Err(NnError::Shape("max over empty time axis".into()));
        }
        self.inner.pool = m;
        self.inner.forward(input)?.reshape(&[b, f])
    }

    pub fn backward<F: Scalar>(&self, dout: &Tensor<F>) -> NnResult<Tensor<F>> {
        self.inner.backward(dout)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_over_time_picks_largest() {
        let x = Tensor::<f64>::from_f64(&[3, 1], &[1., 3., 2.]).unwrap();
        let (y, arg) = max_over_time(&x).unwrap();
        assert_eq!(y.data(), &[3.0]);
        assert_eq!(arg, vec![1]);
    }

    #[test]
    fn pool_of_two() {
        let x = Tensor::<f64>::from_f64(&[4, 1], &[1., 2., 3., 4.]).unwrap();
        let (y, _) = max_pool1d(&x, 2).unwrap();
        assert_eq!(y.data(), &[2., 4.]);
    }

    #[test]
    fn short_tail_window() {
        let x = Tensor::<f64>::from_f64(&[5, 1], &[1., 2., 3., 4., 9.]).unwrap();
        let (y, _) = max_pool1d(&x, 2).unwrap();
        assert_eq!(y.data(), &[2., 4., 9.]);
    }

    #[test]
    fn ties_route_gradient_to_first_index() {
        let x = Tensor::<f64>::from_f64(&[2, 1], &[2., 2.]).unwrap();
        let (_, arg) = max_pool1d(&x, 2).unwrap();
        let dx = max_pool1d_backward(&arg, &Tensor::<f64>::from_f64(&[1, 1], &[1.0]).unwrap(), 2).unwrap();
        assert_eq!(dx.data(), &[1.0, 0.0]);
    }

    #[test]
    fn batched_layer_matches_single_op() {
        let x = Tensor::<f64>::from_f64(&[2, 3, 2], &[1., 6., 5., 2., 3., 4., 0., -1., -2., 7., 8., 7.]).unwrap();
        let mut layer = MaxPool1d::new(2);
        let y = layer.forward(&x).unwrap();
        for e in 0..2 {
            let single = Tensor::from_vec(&[3, 2], x.row(e).to_vec()).unwrap();
            let (p, _) = max_pool1d(&single, 2).unwrap();
            assert_eq!(y.row(e), p.data());
        }
    }
}
