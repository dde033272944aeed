use rand::Rng;

use crate::scalar::Scalar;

use super::{
    add_column_sums, gemm_nn, gemm_nt, gemm_tn, glorot_uniform, Activation, NnError, NnResult,
    Param, Tensor,
};

/// Batch of sparse rows, `(column, value)` pairs sorted by column.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows<F> {
    pub cols: usize,
    pub rows: Vec<Vec<(u32, F)>>,
}

impl<F: Scalar> SparseRows<F> {
    pub fn to_dense(&self) -> Tensor<F> {
        let mut t = Tensor::zeros(&[self.rows.len(), self.cols]);
        for (i, row) in self.rows.iter().enumerate() {
            let out = t.row_mut(i);
            for &(c, v) in row {
                out[c as usize] += v;
            }
        }
        t
    }
}

pub enum DenseInput<F> {
    Dense(Tensor<F>),
    Sparse(SparseRows<F>),
}

impl<F: Scalar> DenseInput<F> {
    fn rows(&self) -> usize {
        match self {
            DenseInput::Dense(t) => t.rows(),
            DenseInput::Sparse(s) => s.rows.len(),
        }
    }

    fn cols(&self) -> usize {
        match self {
            DenseInput::Dense(t) => t.row_len(),
            DenseInput::Sparse(s) => s.cols,
        }
    }
}

/// `y = xW + b` for `x: [batch × in]`, `W: [in × out]`, `b: [out]`.
pub fn dense<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>) -> NnResult<Tensor<F>> {
    let (n_in, n_out) = weight_dims(w)?;
    if x.row_len() != n_in || b.len() != n_out {
        return Err(NnError::Shape(format!(
            "dense: input {:?}, weight {:?}, bias {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let m = x.rows();
    let mut y = Tensor::zeros(&[m, n_out]);
    for i in 0..m {
        y.row_mut(i).copy_from_slice(b.data());
    }
    gemm_nn(x.data(), w.data(), y.data_mut(), m, n_in, n_out);
    Ok(y)
}

/// Gradients of `y = xW + b` given `dy`: returns `(dx, dW, db)`.
pub fn dense_backward<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    dy: &Tensor<F>,
) -> NnResult<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let (n_in, n_out) = weight_dims(w)?;
    let m = x.rows();
    if dy.rows() != m || dy.row_len() != n_out || x.row_len() != n_in {
        return Err(NnError::Shape("dense backward".into()));
    }
    let mut dx = Tensor::zeros(&[m, n_in]);
    gemm_nt(dy.data(), w.data(), dx.data_mut(), m, n_out, n_in);
    let mut dw = Tensor::zeros(&[n_in, n_out]);
    gemm_tn(x.data(), dy.data(), dw.data_mut(), m, n_in, n_out);
    let mut db = Tensor::zeros(&[n_out]);
    add_column_sums(dy.data(), db.data_mut(), m, n_out);
    Ok((dx, dw, db))
}

fn weight_dims<F: Scalar>(w: &Tensor<F>) -> NnResult<(usize, usize)> {
    match w.shape() {
        [a, b] => Ok((*a, *b)),
        s => Err(NnError::Shape(format!("weight must be 2-d, got {s:?}"))),
    }
}

struct DenseCache<F> {
    input: DenseInput<F>,
    output: Tensor<F>,
}

/// Fully connected layer with an elementwise activation.
pub struct Dense<F> {
    pub w: Param<F>,
    pub b: Param<F>,
    pub activation: Activation,
    cache: Option<DenseCache<F>>,
}

impl<F: Scalar> Dense<F> {
    pub fn new<R: Rng>(rng: &mut R, n_in: usize, n_out: usize, activation: Activation) -> Self {
        Dense {
            w: Param::new("w", glorot_uniform(rng, &[n_in, n_out], n_in, n_out)),
            b: Param::new("b", Tensor::zeros(&[n_out])),
            activation,
            cache: None,
        }
    }

    pub fn n_in(&self) -> usize {
        self.w.value.shape()[0]
    }

    pub fn n_out(&self) -> usize {
        self.w.value.shape()[1]
    }

    pub fn forward(&mut self, input: DenseInput<F>) -> NnResult<Tensor<F>> {
        let (n_in, n_out) = (self.n_in(), self.n_out());
        if input.cols() != n_in {
            return Err(NnError::Shape(format!(
                "dense expects {} inputs, got {}",
                n_in,
                input.cols()
            )));
        }
        let mut y = match &input {
            DenseInput::Dense(x) => dense(x, &self.w.value, &self.b.value)?,
            DenseInput::Sparse(s) => {
                let mut y = Tensor::zeros(&[s.rows.len(), n_out]);
                let w = self.w.value.data();
                for (i, row) in s.rows.iter().enumerate() {
                    let out = y.row_mut(i);
                    out.copy_from_slice(self.b.value.data());
                    for &(c, v) in row {
                        let wr = &w[c as usize * n_out..(c as usize + 1) * n_out];
                        for (o, &wv) in out.iter_mut().zip(wr) {
                            *o += v * wv;
                        }
                    }
                }
                y
            }
        };
        if self.activation != Activation::Linear {
            let act = self.activation;
            y.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
        }
        self.cache = Some(DenseCache {
            input,
            output: y.clone(),
        });
        Ok(y)
    }

    /// Accumulates parameter gradients; returns `dx` when requested and the
    /// input was dense.
    pub fn backward(&mut self, dy: &Tensor<F>, need_dx: bool) -> NnResult<Option<Tensor<F>>> {
        let cache = self.cache.as_ref().ok_or(NnError::NoCache("dense"))?;
        let (n_in, n_out) = (self.n_in(), self.n_out());
        let m = cache.input.rows();
        if dy.rows() != m || dy.row_len() != n_out {
            return Err(NnError::Shape("dense backward".into()));
        }
        let mut dpre = dy.clone();
        if self.activation != Activation::Linear {
            let act = self.activation;
            for (d, &y) in dpre.data_mut().iter_mut().zip(cache.output.data()) {
                *d *= act.derivative_from_output(y);
            }
        }
        add_column_sums(dpre.data(), self.b.grad.data_mut(), m, n_out);
        match &cache.input {
            DenseInput::Dense(x) => {
                gemm_tn(x.data(), dpre.data(), self.w.grad.data_mut(), m, n_in, n_out);
                if need_dx {
                    let mut dx = Tensor::zeros(&[m, n_in]);
                    gemm_nt(dpre.data(), self.w.value.data(), dx.data_mut(), m, n_out, n_in);
                    return Ok(Some(dx));
                }
            }
            DenseInput::Sparse(s) => {
                let gw = self.w.grad.data_mut();
                for (i, row) in s.rows.iter().enumerate() {
                    let d = dpre.row(i);
                    for &(c, v) in row {
                        let gr = &mut gw[c as usize * n_out..(c as usize + 1) * n_out];
                        for (g, &dv) in gr.iter_mut().zip(d) {
                            *g += v * dv;
                        }
                    }
                }
            }
        }
        Ok(None)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn params(&self) -> Vec<&Param<F>> {
        vec![&self.w, &self.b]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_pass_input_through() {
        let x = Tensor::<f64>::from_f64(&[2, 2], &[0.3, -1.0, 2.0, 5.0]).unwrap();
        let w = Tensor::from_f64(&[2, 2], &[1., 0., 0., 1.]).unwrap();
        let b = Tensor::zeros(&[2]);
        assert_eq!(dense(&x, &w, &b).unwrap(), x);
    }

    #[test]
    fn hand_example() {
        let x = Tensor::<f64>::from_f64(&[1, 2], &[1., 2.]).unwrap();
        let w = Tensor::from_f64(&[2, 2], &[1., 0., 0., 1.]).unwrap();
        let b = Tensor::from_f64(&[2], &[1., 1.]).unwrap();
        assert_eq!(dense(&x, &w, &b).unwrap().data(), &[2., 3.]);
    }

    #[test]
    fn sparse_and_dense_paths_agree() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut a = Dense::<f64>::new(&mut rng, 5, 3, Activation::Relu);
        let sparse = SparseRows {
            cols: 5,
            rows: vec![vec![(0, 1.5), (3, -2.0)], vec![], vec![(4, 0.25)]],
        };
        let dense_in = sparse.to_dense();
        let y1 = a.forward(DenseInput::Sparse(sparse)).unwrap();
        let dy = Tensor::from_f64(&[3, 3], &[1., -1., 0.5, 2., 0., 1., -0.5, 0.3, 0.7]).unwrap();
        a.backward(&dy, false).unwrap();
        let g1 = a.w.grad.clone();
        a.w.zero_grad();
        a.b.zero_grad();
        let y2 = a.forward(DenseInput::Dense(dense_in)).unwrap();
        a.backward(&dy, false).unwrap();
        assert_eq!(y1, y2);
        for (p, q) in g1.data().iter().zip(a.w.grad.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let x = Tensor::<f64>::zeros(&[1, 3]);
        let w = Tensor::zeros(&[2, 2]);
        assert!(dense(&x, &w, &Tensor::zeros(&[2])).is_err());
    }
}
