use rand::Rng;

use crate::scalar::Scalar;

use super::{dot, glorot_uniform, Activation, NnError, NnResult, Param, Tensor};

fn conv_dims<F: Scalar>(input: &Tensor<F>, filters: &Tensor<F>) -> NnResult<(usize, usize, usize, usize)> {
    let (n, k) = match input.shape() {
        [n, k] => (*n, *k),
        s => return Err(NnError::Shape(format!("conv1d input must be [n × k], got {s:?}"))),
    };
    let (f, h, fk) = match filters.shape() {
        [f, h, k] => (*f, *h, *k),
        s => return Err(NnError::Shape(format!("conv1d filters must be [f × h × k], got {s:?}"))),
    };
    if fk != k {
        return Err(NnError::Shape(format!("filter width {fk} != embedding dim {k}")));
    }
    if n < h {
        return Err(NnError::Shape(format!("sequence length {n} shorter than filter height {h}")));
    }
    Ok((n, k, f, h))
}

/// Valid, stride-1 convolution of every `h`-word window of `input: [n × k]`
/// with each filter in `filters: [f × h × k]`. Output is `[(n−h+1) × f]`.
pub fn conv1d<F: Scalar>(input: &Tensor<F>, filters: &Tensor<F>, bias: &Tensor<F>) -> NnResult<Tensor<F>> {
    let (n, k, f, h) = conv_dims(input, filters)?;
    if bias.len() != f {
        return Err(NnError::Shape("conv1d bias".into()));
    }
    let m = n - h + 1;
    let mut out = Tensor::zeros(&[m, f]);
    conv_forward_slice(input.data(), filters.data(), bias.data(), out.data_mut(), m, k, f, h);
    Ok(out)
}

/// Returns `(d_input, d_filters, d_bias)`.
pub fn conv1d_backward<F: Scalar>(
    input: &Tensor<F>,
    filters: &Tensor<F>,
    dout: &Tensor<F>,
) -> NnResult<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let (n, k, f, h) = conv_dims(input, filters)?;
    let m = n - h + 1;
    if dout.shape() != [m, f] {
        return Err(NnError::Shape("conv1d backward".into()));
    }
    let mut dx = Tensor::zeros(&[n, k]);
    let mut dw = Tensor::zeros(&[f, h, k]);
    let mut db = Tensor::zeros(&[f]);
    conv_backward_slice(
        input.data(),
        filters.data(),
        dout.data(),
        Some(dx.data_mut()),
        dw.data_mut(),
        db.data_mut(),
        m,
        k,
        f,
        h,
    );
    Ok((dx, dw, db))
}

#[allow(clippy::too_many_arguments)]
fn conv_forward_slice<F: Scalar>(x: &[F], w: &[F], b: &[F], out: &mut [F], m: usize, k: usize, f: usize, h: usize) {
    let win = h * k;
    for t in 0..m {
        // the window rows t..t+h are contiguous in a row-major [n × k] input
        let xw = &x[t * k..t * k + win];
        let o = &mut out[t * f..(t + 1) * f];
        for (j, ov) in o.iter_mut().enumerate() {
            *ov = b[j] + dot(xw, &w[j * win..(j + 1) * win]);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward_slice<F: Scalar>(
    x: &[F],
    w: &[F],
    dout: &[F],
    mut dx: Option<&mut [F]>,
    dw: &mut [F],
    db: &mut [F],
    m: usize,
    k: usize,
    f: usize,
    h: usize,
) {
    let win = h * k;
    for t in 0..m {
        let xw = &x[t * k..t * k + win];
        let d = &dout[t * f..(t + 1) * f];
        for (j, &dv) in d.iter().enumerate() {
            if dv == F::zero() {
                continue;
            }
            db[j] += dv;
            let gw = &mut dw[j * win..(j + 1) * win];
            for (g, &xv) in gw.iter_mut().zip(xw) {
                *g += dv * xv;
            }
            if let Some(dx) = dx.as_deref_mut() {
                let gx = &mut dx[t * k..t * k + win];
                for (g, &wv) in gx.iter_mut().zip(&w[j * win..(j + 1) * win]) {
                    *g += dv * wv;
                }
            }
        }
    }
}

struct ConvCache<F> {
    input: Tensor<F>,
    output: Tensor<F>,
}

/// Batched 1-d convolution layer over `[batch × time × dim]` activations.
pub struct Conv1d<F> {
    pub filters: Param<F>,
    pub bias: Param<F>,
    pub activation: Activation,
    cache: Option<ConvCache<F>>,
}

impl<F: Scalar> Conv1d<F> {
    pub fn new<R: Rng>(rng: &mut R, n_filters: usize, height: usize, dim: usize, activation: Activation) -> Self {
        let fan_in = height * dim;
        let fan_out = height * n_filters;
        Conv1d {
            filters: Param::new("filters", glorot_uniform(rng, &[n_filters, height, dim], fan_in, fan_out)),
            bias: Param::new("bias", Tensor::zeros(&[n_filters])),
            activation,
            cache: None,
        }
    }

    pub fn n_filters(&self) -> usize {
        self.filters.value.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.filters.value.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.filters.value.shape()[2]
    }

    pub fn output_len(&self, n: usize) -> Option<usize> {
        (n >= self.height()).then(|| n - self.height() + 1)
    }

    pub fn forward(&mut self, input: Tensor<F>) -> NnResult<Tensor<F>> {
        let (b, n, k) = match input.shape() {
            [b, n, k] => (*b, *n, *k),
            s => return Err(NnError::Shape(format!("conv layer expects [b × n × k], got {s:?}"))),
        };
        let (f, h) = (self.n_filters(), self.height());
        if k != self.dim() {
            return Err(NnError::Shape(format!("conv layer dim {} != input dim {k}", self.dim())));
        }
        let m = self
            .output_len(n)
            .ok_or_else(|| NnError::Shape(format!("sequence length {n} shorter than filter height {h}")))?;
        let mut out = Tensor::zeros(&[b, m, f]);
        for e in 0..b {
            conv_forward_slice(
                input.row(e),
                self.filters.value.data(),
                self.bias.value.data(),
                out.row_mut(e),
                m,
                k,
                f,
                h,
            );
        }
        if self.activation != Activation::Linear {
            let act = self.activation;
            out.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
        }
        self.cache = Some(ConvCache {
            input,
            output: out.clone(),
        });
        Ok(out)
    }

    pub fn backward(&mut self, dout: &Tensor<F>, need_dx: bool) -> NnResult<Option<Tensor<F>>> {
        let cache = self.cache.as_ref().ok_or(NnError::NoCache("conv1d"))?;
        if dout.shape() != cache.output.shape() {
            return Err(NnError::Shape("conv layer backward".into()));
        }
        let (b, n, k) = (cache.input.shape()[0], cache.input.shape()[1], cache.input.shape()[2]);
        let (f, h) = (self.n_filters(), self.height());
        let m = n - h + 1;
        let mut dpre = dout.clone();
        if self.activation != Activation::Linear {
            let act = self.activation;
            for (d, &y) in dpre.data_mut().iter_mut().zip(cache.output.data()) {
                *d *= act.derivative_from_output(y);
            }
        }
        let mut dx = need_dx.then(|| Tensor::zeros(&[b, n, k]));
        for e in 0..b {
            conv_backward_slice(
                cache.input.row(e),
                self.filters.value.data(),
                dpre.row(e),
                dx.as_mut().map(|d| d.row_mut(e)),
                self.filters.grad.data_mut(),
                self.bias.grad.data_mut(),
                m,
                k,
                f,
                h,
            );
        }
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        vec![&mut self.filters, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Param<F>> {
        vec![&self.filters, &self.bias]
    }
}
