use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::features::{EmbeddingMatrix, SequenceExample};
use crate::neuralcore::{
    read_tensor, write_tensor, Activation, Conv1d, Dense, DenseInput, Dropout, GlobalMaxPool, MaxPool1d, Mode,
    NnError, NnResult, Param, Recurrent, RecurrentOutput, SeqBatch, SparseRows, Tensor,
};
use crate::scalar::{sigmoid, Scalar};

use super::data::{Features, InputShape};
use super::spec::{LayerSpec, ModelSpec};
use super::{ModelError, ModelResult};

enum Layer<F> {
    Dense(Dense<F>),
    Conv(Conv1d<F>),
    Pool(MaxPool1d),
    GlobalPool(GlobalMaxPool),
    Recurrent(Recurrent<F>),
    Dropout(Dropout<F>),
}

/// Activations (and their gradients) between layers.
enum Value<F> {
    Seq(SeqBatch<F>),
    /// `[batch × time × dim]`
    Btd(Tensor<F>),
    /// `[batch × dim]`
    Flat(Tensor<F>),
    Sparse(SparseRows<F>),
}

/// How a value looked before a layer converted it.
#[derive(Clone, Copy)]
enum Form {
    Seq { shared: usize, t: usize, d: usize },
    Btd { t: usize, d: usize },
    Flat,
    Sparse,
}

fn form_of<F: Scalar>(v: &Value<F>) -> Form {
    match v {
        Value::Seq(s) => Form::Seq {
            shared: s.shared.len(),
            t: s.len(),
            d: s.dim,
        },
        Value::Btd(x) => Form::Btd {
            t: x.shape()[1],
            d: x.shape()[2],
        },
        Value::Flat(_) => Form::Flat,
        Value::Sparse(_) => Form::Sparse,
    }
}

fn to_btd<F: Scalar>(v: Value<F>) -> NnResult<Tensor<F>> {
    match v {
        Value::Btd(x) => Ok(x),
        Value::Seq(s) => Ok(s.to_btd()),
        _ => Err(NnError::Shape("layer needs a time axis".into())),
    }
}

fn to_seq<F: Scalar>(v: Value<F>) -> NnResult<SeqBatch<F>> {
    match v {
        Value::Seq(s) => Ok(s),
        Value::Btd(x) => SeqBatch::from_btd(&x),
        _ => Err(NnError::Shape("recurrent layer needs a time axis".into())),
    }
}

fn to_dense_input<F: Scalar>(v: Value<F>) -> NnResult<DenseInput<F>> {
    Ok(match v {
        Value::Sparse(s) => DenseInput::Sparse(s),
        Value::Flat(x) => DenseInput::Dense(x),
        Value::Btd(x) => {
            let b = x.shape()[0];
            let n = x.len() / b.max(1);
            DenseInput::Dense(x.reshape(&[b, n])?)
        }
        Value::Seq(s) => {
            let b = s.batch;
            let x = s.to_btd();
            let n = x.len() / b.max(1);
            DenseInput::Dense(x.reshape(&[b, n])?)
        }
    })
}

/// Adjoint of the forward conversion: brings a gradient back to `form`.
fn grad_to_form<F: Scalar>(g: Value<F>, form: Form) -> NnResult<Value<F>> {
    match form {
        Form::Seq { shared, t, d } => {
            let s = match g {
                Value::Seq(s) => s,
                Value::Btd(x) => SeqBatch::from_btd(&x)?,
                Value::Flat(x) => {
                    let b = x.rows();
                    SeqBatch::from_btd(&x.reshape(&[b, t, d])?)?
                }
                Value::Sparse(_) => return Err(NnError::Shape("sparse gradient".into())),
            };
            Ok(Value::Seq(s.fold_prefix(shared)?))
        }
        Form::Btd { t, d } => Ok(Value::Btd(match g {
            Value::Btd(x) => x,
            Value::Flat(x) => {
                let b = x.rows();
                x.reshape(&[b, t, d])?
            }
            Value::Seq(s) => s.materialize().to_btd(),
            Value::Sparse(_) => return Err(NnError::Shape("sparse gradient".into())),
        })),
        Form::Flat => match g {
            Value::Flat(x) => Ok(Value::Flat(x)),
            _ => Err(NnError::Shape("flat gradient expected".into())),
        },
        Form::Sparse => Err(NnError::Shape("no gradient flows into sparse input".into())),
    }
}

fn dropout_forward<F: Scalar>(d: &mut Dropout<F>, v: Value<F>, mode: Mode, rng: &mut ChaCha8Rng) -> NnResult<Value<F>> {
    Ok(match v {
        Value::Seq(s) => {
            let SeqBatch {
                batch,
                dim,
                shared,
                steps,
            } = s;
            let n_shared = shared.len();
            let mut all = d.forward(shared.into_iter().chain(steps).collect(), mode, rng);
            let steps = all.split_off(n_shared);
            Value::Seq(SeqBatch {
                batch,
                dim,
                shared: all,
                steps,
            })
        }
        Value::Btd(x) => Value::Btd(d.forward(vec![x], mode, rng).pop().expect("one tensor")),
        Value::Flat(x) => Value::Flat(d.forward(vec![x], mode, rng).pop().expect("one tensor")),
        Value::Sparse(_) => return Err(NnError::Shape("dropout on sparse input".into())),
    })
}

fn dropout_backward<F: Scalar>(d: &Dropout<F>, g: Value<F>) -> NnResult<Value<F>> {
    Ok(match g {
        Value::Seq(s) => {
            let SeqBatch {
                batch,
                dim,
                shared,
                steps,
            } = s;
            let n_shared = shared.len();
            let mut all = d.backward(shared.into_iter().chain(steps).collect())?;
            let steps = all.split_off(n_shared);
            Value::Seq(SeqBatch {
                batch,
                dim,
                shared: all,
                steps,
            })
        }
        Value::Btd(x) => Value::Btd(d.backward(vec![x])?.pop().expect("one tensor")),
        Value::Flat(x) => Value::Flat(d.backward(vec![x])?.pop().expect("one tensor")),
        Value::Sparse(_) => return Err(NnError::Shape("sparse gradient".into())),
    })
}

/// Layer stack plus a linear output layer whose logits feed sigmoid/BCE.
/// Sequence input goes through a frozen embedding lookup; the common padding
/// prefix of a batch is kept as shared steps.
pub struct Network<F> {
    layers: Vec<Layer<F>>,
    head: Dense<F>,
    embedding: Option<EmbeddingMatrix<F>>,
    input: InputShape,
    k: usize,
    forms: Vec<Form>,
    rng: ChaCha8Rng,
}

impl<F: Scalar> Network<F> {
    pub fn new(
        spec: &ModelSpec,
        input: InputShape,
        k: usize,
        embedding: Option<EmbeddingMatrix<F>>,
        seed: u64,
    ) -> ModelResult<Self> {
        spec.validate()?;
        if !spec.family.is_neural() {
            return Err(ModelError::Spec(format!("{} is not a network family", spec.family)));
        }
        if k == 0 {
            return Err(ModelError::Spec("output dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // (time, dim) while a time axis exists, else (0, dim)
        let (mut t, mut d) = match (input, &embedding) {
            (InputShape::Sequence(n), Some(e)) if spec.family.wants_sequences() => {
                if n == 0 {
                    return Err(ModelError::Spec("sequence length must be positive".into()));
                }
                e.check().map_err(|e| ModelError::Spec(e.to_string()))?;
                (n, e.dim())
            }
            (InputShape::Sequence(_), None) => {
                return Err(ModelError::Input("sequence input needs an embedding matrix".into()))
            }
            (InputShape::Flat(c), _) if !spec.family.wants_sequences() => (0, c),
            _ => return Err(ModelError::Input(format!("{} cannot consume {input:?}", spec.family))),
        };
        let flat = |t: usize, d: usize| if t == 0 { d } else { t * d };
        let mut layers = Vec::with_capacity(spec.layers.len());
        for l in &spec.layers {
            let layer = match *l {
                LayerSpec::Dense { units, activation } => {
                    let n_in = flat(t, d);
                    t = 0;
                    d = units;
                    Layer::Dense(Dense::new(&mut rng, n_in, units, activation))
                }
                LayerSpec::Conv {
                    filters,
                    width,
                    activation,
                } => {
                    if t < width {
                        return Err(ModelError::Spec(format!("sequence of {t} steps shorter than filter width {width}")));
                    }
                    let c = Conv1d::new(&mut rng, filters, width, d, activation);
                    t = t - width + 1;
                    d = filters;
                    Layer::Conv(c)
                }
                LayerSpec::MaxPool { size } => {
                    let p = MaxPool1d::new(size);
                    t = p.output_len(t);
                    Layer::Pool(p)
                }
                LayerSpec::GlobalMaxPool => {
                    t = 0;
                    Layer::GlobalPool(GlobalMaxPool::new())
                }
                LayerSpec::Recurrent {
                    units,
                    return_sequences,
                } => {
                    let kind = spec.family.cell().expect("validated recurrent family");
                    let r = Recurrent::new(&mut rng, kind, d, units, return_sequences, spec.bidirectional);
                    d = r.output_dim();
                    if !return_sequences {
                        t = 0;
                    }
                    Layer::Recurrent(r)
                }
                LayerSpec::Dropout { rate } => Layer::Dropout(Dropout::new(rate)?),
            };
            layers.push(layer);
        }
        let head = Dense::new(&mut rng, flat(t, d), k, Activation::Linear);
        Ok(Network {
            forms: Vec::with_capacity(layers.len() + 1),
            layers,
            head,
            embedding,
            input,
            k,
            rng,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn input_shape(&self) -> InputShape {
        self.input
    }

    pub fn embedding(&self) -> Option<&EmbeddingMatrix<F>> {
        self.embedding.as_ref()
    }

    pub fn params(&self) -> Vec<&Param<F>> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Dense(x) => out.extend(x.params()),
                Layer::Conv(x) => out.extend(x.params()),
                Layer::Recurrent(x) => out.extend(x.params()),
                _ => {}
            }
        }
        out.extend(self.head.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Dense(x) => out.extend(x.params_mut()),
                Layer::Conv(x) => out.extend(x.params_mut()),
                Layer::Recurrent(x) => out.extend(x.params_mut()),
                _ => {}
            }
        }
        out.extend(self.head.params_mut());
        out
    }

    /// Trainable parameter count (the frozen embedding is excluded).
    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn snapshot(&self) -> Vec<Tensor<F>> {
        self.params().iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snap: &[Tensor<F>]) {
        for (p, v) in self.params_mut().into_iter().zip(snap) {
            p.value = v.clone();
        }
    }

    fn embed(&self, seqs: &[&SequenceExample]) -> ModelResult<SeqBatch<F>> {
        let emb = self
            .embedding
            .as_ref()
            .ok_or_else(|| ModelError::Input("sequence input needs an embedding matrix".into()))?;
        let InputShape::Sequence(n) = self.input else {
            return Err(ModelError::Input("network does not take sequences".into()));
        };
        let k = emb.dim();
        let b = seqs.len();
        for s in seqs {
            if s.indices.len() != n {
                return Err(ModelError::Shape(format!("sequence length {} != {n}", s.indices.len())));
            }
            if let Some(&bad) = s.indices.iter().find(|&&i| i as usize >= emb.rows()) {
                return Err(ModelError::Shape(format!("token index {bad} outside the embedding")));
            }
        }
        let shared_len = seqs.iter().map(|s| s.pad_len()).min().unwrap_or(0);
        let pad = Tensor::from_vec(&[1, k], emb.row(0).to_vec())?;
        let shared = vec![pad; shared_len];
        let steps = (shared_len..n)
            .map(|t| {
                let mut x = Tensor::zeros(&[b, k]);
                for (e, s) in seqs.iter().enumerate() {
                    x.row_mut(e).copy_from_slice(emb.row(s.indices[t] as usize));
                }
                x
            })
            .collect();
        Ok(SeqBatch::new(b, k, shared, steps)?)
    }

    fn input_value(&self, x: &Features<F>, rows: &[usize]) -> ModelResult<Value<F>> {
        let want = self.input;
        Ok(match (x, want) {
            (Features::Sequence(v), InputShape::Sequence(_)) => {
                let refs: Vec<&SequenceExample> = rows.iter().map(|&r| &v[r]).collect();
                Value::Seq(self.embed(&refs)?)
            }
            (Features::Sparse(_), InputShape::Flat(c)) | (Features::Dense(_), InputShape::Flat(c)) => {
                let got = x.shape()?;
                if got != InputShape::Flat(c) {
                    return Err(ModelError::Shape(format!("network expects {c} columns, got {got:?}")));
                }
                match x.select(rows) {
                    Features::Sparse(s) => Value::Sparse(s),
                    Features::Dense(t) => Value::Flat(t),
                    Features::Sequence(_) => unreachable!(),
                }
            }
            _ => {
                return Err(ModelError::Input(format!(
                    "network expects {want:?}, got {:?} features",
                    x.kind()
                )))
            }
        })
    }

    fn forward_value(&mut self, mut v: Value<F>, mode: Mode) -> NnResult<Tensor<F>> {
        self.forms.clear();
        for layer in &mut self.layers {
            self.forms.push(form_of(&v));
            v = match layer {
                Layer::Dense(l) => Value::Flat(l.forward(to_dense_input(v)?)?),
                Layer::Conv(l) => Value::Btd(l.forward(to_btd(v)?)?),
                Layer::Pool(l) => Value::Btd(l.forward(&to_btd(v)?)?),
                Layer::GlobalPool(l) => Value::Flat(l.forward(&to_btd(v)?)?),
                Layer::Recurrent(l) => match l.forward(to_seq(v)?)? {
                    RecurrentOutput::Sequence(s) => Value::Seq(s),
                    RecurrentOutput::Last(h) => Value::Flat(h),
                },
                Layer::Dropout(l) => dropout_forward(l, v, mode, &mut self.rng)?,
            };
        }
        self.forms.push(form_of(&v));
        self.head.forward(to_dense_input(v)?)
    }

    /// Backpropagates `dlogits` through the stack, accumulating parameter
    /// gradients. Must follow a [`forward`](Self::forward) call.
    pub fn backward(&mut self, dlogits: &Tensor<F>) -> NnResult<()> {
        let n = self.layers.len();
        let dx = self.head.backward(dlogits, n > 0)?;
        let Some(dx) = dx else {
            return Ok(());
        };
        let mut g = grad_to_form(Value::Flat(dx), self.forms[n])?;
        for i in (0..n).rev() {
            let need_dx = i > 0;
            let out = match &mut self.layers[i] {
                Layer::Dense(l) => l.backward(&flat_grad(g)?, need_dx)?.map(Value::Flat),
                Layer::Conv(l) => l.backward(&btd_grad(g)?, need_dx)?.map(Value::Btd),
                Layer::Pool(l) => Some(Value::Btd(l.backward(&btd_grad(g)?)?)),
                Layer::GlobalPool(l) => Some(Value::Btd(l.backward(&flat_grad(g)?)?)),
                Layer::Recurrent(l) => {
                    let r = match g {
                        Value::Seq(s) => RecurrentOutput::Sequence(s),
                        Value::Flat(h) => RecurrentOutput::Last(h),
                        _ => return Err(NnError::Shape("recurrent gradient".into())),
                    };
                    l.backward(r, need_dx)?.map(Value::Seq)
                }
                Layer::Dropout(l) => Some(dropout_backward(l, g)?),
            };
            if !need_dx {
                break;
            }
            g = grad_to_form(out.expect("dx requested"), self.forms[i])?;
        }
        Ok(())
    }

    /// Logits `[rows × k]` for the selected rows.
    pub fn forward(&mut self, x: &Features<F>, rows: &[usize], mode: Mode) -> ModelResult<Tensor<F>> {
        let v = self.input_value(x, rows)?;
        Ok(self.forward_value(v, mode)?)
    }

    /// Sigmoid outputs in eval mode, computed `batch` rows at a time.
    pub fn predict_proba(&mut self, x: &Features<F>, batch: usize) -> ModelResult<Tensor<F>> {
        let n = x.len();
        let mut out = Tensor::zeros(&[n, self.k]);
        let idx: Vec<usize> = (0..n).collect();
        for chunk in idx.chunks(batch.max(1)) {
            let z = self.forward(x, chunk, Mode::Eval)?;
            for (i, &r) in chunk.iter().enumerate() {
                for (o, &v) in out.row_mut(r).iter_mut().zip(z.row(i)) {
                    *o = sigmoid(v);
                }
            }
        }
        Ok(out)
    }

    pub fn write_params<W: Write>(&self, w: &mut W) -> ModelResult<()> {
        for p in self.params() {
            write_tensor(w, &p.value)?;
        }
        Ok(())
    }

    pub fn read_params<R: Read>(&mut self, r: &mut R) -> ModelResult<()> {
        for p in self.params_mut() {
            let t: Tensor<F> = read_tensor(r)?;
            if t.shape() != p.value.shape() {
                return Err(ModelError::Format(format!(
                    "parameter {} has shape {:?}, checkpoint has {:?}",
                    p.name,
                    p.value.shape(),
                    t.shape()
                )));
            }
            p.value = t;
        }
        Ok(())
    }
}

fn flat_grad<F: Scalar>(g: Value<F>) -> NnResult<Tensor<F>> {
    match g {
        Value::Flat(x) => Ok(x),
        _ => Err(NnError::Shape("flat gradient expected".into())),
    }
}

fn btd_grad<F: Scalar>(g: Value<F>) -> NnResult<Tensor<F>> {
    match g {
        Value::Btd(x) => Ok(x),
        Value::Seq(s) => Ok(s.materialize().to_btd()),
        _ => Err(NnError::Shape("time-axis gradient expected".into())),
    }
}
