//! Central finite-difference gradient checking and the standard per-layer
//! suite run by the `gradcheck` subcommand.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    bce_with_logits, Activation, CellKind, Conv1d, Dense, DenseInput, GlobalMaxPool, MaxPool1d, NnError, NnResult,
    Param, Recurrent, RecurrentOutput, SeqBatch, Tensor,
};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Perturbation applied on each side of a coordinate.
    pub eps: f64,
    /// Number of coordinates checked; all of them when the total is smaller.
    pub coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-6,
            coords: 400,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub total: usize,
    /// Coordinate with the largest error, with its analytic and numeric values.
    pub worst: Option<(usize, f64, f64)>,
}

/// `|a − n| / max(|a|, |n|, 1e-3)`. The floor keeps coordinates whose true
/// gradient is near zero from dominating through rounding noise.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Compares `analytic` against `(f(θ+eps·e_i) − f(θ−eps·e_i)) / 2eps` on a
/// seeded subset of coordinates.
pub fn gradient_check<L>(theta: &[f64], analytic: &[f64], mut loss: L, opts: &GradCheckOptions) -> NnResult<GradCheckReport>
where
    L: FnMut(&[f64]) -> NnResult<f64>,
{
    if theta.len() != analytic.len() {
        return Err(NnError::Shape(format!(
            "{} parameters vs {} gradient entries",
            theta.len(),
            analytic.len()
        )));
    }
    if !(opts.eps > 0.0) {
        return Err(NnError::Invalid("eps must be positive".into()));
    }
    let total = theta.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut idx: Vec<usize> = if total <= opts.coords {
        (0..total).collect()
    } else {
        sample(&mut rng, total, opts.coords).into_vec()
    };
    idx.sort_unstable();
    let mut probe = theta.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: idx.len(),
        total,
        worst: None,
    };
    for &i in &idx {
        let orig = probe[i];
        probe[i] = orig + opts.eps;
        let up = loss(&probe)?;
        probe[i] = orig - opts.eps;
        let down = loss(&probe)?;
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(NnError::NonFinite(format!("loss at coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * opts.eps);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = err.max(report.max_rel_error);
            report.worst = Some((i, analytic[i], numeric));
        }
    }
    Ok(report)
}

/// Fragments covered by the standard suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Case {
    Linear,
    Dense,
    Conv1d,
    MaxPool,
    Rnn,
    Lstm,
    Gru,
    BceComposite,
    CnnStack,
    BiGruLast,
}

impl Case {
    pub const ALL: [Case; 10] = [
        Case::Linear,
        Case::Dense,
        Case::Conv1d,
        Case::MaxPool,
        Case::Rnn,
        Case::Lstm,
        Case::Gru,
        Case::BceComposite,
        Case::CnnStack,
        Case::BiGruLast,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Case::Linear => "linear",
            Case::Dense => "dense",
            Case::Conv1d => "conv1d",
            Case::MaxPool => "max_pool1d",
            Case::Rnn => "rnn",
            Case::Lstm => "lstm",
            Case::Gru => "gru",
            Case::BceComposite => "sigmoid+bce",
            Case::CnnStack => "cnn stack",
            Case::BiGruLast => "bigru last-step",
        }
    }

    pub fn is_recurrent(self) -> bool {
        matches!(self, Case::Rnn | Case::Lstm | Case::Gru | Case::BiGruLast)
    }

    pub fn threshold(self) -> f64 {
        match self {
            Case::Linear => 1e-8,
            c if c.is_recurrent() => 1e-4,
            _ => 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub case: Case,
    pub report: GradCheckReport,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < self.case.threshold()
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

fn pack(params: &[&Param<f64>], extra: &[&Tensor<f64>]) -> Vec<f64> {
    params
        .iter()
        .map(|p| p.value.data())
        .chain(extra.iter().map(|t| t.data()))
        .flat_map(|d| d.iter().copied())
        .collect()
}

fn pack_grads(params: &[&Param<f64>]) -> Vec<f64> {
    params.iter().flat_map(|p| p.grad.data().iter().copied()).collect()
}

/// Writes `theta` into the parameters (zeroing their gradients) and then into
/// the extra tensors, in order.
fn unpack(params: Vec<&mut Param<f64>>, extra: Vec<&mut Tensor<f64>>, theta: &[f64]) {
    let mut off = 0;
    for p in params {
        let n = p.len();
        p.value.data_mut().copy_from_slice(&theta[off..off + n]);
        p.zero_grad();
        off += n;
    }
    for t in extra {
        let n = t.len();
        t.data_mut().copy_from_slice(&theta[off..off + n]);
        off += n;
    }
}

fn weighted_sum(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Evaluates `(loss, gradient)` for a fragment at `theta`.
type Fragment = Box<dyn FnMut(&[f64]) -> NnResult<(f64, Vec<f64>)>>;

fn build(case: Case, rng: &mut ChaCha8Rng) -> (Vec<f64>, Fragment) {
    match case {
        Case::Linear | Case::Dense => {
            let act = if case == Case::Linear {
                Activation::Linear
            } else {
                Activation::Tanh
            };
            let mut layer = Dense::<f64>::new(rng, 5, 4, act);
            layer.b.value = uniform(rng, &[4]);
            let x = uniform(rng, &[3, 5]);
            let r = uniform(rng, &[3, 4]);
            let theta = pack(&layer.params(), &[&x]);
            let mut x = x;
            let f: Fragment = Box::new(move |th| {
                unpack(layer.params_mut(), vec![&mut x], th);
                let y = layer.forward(DenseInput::Dense(x.clone()))?;
                let dx = layer.backward(&r, true)?.expect("dense input");
                let mut g = pack_grads(&layer.params());
                g.extend_from_slice(dx.data());
                Ok((weighted_sum(&y, &r), g))
            });
            (theta, f)
        }
        Case::Conv1d => {
            let mut layer = Conv1d::<f64>::new(rng, 4, 3, 3, Activation::Tanh);
            layer.bias.value = uniform(rng, &[4]);
            let x = uniform(rng, &[2, 7, 3]);
            let r = uniform(rng, &[2, 5, 4]);
            let theta = pack(&layer.params(), &[&x]);
            let mut x = x;
            let f: Fragment = Box::new(move |th| {
                unpack(layer.params_mut(), vec![&mut x], th);
                let y = layer.forward(x.clone())?;
                let dx = layer.backward(&r, true)?.expect("dx");
                let mut g = pack_grads(&layer.params());
                g.extend_from_slice(dx.data());
                Ok((weighted_sum(&y, &r), g))
            });
            (theta, f)
        }
        Case::MaxPool => {
            let mut layer = MaxPool1d::new(2);
            let x = uniform(rng, &[2, 7, 3]);
            let r = uniform(rng, &[2, 4, 3]);
            let theta = x.data().to_vec();
            let mut x = x;
            let f: Fragment = Box::new(move |th| {
                unpack(Vec::new(), vec![&mut x], th);
                let y = layer.forward(&x)?;
                let dx = layer.backward(&r)?;
                Ok((weighted_sum(&y, &r), dx.into_data()))
            });
            (theta, f)
        }
        Case::Rnn | Case::Lstm | Case::Gru | Case::BiGruLast => {
            let (kind, bidir) = match case {
                Case::Rnn => (CellKind::Simple, false),
                Case::Lstm => (CellKind::Lstm, false),
                Case::Gru => (CellKind::Gru, false),
                _ => (CellKind::Gru, true),
            };
            let (batch, dim, units, shared_len, len) = (2, 4, 3, 2, 6);
            let mut layer = Recurrent::<f64>::new(rng, kind, dim, units, !bidir, bidir);
            for p in layer.params_mut() {
                if p.name == "b" {
                    p.value = uniform(rng, p.value.shape());
                }
            }
            // the first two steps are shared across the batch, as with front padding
            let mut shared: Vec<Tensor<f64>> = (0..shared_len).map(|_| uniform(rng, &[1, dim])).collect();
            let mut steps: Vec<Tensor<f64>> = (0..len - shared_len).map(|_| uniform(rng, &[batch, dim])).collect();
            let out_dim = layer.output_dim();
            let r = if bidir {
                uniform(rng, &[batch, out_dim])
            } else {
                uniform(rng, &[batch, len, out_dim])
            };
            let extra: Vec<&Tensor<f64>> = shared.iter().chain(steps.iter()).collect();
            let theta = pack(&layer.params(), &extra);
            let f: Fragment = Box::new(move |th| {
                let extra: Vec<&mut Tensor<f64>> = shared.iter_mut().chain(steps.iter_mut()).collect();
                unpack(layer.params_mut(), extra, th);
                let input = SeqBatch::new(batch, dim, shared.clone(), steps.clone())?;
                let (loss, grad) = match layer.forward(input)? {
                    RecurrentOutput::Sequence(y) => (
                        weighted_sum(&y.to_btd(), &r),
                        RecurrentOutput::Sequence(SeqBatch::from_btd(&r)?),
                    ),
                    RecurrentOutput::Last(y) => (weighted_sum(&y, &r), RecurrentOutput::Last(r.clone())),
                };
                let dx = layer.backward(grad, true)?.expect("dx");
                let mut g = pack_grads(&layer.params());
                if dx.shared.is_empty() {
                    // bidirectional layers expand the prefix, so fold it back
                    let dx = dx.fold_prefix(shared_len)?;
                    g.extend(dx.shared.iter().chain(dx.steps.iter()).flat_map(|t| t.data().iter().copied()));
                } else {
                    g.extend(dx.shared.iter().chain(dx.steps.iter()).flat_map(|t| t.data().iter().copied()));
                }
                Ok((loss, g))
            });
            (theta, f)
        }
        Case::BceComposite => {
            let mut layer = Dense::<f64>::new(rng, 6, 5, Activation::Linear);
            layer.b.value = uniform(rng, &[5]);
            let x = uniform(rng, &[4, 6]);
            let t = Tensor::from_vec(&[4, 5], (0..20).map(|_| f64::from(rng.random_bool(0.4) as u8)).collect())
                .expect("shape");
            let theta = pack(&layer.params(), &[&x]);
            let mut x = x;
            let f: Fragment = Box::new(move |th| {
                unpack(layer.params_mut(), vec![&mut x], th);
                let z = layer.forward(DenseInput::Dense(x.clone()))?;
                let (loss, dz, _) = bce_with_logits(&z, &t)?;
                let dx = layer.backward(&dz, true)?.expect("dx");
                let mut g = pack_grads(&layer.params());
                g.extend_from_slice(dx.data());
                Ok((loss, g))
            });
            (theta, f)
        }
        Case::CnnStack => {
            let mut c1 = Conv1d::<f64>::new(rng, 4, 3, 3, Activation::Tanh);
            let mut p1 = MaxPool1d::new(2);
            let mut c2 = Conv1d::<f64>::new(rng, 4, 2, 4, Activation::Tanh);
            let mut gp = GlobalMaxPool::new();
            let mut head = Dense::<f64>::new(rng, 4, 3, Activation::Linear);
            c1.bias.value = uniform(rng, &[4]);
            c2.bias.value = uniform(rng, &[4]);
            let x = uniform(rng, &[2, 12, 3]);
            let t = Tensor::from_f64(&[2, 3], &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).expect("shape");
            let mut all: Vec<&Param<f64>> = c1.params();
            all.extend(c2.params());
            all.extend(head.params());
            let theta = pack(&all, &[&x]);
            let mut x = x;
            let f: Fragment = Box::new(move |th| {
                let mut ps = c1.params_mut();
                ps.extend(c2.params_mut());
                ps.extend(head.params_mut());
                unpack(ps, vec![&mut x], th);
                let a = c1.forward(x.clone())?;
                let a = p1.forward(&a)?;
                let a = c2.forward(a)?;
                let a = gp.forward(&a)?;
                let z = head.forward(DenseInput::Dense(a))?;
                let (loss, dz, _) = bce_with_logits(&z, &t)?;
                let d = head.backward(&dz, true)?.expect("dx");
                let d = gp.backward(&d)?;
                let d = c2.backward(&d, true)?.expect("dx");
                let d = p1.backward(&d)?;
                let dx = c1.backward(&d, true)?.expect("dx");
                let mut all: Vec<&Param<f64>> = c1.params();
                all.extend(c2.params());
                all.extend(head.params());
                let mut g = pack_grads(&all);
                g.extend_from_slice(dx.data());
                Ok((loss, g))
            });
            (theta, f)
        }
    }
}

/// Runs one fragment. `scale` multiplies the analytic gradient before the
/// comparison (1.0 for a genuine check; other values inject a fault).
pub fn run_case(case: Case, seed: u64, scale: f64, opts: &GradCheckOptions) -> NnResult<CaseResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (theta, mut frag) = build(case, &mut rng);
    let (_, mut analytic) = frag(&theta)?;
    analytic.iter_mut().for_each(|g| *g *= scale);
    let report = gradient_check(&theta, &analytic, |th| frag(th).map(|(l, _)| l), opts)?;
    Ok(CaseResult { case, report })
}

/// Every case in [`Case::ALL`] at its default options.
pub fn standard_suite(seed: u64) -> NnResult<Vec<CaseResult>> {
    let opts = GradCheckOptions {
        seed,
        ..GradCheckOptions::default()
    };
    Case::ALL.iter().map(|&c| run_case(c, seed, 1.0, &opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_matches() {
        let theta = [1.0, -2.0, 0.5];
        let analytic: Vec<f64> = theta.iter().map(|t| 2.0 * t).collect();
        let r = gradient_check(&theta, &analytic, |t| Ok(t.iter().map(|v| v * v).sum()), &Default::default()).unwrap();
        assert!(r.max_rel_error < 1e-8);
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn every_case_passes() {
        for res in standard_suite(7).unwrap() {
            assert!(res.passed(), "{}: {:?}", res.case.name(), res.report);
        }
    }

    #[test]
    fn corrupted_gradient_detected() {
        for case in [Case::Dense, Case::Gru] {
            let res = run_case(case, 3, 1.1, &GradCheckOptions::default()).unwrap();
            assert!(res.report.max_rel_error > 1e-2, "{:?}", res.report);
        }
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let r = gradient_check(&[1.0], &[0.0], |_| Ok(f64::NAN), &Default::default());
        assert!(matches!(r, Err(NnError::NonFinite(_))));
    }
}
