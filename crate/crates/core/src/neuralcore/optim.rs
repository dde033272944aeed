use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::{NnError, NnResult, Param, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    /// `θ ← θ − η·g`
    Sgd { lr: f64 },
    /// `s ← ρs + (1−ρ)g²; θ ← θ − η·g/√(s+ε)`
    RmsProp { lr: f64, rho: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn sgd(lr: f64) -> Self {
        OptimizerKind::Sgd { lr }
    }

    pub fn rmsprop(lr: f64) -> Self {
        OptimizerKind::RmsProp {
            lr,
            rho: 0.9,
            eps: 1e-8,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match *self {
            OptimizerKind::Sgd { lr } | OptimizerKind::RmsProp { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> NnResult<()> {
        match *self {
            OptimizerKind::Sgd { lr } if lr > 0.0 => Ok(()),
            OptimizerKind::RmsProp { lr, rho, eps } if lr > 0.0 && (0.0..1.0).contains(&rho) && eps > 0.0 => Ok(()),
            other => Err(NnError::Invalid(format!("bad optimizer settings {other:?}"))),
        }
    }
}

/// Optimizer with per-parameter running averages (RMSprop).
pub struct Optimizer<F> {
    pub kind: OptimizerKind,
    mean_square: Vec<Tensor<F>>,
}

impl<F: Scalar> Optimizer<F> {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            mean_square: Vec::new(),
        }
    }

    /// Applies one update using the accumulated gradients. The parameter list
    /// must be passed in the same order on every call.
    pub fn step(&mut self, params: &mut [&mut Param<F>]) -> NnResult<()> {
        match self.kind {
            OptimizerKind::Sgd { lr } => {
                let lr = F::of(lr);
                for p in params.iter_mut() {
                    let Param { value, grad, .. } = &mut **p;
                    for (v, &g) in value.data_mut().iter_mut().zip(grad.data()) {
                        *v -= lr * g;
                    }
                }
            }
            OptimizerKind::RmsProp { lr, rho, eps } => {
                if self.mean_square.is_empty() {
                    self.mean_square = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
                }
                if self.mean_square.len() != params.len() {
                    return Err(NnError::Shape("optimizer state does not match parameter list".into()));
                }
                let (lr, rho, eps) = (F::of(lr), F::of(rho), F::of(eps));
                for (p, s) in params.iter_mut().zip(self.mean_square.iter_mut()) {
                    if s.shape() != p.value.shape() {
                        return Err(NnError::Shape(format!("optimizer state for {}", p.name)));
                    }
                    let Param { value, grad, .. } = &mut **p;
                    for ((v, &g), sv) in value.data_mut().iter_mut().zip(grad.data()).zip(s.data_mut()) {
                        *sv = rho * *sv + (F::one() - rho) * g * g;
                        *v -= lr * g / (*sv + eps).sqrt();
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64, g: f64) -> Param<f64> {
        let mut p = Param::new("p", Tensor::from_f64(&[1], &[v]).unwrap());
        p.grad.data_mut()[0] = g;
        p
    }

    #[test]
    fn sgd_step() {
        let mut p = scalar_param(1.0, 2.0);
        let mut opt = Optimizer::new(OptimizerKind::sgd(0.1));
        opt.step(&mut [&mut p]).unwrap();
        assert!((p.value.data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn rmsprop_first_step() {
        let mut p = scalar_param(0.0, 1.0);
        let mut opt = Optimizer::new(OptimizerKind::rmsprop(0.001));
        opt.step(&mut [&mut p]).unwrap();
        let expected = -0.001 / (0.1f64 + 1e-8).sqrt();
        assert!((p.value.data()[0] - expected).abs() < 1e-15);
        assert!((p.value.data()[0] + 0.0031623).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        for kind in [OptimizerKind::sgd(0.5), OptimizerKind::rmsprop(0.01)] {
            let mut p = scalar_param(3.25, 0.0);
            let mut opt = Optimizer::new(kind);
            opt.step(&mut [&mut p]).unwrap();
            assert_eq!(p.value.data()[0], 3.25);
        }
    }
}
