use crate::scalar::{sigmoid, Scalar};

use super::{NnError, NnResult, Tensor};

/// Predictions are clipped to `[ε, 1−ε]` before taking logarithms.
pub const BCE_EPSILON: f64 = 1e-7;

/// Mean binary cross-entropy over all `N` entries:
/// `−(1/N) Σ y·ln ŷ + (1−y)·ln(1−ŷ)` with `ŷ` clipped. Returns the loss and
/// `∂loss/∂ŷ`, which is zero where clipping is active.
pub fn bce_loss<F: Scalar>(pred: &Tensor<F>, target: &Tensor<F>) -> NnResult<(F, Tensor<F>)> {
    if pred.len() != target.len() {
        return Err(NnError::Shape(format!(
            "bce: {} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    let n = F::of_usize(pred.len().max(1));
    let eps = F::of(BCE_EPSILON);
    let hi = F::one() - eps;
    let mut loss = F::zero();
    let mut grad = Tensor::zeros(pred.shape());
    for ((g, &p), &y) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let c = p.max(eps).min(hi);
        loss -= y * c.ln() + (F::one() - y) * (F::one() - c).ln();
        if p > eps && p < hi {
            *g = (-(y / c) + (F::one() - y) / (F::one() - c)) / n;
        }
    }
    Ok((loss / n, grad))
}

/// Sigmoid followed by clipped BCE, differentiated with respect to the logits.
/// Returns `(loss, ∂loss/∂logits, probabilities)`.
pub fn bce_with_logits<F: Scalar>(logits: &Tensor<F>, target: &Tensor<F>) -> NnResult<(F, Tensor<F>, Tensor<F>)> {
    if logits.len() != target.len() {
        return Err(NnError::Shape(format!(
            "bce: {} logits vs {} targets",
            logits.len(),
            target.len()
        )));
    }
    let probs = logits.map(sigmoid);
    let n = F::of_usize(logits.len().max(1));
    let eps = F::of(BCE_EPSILON);
    let hi = F::one() - eps;
    let mut loss = F::zero();
    let mut grad = Tensor::zeros(logits.shape());
    for ((g, &p), &y) in grad.data_mut().iter_mut().zip(probs.data()).zip(target.data()) {
        let c = p.max(eps).min(hi);
        loss -= y * c.ln() + (F::one() - y) * (F::one() - c).ln();
        // dL/dp · dp/dz collapses to (p − y)/N inside the clip range
        if p > eps && p < hi {
            *g = (p - y) / n;
        }
    }
    Ok((loss / n, grad, probs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_half_is_ln2() {
        let p = Tensor::<f64>::from_f64(&[2], &[0.5, 0.5]).unwrap();
        let y = Tensor::from_f64(&[2], &[1.0, 0.0]).unwrap();
        let (l, _) = bce_loss(&p, &y).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let p = Tensor::<f64>::from_f64(&[3], &[1.0, 0.0, 1.0]).unwrap();
        let (l, g) = bce_loss(&p, &p).unwrap();
        assert!(l >= 0.0 && l <= 2.0 * BCE_EPSILON);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_is_nonnegative() {
        for &p in &[1e-12, 0.1, 0.5, 0.9, 1.0] {
            for &y in &[0.0, 1.0] {
                let (l, _) = bce_loss(
                    &Tensor::<f64>::from_f64(&[1], &[p]).unwrap(),
                    &Tensor::from_f64(&[1], &[y]).unwrap(),
                )
                .unwrap();
                assert!(l >= 0.0);
            }
        }
    }

    #[test]
    fn logits_form_matches_probability_form() {
        let z = Tensor::<f64>::from_f64(&[4], &[-2.0, 0.3, 1.7, 0.0]).unwrap();
        let y = Tensor::from_f64(&[4], &[0., 1., 1., 0.]).unwrap();
        let (l1, gz, p) = bce_with_logits(&z, &y).unwrap();
        let (l2, gp) = bce_loss(&p, &y).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        for i in 0..4 {
            let pi = p.data()[i];
            assert!((gz.data()[i] - gp.data()[i] * pi * (1.0 - pi)).abs() < 1e-14);
        }
    }

    #[test]
    fn shape_mismatch() {
        let p = Tensor::<f64>::zeros(&[2]);
        assert!(bce_loss(&p, &Tensor::zeros(&[3])).is_err());
    }
}
