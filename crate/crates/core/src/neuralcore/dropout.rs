use rand::Rng;

use crate::scalar::Scalar;

use super::{NnError, NnResult, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted dropout: in train mode each element is zeroed with probability
/// `rate` and survivors are scaled by `1/(1−rate)`; eval mode is the identity.
/// Returns the output and the applied per-element scale (train mode only).
pub fn dropout<F: Scalar, R: Rng>(
    input: &Tensor<F>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> NnResult<(Tensor<F>, Option<Vec<F>>)> {
    check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let mask = draw_mask(input.len(), rate, rng);
    let mut out = input.clone();
    for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
        *o *= m;
    }
    Ok((out, Some(mask)))
}

fn check_rate(rate: f64) -> NnResult<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::Invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

fn draw_mask<F: Scalar, R: Rng>(len: usize, rate: f64, rng: &mut R) -> Vec<F> {
    let keep = F::of(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { F::zero() } else { keep })
        .collect()
}

/// Dropout layer over one or more activation tensors.
pub struct Dropout<F> {
    pub rate: f64,
    masks: Option<Vec<Vec<F>>>,
}

impl<F: Scalar> Dropout<F> {
    pub fn new(rate: f64) -> NnResult<Self> {
        check_rate(rate)?;
        Ok(Dropout { rate, masks: None })
    }

    pub fn forward<R: Rng>(&mut self, mut xs: Vec<Tensor<F>>, mode: Mode, rng: &mut R) -> Vec<Tensor<F>> {
        if mode == Mode::Eval || self.rate == 0.0 {
            self.masks = None;
            return xs;
        }
        let mut masks = Vec::with_capacity(xs.len());
        for x in xs.iter_mut() {
            let mask = draw_mask(x.len(), self.rate, rng);
            for (o, &m) in x.data_mut().iter_mut().zip(&mask) {
                *o *= m;
            }
            masks.push(mask);
        }
        self.masks = Some(masks);
        xs
    }

    pub fn backward(&self, mut grads: Vec<Tensor<F>>) -> NnResult<Vec<Tensor<F>>> {
        if let Some(masks) = &self.masks {
            if masks.len() != grads.len() {
                return Err(NnError::Shape("dropout backward".into()));
            }
            for (g, m) in grads.iter_mut().zip(masks) {
                for (v, &s) in g.data_mut().iter_mut().zip(m) {
                    *v *= s;
                }
            }
        }
        Ok(grads)
    }
}
