use rand::Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;

use super::Tensor;

/// Uniform in ±√(6/(fan_in+fan_out)).
pub fn glorot_uniform<F: Scalar, R: Rng>(
    rng: &mut R,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|_| F::of(rng.random_range(-limit..limit)))
        .collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

/// `n×n` orthogonal matrix: Q factor of a seeded Gaussian matrix, with the
/// column signs fixed by the diagonal of R.
pub fn orthogonal<F: Scalar, R: Rng>(rng: &mut R, n: usize) -> Tensor<F> {
    // columns of a, orthonormalised in place by modified Gram-Schmidt
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    for j in 0..n {
        for i in 0..j {
            let (head, tail) = cols.split_at_mut(j);
            let qi = &head[i];
            let cj = &mut tail[0];
            let r: f64 = qi.iter().zip(cj.iter()).map(|(a, b)| a * b).sum();
            for (c, q) in cj.iter_mut().zip(qi) {
                *c -= r * q;
            }
        }
        let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        // R's diagonal is the (positive) norm here, so no sign flip is needed
        let norm = if norm > 1e-12 { norm } else { 1.0 };
        cols[j].iter_mut().for_each(|v| *v /= norm);
    }
    let mut data = vec![F::zero(); n * n];
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            data[i * n + j] = F::of(v);
        }
    }
    Tensor::from_vec(&[n, n], data).expect("square")
}
