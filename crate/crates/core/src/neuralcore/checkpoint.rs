use std::io::{Read, Write};

use crate::scalar::Scalar;

use super::{NnError, NnResult, Tensor};

/// Writes `u32` rank, `u64` dimensions, then the values as little-endian
/// `f64`, whatever the in-memory precision.
pub fn write_tensor<F: Scalar, W: Write>(w: &mut W, t: &Tensor<F>) -> NnResult<()> {
    let rank = u32::try_from(t.shape().len()).map_err(|_| NnError::Invalid("tensor rank".into()))?;
    w.write_all(&rank.to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_f64_lossy().to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<F: Scalar, R: Read>(r: &mut R) -> NnResult<Tensor<F>> {
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let rank = u32::from_le_bytes(b4) as usize;
    if rank > 8 {
        return Err(NnError::Invalid(format!("implausible tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        r.read_exact(&mut b8)?;
        shape.push(
            usize::try_from(u64::from_le_bytes(b8)).map_err(|_| NnError::Invalid("tensor dimension".into()))?,
        );
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| NnError::Invalid("tensor size overflow".into()))?;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut b8)?;
        data.push(F::of(f64::from_le_bytes(b8)));
    }
    Tensor::from_vec(&shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let t = Tensor::<f64>::from_f64(&[2, 3], &[1.0, -2.5, 3.25, 0.0, 1e-300, -7.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(buf.len(), 4 + 16 + 48);
        let back: Tensor<f64> = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn truncated_input_fails() {
        let t = Tensor::<f32>::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        buf.pop();
        assert!(read_tensor::<f32, _>(&mut buf.as_slice()).is_err());
    }
}
