use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

fn check(range: (f64, f64)) -> Result<()> {
    if !(range.0.is_finite() && range.1.is_finite() && range.1 > range.0) {
        return Err(Error::Config(format!("degenerate value range {range:?}")));
    }
    Ok(())
}

/// Affine map of `[lo, hi]` onto `[0, 1]`, evaluated in double precision.
pub fn normalize<T: Real>(x: &Tensor<T>, range: (f64, f64)) -> Result<Tensor<T>> {
    check(range)?;
    let (lo, span) = (range.0, range.1 - range.0);
    Ok(x.map(|v| T::from_f64_lossy((v.to_f64_lossy() - lo) / span)))
}

/// Inverse of [`normalize`].
pub fn denormalize<T: Real>(x: &Tensor<T>, range: (f64, f64)) -> Result<Tensor<T>> {
    check(range)?;
    let (lo, span) = (range.0, range.1 - range.0);
    Ok(x.map(|v| T::from_f64_lossy(v.to_f64_lossy() * span + lo)))
}
