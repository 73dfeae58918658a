#![allow(dead_code)]

use dcnet_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform<T: dcnet_core::Real>(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    lo: f64,
    hi: f64,
) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.gen_range(lo..hi)))
}

/// Central finite difference of `f` with respect to entry `i` of `x`.
pub fn central_difference(
    f: &mut impl FnMut(&Tensor<f64>) -> f64,
    x: &Tensor<f64>,
    i: usize,
    eps: f64,
) -> f64 {
    let mut plus = x.clone();
    plus.data_mut()[i] += eps;
    let mut minus = x.clone();
    minus.data_mut()[i] -= eps;
    (f(&plus) - f(&minus)) / (2.0 * eps)
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}
