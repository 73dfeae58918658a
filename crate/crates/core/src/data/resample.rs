//! Separable bicubic resampling.
//!
//! Catmull-Rom kernel (`a = -0.5`) with clamp-to-edge sampling. When
//! shrinking, the kernel is stretched by the inverse scale so every input
//! pixel contributes (antialiasing), and weights are renormalized per output
//! sample so constants are reproduced exactly.

use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

const A: f64 = -0.5;

/// Catmull-Rom cubic convolution kernel.
pub fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x.powi(3) - (A + 3.0) * x.powi(2) + 1.0
    } else if x < 2.0 {
        A * x.powi(3) - 5.0 * A * x.powi(2) + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

struct Taps {
    index: Vec<usize>,
    weight: Vec<f64>,
}

fn contributions(in_len: usize, out_len: usize, scale: f64) -> Vec<Taps> {
    let antialias = scale < 1.0;
    let width = if antialias { 4.0 / scale } else { 4.0 };
    let taps = width.ceil() as isize + 2;
    (0..out_len)
        .map(|o| {
            // pixel centres: output o maps to input coordinate u (0-based)
            let u = (o as f64 + 0.5) / scale - 0.5;
            let left = (u - width / 2.0).floor() as isize;
            let mut index = Vec::with_capacity(taps as usize);
            let mut weight = Vec::with_capacity(taps as usize);
            for j in 0..taps {
                let i = left + j;
                let d = u - i as f64;
                let w = if antialias {
                    scale * cubic(scale * d)
                } else {
                    cubic(d)
                };
                if w == 0.0 {
                    continue;
                }
                index.push(i.clamp(0, in_len as isize - 1) as usize);
                weight.push(w);
            }
            let total: f64 = weight.iter().sum();
            weight.iter_mut().for_each(|w| *w /= total);
            Taps { index, weight }
        })
        .collect()
}

/// Output extent for `len * scale`, rounded up.
pub fn scaled_len(len: usize, scale: Ratio<usize>) -> usize {
    (len * scale.numer()).div_ceil(*scale.denom())
}

/// Resamples the two trailing axes of `img` by `scale`; leading axes
/// (bands, batch) are processed independently.
pub fn bicubic_resample<T: Real>(img: &Tensor<T>, scale: Ratio<usize>) -> Result<Tensor<T>> {
    if img.ndim() < 2 {
        return Err(Error::dim("bicubic_resample", "rank", ">= 2", img.ndim()));
    }
    if *scale.numer() == 0 {
        return Err(Error::Config("resampling scale must be positive".into()));
    }
    let shape = img.shape();
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let (oh, ow) = (scaled_len(h, scale), scaled_len(w, scale));
    if oh == 0 || ow == 0 {
        return Err(Error::dim(
            "bicubic_resample",
            "target size",
            ">= 1",
            format!("{oh}x{ow}"),
        ));
    }
    let s = *scale.numer() as f64 / *scale.denom() as f64;
    let rows = contributions(h, oh, s);
    let cols = contributions(w, ow, s);
    let planes = img.len() / (h * w);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut tmp = vec![0.0f64; h * ow];
    for p in 0..planes {
        let src = &img.data()[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for (x, taps) in cols.iter().enumerate() {
                tmp[y * ow + x] = taps
                    .index
                    .iter()
                    .zip(&taps.weight)
                    .map(|(&i, &wt)| row[i].to_f64_lossy() * wt)
                    .sum();
            }
        }
        for taps in &rows {
            for x in 0..ow {
                let v: f64 = taps
                    .index
                    .iter()
                    .zip(&taps.weight)
                    .map(|(&i, &wt)| tmp[i * ow + x] * wt)
                    .sum();
                out.push(T::from_f64_lossy(v));
            }
        }
    }
    let mut out_shape = shape.to_vec();
    let n = out_shape.len();
    out_shape[n - 2] = oh;
    out_shape[n - 1] = ow;
    Tensor::new(&out_shape, out)
}
