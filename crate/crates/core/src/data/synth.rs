//! Procedural multispectral scenes standing in for satellite acquisitions.
//!
//! A scene is a continuous radiance field over the unit square: a smooth
//! per-band background plus rectangles, Gaussian blobs and half-plane edges,
//! each carrying a spectral signature. Bands share geometry and differ in
//! signature, so they are strongly but not perfectly correlated. The PAN field
//! is a fixed weighted band average plus a faint fine-scale texture.

use num_rational::Ratio;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::resample::bicubic_resample;
use super::scene::{DN_RANGE, RATIO};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

const SUPERSAMPLE: usize = 2;

#[derive(Clone, Debug)]
enum Shape {
    Rect {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
    },
    Blob {
        cx: f64,
        cy: f64,
        sigma: f64,
    },
    Edge {
        nx: f64,
        ny: f64,
        offset: f64,
        softness: f64,
    },
}

impl Shape {
    fn coverage(&self, u: f64, v: f64) -> f64 {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => {
                if u >= x0 && u < x1 && v >= y0 && v < y1 {
                    1.0
                } else {
                    0.0
                }
            }
            Shape::Blob { cx, cy, sigma } => {
                let d2 = (u - cx).powi(2) + (v - cy).powi(2);
                (-d2 / (2.0 * sigma * sigma)).exp()
            }
            Shape::Edge {
                nx,
                ny,
                offset,
                softness,
            } => {
                let s = (u * nx + v * ny - offset) / softness;
                1.0 / (1.0 + (-s).exp())
            }
        }
    }
}

/// Seeded scene description; rendering is a pure function of it.
#[derive(Clone, Debug)]
pub struct SceneModel {
    bands: usize,
    base: Vec<f64>,
    tilt: Vec<(f64, f64)>,
    features: Vec<(Shape, Vec<f64>)>,
    pan_weights: Vec<f64>,
    texture: (f64, f64, f64),
}

impl SceneModel {
    pub fn new(seed: u64, bands: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = Normal::new(0.0, 1.0).expect("valid normal");
        let base: Vec<f64> = (0..bands).map(|_| rng.gen_range(550.0..850.0)).collect();
        let tilt = (0..bands)
            .map(|_| (rng.gen_range(-120.0..120.0), rng.gen_range(-120.0..120.0)))
            .collect();
        let signature = |rng: &mut ChaCha8Rng, strength: f64| -> Vec<f64> {
            let brightness = rng.gen_range(-strength..strength);
            (0..bands)
                .map(|_| {
                    brightness * (1.0 + 0.25 * unit.sample(rng))
                        + 0.15 * strength * unit.sample(rng)
                })
                .collect()
        };
        let mut features = Vec::new();
        for _ in 0..rng.gen_range(6..11) {
            let (w, h) = (rng.gen_range(0.08..0.35), rng.gen_range(0.08..0.35));
            let (x0, y0) = (rng.gen_range(-0.1..0.95), rng.gen_range(-0.1..0.95));
            let sig = signature(&mut rng, 320.0);
            features.push((
                Shape::Rect {
                    x0,
                    y0,
                    x1: x0 + w,
                    y1: y0 + h,
                },
                sig,
            ));
        }
        for _ in 0..rng.gen_range(4..8) {
            let shape = Shape::Blob {
                cx: rng.gen_range(0.0..1.0),
                cy: rng.gen_range(0.0..1.0),
                sigma: rng.gen_range(0.03..0.12),
            };
            features.push((shape, signature(&mut rng, 300.0)));
        }
        for _ in 0..2 {
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let shape = Shape::Edge {
                nx: angle.cos(),
                ny: angle.sin(),
                offset: rng.gen_range(-0.3..0.8),
                softness: rng.gen_range(0.002..0.01),
            };
            features.push((shape, signature(&mut rng, 150.0)));
        }
        let raw: Vec<f64> = (0..bands).map(|_| rng.gen_range(0.6..1.4)).collect();
        let total: f64 = raw.iter().sum();
        let pan_weights = raw.iter().map(|w| w / total).collect();
        let texture = (
            rng.gen_range(150.0..250.0),
            rng.gen_range(150.0..250.0),
            rng.gen_range(0.0..6.28),
        );
        Self {
            bands,
            base,
            tilt,
            features,
            pan_weights,
            texture,
        }
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Spectral radiance at `(u, v)` in the unit square, one value per band.
    pub fn radiance(&self, u: f64, v: f64, out: &mut [f64]) {
        for (b, o) in out.iter_mut().enumerate() {
            *o = self.base[b] + self.tilt[b].0 * (u - 0.5) + self.tilt[b].1 * (v - 0.5);
        }
        for (shape, sig) in &self.features {
            let c = shape.coverage(u, v);
            if c > 1e-9 {
                out.iter_mut().zip(sig).for_each(|(o, s)| *o += c * s);
            }
        }
        out.iter_mut()
            .for_each(|o| *o = o.clamp(DN_RANGE.0, DN_RANGE.1));
    }

    /// Broad-band PAN radiance at `(u, v)`.
    pub fn pan(&self, u: f64, v: f64, scratch: &mut [f64]) -> f64 {
        self.radiance(u, v, scratch);
        let (fu, fv, phase) = self.texture;
        let detail = 4.0 * (fu * u + phase).sin() * (fv * v).cos();
        let p: f64 = scratch
            .iter()
            .zip(&self.pan_weights)
            .map(|(r, w)| r * w)
            .sum();
        (p + detail).clamp(DN_RANGE.0, DN_RANGE.1)
    }

    /// Pixel-averaged rendering of all bands on an `h x w` grid.
    pub fn render_ms<T: Real>(&self, h: usize, w: usize) -> Tensor<T> {
        let mut out = vec![0.0f64; self.bands * h * w];
        let mut px = vec![0.0; self.bands];
        let n = (SUPERSAMPLE * SUPERSAMPLE) as f64;
        for y in 0..h {
            for x in 0..w {
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let u = (x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64) / w as f64;
                        let v = (y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64) / h as f64;
                        self.radiance(u, v, &mut px);
                        for b in 0..self.bands {
                            out[(b * h + y) * w + x] += px[b] / n;
                        }
                    }
                }
            }
        }
        Tensor::new(
            &[self.bands, h, w],
            out.into_iter().map(T::from_f64_lossy).collect(),
        )
        .expect("shape")
    }

    /// Pixel-averaged rendering of the PAN field on an `h x w` grid.
    pub fn render_pan<T: Real>(&self, h: usize, w: usize) -> Tensor<T> {
        let mut scratch = vec![0.0; self.bands];
        let n = (SUPERSAMPLE * SUPERSAMPLE) as f64;
        Tensor::from_fn(&[h, w], |i| {
            let (y, x) = (i / w, i % w);
            let mut acc = 0.0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let u = (x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64) / w as f64;
                    let v = (y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64) / h as f64;
                    acc += self.pan(u, v, &mut scratch);
                }
            }
            T::from_f64_lossy(acc / n)
        })
    }
}

/// Deterministic synthetic acquisition: the original MS `[B, H, W]` and the
/// original PAN at four times its resolution, `[4H, 4W]`. Values lie in
/// [`DN_RANGE`].
///
/// The MS detector is four times coarser than the PAN detector, so the MS
/// is rendered on the PAN grid and reduced with the same bicubic filter the
/// Wald degradation uses. Both originals then share one spatial response
/// and the MS carries no detail the PAN lacks.
pub fn synth_scene<T: Real>(
    seed: u64,
    bands: usize,
    height: usize,
    width: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if bands == 0 {
        return Err(Error::Config(
            "synthetic scene needs at least one band".into(),
        ));
    }
    if height == 0 || width == 0 || height % RATIO != 0 || width % RATIO != 0 {
        return Err(Error::Ratio(format!(
            "scene {height}x{width} must be a positive multiple of {RATIO}"
        )));
    }
    let model = SceneModel::new(seed, bands);
    let fine = model.render_ms::<T>(height * RATIO, width * RATIO);
    Ok((
        bicubic_resample(&fine, Ratio::new(1, RATIO))?,
        model.render_pan(height * RATIO, width * RATIO),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scene() {
        let a = synth_scene::<f32>(7, 4, 16, 16).unwrap();
        let b = synth_scene::<f32>(7, 4, 16, 16).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn values_within_declared_range() {
        let (truth, pan) = synth_scene::<f64>(3, 8, 32, 32).unwrap();
        for v in truth.data().iter().chain(pan.data()) {
            assert!((DN_RANGE.0..=DN_RANGE.1).contains(v));
        }
        assert_eq!(truth.shape(), &[8, 32, 32]);
        assert_eq!(pan.shape(), &[128, 128]);
    }

    #[test]
    fn rejects_non_multiple_of_ratio() {
        assert!(synth_scene::<f32>(1, 4, 30, 32).is_err());
    }
}
