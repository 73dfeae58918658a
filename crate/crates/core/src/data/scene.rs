use num_rational::Ratio;

use super::resample::bicubic_resample;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Resolution ratio between PAN and MS.
pub const RATIO: usize = 4;

/// Native value range of simulated sensors (11-bit digital numbers).
pub const DN_RANGE: (f64, f64) = (0.0, 2047.0);

/// A PAN / MS pair at a fixed resolution ratio, optionally with the
/// high-resolution MS it should be sharpened into.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneTriple<T: Real> {
    /// `[H, W]`
    pub pan: Tensor<T>,
    /// `[B, H / ratio, W / ratio]`
    pub ms: Tensor<T>,
    /// `[B, H, W]`
    pub truth: Option<Tensor<T>>,
    pub ratio: usize,
    pub value_range: (f64, f64),
}

impl<T: Real> SceneTriple<T> {
    pub fn new(
        pan: Tensor<T>,
        ms: Tensor<T>,
        truth: Option<Tensor<T>>,
        ratio: usize,
        value_range: (f64, f64),
    ) -> Result<Self> {
        if pan.ndim() != 2 {
            return Err(Error::dim("SceneTriple", "pan rank", 2, pan.ndim()));
        }
        if ms.ndim() != 3 {
            return Err(Error::dim("SceneTriple", "ms rank", 3, ms.ndim()));
        }
        let (h, w) = (pan.shape()[0], pan.shape()[1]);
        if ms.shape()[1] * ratio != h || ms.shape()[2] * ratio != w {
            return Err(Error::Ratio(format!(
                "pan {h}x{w} is not {ratio} x ms {}x{}",
                ms.shape()[1],
                ms.shape()[2]
            )));
        }
        if let Some(t) = &truth {
            if t.shape() != [ms.shape()[0], h, w] {
                return Err(Error::ShapeMismatch {
                    op: "SceneTriple",
                    lhs: vec![ms.shape()[0], h, w],
                    rhs: t.shape().to_vec(),
                });
            }
        }
        if !(value_range.1 > value_range.0) {
            return Err(Error::Config(format!(
                "degenerate value range {value_range:?}"
            )));
        }
        Ok(Self {
            pan,
            ms,
            truth,
            ratio,
            value_range,
        })
    }

    pub fn bands(&self) -> usize {
        self.ms.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.pan.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.pan.shape()[1]
    }
}

/// Wald-protocol simulation.
///
/// `truth [B, H, W]` is the original MS and becomes the reference;
/// `pan_full [ratio * H, ratio * W]` is the original PAN. Both are shrunk by
/// the ratio with the same bicubic filter, giving `ms [B, H/4, W/4]` and
/// `pan [H, W]`.
pub fn degrade_wald<T: Real>(
    truth: &Tensor<T>,
    pan_full: &Tensor<T>,
    value_range: (f64, f64),
) -> Result<SceneTriple<T>> {
    if truth.ndim() != 3 {
        return Err(Error::dim("degrade_wald", "truth rank", 3, truth.ndim()));
    }
    let (h, w) = (truth.shape()[1], truth.shape()[2]);
    if h % RATIO != 0 || w % RATIO != 0 {
        return Err(Error::Ratio(format!(
            "truth {h}x{w} is not divisible by {RATIO}"
        )));
    }
    if pan_full.shape() != [h * RATIO, w * RATIO] {
        return Err(Error::Ratio(format!(
            "pan {:?} must be {RATIO} x the truth extent {h}x{w}",
            pan_full.shape()
        )));
    }
    let shrink = Ratio::new(1, RATIO);
    let ms = bicubic_resample(truth, shrink)?;
    let pan = bicubic_resample(pan_full, shrink)?;
    SceneTriple::new(pan, ms, Some(truth.clone()), RATIO, value_range)
}

/// Bicubic reduction by the ratio, as in [`degrade_wald`]: `[.., H, W] -> [.., H/4, W/4]`.
pub fn downsample<T: Real>(img: &Tensor<T>) -> Result<Tensor<T>> {
    bicubic_resample(img, Ratio::new(1, RATIO))
}

/// MS brought to PAN resolution: `[B, h, w] -> [B, 4h, 4w]`.
pub fn upsample_ms<T: Real>(ms: &Tensor<T>) -> Result<Tensor<T>> {
    bicubic_resample(ms, Ratio::from_integer(RATIO))
}
