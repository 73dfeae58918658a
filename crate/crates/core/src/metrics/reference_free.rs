use serde::{Deserialize, Serialize};

use super::quality::uiqi_planes;
use super::{Planes, WINDOW};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Block size and exponents of the QNR family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QnrParams {
    /// Block size at full resolution; images at MS scale use
    /// `window / ratio`.
    pub window: usize,
    pub p: f64,
    pub q: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for QnrParams {
    fn default() -> Self {
        Self {
            window: WINDOW,
            p: 1.0,
            q: 1.0,
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QnrReport {
    pub d_lambda: f64,
    pub d_s: f64,
    pub qnr: f64,
}

impl QnrParams {
    /// All three indices at once.
    pub fn evaluate<T: Real>(
        &self,
        fused: &Tensor<T>,
        ms: &Tensor<T>,
        pan: &Tensor<T>,
        pan_low: &Tensor<T>,
    ) -> Result<QnrReport> {
        let d_lambda = d_lambda(fused, ms, self)?;
        let d_s = d_s(fused, ms, pan, pan_low, self)?;
        Ok(QnrReport {
            d_lambda,
            d_s,
            qnr: qnr(d_lambda, d_s, self.alpha, self.beta),
        })
    }
}

/// Integer scale factor between a full-resolution and an MS-scale image.
fn scale_ratio(op: &'static str, full: &Planes, low: &Planes) -> Result<usize> {
    if low.h == 0
        || low.w == 0
        || full.h % low.h != 0
        || full.w % low.w != 0
        || full.h / low.h != full.w / low.w
    {
        return Err(Error::Ratio(format!(
            "{op}: {}x{} is not an integer multiple of {}x{}",
            full.h, full.w, low.h, low.w
        )));
    }
    Ok(full.h / low.h)
}

fn low_window(window: usize, ratio: usize) -> usize {
    (window / ratio).max(1)
}

/// Power mean `(mean |x|^p)^(1/p)`.
fn power_mean(values: &[f64], p: f64) -> f64 {
    let m = values.iter().map(|v| v.abs().powf(p)).sum::<f64>() / values.len() as f64;
    m.powf(1.0 / p)
}

/// Spectral distortion: how far the band-to-band UIQI pattern of `fused`
/// drifts from that of `ms`, over all ordered pairs of distinct bands.
pub fn d_lambda<T: Real>(fused: &Tensor<T>, ms: &Tensor<T>, params: &QnrParams) -> Result<f64> {
    let (f, m) = (
        Planes::new("d_lambda", fused)?,
        Planes::new("d_lambda", ms)?,
    );
    if f.bands != m.bands || f.bands < 2 {
        return Err(Error::dim(
            "d_lambda",
            "bands",
            format!("{} and >= 2", f.bands),
            m.bands,
        ));
    }
    let ratio = scale_ratio("d_lambda", &f, &m)?;
    let wl = low_window(params.window, ratio);
    let mut terms = Vec::with_capacity(f.bands * (f.bands - 1));
    for b in 0..f.bands {
        for r in 0..f.bands {
            if b != r {
                let qf = uiqi_planes(f.band(b), f.band(r), f.h, f.w, params.window)?;
                let qm = uiqi_planes(m.band(b), m.band(r), m.h, m.w, wl)?;
                terms.push(qf - qm);
            }
        }
    }
    Ok(power_mean(&terms, params.p))
}

/// Spatial distortion: how far each band's UIQI against PAN at full scale
/// drifts from the MS band's UIQI against degraded PAN.
pub fn d_s<T: Real>(
    fused: &Tensor<T>,
    ms: &Tensor<T>,
    pan: &Tensor<T>,
    pan_low: &Tensor<T>,
    params: &QnrParams,
) -> Result<f64> {
    let (f, m) = (Planes::new("d_s", fused)?, Planes::new("d_s", ms)?);
    let (p, pl) = (Planes::new("d_s", pan)?, Planes::new("d_s", pan_low)?);
    if f.bands != m.bands {
        return Err(Error::dim("d_s", "bands", f.bands, m.bands));
    }
    if p.bands != 1 || pl.bands != 1 || (p.h, p.w) != (f.h, f.w) || (pl.h, pl.w) != (m.h, m.w) {
        return Err(Error::ShapeMismatch {
            op: "d_s",
            lhs: fused.shape().to_vec(),
            rhs: pan.shape().to_vec(),
        });
    }
    let wl = low_window(params.window, scale_ratio("d_s", &f, &m)?);
    let terms = (0..f.bands)
        .map(|b| {
            let qf = uiqi_planes(f.band(b), &p.data, f.h, f.w, params.window)?;
            let qm = uiqi_planes(m.band(b), &pl.data, m.h, m.w, wl)?;
            Ok(qf - qm)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(power_mean(&terms, params.q))
}

/// Quality with no reference: `(1 - D_lambda)^alpha (1 - D_s)^beta`.
pub fn qnr(d_lambda: f64, d_s: f64, alpha: f64, beta: f64) -> f64 {
    (1.0 - d_lambda).powf(alpha) * (1.0 - d_s).powf(beta)
}
