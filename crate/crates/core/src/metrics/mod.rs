//! Image quality indices for pan-sharpened products.
//!
//! Full-reference indices compare a fused image `[B, H, W]` with its
//! reference; the QNR family scores a fused image against the inputs it was
//! made from. Everything is computed in `f64` whatever the storage type.

pub mod hypercomplex;
mod quality;
mod reference_free;

use serde::{Deserialize, Serialize};

pub use hypercomplex::Hypercomplex;
pub use quality::{ergas, q2n, sam, scc, uiqi, uiqi_bands};
pub use reference_free::{d_lambda, d_s, qnr, QnrParams, QnrReport};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Default UIQI / Q2^n block size.
pub const WINDOW: usize = 32;

/// One row of a results table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub q2n: f64,
    pub uiqi: f64,
    pub sam_deg: f64,
    pub ergas: f64,
    pub scc: f64,
    pub d_lambda: Option<f64>,
    pub d_s: Option<f64>,
    pub qnr: Option<f64>,
}

impl MetricReport {
    /// All full-reference indices of `fused` against `reference`, both
    /// `[B, H, W]`.
    pub fn full_reference<T: Real>(
        fused: &Tensor<T>,
        reference: &Tensor<T>,
        ratio: usize,
        window: usize,
    ) -> Result<Self> {
        Ok(Self {
            q2n: q2n(fused, reference, window)?,
            uiqi: uiqi_bands(fused, reference, window)?,
            sam_deg: sam(fused, reference)?,
            ergas: ergas(fused, reference, ratio)?,
            scc: scc(fused, reference)?,
            d_lambda: None,
            d_s: None,
            qnr: None,
        })
    }

    pub fn with_qnr(self, r: QnrReport) -> Self {
        Self {
            d_lambda: Some(r.d_lambda),
            d_s: Some(r.d_s),
            qnr: Some(r.qnr),
            ..self
        }
    }

    /// Field-wise mean; an optional field is present only if it is present
    /// in every report.
    pub fn mean(reports: &[MetricReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::UndefinedMetric("mean of no reports".into()));
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let avg_opt = |f: fn(&MetricReport) -> Option<f64>| {
            reports
                .iter()
                .map(f)
                .collect::<Option<Vec<f64>>>()
                .map(|v| v.iter().sum::<f64>() / n)
        };
        Ok(Self {
            q2n: avg(|r| r.q2n),
            uiqi: avg(|r| r.uiqi),
            sam_deg: avg(|r| r.sam_deg),
            ergas: avg(|r| r.ergas),
            scc: avg(|r| r.scc),
            d_lambda: avg_opt(|r| r.d_lambda),
            d_s: avg_opt(|r| r.d_s),
            qnr: avg_opt(|r| r.qnr),
        })
    }
}

/// Largest usable block size not above `preferred` for an `h x w` image.
pub fn fit_window(preferred: usize, h: usize, w: usize) -> usize {
    preferred.min(h).min(w).max(1)
}

/// A `[B, H, W]` image as `f64` planes.
pub(crate) struct Planes {
    pub bands: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Planes {
    pub fn new<T: Real>(op: &'static str, t: &Tensor<T>) -> Result<Self> {
        let (bands, h, w) = match *t.shape() {
            [b, h, w] => (b, h, w),
            [h, w] => (1, h, w),
            _ => return Err(Error::dim(op, "rank", "2 or 3", t.ndim())),
        };
        Ok(Self {
            bands,
            h,
            w,
            data: t.data().iter().map(|v| v.to_f64_lossy()).collect(),
        })
    }

    pub fn pair<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<(Self, Self)> {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        Ok((Self::new(op, a)?, Self::new(op, b)?))
    }

    pub fn band(&self, b: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn pixels(&self) -> usize {
        self.h * self.w
    }
}
