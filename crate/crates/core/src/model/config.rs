use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How spatial and spectral features are merged at a fusion level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionOp {
    S2clstm,
    Sum,
    Max,
    Average,
    Product,
    Conv,
}

impl FusionOp {
    pub const ALL: [FusionOp; 6] = [
        FusionOp::Sum,
        FusionOp::Max,
        FusionOp::Average,
        FusionOp::Product,
        FusionOp::Conv,
        FusionOp::S2clstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionOp::S2clstm => "s2clstm",
            FusionOp::Sum => "sum",
            FusionOp::Max => "max",
            FusionOp::Average => "average",
            FusionOp::Product => "product",
            FusionOp::Conv => "conv",
        }
    }
}

impl std::str::FromStr for FusionOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionOp::ALL
            .into_iter()
            .find(|op| op.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown fusion op `{s}`")))
    }
}

/// Layout of the spectral channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Backbone {
    /// Planar spatial channel, volumetric spectral channel.
    #[serde(rename = "2d3d")]
    Planar3d,
    /// Both channels planar; the spectral channel convolves over `B * C`
    /// flattened channels.
    #[serde(rename = "2d2d")]
    Planar2d,
}

impl Backbone {
    pub fn name(self) -> &'static str {
        match self {
            Backbone::Planar3d => "2d3d",
            Backbone::Planar2d => "2d2d",
        }
    }
}

impl std::str::FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2d3d" => Ok(Backbone::Planar3d),
            "2d2d" => Ok(Backbone::Planar2d),
            _ => Err(Error::Config(format!("unknown backbone `{s}`"))),
        }
    }
}

/// Operator carrying the planar spatial map into the spectral volume.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    /// Reshape `B * C` channels to `[C, B]`, then a volumetric convolution.
    Reshape,
    /// Transposed convolution growing a depth-1 volume to depth `B`.
    Deconv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Spectral bands `B`.
    pub bands: usize,
    /// Feature channels `C` of the spectral channel.
    pub channels: usize,
    /// Filter ratio between the channels; the spatial channel has `beta * C` filters.
    pub beta: usize,
    /// Number of levels `L`.
    pub levels: usize,
    pub kernel: usize,
    /// 1-based levels that run the fusion operator.
    pub fusion_levels: BTreeSet<usize>,
    pub fusion_op: FusionOp,
    pub backbone: Backbone,
    pub projection: Projection,
    /// Weight of the squared-weight penalty.
    pub lambda: f64,
    /// Initial forget-gate bias.
    pub forget_bias: f64,
}

impl ModelConfig {
    fn preset(bands: usize, channels: usize) -> Self {
        Self {
            bands,
            channels,
            beta: bands,
            levels: 4,
            kernel: 3,
            fusion_levels: (1..=4).collect(),
            fusion_op: FusionOp::S2clstm,
            backbone: Backbone::Planar3d,
            projection: Projection::Reshape,
            lambda: 0.0,
            forget_bias: 0.0,
        }
    }

    /// Four-band sensors (IKONOS, GaoFen-2): `B = 4`, `C = 32`.
    pub fn ikonos() -> Self {
        Self::preset(4, 32)
    }

    /// Eight-band WorldView-2: `B = 8`, `C = 16`.
    pub fn worldview2() -> Self {
        Self::preset(8, 16)
    }

    /// Desk-scale model: `B = 4`, `C = 4`, two levels.
    pub fn tiny() -> Self {
        Self {
            levels: 2,
            fusion_levels: (1..=2).collect(),
            ..Self::preset(4, 4)
        }
    }

    /// Sets `L` and fuses at every level.
    pub fn with_levels(mut self, levels: usize) -> Self {
        self.levels = levels;
        self.fusion_levels = (1..=levels).collect();
        self
    }

    /// Width of the spatial channel.
    pub fn spatial_width(&self) -> usize {
        self.beta * self.channels
    }

    pub fn fuses_at(&self, level: usize) -> bool {
        self.fusion_levels.contains(&level)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.bands == 0 || self.channels == 0 {
            return fail(format!(
                "bands ({}) and channels ({}) must be positive",
                self.bands, self.channels
            ));
        }
        if self.beta != self.bands {
            return fail(format!(
                "beta ({}) must equal bands ({}) so the spatial map reshapes onto the spectral volume",
                self.beta, self.bands
            ));
        }
        if self.levels == 0 {
            return fail("at least one level is required".into());
        }
        if self.kernel % 2 == 0 {
            return fail(format!("kernel {} must be odd", self.kernel));
        }
        if let Some(&bad) = self
            .fusion_levels
            .iter()
            .find(|&&l| l == 0 || l > self.levels)
        {
            return fail(format!("fusion level {bad} outside 1..={}", self.levels));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!(
                "lambda {} must be finite and non-negative",
                self.lambda
            ));
        }
        if !self.forget_bias.is_finite() {
            return fail("forget_bias must be finite".into());
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::tiny()
    }
}
