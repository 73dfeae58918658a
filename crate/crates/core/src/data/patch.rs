//! Grid patch extraction and seeded train/val/test splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::SceneTriple;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Fractions of patches assigned to each split. They need not sum to one;
/// counts are normalized by the total.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    /// 400 / 100 / 50 images.
    fn default() -> Self {
        Self {
            train: 400.0,
            val: 100.0,
            test: 50.0,
        }
    }
}

impl SplitFractions {
    /// Per-split counts for `n` items. Largest-remainder rounding, so counts
    /// always sum to `n`.
    pub fn counts(&self, n: usize) -> Result<[usize; 3]> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Config(format!(
                "split fractions must be non-negative: {self:?}"
            )));
        }
        let total: f64 = parts.iter().sum();
        if total <= 0.0 {
            return Err(Error::Config("split fractions sum to zero".into()));
        }
        let exact: Vec<f64> = parts.iter().map(|p| p / total * n as f64).collect();
        let mut counts = [0usize; 3];
        for (c, e) in counts.iter_mut().zip(&exact) {
            *c = e.floor() as usize;
        }
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            (exact[b] - exact[b].floor())
                .total_cmp(&(exact[a] - exact[a].floor()))
                .then(a.cmp(&b))
        });
        let mut left = n - counts.iter().sum::<usize>();
        for i in order {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        Ok(counts)
    }
}

/// Top-left corners (row, col) of a regular grid of `size` windows.
pub fn patch_grid(
    height: usize,
    width: usize,
    size: usize,
    stride: usize,
) -> Result<Vec<(usize, usize)>> {
    if size == 0 || stride == 0 {
        return Err(Error::Config(
            "patch size and stride must be positive".into(),
        ));
    }
    if size > height || size > width {
        return Err(Error::dim(
            "patchify",
            "patch size",
            format!("<= {height}x{width}"),
            size,
        ));
    }
    let mut corners = Vec::new();
    for y in (0..=height - size).step_by(stride) {
        for x in (0..=width - size).step_by(stride) {
            corners.push((y, x));
        }
    }
    Ok(corners)
}

/// Copies the `[.., size, size]` window at `(y, x)` out of the trailing two axes.
pub fn crop<T: Real>(
    img: &Tensor<T>,
    y: usize,
    x: usize,
    size_h: usize,
    size_w: usize,
) -> Result<Tensor<T>> {
    let shape = img.shape();
    let n = shape.len();
    if n < 2 {
        return Err(Error::dim("crop", "rank", ">= 2", n));
    }
    let (h, w) = (shape[n - 2], shape[n - 1]);
    if y + size_h > h || x + size_w > w {
        return Err(Error::dim(
            "crop",
            "window",
            format!("inside {h}x{w}"),
            format!("({y},{x})+{size_h}x{size_w}"),
        ));
    }
    let planes = img.len() / (h * w);
    let mut out = Vec::with_capacity(planes * size_h * size_w);
    for p in 0..planes {
        for r in y..y + size_h {
            let start = p * h * w + r * w + x;
            out.extend_from_slice(&img.data()[start..start + size_w]);
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape[n - 2] = size_h;
    out_shape[n - 1] = size_w;
    Tensor::new(&out_shape, out)
}

/// One window of a scene, with its origin in PAN pixel coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch<T: Real> {
    pub origin: (usize, usize),
    pub scene: SceneTriple<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet<T: Real> {
    pub split: Split,
    pub size: usize,
    pub patches: Vec<Patch<T>>,
}

impl<T: Real> PatchSet<T> {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// Cuts `scene` into `size x size` PAN windows (MS windows `size / ratio`)
/// on a grid with the given stride.
pub fn extract_patches<T: Real>(
    scene: &SceneTriple<T>,
    size: usize,
    stride: usize,
) -> Result<Vec<Patch<T>>> {
    let r = scene.ratio;
    if size % r != 0 || stride % r != 0 {
        return Err(Error::Ratio(format!(
            "patch size {size} and stride {stride} must be multiples of {r}"
        )));
    }
    patch_grid(scene.height(), scene.width(), size, stride)?
        .into_iter()
        .map(|(y, x)| {
            let pan = crop(&scene.pan, y, x, size, size)?;
            let ms = crop(&scene.ms, y / r, x / r, size / r, size / r)?;
            let truth = scene
                .truth
                .as_ref()
                .map(|t| crop(t, y, x, size, size))
                .transpose()?;
            Ok(Patch {
                origin: (y, x),
                scene: SceneTriple::new(pan, ms, truth, r, scene.value_range)?,
            })
        })
        .collect()
}

/// Grid patches of `scene` dealt into train/val/test by a seeded shuffle.
pub fn patchify<T: Real>(
    scene: &SceneTriple<T>,
    size: usize,
    stride: usize,
    fractions: SplitFractions,
    seed: u64,
) -> Result<[PatchSet<T>; 3]> {
    let mut patches = extract_patches(scene, size, stride)?;
    let counts = fractions.counts(patches.len())?;
    patches.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = patches.split_off(counts[0] + counts[1]);
    let val = patches.split_off(counts[0]);
    Ok([
        PatchSet {
            split: Split::Train,
            size,
            patches,
        },
        PatchSet {
            split: Split::Val,
            size,
            patches: val,
        },
        PatchSet {
            split: Split::Test,
            size,
            patches: test,
        },
    ])
}

/// Inverse of non-overlapping extraction: pastes `[.., s, s]` tiles at their
/// origins into a `[.., height, width]` canvas.
pub fn assemble<T: Real>(
    tiles: &[(usize, usize, &Tensor<T>)],
    height: usize,
    width: usize,
) -> Result<Tensor<T>> {
    let first = tiles
        .first()
        .ok_or_else(|| Error::Config("no tiles to assemble".into()))?
        .2;
    let n = first.ndim();
    let mut shape = first.shape().to_vec();
    shape[n - 2] = height;
    shape[n - 1] = width;
    let mut out = Tensor::zeros(&shape);
    for &(y, x, tile) in tiles {
        let ts = tile.shape();
        let (th, tw) = (ts[n - 2], ts[n - 1]);
        if ts[..n - 2] != shape[..n - 2] || y + th > height || x + tw > width {
            return Err(Error::ShapeMismatch {
                op: "assemble",
                lhs: shape.clone(),
                rhs: ts.to_vec(),
            });
        }
        let planes = tile.len() / (th * tw);
        for p in 0..planes {
            for r in 0..th {
                let dst = p * height * width + (y + r) * width + x;
                let src = p * th * tw + r * tw;
                out.data_mut()[dst..dst + tw].copy_from_slice(&tile.data()[src..src + tw]);
            }
        }
    }
    Ok(out)
}
