//! Scene loading, patching and batching for training and evaluation.

use std::path::{Path, PathBuf};

use dcnet_core::data::io::encode_tensor;
use dcnet_core::data::{
    degrade_wald, extract_patches, normalize, read_archive, synth_scene, upsample_ms,
    write_archive, SceneTriple, DN_RANGE, RATIO,
};
use dcnet_core::{Real, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::{DataSource, ExperimentConfig};
use crate::error::{CliError, Context, Result};

/// Archive keys of a scene file.
pub const PAN: &str = "pan";
pub const MS: &str = "ms";
pub const TRUTH: &str = "truth";
pub const RANGE: &str = "range";

pub fn write_scene<T: Real>(path: &Path, scene: &SceneTriple<T>) -> Result<()> {
    let range = Tensor::from_f64(&[2], &[scene.value_range.0, scene.value_range.1])?;
    let mut entries = vec![(PAN, &scene.pan), (MS, &scene.ms)];
    if let Some(t) = &scene.truth {
        entries.push((TRUTH, t));
    }
    entries.push((RANGE, &range));
    write_archive(path, entries).at(path)
}

pub fn read_scene<T: Real>(path: &Path) -> Result<SceneTriple<T>> {
    let mut entries = read_archive::<T>(path).at(path)?;
    let mut take = |key: &str| {
        entries
            .iter()
            .position(|(k, _)| k == key)
            .map(|i| entries.swap_remove(i).1)
    };
    let missing = |key: &str| {
        CliError::File {
            path: path.to_path_buf(),
            source: dcnet_core::Error::Format(format!("scene archive has no `{key}` entry")),
        }
    };
    let pan = take(PAN).ok_or_else(|| missing(PAN))?;
    let ms = take(MS).ok_or_else(|| missing(MS))?;
    let truth = take(TRUTH);
    let range = match take(RANGE) {
        Some(r) if r.len() == 2 => (r.data()[0].to_f64_lossy(), r.data()[1].to_f64_lossy()),
        Some(_) => return Err(missing("range of two values")),
        None => DN_RANGE,
    };
    SceneTriple::new(pan, ms, truth, RATIO, range).at(path)
}

/// Scene archives (`*.pten`) in `dir`, sorted by file name.
pub fn scene_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .at(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pten") && p.is_file())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::File {
            path: dir.to_path_buf(),
            source: dcnet_core::Error::Format("no .pten scene archives".into()),
        });
    }
    Ok(files)
}

pub fn load_scenes<T: Real>(source: &DataSource, bands: usize) -> Result<Vec<SceneTriple<T>>> {
    let scenes = match source {
        DataSource::Synth(s) => (0..s.count)
            .map(|i| {
                let (truth, pan_full) =
                    synth_scene::<T>(s.seed.wrapping_add(i as u64), bands, s.height, s.width)?;
                Ok(degrade_wald(&truth, &pan_full, DN_RANGE)?)
            })
            .collect::<Result<Vec<_>>>()?,
        DataSource::Scenes(dir) => scene_files(dir)?
            .iter()
            .map(|p| read_scene(p))
            .collect::<Result<Vec<_>>>()?,
    };
    for s in &scenes {
        if s.bands() != bands {
            return Err(CliError::Core(dcnet_core::Error::Dimension {
                op: "dataset",
                axis: "bands".into(),
                expected: bands.to_string(),
                actual: s.bands().to_string(),
            }));
        }
    }
    Ok(scenes)
}

/// One training example, values normalized to `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Sample<T: Real> {
    /// `[1, H, W]`
    pub pan: Tensor<T>,
    /// `[B, H / 4, W / 4]`
    pub ms: Tensor<T>,
    /// `[B, H, W]`
    pub ms_up: Tensor<T>,
    /// `[B, H, W]`
    pub truth: Tensor<T>,
    pub range: (f64, f64),
}

impl<T: Real> Sample<T> {
    pub fn from_scene(scene: &SceneTriple<T>) -> Result<Self> {
        let r = scene.value_range;
        let truth = scene.truth.as_ref().ok_or_else(|| {
            CliError::Core(dcnet_core::Error::Format(
                "training scenes need a reference image".into(),
            ))
        })?;
        let (h, w) = (scene.height(), scene.width());
        let ms = normalize(&scene.ms, r)?;
        Ok(Self {
            pan: normalize(&scene.pan, r)?.into_reshaped(&[1, h, w])?,
            ms_up: upsample_ms(&ms)?,
            ms,
            truth: normalize(truth, r)?,
            range: r,
        })
    }
}

/// Train, validation and test samples of an experiment.
pub struct Dataset<T: Real> {
    pub train: Vec<Sample<T>>,
    pub val: Vec<Sample<T>>,
    pub test: Vec<Sample<T>>,
    /// SHA-256 over the scene tensors in load order.
    pub sha256: String,
}

impl<T: Real> Dataset<T> {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let scenes = load_scenes::<T>(&cfg.data.source, cfg.model.bands)?;
        Self::from_scenes(&scenes, cfg)
    }

    pub fn from_scenes(scenes: &[SceneTriple<T>], cfg: &ExperimentConfig) -> Result<Self> {
        let mut hasher = Sha256::new();
        let mut buf = Vec::new();
        for s in scenes {
            for t in [Some(&s.pan), Some(&s.ms), s.truth.as_ref()].into_iter().flatten() {
                buf.clear();
                encode_tensor(t, &mut buf)?;
                hasher.update(&buf);
            }
        }
        let mut patches = Vec::new();
        for s in scenes {
            for p in extract_patches(s, cfg.data.patch_size, cfg.data.stride())? {
                patches.push(Sample::from_scene(&p.scene)?);
            }
        }
        let counts = cfg.data.split.counts(patches.len())?;
        patches.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.train.seed));
        let test = patches.split_off(counts[0] + counts[1]);
        let val = patches.split_off(counts[0]);
        if patches.is_empty() {
            return Err(CliError::usage(format!(
                "no training patches: {} patches of {}² after splitting",
                counts.iter().sum::<usize>(),
                cfg.data.patch_size
            )));
        }
        Ok(Self {
            train: patches,
            val,
            test,
            sha256: hex::encode(hasher.finalize()),
        })
    }

    /// The split used for final metrics: test, else validation, else train.
    pub fn evaluation_split(&self) -> (&'static str, &[Sample<T>]) {
        if !self.test.is_empty() {
            ("test", &self.test)
        } else if !self.val.is_empty() {
            ("val", &self.val)
        } else {
            ("train", &self.train)
        }
    }
}

/// Stacked batch tensors `(pan, ms_up, truth)`.
pub fn stack<T: Real>(samples: &[&Sample<T>]) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let pick = |f: fn(&Sample<T>) -> &Tensor<T>| {
        Tensor::stack(&samples.iter().map(|s| f(s).clone()).collect::<Vec<_>>())
    };
    Ok((pick(|s| &s.pan)?, pick(|s| &s.ms_up)?, pick(|s| &s.truth)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn cfg(count: usize, patch: usize) -> ExperimentConfig {
        let mut v = json!({
            "model": "tiny",
            "train": {"seed": 5},
            "data": {
                "source": {"synth": {"count": count, "height": 32, "width": 32}},
                "split": {"train": 2, "val": 1, "test": 1},
                "patch_size": patch
            },
            "output_dir": "/tmp"
        });
        ExperimentConfig::from_value(&mut v, &[]).unwrap()
    }

    #[test]
    fn split_sizes_and_shapes() {
        let d = Dataset::<f32>::build(&cfg(2, 16)).unwrap();
        assert_eq!((d.train.len(), d.val.len(), d.test.len()), (4, 2, 2));
        let s = &d.train[0];
        assert_eq!(s.pan.shape(), &[1, 16, 16]);
        assert_eq!(s.ms.shape(), &[4, 4, 4]);
        assert_eq!(s.ms_up.shape(), &[4, 16, 16]);
        assert_eq!(s.truth.shape(), &[4, 16, 16]);
        let (pan, ms_up, truth) = stack(&[&d.train[0], &d.train[1]]).unwrap();
        assert_eq!(pan.shape(), &[2, 1, 16, 16]);
        assert_eq!(ms_up.shape(), &[2, 4, 16, 16]);
        assert_eq!(truth.shape(), &[2, 4, 16, 16]);
    }

    #[test]
    fn hash_tracks_content() {
        let a = Dataset::<f32>::build(&cfg(1, 16)).unwrap();
        let b = Dataset::<f32>::build(&cfg(1, 16)).unwrap();
        let mut c2 = cfg(1, 16);
        c2.data.source = crate::config::DataSource::Synth(crate::config::SynthSpec {
            count: 1,
            height: 32,
            width: 32,
            seed: 9,
        });
        let c = Dataset::<f32>::build(&c2).unwrap();
        assert_eq!(a.sha256, b.sha256);
        assert_ne!(a.sha256, c.sha256);
    }

    #[test]
    fn scene_archive_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (truth, pan) = synth_scene::<f32>(1, 4, 16, 16).unwrap();
        let scene = degrade_wald(&truth, &pan, DN_RANGE).unwrap();
        let path = dir.path().join("a.pten");
        write_scene(&path, &scene).unwrap();
        assert_eq!(read_scene::<f32>(&path).unwrap(), scene);
        assert_eq!(scene_files(dir.path()).unwrap(), vec![path]);
    }

    #[test]
    fn band_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let (truth, pan) = synth_scene::<f32>(1, 3, 16, 16).unwrap();
        let scene = degrade_wald(&truth, &pan, DN_RANGE).unwrap();
        write_scene(&dir.path().join("a.pten"), &scene).unwrap();
        let source = DataSource::Scenes(dir.path().to_path_buf());
        let err = load_scenes::<f32>(&source, 4).unwrap_err();
        assert!(err.to_string().contains("bands"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }
}
