//! Scene simulation, resampling, patching, normalization and file formats.

pub mod io;
pub mod normalize;
pub mod patch;
pub mod pnm;
pub mod resample;
pub mod scene;
pub mod synth;

pub use io::{read_archive, read_tensor, write_archive, write_tensor};
pub use normalize::{denormalize, normalize};
pub use patch::{
    assemble, crop, extract_patches, patch_grid, patchify, Patch, PatchSet, Split, SplitFractions,
};
pub use pnm::Pnm;
pub use resample::bicubic_resample;
pub use scene::{degrade_wald, downsample, upsample_ms, SceneTriple, DN_RANGE, RATIO};
pub use synth::{synth_scene, SceneModel};
