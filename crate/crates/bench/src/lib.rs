//! Shared fixtures for the benchmarks.

use gabor_core::corpus::{dead_leaves_corpus, DeadLeaves};
use gabor_core::imageio::{sample_patches_with, whiten};
use gabor_core::rng::seeded;
use gabor_core::{PatchBatch, PipelineConfig, RawImage};

/// One 256×256 dead-leaves image.
pub fn raw_image() -> RawImage {
    dead_leaves_corpus(&DeadLeaves::default(), 1, 1)
        .expect("corpus")
        .remove(0)
}

/// `count` whitened 16×16 patches.
pub fn patches(count: usize) -> PatchBatch {
    let white = whiten(&raw_image(), &PipelineConfig::default()).expect("whiten");
    sample_patches_with(&[white], 16, count, &mut seeded(2)).expect("patches")
}
