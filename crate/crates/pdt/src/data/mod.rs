//! Dataset plumbing: the binary tensor container used for images and
//! checkpoints, the manifest CSV, and the synthetic two-domain generator.

mod container;
mod manifest;
mod synth;

pub use container::{Container, Entry};
pub use manifest::{Domain, Manifest, ManifestRow, Split};
pub use synth::{
    domain_transform, gen_dataset, gen_folds, render_sample, source_template, subset_train,
    target_template, SynthSpec,
};

/// Deterministic seed mixing for derived RNG streams (splitmix64-style).
pub(crate) fn mix_seed(seed: u64, tag: &str, a: u64, b: u64) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    let mut absorb = |v: u64| {
        h ^= v;
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 27;
        h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    };
    for &byte in tag.as_bytes() {
        absorb(byte as u64);
    }
    absorb(a);
    absorb(b);
    h
}
