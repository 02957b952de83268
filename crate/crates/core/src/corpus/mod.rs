//! Datasets: directory manifests, per-class splits and the synthetic corpus.

pub mod manifest;
pub mod split;
pub mod synth;

pub use manifest::{build_manifest, ClipRecord, Manifest, Split};
pub use split::{split_manifest, SplitRatios};
pub use synth::generate_synthetic;
