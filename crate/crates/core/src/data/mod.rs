//! Manifests, preprocessing, edge targets and the synthetic forgery generator.

mod augment;
mod edges;
mod manifest;
mod mask;
mod preprocess;
pub mod synth;

pub use augment::{crop, Dihedral};
pub use edges::{derive_edge_gt, dilate, erode, DEFAULT_EDGE_WIDTH};
pub use manifest::{load_manifest, Manifest, Record, Split};
pub use mask::BinaryMask;
pub use preprocess::{decode, load_sample, preprocess, preprocess_mask, rgb_to_tensor, Sample, INPUT_SIZE};
pub use synth::{generate_synthetic, ForgeryKind, ForgerySample, SynthConfig, SynthCounts};
