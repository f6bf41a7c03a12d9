//! Weakly supervised local 3D features for point-cloud registration.
//!
//! A point cloud is split into local clusters; a detector network predicts an
//! orientation and a saliency (attention) score per cluster, and a descriptor
//! network turns each orientation-normalized cluster into a unit descriptor.
//! Both are trained from pose-tagged clouds alone with an attention-weighted
//! alignment triplet loss. At inference, attention drives keypoint selection
//! and the descriptors feed nearest-neighbour matching and RANSAC.

pub mod autodiff;
pub mod bench;
pub mod error;
pub mod geom;
pub mod loss;
pub mod net;
pub mod register;
pub mod train;

pub use error::{Error, Result};

/// Deterministic random stream used throughout the crate.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
