//! Clustering plus the detector and descriptor networks.

mod cluster;
mod model;
mod spatial;
mod weights;

pub use cluster::{ball_group, ball_group_at, ball_group_seeded, farthest_point_sample, Cluster};
pub(crate) use cluster::ClusterBatch;
pub(crate) use spatial::GridIndex;
pub use model::{
    describe, describe_clusters, descriptor_forward, detect, detect_clusters, detector_forward,
    features_for_clusters, forward_branch, sample_clusters, BranchConfig, Detection, KeypointFeature, Layer,
    NetVars, DEFAULT_TILE, NORM_EPS,
};
pub use weights::{Architecture, ModelWeights};
