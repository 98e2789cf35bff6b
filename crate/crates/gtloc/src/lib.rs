//! Ground-texture visual localization.
//!
//! A downward-facing camera over a flat textured floor sees an image whose
//! pose is a planar rigid transform. This crate maps such a floor from
//! reference images with known poses and localizes query images against the
//! map, globally or bounded by a position prior:
//!
//! - [`features`]: difference-of-Gaussians keypoints with orientation, plus
//!   compact binary descriptors built from patch-triplet comparisons.
//! - [`matching`]: identity matching (a pair matches iff the descriptors are
//!   bit-identical, served by a `2^n`-bucket table) and classic
//!   nearest-neighbor baselines.
//! - [`voting`]: a grid accumulator over the mapped area; each match votes
//!   for the query-image origin it would imply, and the densest cell keeps
//!   its matches.
//! - [`geometry`]: SE(2) poses, least-squares rigid fitting, and RANSAC over
//!   single-match hypotheses.
//! - [`mapstore`]: the persistent map with online add/remove/update, a
//!   spatial index over reference poses, and a binary file format.
//! - [`localizer`]: the end-to-end pipeline with a prior-to-candidate-count
//!   schedule.
//! - [`synth`] and [`bench`]: a seeded synthetic-texture world and the
//!   experiment harness behind the `gtloc` CLI.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); bare type
//! names default to `f64` and `*F32` aliases are exported at the crate root.

pub mod bench;
pub mod features;
pub mod geometry;
pub mod image;
pub mod localizer;
pub mod mapstore;
pub mod matching;
pub mod scalar;
pub mod synth;
pub mod voting;

pub use bench::{run_experiment, ExperimentConfig, Report};
pub use features::{
    describe, describe_wide, detect_keypoints, extract_features, extract_features_wide,
    make_triplet_layout, BinaryDescriptor, CompactDescriptor, DetectorConfig, Feature,
    FeatureError, Keypoint, Triplet, TripletLayout, WideDescriptor,
};
pub use geometry::{
    compose, estimate_rigid, implied_origin, is_success, ransac_pose, wrap_angle, Correspondence,
    Extent, GeometryError, Pose2D, RansacConfig, SuccessCriteria,
};
pub use image::{Image, ImageError};
pub use localizer::{
    center_pose, localize, localize_traced, schedule_lookup, LocalizationResult, LocalizeError,
    PhaseTimings, Prior, PriorSchedule, TracedLocalization,
};
pub use mapstore::{
    build_map_from_csv, read_poses_csv, MapError, PoseEntry, RecordId, ReferenceImageRecord,
    StoredFeature, TextureMap,
};
pub use matching::{
    build_table, identity_match, nn_match_crosscheck, nn_match_ratio, sample_features,
    sample_indices, IdentityTable, Match, MatchingError,
};
pub use scalar::Scalar;
pub use synth::{SyntheticTexture, SynthError, TextureProfile};
pub use voting::{VotingError, VotingMap};

/// `f32` specializations of the core types (`f64` is the default).
pub type Pose2F32 = geometry::Pose2D<f32>;
pub type CorrespondenceF32 = geometry::Correspondence<f32>;
pub type KeypointF32 = features::Keypoint<f32>;
pub type FeatureF32 = features::Feature<f32>;
pub type TextureMapF32 = mapstore::TextureMap<f32>;
pub type VotingMapF32 = voting::VotingMap<f32>;

#[cfg(test)]
pub(crate) fn test_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand_chacha::rand_core::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
