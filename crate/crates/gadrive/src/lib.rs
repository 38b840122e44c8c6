//! Geometry-guided pseudo-view synthesis and training-data tooling for
//! driving scenes.
//!
//! Given posed RGB-D frames recorded along a driving trajectory, this
//! crate synthesizes pseudo-views along arbitrary novel trajectories
//! with occlusion-aware backward warping, aligns monocular depth to
//! sparse LiDAR, simulates pseudo-view degradation patterns for
//! generative-model training pairs, plans segment-wise conditioning
//! sequences, edits camera trajectories, and stress-tests robustness
//! via geometry corruption.
//!
//! The narrative guide lives in `book/`; its code snippets run as
//! doc-tests through the [`book`] module below.

pub mod align;
pub mod cli;
pub mod codec;
pub mod degrade;
pub mod geometry;
pub mod manifest;
pub mod segment;
pub mod synthesis;
pub mod trajectory;

pub use align::{dense_depth_loss, distortion_loss, fit_scale_shift, project_lidar, ScaleShift};
pub use degrade::{simulate, DegradationConfig, TrainingPair};
pub use geometry::{project, unproject, DepthMap, Intrinsics, Pose};
pub use manifest::{load_manifest, EngineConfig, SceneManifest};
pub use segment::{latent_shape, plan_segments, run_chained, SegmentPlan};
pub use synthesis::{
    build_point_cloud, corrupt_point_cloud, synthesize, Frame, PseudoView, VisibilityTolerance,
    WorldPointCloud,
};
pub use trajectory::{shift_trajectory, ShiftSpec, Trajectory};

// mdbook cannot run its snippets as tests, so the guide's chapters are
// pulled in as doc comments here and `cargo test --doc` keeps them
// compiling and passing.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/camera-geometry.md")]
    pub mod camera_geometry {}
    #[doc = include_str!("../../../book/src/pseudo-views.md")]
    pub mod pseudo_views {}
    #[doc = include_str!("../../../book/src/depth-alignment.md")]
    pub mod depth_alignment {}
    #[doc = include_str!("../../../book/src/degradation.md")]
    pub mod degradation {}
    #[doc = include_str!("../../../book/src/segments-and-trajectories.md")]
    pub mod segments_and_trajectories {}
}
