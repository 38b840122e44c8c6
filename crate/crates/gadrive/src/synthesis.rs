//! Backward-warping pseudo-view synthesis: unproject the target depth to
//! a world point cloud, project every point into the recorded source
//! views, sample colors gated by a z-buffer visibility check, and keep
//! the nearest valid source per point. Also hosts the point-cloud
//! corruption harness used for robustness runs.

use image::RgbImage;
use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{project, unproject, DepthMap, Intrinsics, Pose};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("depth map has no valid pixel to unproject")]
    EmptyGeometry,
    #[error("source list is empty")]
    NoSources,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("corruption config invalid: {0}")]
    InvalidCorruption(String),
}

/// One posed camera observation: RGB image, intrinsics, camera-to-world
/// pose, rendered depth, and a scene time index.
#[derive(Debug, Clone)]
pub struct Frame {
    pub image: RgbImage,
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    pub depth: DepthMap,
    pub timestamp: i64,
}

impl Frame {
    pub fn new(
        image: RgbImage,
        intrinsics: Intrinsics,
        pose: Pose,
        depth: DepthMap,
        timestamp: i64,
    ) -> Result<Self, SynthesisError> {
        if image.width() != intrinsics.width || image.height() != intrinsics.height {
            return Err(SynthesisError::DimensionMismatch(format!(
                "image is {}x{} but intrinsics say {}x{}",
                image.width(),
                image.height(),
                intrinsics.width,
                intrinsics.height
            )));
        }
        if depth.width() != intrinsics.width || depth.height() != intrinsics.height {
            return Err(SynthesisError::DimensionMismatch(format!(
                "depth is {}x{} but intrinsics say {}x{}",
                depth.width(),
                depth.height(),
                intrinsics.width,
                intrinsics.height
            )));
        }
        Ok(Self { image, intrinsics, pose, depth, timestamp })
    }
}

/// Unprojected target geometry: one entry per valid target pixel. Colors
/// start unset (rendered as black) and are filled by aggregation.
#[derive(Debug, Clone)]
pub struct WorldPointCloud {
    pub points: Vec<Vector3<f64>>,
    pub colors: Vec<Option<[u8; 3]>>,
    pub source_indices: Vec<Option<usize>>,
    pub origin_pixels: Vec<(u32, u32)>,
}

impl WorldPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Visibility tolerance δ in meters for the rendered-depth comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibilityTolerance(f64);

impl VisibilityTolerance {
    pub const DEFAULT: VisibilityTolerance = VisibilityTolerance(0.05);

    pub fn new(delta: f64) -> Result<Self, SynthesisError> {
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(SynthesisError::InvalidCorruption(format!(
                "visibility tolerance must be finite and >= 0, got {delta}"
            )));
        }
        Ok(Self(delta))
    }

    pub fn meters(&self) -> f64 {
        self.0
    }
}

impl Default for VisibilityTolerance {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Outcome of probing one source view for a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleOutcome {
    /// The point is visible in the source; carries the sampled color.
    Visible([u8; 3]),
    /// The landing pixel's rendered depth disagrees with the point's
    /// camera depth by at least δ.
    Occluded,
    /// Behind the camera, outside the image, or no rendered depth at the
    /// landing pixel.
    OutOfView,
}

/// Round half away from zero; the landing pixel is out of view when the
/// rounded coordinate leaves `[0, extent)`.
fn round_to_pixel(x: f64, extent: u32) -> Option<u32> {
    let r = x.round();
    if r < 0.0 || r >= extent as f64 {
        None
    } else {
        Some(r as u32)
    }
}

/// Projects a world point into a source view and checks visibility
/// against the source's rendered depth.
pub fn sample_visibility(
    point: &Vector3<f64>,
    source: &Frame,
    delta: VisibilityTolerance,
) -> SampleOutcome {
    sample_visibility_inner(point, source, delta, true)
}

fn sample_visibility_inner(
    point: &Vector3<f64>,
    source: &Frame,
    delta: VisibilityTolerance,
    check_visibility: bool,
) -> SampleOutcome {
    let proj = match project(point, &source.intrinsics, &source.pose) {
        Ok(p) => p,
        Err(_) => return SampleOutcome::OutOfView,
    };
    if !proj.in_front {
        return SampleOutcome::OutOfView;
    }
    let (Some(u), Some(v)) = (
        round_to_pixel(proj.u, source.intrinsics.width),
        round_to_pixel(proj.v, source.intrinsics.height),
    ) else {
        return SampleOutcome::OutOfView;
    };
    let Some(rendered) = source.depth.get(u, v) else {
        return SampleOutcome::OutOfView;
    };
    if check_visibility && (rendered - proj.cam_depth).abs() >= delta.meters() {
        return SampleOutcome::Occluded;
    }
    SampleOutcome::Visible(source.image.get_pixel(u, v).0)
}

/// Unprojects every valid target pixel into world space (colors unset).
pub fn build_point_cloud(
    target_depth: &DepthMap,
    target_intrinsics: &Intrinsics,
    target_pose: &Pose,
) -> Result<WorldPointCloud, SynthesisError> {
    if target_depth.width() != target_intrinsics.width
        || target_depth.height() != target_intrinsics.height
    {
        return Err(SynthesisError::DimensionMismatch(format!(
            "depth is {}x{} but intrinsics say {}x{}",
            target_depth.width(),
            target_depth.height(),
            target_intrinsics.width,
            target_intrinsics.height
        )));
    }
    let mut points = Vec::new();
    let mut origin_pixels = Vec::new();
    for (u, v) in target_depth.pixels() {
        if let Some(d) = target_depth.get(u, v) {
            // in-bounds by construction, depth valid by the grid
            let p = unproject(u as f64, v as f64, d, target_intrinsics, target_pose)
                .expect("valid depth pixel must unproject");
            points.push(p);
            origin_pixels.push((u, v));
        }
    }
    if points.is_empty() {
        return Err(SynthesisError::EmptyGeometry);
    }
    let n = points.len();
    Ok(WorldPointCloud {
        points,
        colors: vec![None; n],
        source_indices: vec![None; n],
        origin_pixels,
    })
}

/// A synthesized pseudo-view: image, per-pixel validity, and the index
/// of the source that colored each pixel.
#[derive(Debug, Clone)]
pub struct PseudoView {
    pub image: RgbImage,
    pub validity: Vec<bool>,
    pub source_index: Vec<Option<usize>>,
    pub target_intrinsics: Intrinsics,
    pub target_pose: Pose,
}

impl PseudoView {
    pub fn validity_ratio(&self) -> f64 {
        if self.validity.is_empty() {
            return 0.0;
        }
        self.validity.iter().filter(|v| **v).count() as f64 / self.validity.len() as f64
    }

    pub fn is_valid(&self, u: u32, v: u32) -> bool {
        self.validity[v as usize * self.image.width() as usize + u as usize]
    }

    pub fn source_of(&self, u: u32, v: u32) -> Option<usize> {
        self.source_index[v as usize * self.image.width() as usize + u as usize]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SynthesisOptions {
    pub delta: VisibilityTolerance,
    /// Test hook reproducing the no-visibility-check failure mode; keep
    /// `true` for real runs.
    pub check_visibility: bool,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self { delta: VisibilityTolerance::DEFAULT, check_visibility: true }
    }
}

/// Colors each point from the nearest valid source view. Distance is
/// Euclidean between camera centers; ties break to the lower source
/// index. Points no source can see stay black.
pub fn color_point_cloud(
    cloud: &mut WorldPointCloud,
    sources: &[Frame],
    target_pose: &Pose,
    options: &SynthesisOptions,
) -> Result<(), SynthesisError> {
    if sources.is_empty() {
        return Err(SynthesisError::NoSources);
    }
    let target_center = target_pose.center();
    let mut order: Vec<usize> = (0..sources.len()).collect();
    // Sort sources nearest-first so the first visible hit wins; index
    // breaks exact distance ties.
    order.sort_by(|a, b| {
        let da = (sources[*a].pose.center() - target_center).norm();
        let db = (sources[*b].pose.center() - target_center).norm();
        da.partial_cmp(&db).unwrap().then(a.cmp(b))
    });

    let picks: Vec<(Option<[u8; 3]>, Option<usize>)> = cloud
        .points
        .par_iter()
        .map(|point| {
            for &i in &order {
                if let SampleOutcome::Visible(c) =
                    sample_visibility_inner(point, &sources[i], options.delta, options.check_visibility)
                {
                    return (Some(c), Some(i));
                }
            }
            (None, None)
        })
        .collect();
    for ((color_slot, src_slot), (color, src)) in
        cloud.colors.iter_mut().zip(cloud.source_indices.iter_mut()).zip(picks)
    {
        *color_slot = color;
        *src_slot = src;
    }
    Ok(())
}

/// Writes a colored cloud back to the target image plane. Origin pixels
/// are unique, so no z-buffer pass is needed here.
pub fn render_cloud(
    cloud: &WorldPointCloud,
    target_intrinsics: &Intrinsics,
    target_pose: &Pose,
) -> PseudoView {
    let (w, h) = (target_intrinsics.width, target_intrinsics.height);
    let mut image = RgbImage::new(w, h);
    let mut validity = vec![false; w as usize * h as usize];
    let mut source_index = vec![None; w as usize * h as usize];
    for i in 0..cloud.len() {
        let (u, v) = cloud.origin_pixels[i];
        if let Some(color) = cloud.colors[i] {
            image.put_pixel(u, v, image::Rgb(color));
            let idx = v as usize * w as usize + u as usize;
            validity[idx] = true;
            source_index[idx] = cloud.source_indices[i];
        }
    }
    PseudoView {
        image,
        validity,
        source_index,
        target_intrinsics: *target_intrinsics,
        target_pose: *target_pose,
    }
}

/// The full backward-warping pipeline for one target camera.
pub fn synthesize(
    sources: &[Frame],
    target_intrinsics: &Intrinsics,
    target_pose: &Pose,
    target_depth: &DepthMap,
    delta: VisibilityTolerance,
) -> Result<PseudoView, SynthesisError> {
    synthesize_with_options(
        sources,
        target_intrinsics,
        target_pose,
        target_depth,
        &SynthesisOptions { delta, check_visibility: true },
    )
}

pub fn synthesize_with_options(
    sources: &[Frame],
    target_intrinsics: &Intrinsics,
    target_pose: &Pose,
    target_depth: &DepthMap,
    options: &SynthesisOptions,
) -> Result<PseudoView, SynthesisError> {
    if sources.is_empty() {
        return Err(SynthesisError::NoSources);
    }
    let mut cloud = build_point_cloud(target_depth, target_intrinsics, target_pose)?;
    color_point_cloud(&mut cloud, sources, target_pose, options)?;
    Ok(render_cloud(&cloud, target_intrinsics, target_pose))
}

/// Seeded parameters for geometry corruption: fraction of points to
/// drop and half-width of the per-axis uniform translation noise.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionConfig {
    pub drop_fraction: f64,
    pub noise_half_width: f64,
    pub seed: u64,
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        if !(0.0..=1.0).contains(&self.drop_fraction) {
            return Err(SynthesisError::InvalidCorruption(format!(
                "drop_fraction must be in [0, 1], got {}",
                self.drop_fraction
            )));
        }
        if !(self.noise_half_width.is_finite() && self.noise_half_width >= 0.0) {
            return Err(SynthesisError::InvalidCorruption(format!(
                "noise_half_width must be finite and >= 0, got {}",
                self.noise_half_width
            )));
        }
        Ok(())
    }
}

/// Drops `round(drop_fraction · N)` points chosen by the seeded
/// generator and jitters each surviving coordinate by i.i.d. uniform
/// noise in `[-ε, +ε]`.
pub fn corrupt_point_cloud(
    cloud: &WorldPointCloud,
    config: &CorruptionConfig,
) -> Result<WorldPointCloud, SynthesisError> {
    config.validate()?;
    let n = cloud.len();
    let drop = (config.drop_fraction * n as f64).round() as usize;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut dropped = vec![false; n];
    for i in sample(&mut rng, n, drop.min(n)) {
        dropped[i] = true;
    }
    let mut out = WorldPointCloud {
        points: Vec::with_capacity(n - drop),
        colors: Vec::with_capacity(n - drop),
        source_indices: Vec::with_capacity(n - drop),
        origin_pixels: Vec::with_capacity(n - drop),
    };
    let eps = config.noise_half_width;
    for i in 0..n {
        if dropped[i] {
            continue;
        }
        let mut p = cloud.points[i];
        if eps > 0.0 {
            p.x += rng.gen_range(-eps..=eps);
            p.y += rng.gen_range(-eps..=eps);
            p.z += rng.gen_range(-eps..=eps);
        }
        out.points.push(p);
        out.colors.push(cloud.colors[i]);
        out.source_indices.push(cloud.source_indices[i]);
        out.origin_pixels.push(cloud.origin_pixels[i]);
    }
    Ok(out)
}

/// Corrupts raw LiDAR-style points with the same drop/noise scheme.
pub fn corrupt_points(
    points: &[Vector3<f64>],
    config: &CorruptionConfig,
) -> Result<Vec<Vector3<f64>>, SynthesisError> {
    config.validate()?;
    let n = points.len();
    let drop = (config.drop_fraction * n as f64).round() as usize;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut dropped = vec![false; n];
    for i in sample(&mut rng, n, drop.min(n)) {
        dropped[i] = true;
    }
    let eps = config.noise_half_width;
    let mut out = Vec::with_capacity(n - drop);
    for (i, p) in points.iter().enumerate() {
        if dropped[i] {
            continue;
        }
        let mut p = *p;
        if eps > 0.0 {
            p.x += rng.gen_range(-eps..=eps);
            p.y += rng.gen_range(-eps..=eps);
            p.z += rng.gen_range(-eps..=eps);
        }
        out.push(p);
    }
    Ok(out)
}
