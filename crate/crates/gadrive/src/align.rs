//! Dense depth supervision machinery: project sparse LiDAR into the
//! image, fit the scale-shift transform mapping relative monocular
//! depth to metric depth, and compute the dense L1 loss. Also the
//! pairwise ray-weight distortion loss used to concentrate weight mass
//! near a single surface.

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{project, DepthMap, Intrinsics, Pose};

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("no LiDAR point survived projection into the image")]
    EmptySamples,
    #[error("need at least 2 usable samples, got {0}")]
    InsufficientSamples(usize),
    #[error("ill-posed fit: relative depths at sample pixels are all equal")]
    IllPosedFit,
    #[error("depth maps have no shared valid pixel")]
    EmptyOverlap,
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("negative weight {0} in distortion loss")]
    NegativeWeight(f64),
    #[error("weights and depths have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// Sparse metric depth at integer pixels, one depth per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDepthSamples {
    pub pixels: Vec<(u32, u32)>,
    pub depths: Vec<f64>,
}

impl SparseDepthSamples {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// The affine map `d_metric ≈ scale · d_rel + shift`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleShift {
    pub scale: f64,
    pub shift: f64,
}

impl ScaleShift {
    pub fn apply(&self, relative: f64) -> f64 {
        self.scale * relative + self.shift
    }

    /// Applies the fit to a whole relative depth map. Pixels whose
    /// mapped depth is non-positive become invalid.
    pub fn align(&self, relative: &DepthMap) -> DepthMap {
        let values: Vec<f64> = relative
            .values()
            .iter()
            .zip(relative.validity())
            .map(|(d, v)| if *v { self.apply(*d) } else { 0.0 })
            .collect();
        let valid: Vec<bool> = values
            .iter()
            .zip(relative.validity())
            .map(|(d, v)| *v && d.is_finite() && *d > 0.0)
            .collect();
        DepthMap::from_values_with_validity(relative.width(), relative.height(), values, valid)
            .expect("aligned map keeps source dimensions")
    }
}

/// Which domain the affine fit runs in. Relative depth from monocular
/// estimators is sometimes affine-invariant *inverse* depth; the
/// inverse mode fits against 1/d_rel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitSpace {
    #[default]
    Depth,
    InverseDepth,
}

/// Projects LiDAR points into a camera, keeping in-front, in-bounds
/// landings; when several points land on one pixel the nearest depth
/// wins, matching what a depth sensor would report.
pub fn project_lidar(
    points: &[Vector3<f64>],
    intrinsics: &Intrinsics,
    pose: &Pose,
) -> Result<SparseDepthSamples, AlignError> {
    let mut best: std::collections::BTreeMap<(u32, u32), f64> = std::collections::BTreeMap::new();
    for p in points {
        let Ok(proj) = project(p, intrinsics, pose) else { continue };
        if !proj.in_front {
            continue;
        }
        let (ru, rv) = (proj.u.round(), proj.v.round());
        if ru < 0.0 || ru >= intrinsics.width as f64 || rv < 0.0 || rv >= intrinsics.height as f64 {
            continue;
        }
        let key = (ru as u32, rv as u32);
        best.entry(key)
            .and_modify(|d| *d = d.min(proj.cam_depth))
            .or_insert(proj.cam_depth);
    }
    if best.is_empty() {
        return Err(AlignError::EmptySamples);
    }
    let (pixels, depths) = best.into_iter().unzip();
    Ok(SparseDepthSamples { pixels, depths })
}

/// Closed-form least squares for `min_{s,b} Σ (s·d_rel + b − d_lidar)²`
/// over sample pixels where the relative map is valid.
pub fn fit_scale_shift(
    relative_depth: &DepthMap,
    samples: &SparseDepthSamples,
) -> Result<ScaleShift, AlignError> {
    fit_scale_shift_in(relative_depth, samples, FitSpace::Depth)
}

pub fn fit_scale_shift_in(
    relative_depth: &DepthMap,
    samples: &SparseDepthSamples,
    space: FitSpace,
) -> Result<ScaleShift, AlignError> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&(u, v), &d_lidar) in samples.pixels.iter().zip(&samples.depths) {
        if let Some(d_rel) = relative_depth.get(u, v) {
            let x = match space {
                FitSpace::Depth => d_rel,
                FitSpace::InverseDepth => 1.0 / d_rel,
            };
            xs.push(x);
            ys.push(d_lidar);
        }
    }
    let n = xs.len();
    if n < 2 {
        return Err(AlignError::InsufficientSamples(n));
    }
    // Normal equations for the 2-parameter design [x, 1].
    let nf = n as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let det = nf * sxx - sx * sx;
    let mean_xx = sxx / nf - (sx / nf) * (sx / nf);
    if mean_xx <= 1e-18 * (sxx / nf).max(1.0) {
        return Err(AlignError::IllPosedFit);
    }
    let scale = (nf * sxy - sx * sy) / det;
    let shift = (sy - scale * sx) / nf;
    Ok(ScaleShift { scale, shift })
}

/// Mean absolute difference over pixels valid in both maps.
pub fn dense_depth_loss(a: &DepthMap, b: &DepthMap) -> Result<f64, AlignError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(AlignError::DimensionMismatch(a.width(), a.height(), b.width(), b.height()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..a.values().len() {
        if a.validity()[i] && b.validity()[i] {
            sum += (a.values()[i] - b.values()[i]).abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(AlignError::EmptyOverlap);
    }
    Ok(sum / count as f64)
}

/// Pairwise distortion loss `Σᵢⱼ wᵢwⱼ|tᵢ − tⱼ|`, computed in
/// O(n log n) via the sorted prefix-sum identity.
pub fn distortion_loss(weights: &[f64], depths: &[f64]) -> Result<f64, AlignError> {
    if weights.len() != depths.len() {
        return Err(AlignError::LengthMismatch(weights.len(), depths.len()));
    }
    if let Some(w) = weights.iter().find(|w| **w < 0.0) {
        return Err(AlignError::NegativeWeight(*w));
    }
    let mut order: Vec<usize> = (0..depths.len()).collect();
    order.sort_by(|a, b| depths[*a].partial_cmp(&depths[*b]).unwrap());
    // With t sorted ascending:
    //   Σᵢⱼ wᵢwⱼ|tᵢ−tⱼ| = 2 Σᵢ wᵢ (tᵢ·W₍<ᵢ₎ − S₍<ᵢ₎)
    // where W and S are prefix sums of w and w·t.
    let mut w_prefix = 0.0;
    let mut wt_prefix = 0.0;
    let mut loss = 0.0;
    for &i in &order {
        let (w, t) = (weights[i], depths[i]);
        loss += 2.0 * w * (t * w_prefix - wt_prefix);
        w_prefix += w;
        wt_prefix += w * t;
    }
    Ok(loss)
}
