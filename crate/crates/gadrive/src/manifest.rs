//! Scene manifests and engine configuration. A manifest is a JSON
//! document listing posed RGB-D frames (and optional LiDAR files);
//! loading it validates every referenced file and all dimension
//! cross-checks eagerly, so downstream code can assume a consistent
//! scene.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, CodecError};
use crate::degrade::DegradationConfig;
use crate::geometry::{DepthMap, Intrinsics, Pose};
use crate::synthesis::{CorruptionConfig, Frame};
use crate::trajectory::{ShiftDirection, ShiftMode, ShiftSpec, Trajectory};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed JSON in {path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("frame {frame}: referenced file {path} does not exist")]
    MissingFile { frame: usize, path: String },
    #[error("lidar entry {index}: referenced file {path} does not exist")]
    MissingLidarFile { index: usize, path: String },
    #[error("frame {frame}: {source}")]
    Codec { frame: usize, source: CodecError },
    #[error("frame {frame}: image is {iw}x{ih} but intrinsics say {kw}x{kh}")]
    ImageDimensionMismatch { frame: usize, iw: u32, ih: u32, kw: u32, kh: u32 },
    #[error("frame {frame}: depth is {dw}x{dh} but intrinsics say {kw}x{kh}")]
    DepthDimensionMismatch { frame: usize, dw: u32, dh: u32, kw: u32, kh: u32 },
    #[error("frame {frame}: invalid intrinsics: {message}")]
    InvalidIntrinsics { frame: usize, message: String },
    #[error("frame {frame}: invalid pose (orthonormality residual {residual:.3e}, det {det:.6})")]
    InvalidPose { frame: usize, residual: f64, det: f64 },
    #[error("frame {frame}: pose matrix bottom row must be [0, 0, 0, 1]")]
    BadHomogeneousRow { frame: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// One frame record as written in the manifest JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub image: PathBuf,
    pub depth: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_depth: Option<PathBuf>,
    pub intrinsics: IntrinsicsRecord,
    /// Row-major 4x4 camera-to-world matrix.
    pub pose: [f64; 16],
    pub timestamp: i64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub scene_id: String,
    pub frames: Vec<FrameRecord>,
    /// Per-timestamp LiDAR point files.
    #[serde(default)]
    pub lidar: BTreeMap<i64, PathBuf>,
}

const POSE_HARD_TOLERANCE: f64 = 1e-4;
const POSE_WARN_TOLERANCE: f64 = 1e-6;

/// A fully validated scene: every file loaded, every dimension checked.
#[derive(Debug, Clone)]
pub struct Scene {
    pub manifest: SceneManifest,
    pub frames: Vec<Frame>,
    pub relative_depths: Vec<Option<DepthMap>>,
    pub lidar: BTreeMap<i64, Vec<Vector3<f64>>>,
    /// Human-readable validation warnings (e.g. renormalized poses).
    pub warnings: Vec<String>,
}

impl Scene {
    pub fn trajectory(&self) -> Trajectory {
        Trajectory {
            poses: self.frames.iter().map(|f| f.pose).collect(),
            timestamps: self.frames.iter().map(|f| f.timestamp).collect(),
        }
    }

    /// All frames sharing a timestamp, as (frame index, frame) pairs.
    pub fn frames_at(&self, timestamp: i64) -> Vec<(usize, &Frame)> {
        self.frames
            .iter()
            .enumerate()
            .filter(|(_, f)| f.timestamp == timestamp)
            .collect()
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Decodes the row-major 4x4 into a pose, renormalizing the rotation
/// when it is only approximately orthonormal.
pub fn decode_pose(frame: usize, m: &[f64; 16], warnings: &mut Vec<String>) -> Result<Pose, ManifestError> {
    if m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0 {
        return Err(ManifestError::BadHomogeneousRow { frame });
    }
    let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
    let translation = Vector3::new(m[3], m[7], m[11]);
    let residual = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
    let det = rotation.determinant();
    if residual > POSE_HARD_TOLERANCE || det <= 0.0 {
        return Err(ManifestError::InvalidPose { frame, residual, det });
    }
    let rotation = if residual > POSE_WARN_TOLERANCE {
        warnings.push(format!(
            "frame {frame}: pose renormalized (orthonormality residual {residual:.3e})"
        ));
        // Nearest rotation via polar decomposition.
        let svd = rotation.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * vt;
        }
        r
    } else {
        rotation
    };
    Pose::new(rotation, translation)
        .map_err(|_| ManifestError::InvalidPose { frame, residual, det })
}

pub fn load_manifest(path: &Path) -> Result<Scene, ManifestError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ManifestError::Io { path: path.display().to_string(), source: e })?;
    let manifest: SceneManifest = serde_json::from_str(&text)
        .map_err(|e| ManifestError::Json { path: path.display().to_string(), source: e })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    load_scene(base, manifest)
}

pub fn load_scene(base: &Path, manifest: SceneManifest) -> Result<Scene, ManifestError> {
    let mut warnings = Vec::new();
    let mut frames = Vec::with_capacity(manifest.frames.len());
    let mut relative_depths = Vec::with_capacity(manifest.frames.len());
    for (i, rec) in manifest.frames.iter().enumerate() {
        for p in [&rec.image, &rec.depth].into_iter().chain(rec.relative_depth.as_ref()) {
            let full = resolve(base, p);
            if !full.exists() {
                return Err(ManifestError::MissingFile { frame: i, path: full.display().to_string() });
            }
        }
        let k = &rec.intrinsics;
        let intrinsics = Intrinsics::new(k.fx, k.fy, k.cx, k.cy, k.width, k.height)
            .map_err(|e| ManifestError::InvalidIntrinsics { frame: i, message: e.to_string() })?;
        let image = codec::read_rgb(&resolve(base, &rec.image))
            .map_err(|e| ManifestError::Codec { frame: i, source: e })?;
        if image.width() != k.width || image.height() != k.height {
            return Err(ManifestError::ImageDimensionMismatch {
                frame: i,
                iw: image.width(),
                ih: image.height(),
                kw: k.width,
                kh: k.height,
            });
        }
        let depth = codec::read_depth_raw(&resolve(base, &rec.depth))
            .map_err(|e| ManifestError::Codec { frame: i, source: e })?;
        if depth.width() != k.width || depth.height() != k.height {
            return Err(ManifestError::DepthDimensionMismatch {
                frame: i,
                dw: depth.width(),
                dh: depth.height(),
                kw: k.width,
                kh: k.height,
            });
        }
        let relative = match &rec.relative_depth {
            Some(p) => {
                let rel = codec::read_depth_raw(&resolve(base, p))
                    .map_err(|e| ManifestError::Codec { frame: i, source: e })?;
                if rel.width() != k.width || rel.height() != k.height {
                    return Err(ManifestError::DepthDimensionMismatch {
                        frame: i,
                        dw: rel.width(),
                        dh: rel.height(),
                        kw: k.width,
                        kh: k.height,
                    });
                }
                Some(rel)
            }
            None => None,
        };
        let pose = decode_pose(i, &rec.pose, &mut warnings)?;
        let frame = Frame::new(image, intrinsics, pose, depth, rec.timestamp)
            .expect("dimensions validated above");
        frames.push(frame);
        relative_depths.push(relative);
    }
    let mut lidar = BTreeMap::new();
    for (index, (ts, p)) in manifest.lidar.iter().enumerate() {
        let full = resolve(base, p);
        if !full.exists() {
            return Err(ManifestError::MissingLidarFile { index, path: full.display().to_string() });
        }
        let points = codec::read_points(&full)
            .map_err(|e| ManifestError::Codec { frame: index, source: e })?;
        lidar.insert(*ts, points);
    }
    Ok(Scene { manifest, frames, relative_depths, lidar, warnings })
}

/// Serializes a pose back to the manifest's row-major 4x4 layout.
pub fn encode_pose(pose: &Pose) -> [f64; 16] {
    let r = pose.rotation();
    let t = pose.translation();
    [
        r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
        r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
        r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        0.0, 0.0, 0.0, 1.0,
    ]
}

// ---- engine configuration ----

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentConfig {
    pub t: usize,
    pub q: usize,
    pub p: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self { t: 16, q: 4, p: 8 }
    }
}

fn default_delta() -> f64 {
    0.05
}

fn default_workers() -> usize {
    0 // 0 = let rayon pick
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    /// Visibility tolerance δ in meters.
    pub delta: f64,
    pub degradation: DegradationConfig,
    pub segment: SegmentConfig,
    pub shift: ShiftSpec,
    pub corruption: CorruptionConfig,
    pub workers: usize,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            delta: default_delta(),
            degradation: DegradationConfig::default(),
            segment: SegmentConfig::default(),
            shift: ShiftSpec {
                per_frame_shift: 0.1,
                max_shift: 4.0,
                direction: ShiftDirection::Left,
                mode: ShiftMode::Ramp,
            },
            corruption: CorruptionConfig { drop_fraction: 0.0, noise_half_width: 0.0, seed: 0 },
            workers: default_workers(),
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ManifestError::Io { path: path.display().to_string(), source: e })?;
        let config: EngineConfig = serde_json::from_str(&text)
            .map_err(|e| ManifestError::Json { path: path.display().to_string(), source: e })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(ManifestError::InvalidConfig(format!(
                "delta must be finite and >= 0, got {}",
                self.delta
            )));
        }
        self.degradation.validate().map_err(|e| ManifestError::InvalidConfig(e.to_string()))?;
        self.shift.validate().map_err(|e| ManifestError::InvalidConfig(e.to_string()))?;
        self.corruption.validate().map_err(|e| ManifestError::InvalidConfig(e.to_string()))?;
        if self.segment.t < 2 {
            return Err(ManifestError::InvalidConfig(format!(
                "segment length must be >= 2, got {}",
                self.segment.t
            )));
        }
        Ok(())
    }
}
