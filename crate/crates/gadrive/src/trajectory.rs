//! Novel-trajectory generation from a recorded one: lateral lane-shift
//! ramps and constant offsets, applied per frame in the camera's own
//! lateral direction.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("trajectory is empty")]
    Empty,
    #[error("poses and timestamps have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid shift spec: {0}")]
    InvalidSpec(String),
    #[error("cannot determine a lateral axis for frame {0} (camera x-axis is vertical and no previous frame exists)")]
    DegenerateLateralAxis(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
    pub timestamps: Vec<i64>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>, timestamps: Vec<i64>) -> Result<Self, TrajectoryError> {
        if poses.is_empty() {
            return Err(TrajectoryError::Empty);
        }
        if poses.len() != timestamps.len() {
            return Err(TrajectoryError::LengthMismatch(poses.len(), timestamps.len()));
        }
        Ok(Self { poses, timestamps })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftDirection {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftMode {
    /// Displacement grows by `per_frame_shift` each frame, capped at
    /// `max_shift`.
    Ramp,
    /// Every frame is displaced by `max_shift`.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    pub per_frame_shift: f64,
    pub max_shift: f64,
    pub direction: ShiftDirection,
    pub mode: ShiftMode,
}

impl ShiftSpec {
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        if !(self.per_frame_shift >= 0.0 && self.per_frame_shift.is_finite()) {
            return Err(TrajectoryError::InvalidSpec(format!(
                "per_frame_shift must be finite and >= 0, got {}",
                self.per_frame_shift
            )));
        }
        if !(self.max_shift >= 0.0 && self.max_shift.is_finite()) {
            return Err(TrajectoryError::InvalidSpec(format!(
                "max_shift must be finite and >= 0, got {}",
                self.max_shift
            )));
        }
        Ok(())
    }

    /// Displacement magnitude in meters at frame `i`.
    pub fn magnitude_at(&self, i: usize) -> f64 {
        match self.mode {
            ShiftMode::Ramp => (i as f64 * self.per_frame_shift).min(self.max_shift),
            ShiftMode::Constant => self.max_shift,
        }
    }
}

const VERTICAL_EPS: f64 = 1e-9;

/// The camera x-axis projected onto the world horizontal plane and
/// normalized; `None` when the camera points straight up or down.
fn lateral_axis(pose: &Pose) -> Option<Vector3<f64>> {
    let x_axis = pose.rotation().column(0).into_owned();
    let horizontal = Vector3::new(x_axis.x, x_axis.y, 0.0);
    let norm = horizontal.norm();
    (norm > VERTICAL_EPS).then(|| horizontal / norm)
}

/// Displaces every pose laterally per the spec's schedule; rotations
/// are untouched. "Left" is the negative-x side of a front-facing
/// camera. A frame with a degenerate lateral axis reuses the previous
/// frame's axis.
pub fn shift_trajectory(recorded: &Trajectory, spec: &ShiftSpec) -> Result<Trajectory, TrajectoryError> {
    spec.validate()?;
    let sign = match spec.direction {
        ShiftDirection::Left => -1.0,
        ShiftDirection::Right => 1.0,
    };
    let mut poses = Vec::with_capacity(recorded.len());
    let mut last_axis: Option<Vector3<f64>> = None;
    for (i, pose) in recorded.poses.iter().enumerate() {
        let axis = match lateral_axis(pose).or(last_axis) {
            Some(a) => a,
            None => return Err(TrajectoryError::DegenerateLateralAxis(i)),
        };
        last_axis = Some(axis);
        poses.push(pose.translated(sign * spec.magnitude_at(i) * axis));
    }
    Ok(Trajectory { poses, timestamps: recorded.timestamps.clone() })
}
