//! Segment-wise conditioning layout for long-trajectory generation:
//! chunk a trajectory into windows of T frames that overlap by exactly
//! one frame, thread each window's last output into the next anchor,
//! and validate the latent tensor shape arithmetic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("trajectory must have at least 2 frames, got {0}")]
    TrajectoryTooShort(usize),
    #[error("segment length must be at least 2, got {0}")]
    SegmentTooShort(usize),
    #[error("trajectory length {m} does not split into full segments of {t} frames (strict mode)")]
    NotFullSegments { m: usize, t: usize },
    #[error("{axis} extent {extent} is not divisible by factor {factor}")]
    NotDivisible { axis: &'static str, extent: usize, factor: usize },
    #[error("segment {segment}: generator returned {got} frames, expected {expected}")]
    WrongGeneratorLength { segment: usize, got: usize, expected: usize },
    #[error("segment {segment}: generator's first frame does not equal the anchor")]
    AnchorMismatch { segment: usize },
}

/// Where a segment's first conditioning frame comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnchorSource {
    /// The recorded start frame (first segment only).
    Recorded,
    /// The last generated frame of the previous segment.
    PreviousSegment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub index: usize,
    pub anchor_source: AnchorSource,
    /// Trajectory index of the anchor frame.
    pub anchor_frame: usize,
    /// Trajectory indices of the pseudo-view conditioning slots (the
    /// segment's new frames).
    pub slots: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentPlan {
    pub trajectory_length: usize,
    pub segment_length: usize,
    pub segments: Vec<Segment>,
}

/// Splits a trajectory of `trajectory_length` frames into segments of
/// `segment_length` frames overlapping by one; the final segment is
/// shortened when fewer new frames remain (unless `strict`).
pub fn plan_segments(trajectory_length: usize, segment_length: usize) -> Result<SegmentPlan, PlanError> {
    plan_segments_with(trajectory_length, segment_length, false)
}

pub fn plan_segments_with(
    trajectory_length: usize,
    segment_length: usize,
    strict: bool,
) -> Result<SegmentPlan, PlanError> {
    if trajectory_length < 2 {
        return Err(PlanError::TrajectoryTooShort(trajectory_length));
    }
    if segment_length < 2 {
        return Err(PlanError::SegmentTooShort(segment_length));
    }
    let step = segment_length - 1;
    if strict && (trajectory_length - 1) % step != 0 {
        return Err(PlanError::NotFullSegments { m: trajectory_length, t: segment_length });
    }
    let count = (trajectory_length - 1).div_ceil(step);
    let mut segments = Vec::with_capacity(count);
    for k in 0..count {
        let anchor = k * step;
        let last = ((k + 1) * step).min(trajectory_length - 1);
        segments.push(Segment {
            index: k,
            anchor_source: if k == 0 { AnchorSource::Recorded } else { AnchorSource::PreviousSegment },
            anchor_frame: anchor,
            slots: (anchor + 1..=last).collect(),
        });
    }
    Ok(SegmentPlan { trajectory_length, segment_length, segments })
}

/// Latent tensor shape for one encoded segment: `t/q × h/p × w/p` with
/// 16 latent channels, 32 after concatenation with the noise tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentShape {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub latent_channels: usize,
    pub combined_channels: usize,
}

impl LatentShape {
    pub fn element_count(&self) -> usize {
        self.t * self.h * self.w * self.combined_channels
    }
}

pub const LATENT_CHANNELS: usize = 16;
pub const COMBINED_CHANNELS: usize = 32;

pub fn latent_shape(t: usize, h: usize, w: usize, q: usize, p: usize) -> Result<LatentShape, PlanError> {
    let check = |axis: &'static str, extent: usize, factor: usize| {
        if factor == 0 || extent % factor != 0 {
            Err(PlanError::NotDivisible { axis, extent, factor })
        } else {
            Ok(extent / factor)
        }
    };
    let t = check("temporal", t, q)?;
    let h = check("height", h, p)?;
    let w = check("width", w, p)?;
    Ok(LatentShape { t, h, w, latent_channels: LATENT_CHANNELS, combined_channels: COMBINED_CHANNELS })
}

/// One generation pass over a segment: maps (anchor frame, slot
/// pseudo-views) to a full segment of frames whose first frame must
/// equal the anchor.
pub trait SegmentGenerator<F> {
    fn generate(&mut self, anchor: &F, slot_views: &[F]) -> Vec<F>;
}

/// Passes the anchor and the slot pseudo-views through unchanged.
pub struct IdentityGenerator;

impl<F: Clone> SegmentGenerator<F> for IdentityGenerator {
    fn generate(&mut self, anchor: &F, slot_views: &[F]) -> Vec<F> {
        let mut out = Vec::with_capacity(slot_views.len() + 1);
        out.push(anchor.clone());
        out.extend(slot_views.iter().cloned());
        out
    }
}

/// Executes the plan segment by segment, threading each segment's last
/// generated frame into the next anchor. `pseudo_views` supplies the
/// conditioning view for a trajectory slot index. Output length equals
/// the trajectory length; overlap frames are not duplicated.
pub fn run_chained<F, P, G>(
    plan: &SegmentPlan,
    start_frame: &F,
    mut pseudo_views: P,
    generator: &mut G,
) -> Result<Vec<F>, PlanError>
where
    F: Clone + PartialEq,
    P: FnMut(usize) -> F,
    G: SegmentGenerator<F>,
{
    let mut output: Vec<F> = Vec::with_capacity(plan.trajectory_length);
    let mut anchor = start_frame.clone();
    for segment in &plan.segments {
        let slot_views: Vec<F> = segment.slots.iter().map(|&i| pseudo_views(i)).collect();
        let generated = generator.generate(&anchor, &slot_views);
        if generated.len() != segment.slots.len() + 1 {
            return Err(PlanError::WrongGeneratorLength {
                segment: segment.index,
                got: generated.len(),
                expected: segment.slots.len() + 1,
            });
        }
        if generated[0] != anchor {
            return Err(PlanError::AnchorMismatch { segment: segment.index });
        }
        if segment.index == 0 {
            output.push(generated[0].clone());
        }
        output.extend(generated[1..].iter().cloned());
        anchor = generated.last().expect("segment has >= 2 frames").clone();
    }
    Ok(output)
}
