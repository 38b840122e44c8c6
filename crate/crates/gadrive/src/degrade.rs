//! Pseudo-view degradation simulation: turn a clean recorded frame into
//! a training condition that exhibits the artifacts backward warping
//! produces in practice (projection blur, local blending from depth
//! error, random holes, masked depth discontinuities).
//!
//! All randomness is counter-based: every draw is a hash of (seed,
//! frame index, pixel, stream), so output never depends on traversal
//! order or thread count.

use image::RgbImage;
use thiserror::Error;

use crate::geometry::DepthMap;
use crate::synthesis::Frame;

#[derive(Debug, Error)]
pub enum DegradeError {
    #[error("invalid degradation config: {0}")]
    InvalidConfig(String),
    #[error("image is {0}x{1} but depth is {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
}

/// Threshold for the depth-discontinuity mask. Relative depth has
/// arbitrary scale, so the default is percentile-relative; metric depth
/// can use the absolute mode.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientThreshold {
    /// Mark pixels whose gradient magnitude exceeds this value.
    Absolute(f64),
    /// Mark pixels above this percentile of the image's own gradient
    /// magnitude distribution (0 < percentile <= 100).
    Percentile(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationConfig {
    pub blur_sigma: f64,
    pub blur_radius: u32,
    pub blend_probability: f64,
    pub blend_radius: u32,
    pub blend_alpha: f64,
    pub mask_probability: f64,
    pub depth_grad_threshold: GradientThreshold,
    pub depth_mask_dilation: u32,
    pub seed: u64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            blur_sigma: 0.8,
            blur_radius: 2,
            blend_probability: 0.3,
            blend_radius: 2,
            blend_alpha: 0.5,
            mask_probability: 0.05,
            depth_grad_threshold: GradientThreshold::Percentile(95.0),
            depth_mask_dilation: 2,
            seed: 0,
        }
    }
}

impl DegradationConfig {
    /// Parameters that make every step a no-op.
    pub fn identity(seed: u64) -> Self {
        Self {
            blur_sigma: 0.0,
            blur_radius: 0,
            blend_probability: 0.0,
            blend_radius: 1,
            blend_alpha: 0.0,
            mask_probability: 0.0,
            depth_grad_threshold: GradientThreshold::Absolute(f64::INFINITY),
            depth_mask_dilation: 0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DegradeError> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(DegradeError::InvalidConfig(format!("{name} must be in [0, 1], got {p}")))
            }
        };
        prob("blend_probability", self.blend_probability)?;
        prob("blend_alpha", self.blend_alpha)?;
        prob("mask_probability", self.mask_probability)?;
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return Err(DegradeError::InvalidConfig(format!(
                "blur_sigma must be finite and >= 0, got {}",
                self.blur_sigma
            )));
        }
        match self.depth_grad_threshold {
            GradientThreshold::Absolute(t) if !(t > 0.0) => {
                return Err(DegradeError::InvalidConfig(format!(
                    "absolute gradient threshold must be > 0, got {t}"
                )));
            }
            GradientThreshold::Percentile(p) if !(p > 0.0 && p <= 100.0) => {
                return Err(DegradeError::InvalidConfig(format!(
                    "gradient percentile must be in (0, 100], got {p}"
                )));
            }
            _ => Ok(()),
        }
    }
}

/// A (condition, ground truth) pair plus the union of the hole masks.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub condition: RgbImage,
    pub target: RgbImage,
    pub mask: Vec<bool>,
}

// ---- counter-based randomness ----

const STREAM_BLEND_GATE: u64 = 0x01;
const STREAM_BLEND_OFFSET: u64 = 0x02;
const STREAM_MASK: u64 = 0x03;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stateless per-pixel draw keyed on (seed, frame, pixel, stream).
pub fn pixel_hash(seed: u64, frame_index: u64, x: u32, y: u32, stream: u64) -> u64 {
    let pixel = ((x as u64) << 32) | y as u64;
    mix64(seed ^ mix64(frame_index ^ mix64(pixel ^ mix64(stream))))
}

fn unit_draw(seed: u64, frame_index: u64, x: u32, y: u32, stream: u64) -> f64 {
    (pixel_hash(seed, frame_index, x, y, stream) >> 11) as f64 / (1u64 << 53) as f64
}

// ---- step 1: gaussian blur ----

/// Separable convolution with a normalized truncated Gaussian kernel,
/// edge-replicated borders. `sigma == 0` or `radius == 0` is the
/// identity.
pub fn gaussian_filter(image: &RgbImage, sigma: f64, radius: u32) -> RgbImage {
    if sigma == 0.0 || radius == 0 {
        return image.clone();
    }
    let r = radius as i64;
    let mut kernel: Vec<f64> = (-r..=r)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }

    let (w, h) = (image.width() as i64, image.height() as i64);
    let clamp_x = |x: i64| x.clamp(0, w - 1) as u32;
    let clamp_y = |y: i64| y.clamp(0, h - 1) as u32;

    // Horizontal pass into f64, vertical pass, single rounding at the end.
    let mut mid = vec![0.0f64; (w * h * 3) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (ki, dx) in (-r..=r).enumerate() {
                let px = image.get_pixel(clamp_x(x + dx), y as u32).0;
                for c in 0..3 {
                    acc[c] += kernel[ki] * px[c] as f64;
                }
            }
            let base = ((y * w + x) * 3) as usize;
            mid[base..base + 3].copy_from_slice(&acc);
        }
    }
    let mut out = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (ki, dy) in (-r..=r).enumerate() {
                let base = ((clamp_y(y + dy) as i64 * w + x) * 3) as usize;
                for c in 0..3 {
                    acc[c] += kernel[ki] * mid[base + c];
                }
            }
            let px = out.get_pixel_mut(x as u32, y as u32);
            for c in 0..3 {
                px.0[c] = acc[c].round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

// ---- step 2: local blending ----

/// Each pixel independently, with `probability`, becomes
/// `(1−alpha)·self + alpha·neighbor`; the neighbor offset is uniform
/// over the non-zero offsets within the Chebyshev `radius`, clamped to
/// the image. Neighbors are read from the input image, never from
/// already-blended values.
pub fn local_blend(
    image: &RgbImage,
    probability: f64,
    radius: u32,
    alpha: f64,
    seed: u64,
    frame_index: u64,
) -> RgbImage {
    if probability == 0.0 || alpha == 0.0 || radius == 0 {
        return image.clone();
    }
    let (w, h) = (image.width(), image.height());
    let r = radius as i64;
    let side = 2 * r + 1;
    let n_offsets = (side * side - 1) as u64;
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            if unit_draw(seed, frame_index, x, y, STREAM_BLEND_GATE) >= probability {
                continue;
            }
            let mut pick =
                (pixel_hash(seed, frame_index, x, y, STREAM_BLEND_OFFSET) % n_offsets) as i64;
            // Skip the zero offset in the flattened (2r+1)² grid.
            if pick >= (side * side - 1) / 2 {
                pick += 1;
            }
            let (dy, dx) = (pick / side - r, pick % side - r);
            let nx = (x as i64 + dx).clamp(0, w as i64 - 1) as u32;
            let ny = (y as i64 + dy).clamp(0, h as i64 - 1) as u32;
            let a = image.get_pixel(x, y).0;
            let b = image.get_pixel(nx, ny).0;
            let px = out.get_pixel_mut(x, y);
            for c in 0..3 {
                px.0[c] = ((1.0 - alpha) * a[c] as f64 + alpha * b[c] as f64)
                    .round()
                    .clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

// ---- step 3: random holes ----

pub fn random_mask(
    image: &RgbImage,
    probability: f64,
    seed: u64,
    frame_index: u64,
) -> (RgbImage, Vec<bool>) {
    let (w, h) = (image.width(), image.height());
    let mut out = image.clone();
    let mut mask = vec![false; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            if unit_draw(seed, frame_index, x, y, STREAM_MASK) < probability {
                out.put_pixel(x, y, image::Rgb([0, 0, 0]));
                mask[(y * w + x) as usize] = true;
            }
        }
    }
    (out, mask)
}

// ---- step 4: depth discontinuity mask ----

/// Maximum absolute depth difference to the 4-neighborhood; pairs with
/// an invalid pixel contribute nothing.
fn gradient_magnitude(depth: &DepthMap) -> Vec<f64> {
    let (w, h) = (depth.width(), depth.height());
    let mut grad = vec![0.0f64; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let Some(d) = depth.get(x, y) else { continue };
            let mut g: f64 = 0.0;
            let neighbors = [
                (x.wrapping_sub(1), y),
                (x + 1, y),
                (x, y.wrapping_sub(1)),
                (x, y + 1),
            ];
            for (nx, ny) in neighbors {
                if let Some(nd) = depth.get(nx, ny) {
                    g = g.max((nd - d).abs());
                }
            }
            grad[(y * w + x) as usize] = g;
        }
    }
    grad
}

fn percentile_nearest_rank(sorted: &[f64], percentile: f64) -> f64 {
    if sorted.is_empty() {
        return f64::INFINITY;
    }
    let rank = ((percentile / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn depth_edge_mask(
    image: &RgbImage,
    estimated_depth: &DepthMap,
    threshold: GradientThreshold,
    dilation: u32,
) -> Result<(RgbImage, Vec<bool>), DegradeError> {
    let (w, h) = (image.width(), image.height());
    if estimated_depth.width() != w || estimated_depth.height() != h {
        return Err(DegradeError::DimensionMismatch(
            w,
            h,
            estimated_depth.width(),
            estimated_depth.height(),
        ));
    }
    let grad = gradient_magnitude(estimated_depth);
    let cut = match threshold {
        GradientThreshold::Absolute(t) => t,
        GradientThreshold::Percentile(p) => {
            let mut sorted = grad.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            percentile_nearest_rank(&sorted, p)
        }
    };
    let marked: Vec<bool> = grad.iter().map(|g| *g > cut).collect();

    // Dilation runs as a separate pass over the immutable marked set.
    let r = dilation as i64;
    let mut mask = vec![false; marked.len()];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            'search: for dy in -r..=r {
                for dx in -r..=r {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0
                        && nx < w as i64
                        && ny >= 0
                        && ny < h as i64
                        && marked[(ny * w as i64 + nx) as usize]
                    {
                        mask[(y * w as i64 + x) as usize] = true;
                        break 'search;
                    }
                }
            }
        }
    }
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            if mask[(y * w + x) as usize] {
                out.put_pixel(x, y, image::Rgb([0, 0, 0]));
            }
        }
    }
    Ok((out, mask))
}

/// Runs the four steps in order (blur, blend, random holes, depth-edge
/// mask) and pairs the result with the untouched input.
pub fn simulate(
    frame: &Frame,
    estimated_depth: &DepthMap,
    config: &DegradationConfig,
) -> Result<TrainingPair, DegradeError> {
    config.validate()?;
    let frame_index = frame.timestamp as u64;
    let blurred = gaussian_filter(&frame.image, config.blur_sigma, config.blur_radius);
    let blended = local_blend(
        &blurred,
        config.blend_probability,
        config.blend_radius,
        config.blend_alpha,
        config.seed,
        frame_index,
    );
    let (holed, hole_mask) = random_mask(&blended, config.mask_probability, config.seed, frame_index);
    let (condition, edge_mask) = depth_edge_mask(
        &holed,
        estimated_depth,
        config.depth_grad_threshold,
        config.depth_mask_dilation,
    )?;
    let mask = hole_mask.iter().zip(&edge_mask).map(|(a, b)| *a || *b).collect();
    Ok(TrainingPair { condition, target: frame.image.clone(), mask })
}
