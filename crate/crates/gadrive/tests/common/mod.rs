//! Shared test fixtures and independent oracles. Everything here
//! recomputes results from first principles (straight-line matrix
//! arithmetic, exhaustive enumeration) without touching the library's
//! synthesis path, so agreement is meaningful.

#![allow(dead_code)]

use gadrive::geometry::{DepthMap, Intrinsics, Pose};
use gadrive::synthesis::Frame;
use image::RgbImage;
use nalgebra::{Matrix3, Vector3};
use rand::rngs::StdRng;
use rand::Rng;

/// Brute-force reference for the whole synthesis pipeline: per target
/// pixel, per source, explicit unproject/project/visibility math and a
/// nearest-valid-source scan.
pub struct OracleView {
    pub image: RgbImage,
    pub validity: Vec<bool>,
    pub source_index: Vec<Option<usize>>,
}

fn oracle_unproject(u: f64, v: f64, d: f64, k: &Intrinsics, pose: &Pose) -> Vector3<f64> {
    let cam = Vector3::new(d * (u - k.cx) / k.fx, d * (v - k.cy) / k.fy, d);
    pose.rotation() * cam + pose.translation()
}

/// Returns (rounded pixel, camera depth) or None when out of view.
fn oracle_land(point: &Vector3<f64>, k: &Intrinsics, pose: &Pose) -> Option<((u32, u32), f64)> {
    let cam = pose.rotation().transpose() * (point - pose.translation());
    if cam.z <= 0.0 {
        return None;
    }
    let u = (k.fx * cam.x / cam.z + k.cx).round();
    let v = (k.fy * cam.y / cam.z + k.cy).round();
    if u < 0.0 || u >= k.width as f64 || v < 0.0 || v >= k.height as f64 {
        return None;
    }
    Some(((u as u32, v as u32), cam.z))
}

pub fn oracle_synthesize(
    sources: &[Frame],
    target_k: &Intrinsics,
    target_pose: &Pose,
    target_depth: &DepthMap,
    delta: f64,
) -> OracleView {
    let (w, h) = (target_k.width, target_k.height);
    let mut image = RgbImage::new(w, h);
    let mut validity = vec![false; (w * h) as usize];
    let mut source_index = vec![None; (w * h) as usize];
    for v in 0..h {
        for u in 0..w {
            let Some(d) = target_depth.get(u, v) else { continue };
            let point = oracle_unproject(u as f64, v as f64, d, target_k, target_pose);
            let mut best: Option<(f64, usize, [u8; 3])> = None;
            for (i, src) in sources.iter().enumerate() {
                let Some(((su, sv), cam_depth)) = oracle_land(&point, &src.intrinsics, &src.pose)
                else {
                    continue;
                };
                let Some(rendered) = src.depth.get(su, sv) else { continue };
                if (rendered - cam_depth).abs() >= delta {
                    continue;
                }
                let dist = (src.pose.center() - target_pose.center()).norm();
                let better = match best {
                    None => true,
                    Some((bd, bi, _)) => dist < bd || (dist == bd && i < bi),
                };
                if better {
                    best = Some((dist, i, src.image.get_pixel(su, sv).0));
                }
            }
            if let Some((_, i, color)) = best {
                let idx = (v * w + u) as usize;
                image.put_pixel(u, v, image::Rgb(color));
                validity[idx] = true;
                source_index[idx] = Some(i);
            }
        }
    }
    OracleView { image, validity, source_index }
}

/// O(n²) reference for the pairwise distortion loss.
pub fn oracle_distortion_loss(weights: &[f64], depths: &[f64]) -> f64 {
    let mut loss = 0.0;
    for i in 0..weights.len() {
        for j in 0..weights.len() {
            loss += weights[i] * weights[j] * (depths[i] - depths[j]).abs();
        }
    }
    loss
}

/// Normal-equations reference for the scale-shift fit, solved with an
/// explicit 2x2 inverse.
pub fn oracle_scale_shift(rel: &[f64], metric: &[f64]) -> (f64, f64) {
    let n = rel.len() as f64;
    let sx: f64 = rel.iter().sum();
    let sxx: f64 = rel.iter().map(|x| x * x).sum();
    let sy: f64 = metric.iter().sum();
    let sxy: f64 = rel.iter().zip(metric).map(|(x, y)| x * y).sum();
    // [sxx sx; sx n] [s; b] = [sxy; sy]
    let det = sxx * n - sx * sx;
    let s = (n * sxy - sx * sy) / det;
    let b = (sxx * sy - sx * sxy) / det;
    (s, b)
}

pub fn mse(rel: &[f64], metric: &[f64], s: f64, b: f64) -> f64 {
    rel.iter()
        .zip(metric)
        .map(|(x, y)| (s * x + b - y).powi(2))
        .sum::<f64>()
        / rel.len() as f64
}

// ---- two-plane scene construction ----
//
// World: an infinite background plane at z = FAR, with a square patch
// [-0.5, 0.5]^2 at z = NEAR in front of it. All cameras use identity
// rotation and sit on the z = 0 plane, so per-pixel rendered depth has
// a closed form.

pub const NEAR: f64 = 2.0;
pub const FAR: f64 = 4.0;
pub const NEAR_COLOR: [u8; 3] = [220, 40, 40];
pub const FAR_COLOR: [u8; 3] = [40, 40, 220];

pub fn plane_camera(w: u32, h: u32) -> Intrinsics {
    Intrinsics::new(w as f64, h as f64, (w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0, w, h).unwrap()
}

fn ray_hits_patch(center: &Vector3<f64>, k: &Intrinsics, u: u32, v: u32) -> bool {
    let d = NEAR - center.z;
    let x = center.x + d * (u as f64 - k.cx) / k.fx;
    let y = center.y + d * (v as f64 - k.cy) / k.fy;
    (-0.5..=0.5).contains(&x) && (-0.5..=0.5).contains(&y)
}

/// Renders the two-plane scene from a camera at `center` (identity
/// rotation): exact depth and flat per-plane colors.
pub fn render_two_plane_frame(center: Vector3<f64>, w: u32, h: u32, timestamp: i64) -> Frame {
    let k = plane_camera(w, h);
    let pose = Pose::new(Matrix3::identity(), center).unwrap();
    let mut depth = Vec::with_capacity((w * h) as usize);
    let mut image = RgbImage::new(w, h);
    for v in 0..h {
        for u in 0..w {
            if ray_hits_patch(&center, &k, u, v) {
                depth.push(NEAR - center.z);
                image.put_pixel(u, v, image::Rgb(NEAR_COLOR));
            } else {
                depth.push(FAR - center.z);
                image.put_pixel(u, v, image::Rgb(FAR_COLOR));
            }
        }
    }
    Frame::new(image, k, pose, DepthMap::from_values(w, h, depth).unwrap(), timestamp).unwrap()
}

/// Random posed RGB-D frame with small rotations, random validity
/// holes, and random colors; geometry is not scene-consistent, which
/// is fine for oracle-equivalence checks.
pub fn random_frame(rng: &mut StdRng, w: u32, h: u32) -> Frame {
    let k = Intrinsics::new(
        rng.gen_range(0.5 * w as f64..2.0 * w as f64),
        rng.gen_range(0.5 * h as f64..2.0 * h as f64),
        rng.gen_range(0.0..w as f64),
        rng.gen_range(0.0..h as f64),
        w,
        h,
    )
    .unwrap();
    let pose = Pose::from_z_rotation(
        rng.gen_range(-0.3..0.3),
        Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5)),
    );
    let values: Vec<f64> = (0..w * h)
        .map(|_| if rng.gen_bool(0.85) { rng.gen_range(1.0..8.0) } else { 0.0 })
        .collect();
    let depth = DepthMap::from_values(w, h, values).unwrap();
    let image = RgbImage::from_fn(w, h, |_, _| {
        image::Rgb([rng.gen_range(0..=255u8), rng.gen_range(0..=255u8), rng.gen_range(0..=255u8)])
    });
    Frame::new(image, k, pose, depth, 0).unwrap()
}
