//! End-to-end acceptance suite. Each test covers one release
//! criterion, pins its tolerance as a local constant, and prints a
//! single PASS line (visible with `--nocapture`).

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use gadrive::align::{distortion_loss, fit_scale_shift, SparseDepthSamples};
use gadrive::degrade::{simulate, DegradationConfig};
use gadrive::geometry::{project, unproject, DepthMap, Intrinsics, Pose};
use gadrive::manifest::encode_pose;
use gadrive::segment::{plan_segments, run_chained, IdentityGenerator};
use gadrive::synthesis::{
    build_point_cloud, color_point_cloud, corrupt_point_cloud, corrupt_points, render_cloud,
    synthesize, synthesize_with_options, CorruptionConfig, Frame, SynthesisOptions,
    VisibilityTolerance,
};
use gadrive::trajectory::{shift_trajectory, ShiftDirection, ShiftMode, ShiftSpec, Trajectory};
use nalgebra::{Rotation3, Vector3};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[test]
fn criterion_01_identity_reprojection_is_bit_exact() {
    const SCENES: usize = 12;
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(101);
    for scene in 0..SCENES {
        let frame = common::random_frame(&mut rng, 24, 18);
        // Any positive tolerance must accept an exact self-reprojection.
        let delta = 10f64.powf(rng.gen_range(-9.0..0.0));
        let view = synthesize(
            std::slice::from_ref(&frame),
            &frame.intrinsics,
            &frame.pose,
            &frame.depth,
            VisibilityTolerance::new(delta).unwrap(),
        )
        .unwrap();
        for v in 0..18 {
            for u in 0..24 {
                let valid = frame.depth.is_valid(u, v);
                assert_eq!(view.is_valid(u, v), valid, "scene {scene}: validity at ({u},{v})");
                if valid {
                    assert_eq!(
                        view.image.get_pixel(u, v),
                        frame.image.get_pixel(u, v),
                        "scene {scene}: color at ({u},{v}) with delta {delta}"
                    );
                    assert_eq!(view.source_of(u, v), Some(0));
                }
            }
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}, budget 5 s");
    println!("PASS criterion 1: identity reprojection bit-exact on {SCENES} scenes in {elapsed:?}");
}

#[test]
fn criterion_02_synthesis_matches_brute_force_oracle() {
    const SCENES: usize = 120;
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(202);
    for scene in 0..SCENES {
        let target = common::random_frame(&mut rng, 8, 8);
        let n_sources = rng.gen_range(1..=4);
        let sources: Vec<Frame> = (0..n_sources).map(|_| common::random_frame(&mut rng, 8, 8)).collect();
        let delta = rng.gen_range(0.01..1.0);
        let view = synthesize(
            &sources,
            &target.intrinsics,
            &target.pose,
            &target.depth,
            VisibilityTolerance::new(delta).unwrap(),
        )
        .unwrap();
        let oracle =
            common::oracle_synthesize(&sources, &target.intrinsics, &target.pose, &target.depth, delta);
        assert_eq!(view.image.as_raw(), oracle.image.as_raw(), "scene {scene}: image");
        assert_eq!(view.validity, oracle.validity, "scene {scene}: validity");
        for v in 0..8 {
            for u in 0..8 {
                assert_eq!(
                    view.source_of(u, v),
                    oracle.source_index[(v * 8 + u) as usize],
                    "scene {scene}: source at ({u},{v})"
                );
            }
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}, budget 60 s");
    println!("PASS criterion 2: {SCENES} scenes match the exhaustive oracle exactly in {elapsed:?}");
}

#[test]
fn criterion_03_occluded_geometry_is_never_miscolored() {
    const DELTA: f64 = 0.05;
    let (w, h) = (64, 64);
    let target = common::render_two_plane_frame(Vector3::zeros(), w, h, 0);
    // A laterally offset source: part of the background plane that the
    // target sees is hidden behind the foreground patch in this view.
    let source = common::render_two_plane_frame(Vector3::new(0.6, 0.0, 0.0), w, h, 0);

    let view = synthesize(
        std::slice::from_ref(&source),
        &target.intrinsics,
        &target.pose,
        &target.depth,
        VisibilityTolerance::new(DELTA).unwrap(),
    )
    .unwrap();

    let mut occluded = 0usize;
    for v in 0..h {
        for u in 0..w {
            if target.image.get_pixel(u, v).0 != common::FAR_COLOR {
                continue;
            }
            if !view.is_valid(u, v) {
                occluded += 1;
            } else {
                assert_eq!(
                    view.image.get_pixel(u, v).0,
                    common::FAR_COLOR,
                    "background pixel ({u},{v}) took the foreground color through an occluder"
                );
            }
        }
    }
    assert!(occluded > 0, "scene exercises no occlusion; geometry is wrong");

    // With the z-buffer check disabled the same scene must leak
    // foreground color onto background pixels.
    let unchecked = synthesize_with_options(
        std::slice::from_ref(&source),
        &target.intrinsics,
        &target.pose,
        &target.depth,
        &SynthesisOptions {
            delta: VisibilityTolerance::new(DELTA).unwrap(),
            check_visibility: false,
        },
    )
    .unwrap();
    let mut leaked = 0usize;
    for v in 0..h {
        for u in 0..w {
            if target.image.get_pixel(u, v).0 == common::FAR_COLOR
                && unchecked.is_valid(u, v)
                && unchecked.image.get_pixel(u, v).0 == common::NEAR_COLOR
            {
                leaked += 1;
            }
        }
    }
    assert!(leaked > 0, "disabling the visibility check should produce bleed-through");
    println!(
        "PASS criterion 3: {occluded} occluded pixels stay uncolored; {leaked} leak without the check"
    );
}

#[test]
fn criterion_04_projection_round_trips() {
    const TRIALS: usize = 10_000;
    const PIXEL_TOL: f64 = 1e-6;
    const DEPTH_REL_TOL: f64 = 1e-9;
    let mut rng = StdRng::seed_from_u64(404);
    for trial in 0..TRIALS {
        let (w, h) = (1280u32, 960u32);
        let k = Intrinsics::new(
            rng.gen_range(100.0..2000.0),
            rng.gen_range(100.0..2000.0),
            rng.gen_range(0.0..w as f64),
            rng.gen_range(0.0..h as f64),
            w,
            h,
        )
        .unwrap();
        let rot = Rotation3::from_euler_angles(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-1.5..1.5),
            rng.gen_range(-3.0..3.0),
        );
        let pose = Pose::new(rot.into_inner(), Vector3::new(
            rng.gen_range(-100.0..100.0),
            rng.gen_range(-100.0..100.0),
            rng.gen_range(-100.0..100.0),
        ))
        .unwrap();
        let u = rng.gen_range(0.0..w as f64 - 1.0);
        let v = rng.gen_range(0.0..h as f64 - 1.0);
        let d = rng.gen_range(0.05..200.0);
        let world = unproject(u, v, d, &k, &pose).unwrap();
        let p = project(&world, &k, &pose).unwrap();
        assert!(p.in_front, "trial {trial}");
        assert!((p.u - u).abs() < PIXEL_TOL, "trial {trial}: u error {}", (p.u - u).abs());
        assert!((p.v - v).abs() < PIXEL_TOL, "trial {trial}: v error {}", (p.v - v).abs());
        assert!(
            ((p.cam_depth - d) / d).abs() < DEPTH_REL_TOL,
            "trial {trial}: depth error {}",
            ((p.cam_depth - d) / d).abs()
        );
    }
    println!("PASS criterion 4: {TRIALS} round trips within {PIXEL_TOL} px / {DEPTH_REL_TOL} rel depth");
}

#[test]
fn criterion_05_scale_shift_fit_is_exact_and_optimal() {
    const EXACT_TOL: f64 = 1e-9;
    const MSE_TOL: f64 = 1e-9;
    const PERTURBATION: f64 = 1e-4;
    let mut rng = StdRng::seed_from_u64(505);
    for case in 0..50 {
        let n = rng.gen_range(16..256);
        let rel: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..5.0)).collect();
        let true_s = rng.gen_range(0.5..20.0);
        let true_b = rng.gen_range(-2.0..2.0);

        let map = DepthMap::from_values(n as u32, 1, rel.clone()).unwrap();
        let pixels: Vec<(u32, u32)> = (0..n as u32).map(|i| (i, 0)).collect();

        // Noise-free samples: exact parameter recovery.
        let clean: Vec<f64> = rel.iter().map(|x| true_s * x + true_b).collect();
        let fit = fit_scale_shift(
            &map,
            &SparseDepthSamples { pixels: pixels.clone(), depths: clean },
        )
        .unwrap();
        assert!((fit.scale - true_s).abs() < EXACT_TOL * (1.0 + true_s), "case {case}: scale");
        assert!((fit.shift - true_b).abs() < EXACT_TOL * (1.0 + true_b.abs()), "case {case}: shift");

        // Noisy samples: least-squares optimum, cross-checked against
        // the explicit normal-equations solve.
        let noisy: Vec<f64> = rel
            .iter()
            .map(|x| true_s * x + true_b + rng.gen_range(-0.3..0.3))
            .collect();
        let fit = fit_scale_shift(&map, &SparseDepthSamples { pixels, depths: noisy.clone() }).unwrap();
        let (os, ob) = common::oracle_scale_shift(&rel, &noisy);
        let best = common::mse(&rel, &noisy, fit.scale, fit.shift);
        let oracle_best = common::mse(&rel, &noisy, os, ob);
        assert!((best - oracle_best).abs() < MSE_TOL, "case {case}: mse {best} vs {oracle_best}");
        for ds in [-PERTURBATION, 0.0, PERTURBATION] {
            for db in [-PERTURBATION, 0.0, PERTURBATION] {
                if ds == 0.0 && db == 0.0 {
                    continue;
                }
                let worse = common::mse(&rel, &noisy, fit.scale + ds, fit.shift + db);
                assert!(
                    worse >= best,
                    "case {case}: perturbation ({ds}, {db}) improved the fit: {worse} < {best}"
                );
            }
        }
    }
    println!("PASS criterion 5: scale-shift fit exact to {EXACT_TOL}, optimal under ±{PERTURBATION} perturbation");
}

#[test]
fn criterion_06_distortion_loss_matches_quadratic_oracle() {
    const TOL: f64 = 1e-12;
    const VECTORS: usize = 1000;
    let mut rng = StdRng::seed_from_u64(606);
    for case in 0..VECTORS {
        let n = rng.gen_range(1..64);
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let fast = distortion_loss(&w, &t).unwrap();
        let slow = common::oracle_distortion_loss(&w, &t);
        assert!(
            (fast - slow).abs() <= TOL * (1.0 + slow.abs()),
            "case {case}: {fast} vs {slow}"
        );
    }

    // Zero iff the weight mass sits on a single depth value.
    let single = distortion_loss(&[0.0, 0.7, 0.0], &[1.0, 5.0, 9.0]).unwrap();
    assert_eq!(single, 0.0);
    let tied = distortion_loss(&[0.3, 0.4], &[2.5, 2.5]).unwrap();
    assert_eq!(tied, 0.0);
    let spread = distortion_loss(&[0.3, 0.4], &[2.5, 2.6]).unwrap();
    assert!(spread > 0.0);
    println!("PASS criterion 6: distortion loss matches the O(n^2) oracle on {VECTORS} vectors (tol {TOL})");
}

#[test]
fn criterion_07_segment_plans_count_and_cover() {
    for t in [2usize, 4, 8, 16] {
        for m in 2usize..=200 {
            let plan = plan_segments(m, t).unwrap();
            let expected = (m - 1).div_ceil(t - 1);
            assert_eq!(plan.segments.len(), expected, "M={m}, T={t}");

            // Identity chaining reproduces the trajectory indices with
            // no frame duplicated or skipped.
            let frames =
                run_chained(&plan, &0usize, |slot| slot, &mut IdentityGenerator).unwrap();
            let expect: Vec<usize> = (0..m).collect();
            assert_eq!(frames, expect, "M={m}, T={t}: chained output");
        }
    }
    println!("PASS criterion 7: segment counts = ceil((M-1)/(T-1)) and chaining covers every frame once");
}

#[test]
fn criterion_08_lateral_ramp_caps_exactly() {
    const ORTHO_TOL: f64 = 1e-9;
    let n = 60;
    let poses: Vec<Pose> = (0..n)
        .map(|i| Pose::from_z_rotation(0.3, Vector3::new(0.0, i as f64 * 0.5, 0.0)))
        .collect();
    let recorded = Trajectory::new(poses, (0..n as i64).collect()).unwrap();
    let spec = ShiftSpec {
        per_frame_shift: 0.1,
        max_shift: 4.0,
        direction: ShiftDirection::Left,
        mode: ShiftMode::Ramp,
    };
    let shifted = shift_trajectory(&recorded, &spec).unwrap();
    for i in 0..n {
        let displacement = shifted.poses[i].center() - recorded.poses[i].center();
        let forward = recorded.poses[i].rotation().column(2).into_owned();
        assert!(
            displacement.dot(&forward).abs() < ORTHO_TOL,
            "frame {i}: displacement not orthogonal to the viewing direction"
        );
        let expected = (i as f64 * 0.1).min(4.0);
        assert!(
            (displacement.norm() - expected).abs() < 1e-12,
            "frame {i}: magnitude {} vs {expected}",
            displacement.norm()
        );
    }
    // With an axis-aligned camera the lateral axis is a unit basis
    // vector, so the capped displacement is exact in floating point.
    let straight: Vec<Pose> = (0..n)
        .map(|i| Pose::new(nalgebra::Matrix3::identity(), Vector3::new(0.0, i as f64 * 0.5, 0.0)).unwrap())
        .collect();
    let straight = Trajectory::new(straight, (0..n as i64).collect()).unwrap();
    let shifted_straight = shift_trajectory(&straight, &spec).unwrap();
    let at_40 = (shifted_straight.poses[40].center() - straight.poses[40].center()).norm();
    assert_eq!(at_40, 4.0, "frame 40 must sit exactly at the cap");
    println!("PASS criterion 8: ramp shift reaches exactly 4.000 m at frame 40, orthogonal to forward");
}

#[test]
fn criterion_09_corruption_counts_bounds_and_survivability() {
    // Exact drop count.
    let points: Vec<Vector3<f64>> =
        (0..1000).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
    let kept = corrupt_points(
        &points,
        &CorruptionConfig { drop_fraction: 0.8, noise_half_width: 0.0, seed: 1 },
    )
    .unwrap();
    assert_eq!(kept.len(), 200);

    // Noise bounded by the half-width, with near-zero per-axis mean.
    const NOISE: f64 = 0.2;
    const MEAN_TOL: f64 = 0.005;
    let many: Vec<Vector3<f64>> = (0..100_000).map(|_| Vector3::zeros()).collect();
    let noisy = corrupt_points(
        &many,
        &CorruptionConfig { drop_fraction: 0.0, noise_half_width: NOISE, seed: 2 },
    )
    .unwrap();
    assert_eq!(noisy.len(), many.len());
    let mut sum = Vector3::zeros();
    for p in &noisy {
        for a in 0..3 {
            assert!(p[a].abs() <= NOISE, "noise {} exceeds the half-width", p[a]);
        }
        sum += p;
    }
    let mean = sum / noisy.len() as f64;
    for a in 0..3 {
        assert!(mean[a].abs() < MEAN_TOL, "axis {a}: mean {} drifts", mean[a]);
    }

    // Synthesis still terminates on corrupted geometry with reduced but
    // nonzero coverage.
    let target = common::render_two_plane_frame(Vector3::zeros(), 32, 32, 0);
    let sources = vec![
        common::render_two_plane_frame(Vector3::new(0.3, 0.0, 0.0), 32, 32, 0),
        common::render_two_plane_frame(Vector3::new(-0.3, 0.1, 0.0), 32, 32, 0),
    ];
    let options = SynthesisOptions::default();
    let full = synthesize_with_options(
        &sources,
        &target.intrinsics,
        &target.pose,
        &target.depth,
        &options,
    )
    .unwrap();
    let cloud = build_point_cloud(&target.depth, &target.intrinsics, &target.pose).unwrap();
    let mut corrupted = corrupt_point_cloud(
        &cloud,
        &CorruptionConfig { drop_fraction: 0.5, noise_half_width: 0.02, seed: 3 },
    )
    .unwrap();
    color_point_cloud(&mut corrupted, &sources, &target.pose, &options).unwrap();
    let view = render_cloud(&corrupted, &target.intrinsics, &target.pose);
    assert!(view.validity_ratio() > 0.0, "corruption wiped out all coverage");
    assert!(
        view.validity_ratio() < full.validity_ratio(),
        "corruption did not reduce coverage: {} vs {}",
        view.validity_ratio(),
        full.validity_ratio()
    );
    println!(
        "PASS criterion 9: drop 0.8 keeps exactly 200/1000; noise bounded, mean within {MEAN_TOL}; corrupted synthesis coverage {:.3} (from {:.3})",
        view.validity_ratio(),
        full.validity_ratio()
    );
}

#[test]
fn criterion_10_degradation_noop_determinism_and_speed() {
    let mut rng = StdRng::seed_from_u64(1010);

    // Identity parameters leave the image untouched.
    let frame = common::random_frame(&mut rng, 40, 30);
    let est = frame.depth.clone();
    let pair = simulate(&frame, &est, &DegradationConfig::identity(7)).unwrap();
    assert_eq!(pair.condition.as_raw(), frame.image.as_raw(), "identity config altered pixels");
    assert!(pair.mask.iter().all(|m| !m), "identity config produced mask bits");

    // Fixed seed: byte-identical results across repeat runs and worker
    // counts.
    let frames: Vec<(Frame, DepthMap)> = (0..4)
        .map(|_| {
            let f = common::random_frame(&mut rng, 40, 30);
            let d = f.depth.clone();
            (f, d)
        })
        .collect();
    let config = DegradationConfig { seed: 99, ..DegradationConfig::default() };
    let run_with = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            use rayon::prelude::*;
            frames
                .par_iter()
                .map(|(f, d)| simulate(f, d, &config).unwrap())
                .collect::<Vec<_>>()
        })
    };
    let single = run_with(1);
    let multi = run_with(8);
    let again = run_with(8);
    for i in 0..frames.len() {
        assert_eq!(single[i], multi[i], "frame {i}: differs across worker counts");
        assert_eq!(multi[i], again[i], "frame {i}: differs across runs");
    }

    // Full-resolution throughput.
    const BUDGET_SECS: f64 = 3.0;
    let (w, h) = (960u32, 640u32);
    let image = image::RgbImage::from_fn(w, h, |x, y| {
        image::Rgb([(x * 7 % 256) as u8, (y * 11 % 256) as u8, ((x + y) % 256) as u8])
    });
    let depth_values: Vec<f64> = (0..h)
        .flat_map(|_| (0..w).map(|x| if x < w / 2 { 5.0 } else { 12.0 }))
        .collect();
    let depth = DepthMap::from_values(w, h, depth_values).unwrap();
    let big = Frame::new(
        image,
        Intrinsics::new(w as f64, h as f64, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap(),
        Pose::identity(),
        depth.clone(),
        0,
    )
    .unwrap();
    let started = Instant::now();
    let _ = simulate(&big, &depth, &DegradationConfig::default()).unwrap();
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < BUDGET_SECS,
        "960x640 degradation took {elapsed:?}, budget {BUDGET_SECS} s"
    );
    println!("PASS criterion 10: identity no-op, seed-deterministic across workers, 960x640 in {elapsed:?}");
}

fn collect_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn write_disk_scene(dir: &Path) -> std::path::PathBuf {
    use gadrive::codec;
    let centers = [
        Vector3::new(0.0, 0.0, 0.0),
        Vector3::new(0.3, 0.0, 0.0),
        Vector3::new(-0.3, 0.1, 0.0),
        Vector3::new(0.2, -0.2, 0.0),
    ];
    let mut frames = Vec::new();
    for (i, center) in centers.iter().enumerate() {
        let frame = common::render_two_plane_frame(*center, 32, 32, 0);
        let image_name = format!("frame_{i}.png");
        let depth_name = format!("frame_{i}.depth");
        codec::write_rgb(&dir.join(&image_name), &frame.image).unwrap();
        codec::write_depth_raw(&dir.join(&depth_name), &frame.depth).unwrap();
        frames.push(serde_json::json!({
            "image": image_name,
            "depth": depth_name,
            "intrinsics": {
                "fx": frame.intrinsics.fx,
                "fy": frame.intrinsics.fy,
                "cx": frame.intrinsics.cx,
                "cy": frame.intrinsics.cy,
                "width": frame.intrinsics.width,
                "height": frame.intrinsics.height,
            },
            "pose": encode_pose(&frame.pose).to_vec(),
            "timestamp": 0,
        }));
    }
    let manifest = serde_json::json!({
        "scene_id": "acceptance",
        "frames": frames,
    });
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
    path
}

#[test]
fn criterion_11_cli_outputs_are_worker_count_invariant() {
    let bin = env!("CARGO_BIN_EXE_gadrive");
    let tmp = tempfile::tempdir().unwrap();
    let manifest = write_disk_scene(tmp.path());

    let run = |subcommand: &str, workers: &str, out: &Path| {
        let status = Command::new(bin)
            .args([
                "--workers",
                workers,
                "--seed",
                "7",
                subcommand,
                "--manifest",
                manifest.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success(), "{subcommand} with {workers} workers failed");
    };

    for subcommand in ["synthesize", "degrade"] {
        let out1 = tmp.path().join(format!("{subcommand}_w1"));
        let out8 = tmp.path().join(format!("{subcommand}_w8"));
        run(subcommand, "1", &out1);
        run(subcommand, "8", &out8);
        let tree1 = collect_tree(&out1);
        let tree8 = collect_tree(&out8);
        assert!(!tree1.is_empty(), "{subcommand} produced no output");
        assert_eq!(
            tree1.keys().collect::<Vec<_>>(),
            tree8.keys().collect::<Vec<_>>(),
            "{subcommand}: file sets differ"
        );
        for (name, bytes) in &tree1 {
            assert_eq!(bytes, &tree8[name], "{subcommand}: {name} differs between 1 and 8 workers");
        }

        // A repeat run with the same seed is also byte-identical.
        let out_again = tmp.path().join(format!("{subcommand}_again"));
        run(subcommand, "8", &out_again);
        assert_eq!(tree8, collect_tree(&out_again), "{subcommand}: repeat run differs");
    }
    println!("PASS criterion 11: synthesize and degrade trees byte-identical at 1 and 8 workers");
}
