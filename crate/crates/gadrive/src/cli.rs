//! Command-line surface: batch pipelines over a scene manifest, each
//! writing outputs plus a machine-readable run report. Outputs are
//! reproducible from (manifest, config, seed) regardless of worker
//! count.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{dense_depth_loss, fit_scale_shift_in, project_lidar, FitSpace};
use crate::codec;
use crate::degrade::simulate;
use crate::manifest::{encode_pose, load_manifest, EngineConfig, Scene};
use crate::segment::plan_segments_with;
use crate::synthesis::{
    build_point_cloud, color_point_cloud, corrupt_point_cloud, corrupt_points, render_cloud,
    Frame, SynthesisOptions, VisibilityTolerance,
};
use crate::trajectory::{shift_trajectory, ShiftDirection, ShiftMode, Trajectory};

#[derive(Debug, Parser)]
#[command(name = "gadrive", about = "Geometry-guided pseudo-view synthesis toolkit", version)]
pub struct Cli {
    /// Engine config file (JSON); flags override individual fields.
    #[arg(long, global = true, env = "GADRIVE_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads (0 = automatic).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Abort the batch on the first frame error.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize pseudo-views by occlusion-aware backward warping.
    Synthesize(SynthesizeArgs),
    /// Produce (condition, target, mask) training pairs.
    Degrade(DegradeArgs),
    /// Fit scale-shift alignment of relative depth to LiDAR and report losses.
    AlignDepth(AlignDepthArgs),
    /// Emit a segment-wise conditioning plan as JSON.
    PlanSegments(PlanSegmentsArgs),
    /// Shift a recorded trajectory laterally.
    ShiftTrajectory(ShiftTrajectoryArgs),
    /// Drop and jitter points in a LiDAR-style point file.
    Corrupt(CorruptArgs),
}

#[derive(Debug, Args)]
struct SynthesizeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Synthesize only this frame index (default: every frame).
    #[arg(long)]
    target_frame: Option<usize>,
    /// Use only frames at this timestamp as sources (default: the
    /// target frame's own timestamp).
    #[arg(long)]
    target_timestamp: Option<i64>,
    /// Visibility tolerance in meters (overrides the config).
    #[arg(long)]
    delta: Option<f64>,
    /// Comma-separated source frame indices (overrides timestamp
    /// selection).
    #[arg(long, value_delimiter = ',')]
    source_frames: Option<Vec<usize>>,
    /// Trajectory JSON overriding target poses (one pose per frame).
    #[arg(long)]
    pose_file: Option<PathBuf>,
    /// Corrupt the target point cloud (drop/noise from the config)
    /// before coloring.
    #[arg(long)]
    corrupt: bool,
    /// Disable the z-buffer visibility check (diagnostic only).
    #[arg(long, hide = true)]
    no_visibility_check: bool,
    /// Record per-frame wall-clock timings in the report (makes the
    /// report nondeterministic across runs).
    #[arg(long)]
    timings: bool,
}

#[derive(Debug, Args)]
struct DegradeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    timings: bool,
}

#[derive(Debug, Args)]
struct AlignDepthArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fit in depth or inverse-depth space.
    #[arg(long, value_enum, default_value = "depth")]
    space: SpaceArg,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum SpaceArg {
    Depth,
    InverseDepth,
}

#[derive(Debug, Args)]
struct PlanSegmentsArgs {
    /// Trajectory length in frames.
    #[arg(long)]
    frames: usize,
    /// Segment length T (overrides the config).
    #[arg(long)]
    segment_length: Option<usize>,
    /// Reject trajectories that do not split into full segments.
    #[arg(long)]
    strict_length: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ShiftTrajectoryArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Meters per frame (overrides the config).
    #[arg(long)]
    per_frame: Option<f64>,
    /// Maximum total shift in meters (overrides the config).
    #[arg(long)]
    max: Option<f64>,
    #[arg(long, value_enum)]
    direction: Option<DirectionArg>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum DirectionArg {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Ramp,
    Constant,
}

#[derive(Debug, Args)]
struct CorruptArgs {
    /// Input point file (length-prefixed float32 xyz).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fraction of points to drop (overrides the config).
    #[arg(long)]
    drop: Option<f64>,
    /// Uniform per-axis noise half-width in meters (overrides the config).
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Debug, Serialize)]
struct RunReport<'a> {
    command: &'static str,
    config: &'a EngineConfig,
    seed: u64,
    workers: usize,
    frames: Vec<FrameReport>,
}

#[derive(Debug, Serialize)]
struct FrameReport {
    frame: usize,
    status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    validity_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timing_ms: Option<f64>,
}

/// Trajectory interchange format: one row-major 4x4 pose per frame.
#[derive(Debug, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub poses: Vec<[f64; 16]>,
    pub timestamps: Vec<i64>,
}

pub fn run() -> Result<i32> {
    let cli = Cli::parse();
    let mut config = match &cli.config {
        Some(path) => EngineConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => EngineConfig::default(),
    };
    // The worker override deliberately does not touch the echoed
    // config: outputs are worker-count invariant, so the report must
    // be too.
    let pool_workers = cli.workers.unwrap_or(config.workers);
    if let Some(s) = cli.seed {
        config.seed = s;
        config.degradation.seed = s;
        config.corruption.seed = s;
    }
    config.validate()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(pool_workers)
        .build()
        .context("building worker pool")?;
    let strict = cli.strict;
    pool.install(|| match cli.command {
        Command::Synthesize(args) => run_synthesize(&config, strict, args),
        Command::Degrade(args) => run_degrade(&config, strict, args),
        Command::AlignDepth(args) => run_align(&config, args),
        Command::PlanSegments(args) => run_plan(&config, args),
        Command::ShiftTrajectory(args) => run_shift(&config, args),
        Command::Corrupt(args) => run_corrupt(&config, args),
    })
}

fn load_scene_checked(path: &Path) -> Result<Scene> {
    let scene = load_manifest(path).with_context(|| format!("loading {}", path.display()))?;
    for w in &scene.warnings {
        eprintln!("warning: {w}");
    }
    Ok(scene)
}

fn write_report(out: &Path, report: &RunReport) -> Result<()> {
    let path = out.join("run_report.json");
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn finish(out: &Path, report: RunReport) -> Result<i32> {
    let failed: Vec<&FrameReport> =
        report.frames.iter().filter(|f| f.status != "ok").collect();
    for f in &failed {
        eprintln!("frame {}: {}", f.frame, f.status);
    }
    write_report(out, &report)?;
    Ok(if failed.is_empty() { 0 } else { 1 })
}

fn read_trajectory_file(path: &Path) -> Result<Trajectory> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let file: TrajectoryFile = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))?;
    let mut warnings = Vec::new();
    let mut poses = Vec::with_capacity(file.poses.len());
    for (i, m) in file.poses.iter().enumerate() {
        poses.push(crate::manifest::decode_pose(i, m, &mut warnings)?);
    }
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(Trajectory::new(poses, file.timestamps)?)
}

fn run_synthesize(config: &EngineConfig, strict: bool, args: SynthesizeArgs) -> Result<i32> {
    let scene = load_scene_checked(&args.manifest)?;
    std::fs::create_dir_all(&args.out)?;
    let delta = VisibilityTolerance::new(args.delta.unwrap_or(config.delta))
        .map_err(|e| anyhow::anyhow!(e.to_string()))?;
    let options = SynthesisOptions { delta, check_visibility: !args.no_visibility_check };

    let pose_override = match &args.pose_file {
        Some(p) => {
            let traj = read_trajectory_file(p)?;
            if traj.len() != scene.frames.len() {
                bail!(
                    "pose file has {} poses but the manifest has {} frames",
                    traj.len(),
                    scene.frames.len()
                );
            }
            Some(traj)
        }
        None => None,
    };

    let targets: Vec<usize> = match args.target_frame {
        Some(i) => {
            if i >= scene.frames.len() {
                bail!("target frame {i} out of range ({} frames)", scene.frames.len());
            }
            vec![i]
        }
        None => (0..scene.frames.len()).collect(),
    };

    let results: Vec<FrameReport> = targets
        .par_iter()
        .map(|&i| {
            let started = std::time::Instant::now();
            let status = synthesize_one(config, &scene, &args, &options, pose_override.as_ref(), i);
            let timing = args.timings.then(|| started.elapsed().as_secs_f64() * 1e3);
            match status {
                Ok(ratio) => FrameReport {
                    frame: i,
                    status: "ok".into(),
                    validity_ratio: Some(ratio),
                    timing_ms: timing,
                },
                Err(e) => FrameReport {
                    frame: i,
                    status: format!("error: {e:#}"),
                    validity_ratio: None,
                    timing_ms: timing,
                },
            }
        })
        .collect();
    if strict {
        if let Some(bad) = results.iter().find(|r| r.status != "ok") {
            bail!("frame {}: {}", bad.frame, bad.status);
        }
    }
    let report = RunReport {
        command: "synthesize",
        config,
        seed: config.seed,
        workers: config.workers,
        frames: results,
    };
    finish(&args.out, report)
}

fn synthesize_one(
    config: &EngineConfig,
    scene: &Scene,
    args: &SynthesizeArgs,
    options: &SynthesisOptions,
    pose_override: Option<&Trajectory>,
    index: usize,
) -> Result<f64> {
    let target = &scene.frames[index];
    let target_pose = pose_override.map_or(target.pose, |t| t.poses[index]);
    let timestamp = args.target_timestamp.unwrap_or(target.timestamp);
    let sources: Vec<Frame> = match &args.source_frames {
        Some(ids) => {
            for &s in ids {
                if s >= scene.frames.len() {
                    bail!("source frame {s} out of range");
                }
            }
            ids.iter().map(|&s| scene.frames[s].clone()).collect()
        }
        None => scene.frames_at(timestamp).into_iter().map(|(_, f)| f.clone()).collect(),
    };
    if sources.is_empty() {
        bail!("no source frames at timestamp {timestamp}");
    }
    let mut cloud = build_point_cloud(&target.depth, &target.intrinsics, &target_pose)?;
    if args.corrupt {
        cloud = corrupt_point_cloud(&cloud, &config.corruption)?;
    }
    color_point_cloud(&mut cloud, &sources, &target_pose, options)?;
    let view = render_cloud(&cloud, &target.intrinsics, &target_pose);

    let stem = format!("frame_{index:04}");
    codec::write_rgb(&args.out.join(format!("{stem}_pseudo.png")), &view.image)?;
    codec::write_mask(
        &args.out.join(format!("{stem}_mask.png")),
        view.image.width(),
        view.image.height(),
        &view.validity,
    )?;
    // Source-index map: 8-bit, 255 = no source.
    let src_img = image::GrayImage::from_fn(view.image.width(), view.image.height(), |x, y| {
        let v = view.source_of(x, y).map_or(255u8, |s| s.min(254) as u8);
        image::Luma([v])
    });
    src_img.save(args.out.join(format!("{stem}_source.png")))?;
    Ok(view.validity_ratio())
}

#[derive(Debug, Serialize)]
struct DegradeSidecar<'a> {
    frame: usize,
    seed: u64,
    config: &'a crate::degrade::DegradationConfig,
}

fn run_degrade(config: &EngineConfig, strict: bool, args: DegradeArgs) -> Result<i32> {
    let scene = load_scene_checked(&args.manifest)?;
    std::fs::create_dir_all(&args.out)?;
    let results: Vec<FrameReport> = (0..scene.frames.len())
        .into_par_iter()
        .map(|i| {
            let started = std::time::Instant::now();
            let status = degrade_one(config, &scene, &args.out, i);
            let timing = args.timings.then(|| started.elapsed().as_secs_f64() * 1e3);
            match status {
                Ok(()) => {
                    FrameReport { frame: i, status: "ok".into(), validity_ratio: None, timing_ms: timing }
                }
                Err(e) => FrameReport {
                    frame: i,
                    status: format!("error: {e:#}"),
                    validity_ratio: None,
                    timing_ms: timing,
                },
            }
        })
        .collect();
    if strict {
        if let Some(bad) = results.iter().find(|r| r.status != "ok") {
            bail!("frame {}: {}", bad.frame, bad.status);
        }
    }
    let report = RunReport {
        command: "degrade",
        config,
        seed: config.seed,
        workers: config.workers,
        frames: results,
    };
    finish(&args.out, report)
}

fn degrade_one(config: &EngineConfig, scene: &Scene, out: &Path, index: usize) -> Result<()> {
    let frame = &scene.frames[index];
    // Fall back to the rendered depth when no monocular estimate is on
    // file.
    let est = scene.relative_depths[index].as_ref().unwrap_or(&frame.depth);
    let pair = simulate(frame, est, &config.degradation)?;
    let stem = format!("frame_{index:04}");
    codec::write_rgb(&out.join(format!("{stem}_condition.png")), &pair.condition)?;
    codec::write_rgb(&out.join(format!("{stem}_target.png")), &pair.target)?;
    codec::write_mask(
        &out.join(format!("{stem}_mask.png")),
        pair.condition.width(),
        pair.condition.height(),
        &pair.mask,
    )?;
    let sidecar = DegradeSidecar { frame: index, seed: config.degradation.seed, config: &config.degradation };
    std::fs::write(
        out.join(format!("{stem}_sidecar.json")),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct AlignReport {
    frame: usize,
    status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    shift: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    l1_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sample_count: Option<usize>,
}

fn run_align(config: &EngineConfig, args: AlignDepthArgs) -> Result<i32> {
    let scene = load_scene_checked(&args.manifest)?;
    std::fs::create_dir_all(&args.out)?;
    let space = match args.space {
        SpaceArg::Depth => FitSpace::Depth,
        SpaceArg::InverseDepth => FitSpace::InverseDepth,
    };
    let mut reports = Vec::new();
    for (i, frame) in scene.frames.iter().enumerate() {
        let entry = (|| -> Result<AlignReport> {
            let relative = scene.relative_depths[i]
                .as_ref()
                .ok_or_else(|| anyhow::anyhow!("no relative depth on file"))?;
            let lidar = scene
                .lidar
                .get(&frame.timestamp)
                .ok_or_else(|| anyhow::anyhow!("no LiDAR at timestamp {}", frame.timestamp))?;
            let samples = project_lidar(lidar, &frame.intrinsics, &frame.pose)?;
            let fit = fit_scale_shift_in(relative, &samples, space)?;
            let aligned = fit.align(relative);
            let loss = dense_depth_loss(&aligned, &frame.depth)?;
            Ok(AlignReport {
                frame: i,
                status: "ok".into(),
                scale: Some(fit.scale),
                shift: Some(fit.shift),
                l1_loss: Some(loss),
                sample_count: Some(samples.len()),
            })
        })();
        reports.push(entry.unwrap_or_else(|e| AlignReport {
            frame: i,
            status: format!("error: {e:#}"),
            scale: None,
            shift: None,
            l1_loss: None,
            sample_count: None,
        }));
    }
    let failed = reports.iter().any(|r| r.status != "ok");
    std::fs::write(
        args.out.join("align_report.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "command": "align-depth",
            "seed": config.seed,
            "space": match space { FitSpace::Depth => "depth", FitSpace::InverseDepth => "inverse-depth" },
            "frames": reports,
        }))?,
    )?;
    Ok(if failed { 1 } else { 0 })
}

fn run_plan(config: &EngineConfig, args: PlanSegmentsArgs) -> Result<i32> {
    let t = args.segment_length.unwrap_or(config.segment.t);
    let plan = plan_segments_with(args.frames, t, args.strict_length)?;
    // Validate the latent arithmetic for the configured factors up
    // front so a bad (T, q) pairing fails at planning time.
    let latent = crate::segment::latent_shape(t, 640, 960, config.segment.q, config.segment.p).ok();
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(
        &args.out,
        serde_json::to_string_pretty(&serde_json::json!({
            "plan": plan,
            "latent_shape": latent,
        }))?,
    )?;
    Ok(0)
}

fn run_shift(config: &EngineConfig, args: ShiftTrajectoryArgs) -> Result<i32> {
    let scene = load_scene_checked(&args.manifest)?;
    let mut spec = config.shift;
    if let Some(v) = args.per_frame {
        spec.per_frame_shift = v;
    }
    if let Some(v) = args.max {
        spec.max_shift = v;
    }
    if let Some(d) = args.direction {
        spec.direction = match d {
            DirectionArg::Left => ShiftDirection::Left,
            DirectionArg::Right => ShiftDirection::Right,
        };
    }
    if let Some(m) = args.mode {
        spec.mode = match m {
            ModeArg::Ramp => ShiftMode::Ramp,
            ModeArg::Constant => ShiftMode::Constant,
        };
    }
    let shifted = shift_trajectory(&scene.trajectory(), &spec)?;
    let file = TrajectoryFile {
        poses: shifted.poses.iter().map(encode_pose).collect(),
        timestamps: shifted.timestamps.clone(),
    };
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&args.out, serde_json::to_string_pretty(&file)?)?;
    Ok(0)
}

fn run_corrupt(config: &EngineConfig, args: CorruptArgs) -> Result<i32> {
    let points = codec::read_points(&args.input)?;
    let mut cfg = config.corruption;
    if let Some(d) = args.drop {
        cfg.drop_fraction = d;
    }
    if let Some(n) = args.noise {
        cfg.noise_half_width = n;
    }
    let corrupted = corrupt_points(&points, &cfg)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    codec::write_points(&args.out, &corrupted)?;
    println!("{} -> {} points", points.len(), corrupted.len());
    Ok(0)
}
