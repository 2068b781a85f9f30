//! `depthtrack`: synthesize datasets, track, estimate poses, warp views and
//! evaluate trajectories.
//!
//! Exit codes: 0 on success, 1 when a component fails mid-run, 2 on usage
//! errors (bad flags, missing inputs).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{debug, info, warn};

use depthtrack_core::association::{Detection, Tracker};
use depthtrack_core::error::Error;
use depthtrack_core::formats::{
    format_config, format_detections, format_poses, format_trajectories, parse_poses, read_config_with_extras,
    read_depth_grid, read_detections, read_image, read_trajectories, write_depth_grid, write_pgm, ConfigExtras,
    RunConfig,
};
use depthtrack_core::geometry::{pose_to_transform, Pose6DoF};
use depthtrack_core::imaging::{photometric_error_masked, synthesize_view, DepthGrid, ImageGrid};
use depthtrack_core::loss_kernels as lk;
use depthtrack_core::metrics::{evaluate, TrajectorySet};
use depthtrack_core::pose_align::estimate_pose;
use depthtrack_core::simulator::{build_scene, preset, render, SceneSpec, PRESETS};

#[derive(Parser)]
#[command(name = "depthtrack", version, about = "Depth-aware multi-object tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PoseSource {
    /// Read `poses.txt` from the dataset.
    File,
    /// Estimate each inter-frame pose by photometric alignment.
    Estimate,
    /// No camera motion.
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset directory.
    Synth {
        /// Output directory; created if missing.
        #[arg(long)]
        out: PathBuf,
        /// Built-in scene name.
        #[arg(long, default_value = "walk", conflicts_with = "scene")]
        preset: String,
        /// Scene description in TOML.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Texture seed; defaults to the scene's own.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the frame count.
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Track detections through a dataset directory.
    Track {
        dataset: PathBuf,
        /// Run configuration [default: <dataset>/config].
        #[arg(long)]
        config: Option<PathBuf>,
        /// MOT-format detections [default: <dataset>/det.txt].
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Trajectory output [default: <dataset>/tracks.txt].
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        no_compensation: bool,
        /// Associate in a single round, ignoring depth.
        #[arg(long)]
        no_cascade: bool,
        /// Number of depth levels.
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long, value_enum, default_value = "file")]
        poses: PoseSource,
    },
    /// Estimate the camera motion from the target frame to the source frame.
    Pose {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Disparity of the target frame.
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Synthesize the target view from the source image and target depth.
    Warp {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        depth: PathBuf,
        /// `θx,θy,θz,tx,ty,tz`, target camera into source camera.
        #[arg(long, allow_hyphen_values = true)]
        pose: String,
        #[arg(long)]
        output: PathBuf,
        /// Image to score the warp against [default: the source].
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score trajectories against ground truth.
    Evaluate {
        gt: PathBuf,
        pred: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou_gate: f64,
    },
    /// Print the loss-kernel fixture table.
    Losses,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

fn require(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} not found: {}", path.display())))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn load_config(path: Option<&Path>) -> CliResult<(RunConfig, ConfigExtras)> {
    match path {
        Some(p) => {
            require(p, "config")?;
            Ok(read_config_with_extras(p)?)
        }
        None => Ok((RunConfig::default(), ConfigExtras::default())),
    }
}

fn frame_name(frame: usize, ext: &str) -> String {
    format!("{frame:06}.{ext}")
}

fn cmd_synth(out: &Path, preset_name: &str, scene: Option<&Path>, seed: Option<u64>, frames: Option<usize>) -> CliResult<()> {
    let mut spec: SceneSpec = match scene {
        Some(p) => {
            require(p, "scene file")?;
            let text = fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?
        }
        None => preset(preset_name)
            .map_err(|_| Failure::Usage(format!("unknown preset {preset_name:?}; choose from {}", PRESETS.join(", "))))?,
    };
    if let Some(n) = frames {
        spec.frames = n;
        // Objects that would only appear after the cut are dropped.
        let before = spec.objects.len();
        spec.objects.retain(|o| o.spawn < n);
        if spec.objects.len() < before {
            info!("dropped {} objects that spawn after frame {n}", before - spec.objects.len());
        }
    }
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let seed = seed.unwrap_or(spec.seed);
    let scene = build_scene(&spec, seed)?;

    create_dir(&out.join("img"))?;
    create_dir(&out.join("depth"))?;
    let mut gt = TrajectorySet::new();
    let mut dets: BTreeMap<u64, Vec<Detection<f64>>> = BTreeMap::new();
    let mut poses = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let frame = render(&scene, t)?;
        let number = t + 1;
        write_pgm(&frame.image, &out.join("img").join(frame_name(number, "pgm")))?;
        write_depth_grid(&frame.depth, &out.join("depth").join(frame_name(number, "dpt")))?;
        for (id, b) in &frame.gt_boxes {
            gt.insert(number as u64, *id, *b)?;
        }
        dets.insert(number as u64, frame.detections(&scene, t));
        poses.push(frame.pose);
        debug!("rendered frame {number}");
    }
    write_file(&out.join("gt.txt"), format_trajectories(&gt).as_bytes())?;
    write_file(&out.join("det.txt"), format_detections(&dets).as_bytes())?;
    write_file(&out.join("poses.txt"), format_poses(&poses).as_bytes())?;

    let mut cfg = RunConfig {
        camera: spec.intrinsics(),
        range: spec.range(),
        ..RunConfig::default()
    };
    cfg.tracker.range = cfg.range;
    cfg.align.range = cfg.range;
    let extras = ConfigExtras {
        scene_size: Some((spec.width, spec.height)),
        ..ConfigExtras::default()
    };
    write_file(&out.join("config"), format_config(&cfg, &extras).as_bytes())?;
    let scene_text = toml::to_string(&spec).map_err(|e| Failure::Runtime(e.to_string()))?;
    write_file(&out.join("scene.toml"), scene_text.as_bytes())?;
    println!("frames {} objects {} seed {seed}", spec.frames, spec.objects.len());
    Ok(())
}

fn count_frames(depth_dir: &Path) -> CliResult<usize> {
    let mut n = 0;
    while depth_dir.join(frame_name(n + 1, "dpt")).exists() {
        n += 1;
    }
    if n == 0 {
        return Err(Failure::Usage(format!("no depth frames in {}", depth_dir.display())));
    }
    Ok(n)
}

#[allow(clippy::too_many_arguments)]
fn cmd_track(
    dataset: &Path,
    config: Option<&Path>,
    detections: Option<&Path>,
    output: Option<&Path>,
    no_compensation: bool,
    no_cascade: bool,
    levels: Option<usize>,
    poses: PoseSource,
) -> CliResult<()> {
    require(dataset, "dataset directory")?;
    let config = config.map_or_else(|| dataset.join("config"), Path::to_path_buf);
    let detections = detections.map_or_else(|| dataset.join("det.txt"), Path::to_path_buf);
    let output = output.map_or_else(|| dataset.join("tracks.txt"), Path::to_path_buf);
    require(&config, "config")?;
    require(&detections, "detections")?;
    require(&dataset.join("depth"), "depth directory")?;
    let pose_file = dataset.join("poses.txt");
    match poses {
        PoseSource::File => require(&pose_file, "pose file")?,
        PoseSource::Estimate => require(&dataset.join("img"), "image directory")?,
        PoseSource::Off => {}
    }
    if levels == Some(0) {
        return Err(Failure::Usage("--levels must be at least 1".into()));
    }
    let (cfg, _) = read_config_with_extras(&config).map_err(|e| Failure::Usage(e.to_string()))?;
    let frames = count_frames(&dataset.join("depth"))?;
    info!("tracking {frames} frames from {}", dataset.display());

    let mut tcfg = cfg.tracker;
    if no_compensation {
        tcfg.compensation = false;
    }
    if no_cascade {
        tcfg.depth_cascade = false;
    }
    if let Some(n) = levels {
        tcfg.n_levels = n;
    }
    let mut tracker = Tracker::new(tcfg)?;

    let mut out = TrajectorySet::new();
    let result = run_tracker(dataset, &cfg, &detections, &pose_file, poses, frames, &mut tracker, &mut out);
    // Whatever was tracked so far is written even when a frame failed.
    write_file(&output, format_trajectories(&out).as_bytes())?;
    result?;
    println!("frames {frames} tracks {}", out.ids().len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_tracker(
    dataset: &Path,
    cfg: &RunConfig,
    detections: &Path,
    pose_file: &Path,
    poses: PoseSource,
    frames: usize,
    tracker: &mut Tracker<f64>,
    out: &mut TrajectorySet<f64>,
) -> CliResult<()> {
    let dets = read_detections(detections)?;
    let file_poses = if poses == PoseSource::File {
        let text = fs::read_to_string(pose_file).map_err(|e| Failure::Runtime(format!("{}: {e}", pose_file.display())))?;
        let p = parse_poses(&text, &pose_file.display().to_string())?;
        if p.len() < frames {
            return Err(Failure::Runtime(format!(
                "{} lists {} poses for {frames} frames",
                pose_file.display(),
                p.len()
            )));
        }
        p
    } else {
        Vec::new()
    };

    let empty = Vec::new();
    let mut prev: Option<(ImageGrid<f64>, DepthGrid<f64>)> = None;
    for f in 1..=frames {
        let depth: DepthGrid<f64> = read_depth_grid(&dataset.join("depth").join(frame_name(f, "dpt")))?;
        let pose = match poses {
            PoseSource::Off => None,
            PoseSource::File => (f > 1).then(|| file_poses[f - 1]),
            PoseSource::Estimate => {
                let img: ImageGrid<f64> = read_image(&dataset.join("img").join(frame_name(f, "pgm")))?;
                let pose = match &prev {
                    Some((pimg, pdepth)) => match estimate_pose(&img, pimg, pdepth, &cfg.camera, &cfg.align) {
                        Ok(est) => {
                            debug!("frame {f}: pose {:?} residual {}", est.pose.to_array(), est.residual);
                            Some(est.pose)
                        }
                        Err(e @ (Error::UnreliablePose { .. } | Error::DegenerateInput(_))) => {
                            warn!("frame {f}: {e}; skipping compensation");
                            None
                        }
                        Err(e) => return Err(e.into()),
                    },
                    None => None,
                };
                prev = Some((img, depth.clone()));
                pose
            }
        };
        let frame_dets = dets.get(&(f as u64)).unwrap_or(&empty);
        let step = tracker.step(frame_dets, &depth, pose.as_ref(), &cfg.camera)?;
        for (id, b) in step.confirmed {
            out.insert(f as u64, id, b)?;
        }
        debug!("frame {f}: {} detections, {} live tracks", frame_dets.len(), tracker.tracks().len());
    }
    Ok(())
}

fn cmd_pose(source: &Path, target: &Path, depth: &Path, config: Option<&Path>) -> CliResult<()> {
    require(source, "source image")?;
    require(target, "target image")?;
    require(depth, "depth grid")?;
    let (cfg, _) = load_config(config)?;
    let src: ImageGrid<f64> = read_image(source)?;
    let tgt: ImageGrid<f64> = read_image(target)?;
    let d: DepthGrid<f64> = read_depth_grid(depth)?;
    let est = estimate_pose(&src, &tgt, &d, &cfg.camera, &cfg.align)?;
    let a = est.pose.to_array();
    println!("{:.6} {:.6} {:.6} {:.6} {:.6} {:.6}", a[0], a[1], a[2], a[3], a[4], a[5]);
    println!("residual {:.6}", est.residual);
    Ok(())
}

fn parse_pose_arg(s: &str) -> CliResult<Pose6DoF<f64>> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
        .collect::<Option<_>>()
        .ok_or_else(|| Failure::Usage(format!("--pose needs six finite numbers, got {s:?}")))?;
    let arr: [f64; 6] = vals
        .try_into()
        .map_err(|_| Failure::Usage(format!("--pose needs six comma-separated numbers, got {s:?}")))?;
    Ok(Pose6DoF::from_array(arr))
}

fn cmd_warp(
    source: &Path,
    depth: &Path,
    pose: &str,
    output: &Path,
    target: Option<&Path>,
    config: Option<&Path>,
) -> CliResult<()> {
    require(source, "source image")?;
    require(depth, "depth grid")?;
    if let Some(t) = target {
        require(t, "target image")?;
    }
    let pose = parse_pose_arg(pose)?;
    let (cfg, _) = load_config(config)?;
    let src: ImageGrid<f64> = read_image(source)?;
    let d: DepthGrid<f64> = read_depth_grid(depth)?;
    let reference = match target {
        Some(t) => read_image(t)?,
        None => src.clone(),
    };
    let warped = synthesize_view(&src, &d, &cfg.camera, &pose_to_transform(&pose)?, &cfg.range)?;
    write_pgm(&warped.image, output)?;
    let pe = photometric_error_masked(&reference, &warped.image, &warped.valid, cfg.align.alpha)?;
    match pe.mean_valid() {
        Some(v) => println!("mean_pe {v:.6} valid {:.6}", warped.valid_fraction()),
        None => println!("mean_pe nan valid 0.000000"),
    }
    Ok(())
}

fn cmd_evaluate(gt: &Path, pred: &Path, iou_gate: f64) -> CliResult<()> {
    require(gt, "ground truth")?;
    require(pred, "predictions")?;
    if !(iou_gate > 0.0 && iou_gate < 1.0) {
        return Err(Failure::Usage(format!("--iou-gate must lie in (0, 1), got {iou_gate}")));
    }
    let g = read_trajectories(gt)?;
    let p = read_trajectories(pred)?;
    let report = evaluate(&g, &p, iou_gate)?;
    print!("{}", report.table());
    Ok(())
}

fn cmd_losses() -> CliResult<()> {
    let w = lk::LossWeights::<f64>::default();
    let peak = lk::HeatmapGrid::new(1, 1, vec![1.0])?;
    let background = lk::HeatmapGrid::new(1, 1, vec![0.0])?;
    let half = lk::HeatmapGrid::new(1, 1, vec![0.5])?;
    let hm = lk::gaussian_heatmap(&[(5.0, 5.0)], 2.0, 11, 11)?;
    let gt_box = [[10.0, 10.0, 4.0, 8.0]];
    let rows: [(&str, f64); 8] = [
        ("heatmap_at_sigma", hm.get(7, 5)),
        ("focal_peak", lk::focal_heatmap_loss(&half, &peak, 1, &w)?),
        ("focal_background", lk::focal_heatmap_loss(&half, &background, 1, &w)?),
        ("box_center", lk::box_size_loss(&[[11.0, 10.0, 4.0, 8.0]], &gt_box)?),
        ("box_size", lk::box_size_loss(&[[10.0, 10.0, 5.0, 9.0]], &gt_box)?),
        ("detection", lk::detection_loss(1.5, 0.25)?),
        ("depth", lk::depth_loss(&[0.1; 5], &[1.0; 5], w.lambda)?),
        ("uncertainty", lk::uncertainty_total(2.0, 0.01, &w)?),
    ];
    for (name, v) in rows {
        println!("{name} {v:.6}");
    }
    Ok(())
}

fn init_logging() {
    let level = match std::env::var("DEPTHTRACK_LOG").as_deref() {
        Ok("quiet") => log::LevelFilter::Off,
        Ok("debug") => log::LevelFilter::Debug,
        _ => log::LevelFilter::Info,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging();
    let result = match &cli.command {
        Command::Synth {
            out,
            preset,
            scene,
            seed,
            frames,
        } => cmd_synth(out, preset, scene.as_deref(), *seed, *frames),
        Command::Track {
            dataset,
            config,
            detections,
            output,
            no_compensation,
            no_cascade,
            levels,
            poses,
        } => cmd_track(
            dataset,
            config.as_deref(),
            detections.as_deref(),
            output.as_deref(),
            *no_compensation,
            *no_cascade,
            *levels,
            *poses,
        ),
        Command::Pose {
            source,
            target,
            depth,
            config,
        } => cmd_pose(source, target, depth, config.as_deref()),
        Command::Warp {
            source,
            depth,
            pose,
            output,
            target,
            config,
        } => cmd_warp(source, depth, pose, output, target.as_deref(), config.as_deref()),
        Command::Evaluate { gt, pred, iou_gate } => cmd_evaluate(gt, pred, *iou_gate),
        Command::Losses => cmd_losses(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
