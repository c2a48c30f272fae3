//! `densuq`: synthesize scenes, train ensembles, sweep noise levels and
//! post-process uncertainty grids.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use densuq_core::dataset::{
    camera_rig, generate_synthetic_scene, load_image, save_dataset, save_ground_truth, scene_bbox_for, Intrinsics,
    RenderConfig, RigKind, ScenePreset,
};
use densuq_core::ensemble::{grid_to_points, EnsembleGrid};
use densuq_core::export::{write_ply, PlyMode};
use densuq_core::pipeline::{filter_points, run_experiment, sweep, SweepAxis};
use densuq_core::trainer::psnr;
use densuq_core::{desk, Error, PercentileScope, RunConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "densuq", version, about = "Density uncertainty from radiance-field ensembles")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a built-in scene into a dataset directory with a ground-truth sidecar.
    Synth(SynthArgs),
    /// Train one ensemble and write grids, point clouds and a report.
    Run(RunArgs),
    /// Repeat `run` over values of one noise axis and write a comparison CSV.
    Sweep(SweepArgs),
    /// PSNR between two PNG images.
    Psnr { a: PathBuf, b: PathBuf },
    /// Percentile filter on a saved ensemble grid.
    Filter(FilterArgs),
    /// Write the above-threshold points of a saved ensemble grid as PLY.
    ExportPly(ExportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Scene preset: sphere or sphere-occluder.
    #[arg(long, default_value = "sphere-occluder")]
    preset: String,
    /// Rig: full_sphere, upper_hemisphere or one_sided_half_hemisphere.
    #[arg(long, default_value = "full_sphere")]
    rig: String,
    #[arg(long, short = 'n', default_value_t = desk::VIEWS)]
    views: usize,
    #[arg(long, default_value_t = desk::RIG_RADIUS)]
    radius: f64,
    #[arg(long, default_value_t = desk::IMAGE_SIZE)]
    size: usize,
    /// Horizontal field of view in radians.
    #[arg(long, default_value_t = desk::CAMERA_ANGLE_X)]
    angle_x: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Overrides on top of the config file; every flag wins over the file.
#[derive(Args, Clone)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base training seed; member m uses seed + m. [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Ensemble size M. [default: 10]
    #[arg(long)]
    members: Option<usize>,
    /// Extraction grid resolution per axis. [default: 64]
    #[arg(long)]
    grid_res: Option<usize>,
    /// Mean raw density a position needs to become a point. [default: 15]
    #[arg(long)]
    density_threshold: Option<f64>,
    /// Uncertainty percentile p for the filter. [default: 90]
    #[arg(long)]
    percentile: Option<f64>,
    /// Positions the percentile is taken over: above-threshold or full-grid.
    #[arg(long)]
    percentile_scope: Option<String>,
    /// Image noise std in 8-bit units.
    #[arg(long)]
    sigma_im: Option<f64>,
    /// Translation noise std in world units.
    #[arg(long)]
    sigma_t: Option<f64>,
    /// Translation noise std as a percentage of the rig circumference.
    #[arg(long)]
    sigma_t_percent: Option<f64>,
    /// Rotation noise std per Euler angle in degrees.
    #[arg(long)]
    sigma_r: Option<f64>,
    #[arg(long)]
    noise_seed: Option<u64>,
    /// Train members concurrently.
    #[arg(long)]
    parallel_members: bool,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    field_res: Option<usize>,
    /// ascii or binary_le.
    #[arg(long)]
    ply_mode: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// sigma_im, sigma_t (percent), sigma_r (degrees) or sigma_tr (percent:degrees).
    #[arg(long)]
    axis: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
}

#[derive(Args)]
struct FilterArgs {
    /// Ensemble grid written by `run` (ensemble_grid.bin).
    #[arg(long)]
    grid: PathBuf,
    #[arg(long, default_value_t = 15.0)]
    density_threshold: f64,
    #[arg(long, default_value_t = 90.0)]
    percentile: f64,
    #[arg(long, default_value = "above-threshold")]
    percentile_scope: String,
    /// Directory for points_kept.ply and points_removed.ply.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "binary_le")]
    ply_mode: String,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long, default_value_t = 15.0)]
    density_threshold: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "binary_le")]
    ply_mode: String,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Diverged { .. } => EXIT_DIVERGED,
        Error::Io { .. }
        | Error::Image { .. }
        | Error::Malformed { .. }
        | Error::SchemaVersion { .. }
        | Error::ImproperRotation { .. }
        | Error::NotOrthonormal { .. }
        | Error::NoFrames => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

fn build_config(a: &RunArgs) -> densuq_core::Result<RunConfig> {
    let mut c = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &a.dataset {
        c.dataset = v.clone();
    }
    if let Some(v) = &a.ground_truth {
        c.ground_truth = Some(v.clone());
    }
    if let Some(v) = &a.out {
        c.out_dir = v.clone();
    }
    if let Some(v) = a.seed {
        c.train.seed = v;
    }
    if let Some(v) = a.members {
        c.members = v;
    }
    if let Some(v) = a.grid_res {
        c.grid_res = v;
    }
    if let Some(v) = a.density_threshold {
        c.density_threshold = v;
    }
    if let Some(v) = a.percentile {
        c.percentile = v;
    }
    if let Some(v) = &a.percentile_scope {
        c.percentile_scope = v.parse()?;
    }
    if let Some(v) = a.sigma_im {
        c.noise.sigma_im = v;
    }
    match (a.sigma_t, a.sigma_t_percent) {
        (Some(_), Some(_)) => {
            return Err(Error::Config("pass either --sigma-t or --sigma-t-percent, not both".into()));
        }
        (Some(v), None) => {
            c.noise.sigma_t = v;
            c.sigma_t_percent = None;
        }
        (None, Some(v)) => {
            c.noise.sigma_t = 0.0;
            c.sigma_t_percent = Some(v);
        }
        (None, None) => {}
    }
    if let Some(v) = a.sigma_r {
        c.noise.sigma_r_deg = v;
    }
    if let Some(v) = a.noise_seed {
        c.noise.seed = v;
    }
    if a.parallel_members {
        c.parallel_members = true;
    }
    if let Some(v) = a.steps {
        c.train.steps = v;
    }
    if let Some(v) = a.lr {
        c.train.lr = v;
    }
    if let Some(v) = a.field_res {
        c.train.field_res = v;
    }
    if let Some(v) = &a.ply_mode {
        c.ply_mode = v.parse()?;
    }
    c.validate()?;
    Ok(c)
}

fn cmd_synth(a: &SynthArgs) -> densuq_core::Result<()> {
    let preset: ScenePreset = a.preset.parse()?;
    let rig: RigKind = a.rig.parse()?;
    let gt = preset.ground_truth();
    let intrinsics = Intrinsics::from_angle_x(a.angle_x, a.size, a.size);
    let poses = camera_rig(rig, a.views, a.radius, scene_bbox_for(&gt).center(), intrinsics)?;
    let ds = generate_synthetic_scene(&gt, &poses, &RenderConfig::default())?;
    save_dataset(&ds, &a.out)?;
    save_ground_truth(&gt, &a.out)?;
    println!(
        "{}",
        json!({
            "dataset": a.out,
            "preset": preset.as_str(),
            "rig": rig.as_str(),
            "frames": ds.frames.len(),
            "primitives": gt.primitives.len(),
        })
    );
    Ok(())
}

fn cmd_run(a: &RunArgs) -> densuq_core::Result<()> {
    let cfg = build_config(a)?;
    let o = run_experiment(&cfg)?;
    let r = &o.report;
    println!(
        "{}",
        json!({
            "report": o.report_path,
            "baseline": r.baseline,
            "mean_psnr": densuq_core::export::sentinel::to_json(r.mean_psnr),
            "mU_delta": r.mu_delta,
            "m_mean_delta": r.m_mean_delta,
            "point_counts": r.point_counts,
        })
    );
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> densuq_core::Result<()> {
    let base = build_config(&a.run)?;
    let axis: SweepAxis = a.axis.parse()?;
    let values = a.values.iter().map(|v| axis.parse_value(v)).collect::<densuq_core::Result<Vec<_>>>()?;
    let (rows, csv) = sweep(&base, axis, &values)?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    println!("{}", json!({ "comparison": csv, "rows": rows.len(), "failed": failed }));
    Ok(())
}

fn cmd_psnr(a: &Path, b: &Path) -> densuq_core::Result<()> {
    let bg = [1.0; 3];
    let v = psnr(&load_image(a, bg)?, &load_image(b, bg)?)?;
    println!("{}", json!({ "psnr": densuq_core::export::sentinel::to_json(v) }));
    Ok(())
}

fn cmd_filter(a: &FilterArgs) -> densuq_core::Result<()> {
    let scope: PercentileScope = a.percentile_scope.parse()?;
    let mode: PlyMode = a.ply_mode.parse()?;
    let eg = EnsembleGrid::read(&a.grid)?;
    let points = grid_to_points(&eg, a.density_threshold);
    let f = filter_points(&points, &eg, a.percentile, scope)?;
    let kept = a.out.join("points_kept.ply");
    let removed = a.out.join("points_removed.ply");
    std::fs::create_dir_all(&a.out).map_err(|source| Error::Io { path: a.out.clone(), source })?;
    write_ply(&f.kept, &kept, mode)?;
    write_ply(&f.removed, &removed, mode)?;
    println!(
        "{}",
        json!({
            "threshold": f.threshold,
            "above_threshold": points.len(),
            "kept": f.kept.len(),
            "removed": f.removed.len(),
            "outputs": [kept, removed],
        })
    );
    Ok(())
}

fn cmd_export(a: &ExportArgs) -> densuq_core::Result<()> {
    let mode: PlyMode = a.ply_mode.parse()?;
    let eg = EnsembleGrid::read(&a.grid)?;
    let points = grid_to_points(&eg, a.density_threshold);
    write_ply(&points, &a.out, mode)?;
    println!("{}", json!({ "ply": a.out, "points": points.len() }));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Psnr { a, b } => cmd_psnr(a, b),
        Command::Filter(a) => cmd_filter(a),
        Command::ExportPly(a) => cmd_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string(), "exit_code": code }));
            ExitCode::from(code)
        }
    }
}
