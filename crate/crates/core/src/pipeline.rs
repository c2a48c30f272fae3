//! End-to-end experiment: noise → ensemble training → grid statistics →
//! thresholding and percentile filtering → files on disk.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::{PercentileScope, RunConfig};
use crate::dataset::{load_dataset, load_ground_truth, Dataset, GroundTruthField, GROUND_TRUTH_NAME};
use crate::ensemble::{
    ensemble_stats, extract_grid, grid_summary, grid_to_points, member_seeds, train_ensemble_logged, DensityGrid,
    EnsembleGrid,
};
use crate::error::{Error, Result};
use crate::export::{write_ply, write_report, MetricsReport, PointCounts, Provenance, SCHEMA_VERSION};
use crate::field::{write_field, VoxelField};
use crate::perturb::percent_of_circumference;
use crate::postprocess::{
    artifact_metrics, percentile, percentile_filter, robustness_compare, split_at_threshold, uncertainty_histogram,
    FilterResult, PointSet,
};
use crate::trainer::mean_psnr;

pub const REPORT_NAME: &str = "report.json";

/// Everything a run computed, besides what it wrote to disk.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: MetricsReport,
    pub report_path: PathBuf,
    pub member_grids: Vec<DensityGrid>,
    pub ensemble: EnsembleGrid,
    pub points: PointSet,
    pub filter: FilterResult,
}

/// Mean distance of the camera centers from the scene-box center.
pub fn rig_radius(dataset: &Dataset) -> f64 {
    let c = dataset.scene_bbox.center();
    let sum: f64 = dataset.frames.iter().map(|f| (f.pose.center() - c).norm()).sum();
    sum / dataset.frames.len().max(1) as f64
}

/// Loads the dataset (and ground truth, when present) named by `cfg` and
/// runs [`run_on_dataset`].
pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let dataset = load_dataset(&cfg.dataset)?;
    let gt = match &cfg.ground_truth {
        Some(p) => Some(load_ground_truth(p)?),
        None => {
            let dir = if cfg.dataset.is_dir() {
                cfg.dataset.clone()
            } else {
                cfg.dataset.parent().map(Path::to_path_buf).unwrap_or_default()
            };
            let sidecar = dir.join(GROUND_TRUTH_NAME);
            if sidecar.is_file() {
                Some(load_ground_truth(&sidecar)?)
            } else {
                None
            }
        }
    };
    run_on_dataset(cfg, &dataset, gt.as_ref())
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Copy of `cfg` with the percentage translation noise converted to world
/// units for this dataset's rig.
pub fn resolve_config(cfg: &RunConfig, dataset: &Dataset) -> RunConfig {
    let mut resolved = cfg.clone();
    if let Some(p) = cfg.sigma_t_percent {
        resolved.noise.sigma_t = percent_of_circumference(p, rig_radius(dataset));
        resolved.sigma_t_percent = None;
    }
    resolved
}

/// Percentile filter of the above-threshold `points`, with the percentile
/// taken over the points themselves or over every position of `ensemble`.
pub fn filter_points(points: &PointSet, ensemble: &EnsembleGrid, p: f64, scope: PercentileScope) -> Result<FilterResult> {
    match scope {
        PercentileScope::AboveThreshold => percentile_filter(points, p),
        PercentileScope::FullGrid => Ok(split_at_threshold(points, percentile(&ensemble.uncertainty, p)?)),
    }
}

/// Runs the whole pipeline on an in-memory dataset and writes every output
/// under `cfg.out_dir`.
pub fn run_on_dataset(cfg: &RunConfig, dataset: &Dataset, gt: Option<&GroundTruthField>) -> Result<RunOutcome> {
    cfg.validate()?;
    let started = now_ms();
    let resolved = resolve_config(cfg, dataset);
    let out = &cfg.out_dir;
    let members_dir = out.join("members");
    fs::create_dir_all(&members_dir).map_err(|e| Error::io(&members_dir, e))?;
    let mut outputs: Vec<String> = Vec::new();

    let perturbed = resolved.noise.apply(dataset)?;
    if !perturbed.gimbal_fallbacks.is_empty() {
        log::warn!("rotation noise used the axis-angle fallback for frames {:?}", perturbed.gimbal_fallbacks);
    }
    let train_ds = &perturbed.dataset;
    let seeds = member_seeds(resolved.train.seed, resolved.members);
    log::info!("training {} members on {} frames", seeds.len(), train_ds.frames.len());
    let trained = train_ensemble_logged(train_ds, &resolved.train, &seeds, resolved.parallel_members)?;
    let fields: Vec<&VoxelField> = trained.iter().map(|(f, _)| f).collect();

    let step = resolved.train.march_step(train_ds);
    let mut member_mean_psnr = Vec::with_capacity(fields.len());
    let mut view_sums = vec![0.0; train_ds.frames.len()];
    for (m, (field, log)) in trained.iter().enumerate() {
        let s = mean_psnr(field, train_ds, step)?;
        log::info!("member {m}: mean PSNR {:.2} dB", s.mean);
        for (acc, v) in view_sums.iter_mut().zip(&s.per_view) {
            *acc += v;
        }
        member_mean_psnr.push(s.mean);

        let name = format!("members/field_{m:02}.bin");
        write_field(field, &out.join(&name))?;
        outputs.push(name);
        let name = format!("members/loss_{m:02}.csv");
        log.write_csv(&out.join(&name))?;
        outputs.push(name);
    }
    let per_view_psnr: Vec<f64> = view_sums.iter().map(|s| s / fields.len() as f64).collect();
    let finite: Vec<f64> = member_mean_psnr.iter().copied().filter(|v| v.is_finite()).collect();
    let mean_psnr = if finite.is_empty() {
        f64::INFINITY
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };

    let bbox = dataset.scene_bbox;
    let member_grids = fields
        .iter()
        .map(|f| extract_grid(f, &bbox, resolved.grid_res))
        .collect::<Result<Vec<_>>>()?;
    for (m, g) in member_grids.iter().enumerate() {
        let name = format!("members/grid_{m:02}.bin");
        g.write(&out.join(&name))?;
        outputs.push(name);
    }
    let ensemble = ensemble_stats(&member_grids)?;
    ensemble.write(&out.join("ensemble_grid.bin"))?;
    outputs.push("ensemble_grid.bin".into());

    let thr = resolved.density_threshold;
    let dense = |mean: f64, _u: f64| mean > thr;
    let summary = grid_summary(&ensemble, Some(&dense))?;
    let full = grid_summary(&ensemble, None)?;

    let mut points = grid_to_points(&ensemble, thr);
    for p in &mut points.points {
        let mut rgb = [0.0; 3];
        for f in &fields {
            let c = f.sample_color(&p.position);
            for ch in 0..3 {
                rgb[ch] += c[ch] / fields.len() as f64;
            }
        }
        p.rgb = Some(rgb.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    let filter = filter_points(&points, &ensemble, resolved.percentile, resolved.percentile_scope)?;
    for (name, ps) in [
        ("points_all.ply", &points),
        ("points_kept.ply", &filter.kept),
        ("points_removed.ply", &filter.removed),
    ] {
        write_ply(ps, &out.join(name), resolved.ply_mode)?;
        outputs.push(name.into());
    }

    let histogram = uncertainty_histogram(&ensemble.uncertainty, resolved.histogram_bins, None)?;
    histogram.write_csv(&out.join("uncertainty_histogram.csv"))?;
    outputs.push("uncertainty_histogram.csv".into());

    let (artifacts, robustness) = match gt {
        Some(gt) => {
            let eps = resolved.surface_eps_cells * ensemble.cell_size();
            (
                Some(artifact_metrics(&filter.kept, &filter.removed, gt, eps)?),
                Some(robustness_compare(&member_grids, &ensemble, thr, gt, eps)?),
            )
        }
        None => (None, None),
    };

    outputs.push(REPORT_NAME.into());
    let report = MetricsReport {
        schema_version: SCHEMA_VERSION,
        baseline: resolved.noise.is_baseline(),
        per_view_psnr,
        member_mean_psnr,
        mean_psnr,
        mu_delta: summary.mean_uncertainty,
        m_mean_delta: summary.mean_density,
        mu_delta_full_grid: full.mean_uncertainty,
        m_mean_delta_full_grid: full.mean_density,
        percentile_threshold: filter.threshold,
        point_counts: PointCounts {
            total_grid: ensemble.len(),
            above_threshold: points.len(),
            kept: filter.kept.len(),
            removed: filter.removed.len(),
        },
        gimbal_fallbacks: perturbed.gimbal_fallbacks.clone(),
        histogram,
        artifacts,
        robustness,
        outputs,
        config: resolved.clone(),
        provenance: Provenance {
            crate_version: env!("CARGO_PKG_VERSION").into(),
            member_seeds: seeds,
            noise_seed: resolved.noise.seed,
            members: resolved.members,
            grid_res: resolved.grid_res,
            sigma_t_percent: cfg.sigma_t_percent,
            rig_radius: rig_radius(dataset),
            started_unix_ms: started,
            finished_unix_ms: now_ms(),
        },
    };
    let report_path = out.join(REPORT_NAME);
    write_report(&report, &report_path)?;
    Ok(RunOutcome {
        report,
        report_path,
        member_grids,
        ensemble,
        points,
        filter,
    })
}

/// Noise parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Image noise in 8-bit units.
    SigmaIm,
    /// Translation noise in percent of the rig circumference.
    SigmaT,
    /// Rotation noise in degrees.
    SigmaR,
    /// Translation percent and rotation degrees together, given as `t:r`.
    SigmaTr,
}

impl SweepAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::SigmaIm => "sigma_im",
            SweepAxis::SigmaT => "sigma_t",
            SweepAxis::SigmaR => "sigma_r",
            SweepAxis::SigmaTr => "sigma_tr",
        }
    }

    /// Parses one sweep value for this axis.
    pub fn parse_value(&self, s: &str) -> Result<SweepValue> {
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| Error::Config(format!("invalid sweep value '{t}'")))
        };
        match (self, s.split_once(':')) {
            (SweepAxis::SigmaTr, Some((t, r))) => Ok(SweepValue {
                label: s.trim().to_string(),
                primary: num(t)?,
                rotation_deg: Some(num(r)?),
            }),
            (SweepAxis::SigmaTr, None) => Err(Error::Config(format!(
                "sigma_tr values are 'percent:degrees' pairs, got '{s}'"
            ))),
            (_, Some(_)) => Err(Error::Config(format!("{} takes single numbers, got '{s}'", self.as_str()))),
            (_, None) => Ok(SweepValue {
                label: s.trim().to_string(),
                primary: num(s)?,
                rotation_deg: None,
            }),
        }
    }

    /// `base` with this axis set to `value`; the other noise settings are kept.
    pub fn apply(&self, base: &RunConfig, value: &SweepValue) -> RunConfig {
        let mut cfg = base.clone();
        match self {
            SweepAxis::SigmaIm => cfg.noise.sigma_im = value.primary,
            SweepAxis::SigmaT => {
                cfg.noise.sigma_t = 0.0;
                cfg.sigma_t_percent = Some(value.primary);
            }
            SweepAxis::SigmaR => cfg.noise.sigma_r_deg = value.primary,
            SweepAxis::SigmaTr => {
                cfg.noise.sigma_t = 0.0;
                cfg.sigma_t_percent = Some(value.primary);
                cfg.noise.sigma_r_deg = value.rotation_deg.unwrap_or(0.0);
            }
        }
        cfg
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigma_im" => Ok(SweepAxis::SigmaIm),
            "sigma_t" => Ok(SweepAxis::SigmaT),
            "sigma_r" => Ok(SweepAxis::SigmaR),
            "sigma_tr" => Ok(SweepAxis::SigmaTr),
            _ => Err(Error::Config(format!(
                "unknown sweep axis '{s}' (expected sigma_im, sigma_t, sigma_r or sigma_tr)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepValue {
    pub label: String,
    pub primary: f64,
    pub rotation_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: String,
    pub mean_psnr: Option<f64>,
    #[serde(rename = "mU_delta")]
    pub mu_delta: Option<f64>,
    pub m_mean_delta: Option<f64>,
    pub report: Option<String>,
    pub error: Option<String>,
}

pub const SWEEP_CSV_NAME: &str = "comparison.csv";

fn value_dir_name(axis: SweepAxis, label: &str) -> String {
    let safe: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    format!("{axis}_{safe}")
}

/// Runs one experiment per value in `base.out_dir/<axis>_<value>` and writes
/// a comparison CSV with one row per value. A failed run yields a row with an
/// error message and no numbers.
pub fn sweep(base: &RunConfig, axis: SweepAxis, values: &[SweepValue]) -> Result<(Vec<SweepRow>, PathBuf)> {
    if values.is_empty() {
        return Err(Error::Config("a sweep needs at least one value".into()));
    }
    base.validate()?;
    let mut rows = Vec::with_capacity(values.len());
    for v in values {
        let mut cfg = axis.apply(base, v);
        cfg.out_dir = base.out_dir.join(value_dir_name(axis, &v.label));
        log::info!("sweep {axis} = {}", v.label);
        let row = match run_experiment(&cfg) {
            Ok(o) => SweepRow {
                axis,
                value: v.label.clone(),
                mean_psnr: Some(o.report.mean_psnr),
                mu_delta: Some(o.report.mu_delta),
                m_mean_delta: Some(o.report.m_mean_delta),
                report: Some(o.report_path.display().to_string()),
                error: None,
            },
            Err(e) => {
                log::error!("sweep {axis} = {} failed: {e}", v.label);
                SweepRow {
                    axis,
                    value: v.label.clone(),
                    mean_psnr: None,
                    mu_delta: None,
                    m_mean_delta: None,
                    report: None,
                    error: Some(e.to_string()),
                }
            }
        };
        rows.push(row);
    }
    fs::create_dir_all(&base.out_dir).map_err(|e| Error::io(&base.out_dir, e))?;
    let path = base.out_dir.join(SWEEP_CSV_NAME);
    write_sweep_csv(&rows, &path)?;
    Ok((rows, path))
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let to_io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::malformed(path, format!("{other:?}")),
    };
    let mut w = csv::Writer::from_path(path).map_err(to_io)?;
    for row in rows {
        w.serialize(row).map_err(to_io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
