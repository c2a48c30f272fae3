//! Uncertainty-driven point filtering, uncertainty histograms and
//! ground-truth artifact metrics.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::GroundTruthField;
use crate::ensemble::{DensityGrid, EnsembleGrid};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub position: Vec3,
    /// Ensemble-mean raw density.
    pub density: f64,
    pub uncertainty: f64,
    pub rgb: Option<[u8; 3]>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointSet {
    pub points: Vec<Point>,
}

impl PointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn uncertainties(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.uncertainty).collect()
    }
}

/// `p`-th percentile with linear interpolation between closest ranks: the
/// value at fractional rank `(n − 1)·p/100` of the ascending sort.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("percentile of no values"));
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::InvalidArgument(format!("percentile must lie in (0, 100], got {p}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    pub kept: PointSet,
    pub removed: PointSet,
    pub threshold: f64,
}

/// Keeps points whose uncertainty is ≤ the `p`-th percentile of the point
/// set's uncertainties. Ties at the threshold are kept.
pub fn percentile_filter(ps: &PointSet, p: f64) -> Result<FilterResult> {
    if ps.is_empty() {
        return Err(Error::EmptyInput("percentile filter on an empty point set"));
    }
    let threshold = percentile(&ps.uncertainties(), p)?;
    Ok(split_at_threshold(ps, threshold))
}

/// Splits by a fixed uncertainty threshold (`≤` kept).
pub fn split_at_threshold(ps: &PointSet, threshold: f64) -> FilterResult {
    let (kept, removed): (Vec<Point>, Vec<Point>) =
        ps.points.iter().partition(|pt| pt.uncertainty <= threshold);
    FilterResult {
        kept: PointSet { points: kept },
        removed: PointSet { points: removed },
        threshold,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Ascending, `B + 1` entries.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `bin_lo,bin_hi,count` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,count\n");
        for (b, c) in self.counts.iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", self.bin_edges[b], self.bin_edges[b + 1], c));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Equal-width histogram over `range` (default: min..max of the values).
/// Bins are half-open except the last, which includes its upper edge;
/// values outside the range are not counted. A degenerate default range is
/// widened to `value ± 0.5`.
pub fn uncertainty_histogram(values: &[f64], bins: usize, range: Option<(f64, f64)>) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::EmptyInput("histogram of no values"));
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let (mut lo, mut hi) = match range {
        Some(r) => r,
        None => values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v))),
    };
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::InvalidArgument(format!("invalid histogram range ({lo}, {hi})")));
    }
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let mut bin_edges: Vec<f64> = (0..=bins).map(|b| lo + b as f64 * width).collect();
    bin_edges[bins] = hi;

    let mut counts = vec![0u64; bins];
    for &v in values {
        if !(v >= lo && v <= hi) {
            continue;
        }
        // estimate, then settle against the stored edges
        let mut b = (((v - lo) / width) as usize).min(bins - 1);
        while b > 0 && v < bin_edges[b] {
            b -= 1;
        }
        while b + 1 < bins && v >= bin_edges[b + 1] {
            b += 1;
        }
        counts[b] += 1;
    }
    Ok(Histogram { bin_edges, counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointClass {
    /// Within `surface_eps` of some primitive boundary.
    Surface,
    /// Inside a primitive, deeper than `surface_eps`.
    Interior,
    /// In empty space, farther than `surface_eps` from every primitive.
    Artifact,
}

pub fn classify(gt: &GroundTruthField, x: &Vec3, surface_eps: f64) -> PointClass {
    let mut nearest = f64::INFINITY;
    let mut outside_all = true;
    for p in &gt.primitives {
        let d = p.signed_distance(x);
        nearest = nearest.min(d.abs());
        if d <= 0.0 {
            outside_all = false;
        }
    }
    if nearest <= surface_eps {
        PointClass::Surface
    } else if outside_all {
        PointClass::Artifact
    } else {
        PointClass::Interior
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub total: usize,
    pub surface: usize,
    pub interior: usize,
    pub artifact: usize,
}

impl ClassCounts {
    pub fn of(ps: &PointSet, gt: &GroundTruthField, surface_eps: f64) -> Self {
        ps.points
            .par_iter()
            .map(|p| classify(gt, &p.position, surface_eps))
            .fold(ClassCounts::default, |mut c, class| {
                c.add(class);
                c
            })
            .reduce(ClassCounts::default, |a, b| ClassCounts {
                total: a.total + b.total,
                surface: a.surface + b.surface,
                interior: a.interior + b.interior,
                artifact: a.artifact + b.artifact,
            })
    }

    fn add(&mut self, class: PointClass) {
        self.total += 1;
        match class {
            PointClass::Surface => self.surface += 1,
            PointClass::Interior => self.interior += 1,
            PointClass::Artifact => self.artifact += 1,
        }
    }

    pub fn artifact_fraction(&self) -> Option<f64> {
        (self.total > 0).then(|| self.artifact as f64 / self.total as f64)
    }
}

/// Artifact content of a kept/removed split, judged against the analytic
/// ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArtifactReport {
    pub surface_eps: f64,
    pub kept: ClassCounts,
    pub removed: ClassCounts,
    #[serde(with = "crate::export::sentinel::opt")]
    pub artifact_fraction_kept: Option<f64>,
    #[serde(with = "crate::export::sentinel::opt")]
    pub artifact_fraction_removed: Option<f64>,
    /// Share of all surface points that survived the filter.
    #[serde(with = "crate::export::sentinel::opt")]
    pub surface_recall_kept: Option<f64>,
    /// `artifact fraction in removed / artifact fraction in kept`; `None`
    /// ("n/a") when removed is empty or the ratio is 0/0, `+∞` when only the
    /// removed set holds artifacts.
    #[serde(with = "crate::export::sentinel::opt")]
    pub enrichment: Option<f64>,
}

pub fn artifact_metrics(kept: &PointSet, removed: &PointSet, gt: &GroundTruthField, surface_eps: f64) -> Result<ArtifactReport> {
    if !(surface_eps.is_finite() && surface_eps > 0.0) {
        return Err(Error::InvalidArgument(format!("surface_eps must be positive, got {surface_eps}")));
    }
    let k = ClassCounts::of(kept, gt, surface_eps);
    let r = ClassCounts::of(removed, gt, surface_eps);
    let fk = k.artifact_fraction();
    let fr = r.artifact_fraction();
    let enrichment = match (fr, fk) {
        (Some(fr), Some(fk)) if fk > 0.0 => Some(fr / fk),
        (Some(fr), Some(_)) if fr > 0.0 => Some(f64::INFINITY),
        (Some(fr), None) if fr > 0.0 => Some(f64::INFINITY),
        _ => None,
    };
    let surfaces = k.surface + r.surface;
    Ok(ArtifactReport {
        surface_eps,
        kept: k,
        removed: r,
        artifact_fraction_kept: fk,
        artifact_fraction_removed: fr,
        surface_recall_kept: (surfaces > 0).then(|| k.surface as f64 / surfaces as f64),
        enrichment,
    })
}

/// Artifact counts of each member's thresholded grid against the ensemble
/// mean's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub density_threshold: f64,
    pub surface_eps: f64,
    pub member_artifacts: Vec<usize>,
    pub member_points: Vec<usize>,
    pub ensemble_artifacts: usize,
    pub ensemble_points: usize,
}

impl RobustnessReport {
    /// Median member artifact count (mean of the middle pair for even M).
    pub fn median_member_artifacts(&self) -> f64 {
        let mut v = self.member_artifacts.clone();
        v.sort_unstable();
        let n = v.len();
        if n == 0 {
            return f64::NAN;
        }
        if n % 2 == 1 {
            v[n / 2] as f64
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2]) as f64
        }
    }
}

fn artifacts_above(values: &[f64], grid_pos: impl Fn(usize) -> Vec3 + Sync, threshold: f64, gt: &GroundTruthField, eps: f64) -> (usize, usize) {
    (0..values.len())
        .into_par_iter()
        .filter(|&n| values[n] > threshold)
        .map(|n| (1, usize::from(classify(gt, &grid_pos(n), eps) == PointClass::Artifact)))
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1))
}

pub fn robustness_compare(
    member_grids: &[DensityGrid],
    ensemble: &EnsembleGrid,
    density_threshold: f64,
    gt: &GroundTruthField,
    surface_eps: f64,
) -> Result<RobustnessReport> {
    if member_grids.len() < 2 {
        return Err(Error::InvalidArgument("robustness comparison needs at least 2 members".into()));
    }
    let mut member_points = Vec::with_capacity(member_grids.len());
    let mut member_artifacts = Vec::with_capacity(member_grids.len());
    for g in member_grids {
        let (pts, arts) = artifacts_above(&g.values, |n| g.position(n), density_threshold, gt, surface_eps);
        member_points.push(pts);
        member_artifacts.push(arts);
    }
    let (ensemble_points, ensemble_artifacts) =
        artifacts_above(&ensemble.mean, |n| ensemble.position(n), density_threshold, gt, surface_eps);
    Ok(RobustnessReport {
        density_threshold,
        surface_eps,
        member_artifacts,
        member_points,
        ensemble_artifacts,
        ensemble_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Primitive, Shape};
    use crate::ensemble::ensemble_stats;
    use crate::geometry::Cube;

    fn pts(unc: &[f64]) -> PointSet {
        PointSet {
            points: unc
                .iter()
                .enumerate()
                .map(|(i, &u)| Point {
                    position: Vec3::new(i as f64, 0.0, 0.0),
                    density: 20.0,
                    uncertainty: u,
                    rgb: None,
                })
                .collect(),
        }
    }

    #[test]
    fn ninetieth_percentile_of_one_to_ten() {
        let ps = pts(&(1..=10).map(|v| v as f64).collect::<Vec<_>>());
        let r = percentile_filter(&ps, 90.0).unwrap();
        assert!((r.threshold - 9.1).abs() < 1e-12);
        assert_eq!(r.kept.uncertainties(), (1..=9).map(|v| v as f64).collect::<Vec<_>>());
        assert_eq!(r.removed.uncertainties(), vec![10.0]);
    }

    #[test]
    fn ties_are_kept() {
        let ps = pts(&[2.5; 7]);
        for p in [1.0, 50.0, 90.0, 100.0] {
            let r = percentile_filter(&ps, p).unwrap();
            assert_eq!(r.threshold, 2.5);
            assert!(r.removed.is_empty());
        }
    }

    #[test]
    fn p100_removes_nothing() {
        let ps = pts(&[3.0, 1.0, 7.0, 0.5]);
        assert!(percentile_filter(&ps, 100.0).unwrap().removed.is_empty());
    }

    #[test]
    fn filter_errors() {
        assert!(matches!(percentile_filter(&PointSet::default(), 90.0), Err(Error::EmptyInput(_))));
        assert!(percentile_filter(&pts(&[1.0]), 0.0).is_err());
        assert!(percentile_filter(&pts(&[1.0]), 100.5).is_err());
    }

    #[test]
    fn histogram_basics() {
        let h = uncertainty_histogram(&[0.0, 1.0, 2.0, 3.0], 2, Some((0.0, 4.0))).unwrap();
        assert_eq!(h.counts, vec![2, 2]);
        assert_eq!(h.bin_edges, vec![0.0, 2.0, 4.0]);
        let h = uncertainty_histogram(&[1.7], 5, None).unwrap();
        assert_eq!(h.total(), 1);
        assert_eq!(h.counts.iter().filter(|&&c| c == 1).count(), 1);
        // last edge is inclusive
        let h = uncertainty_histogram(&[0.0, 1.0, 2.0], 2, None).unwrap();
        assert_eq!(h.counts, vec![1, 2]);
        assert!(uncertainty_histogram(&[], 2, None).is_err());
        assert!(uncertainty_histogram(&[1.0], 0, None).is_err());
        assert_eq!(h.to_csv(), "bin_lo,bin_hi,count\n0,1,1\n1,2,2\n");
    }

    fn unit_sphere() -> GroundTruthField {
        GroundTruthField::new(vec![Primitive {
            shape: Shape::Sphere { radius: 1.0 },
            center: [0.0; 3],
            density: 30.0,
            albedo: [0.5; 3],
        }])
        .unwrap()
    }

    fn at(x: f64, u: f64) -> Point {
        Point { position: Vec3::new(x, 0.0, 0.0), density: 20.0, uncertainty: u, rgb: None }
    }

    #[test]
    fn classification() {
        let gt = unit_sphere();
        assert_eq!(classify(&gt, &Vec3::new(1.05, 0.0, 0.0), 0.1), PointClass::Surface);
        assert_eq!(classify(&gt, &Vec3::new(0.95, 0.0, 0.0), 0.1), PointClass::Surface);
        assert_eq!(classify(&gt, &Vec3::new(0.2, 0.0, 0.0), 0.1), PointClass::Interior);
        assert_eq!(classify(&gt, &Vec3::new(1.5, 0.0, 0.0), 0.1), PointClass::Artifact);
    }

    #[test]
    fn enrichment_cases() {
        let gt = unit_sphere();
        let kept = PointSet { points: vec![at(1.0, 0.1), at(0.99, 0.1)] };
        let r = artifact_metrics(&kept, &PointSet::default(), &gt, 0.1).unwrap();
        assert_eq!(r.enrichment, None);

        let removed = PointSet { points: vec![at(2.0, 5.0), at(3.0, 5.0)] };
        let r = artifact_metrics(&kept, &removed, &gt, 0.1).unwrap();
        assert_eq!(r.artifact_fraction_removed, Some(1.0));
        assert_eq!(r.artifact_fraction_kept, Some(0.0));
        assert_eq!(r.enrichment, Some(f64::INFINITY));
        assert_eq!(r.surface_recall_kept, Some(1.0));

        let kept = PointSet { points: vec![at(1.0, 0.1), at(2.5, 0.2), at(1.02, 0.1), at(0.98, 0.1)] };
        let removed = PointSet { points: vec![at(2.0, 5.0), at(1.0, 5.0)] };
        let r = artifact_metrics(&kept, &removed, &gt, 0.1).unwrap();
        assert!((r.enrichment.unwrap() - 0.5 / 0.25).abs() < 1e-12);
        assert!((r.surface_recall_kept.unwrap() - 0.75).abs() < 1e-12);
        assert!(artifact_metrics(&kept, &removed, &gt, 0.0).is_err());
    }

    #[test]
    fn robustness_shapes() {
        let gt = unit_sphere();
        let bbox = Cube::new([-2.0; 3], 4.0).unwrap();
        let g = DensityGrid::new(bbox, 5, (0..125).map(|n| (n % 7) as f64 * 5.0).collect()).unwrap();
        let same = vec![g.clone(); 5];
        let eg = ensemble_stats(&same).unwrap();
        let rep = robustness_compare(&same, &eg, 15.0, &gt, 0.3).unwrap();
        assert_eq!(rep.member_artifacts.len(), 5);
        assert!(rep.member_artifacts.iter().all(|&c| c == rep.ensemble_artifacts));
        assert!(rep.ensemble_artifacts > 0);
        assert_eq!(rep.median_member_artifacts(), rep.ensemble_artifacts as f64);
        assert!(robustness_compare(&same[..1], &eg, 15.0, &gt, 0.3).is_err());
    }
}
