//! Scoring retrieval output against pose ground truth.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::descriptor::make_descriptor;
use crate::error::{Error, Result};
use crate::ingest::{PolarScan, PoseRecord};
use crate::matcher::{ScoreMode, Scorer};
use crate::radon::radon_transform;
use crate::warp::{backward_warp, CartesianImage, GridSpec};

pub const DEFAULT_BOUNDARY_M: f64 = 20.0;
pub const DEFAULT_THRESHOLD_COUNT: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruthMode {
    /// One session: a frame revisits an earlier frame outside the exclusion window.
    #[default]
    Intra,
    /// Frames from different sessions; every close pair counts, both ways.
    Multi,
}

/// Revisit pairs `(query, candidate)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopGroundTruth {
    pub boundary_m: f64,
    pub mode: GroundTruthMode,
    pub pairs: BTreeSet<(usize, usize)>,
}

impl LoopGroundTruth {
    pub fn contains(&self, query: usize, candidate: usize) -> bool {
        self.pairs.contains(&(query, candidate))
    }

    /// Queries that have at least one true revisit.
    pub fn covered_queries(&self) -> HashSet<usize> {
        self.pairs.iter().map(|&(q, _)| q).collect()
    }
}

fn check_boundary(boundary_m: f64) -> Result<()> {
    if !(boundary_m >= 0.0 && boundary_m.is_finite()) {
        return Err(Error::Parameter(format!("boundary must be non-negative, got {boundary_m}")));
    }
    Ok(())
}

/// Pairs of frames of one pose list lying within `boundary_m` of each other.
///
/// In intra mode only `(i, j)` with `j < i - exclusion_window` are kept, so a
/// query is matched against frames recorded before it.
pub fn build_ground_truth(
    poses: &[PoseRecord],
    boundary_m: f64,
    mode: GroundTruthMode,
    exclusion_window: usize,
) -> Result<LoopGroundTruth> {
    if poses.is_empty() {
        return Err(Error::Parameter("ground truth needs at least one pose".into()));
    }
    check_boundary(boundary_m)?;
    let mut pairs = BTreeSet::new();
    for (i, a) in poses.iter().enumerate() {
        for (j, b) in poses.iter().enumerate() {
            let keep = match mode {
                GroundTruthMode::Intra => j < i && i - j > exclusion_window,
                GroundTruthMode::Multi => i != j,
            };
            if keep && a.distance_to(b) <= boundary_m {
                pairs.insert((i, j));
            }
        }
    }
    Ok(LoopGroundTruth {
        boundary_m,
        mode,
        pairs,
    })
}

/// Pairs `(query frame, database frame)` across two sessions.
pub fn build_ground_truth_sessions(
    query_poses: &[PoseRecord],
    db_poses: &[PoseRecord],
    boundary_m: f64,
) -> Result<LoopGroundTruth> {
    if query_poses.is_empty() || db_poses.is_empty() {
        return Err(Error::Parameter("ground truth needs poses for both sessions".into()));
    }
    check_boundary(boundary_m)?;
    let mut pairs = BTreeSet::new();
    for (i, a) in query_poses.iter().enumerate() {
        for (j, b) in db_poses.iter().enumerate() {
            if a.distance_to(b) <= boundary_m {
                pairs.insert((i, j));
            }
        }
    }
    Ok(LoopGroundTruth {
        boundary_m,
        mode: GroundTruthMode::Multi,
        pairs,
    })
}

/// Retrieval output for one query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query: usize,
    pub predicted: usize,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdSweep {
    /// Evenly spaced thresholds from 0 to `max` (or the largest observed distance).
    pub count: usize,
    pub max: Option<f64>,
    /// Explicit thresholds; override `count` when non-empty.
    pub values: Vec<f64>,
}

impl Default for ThresholdSweep {
    fn default() -> Self {
        Self {
            count: DEFAULT_THRESHOLD_COUNT,
            max: None,
            values: Vec::new(),
        }
    }
}

impl ThresholdSweep {
    pub fn explicit(values: Vec<f64>) -> Self {
        Self {
            count: 0,
            max: None,
            values,
        }
    }

    pub fn thresholds(&self, observed_max: f64) -> Result<Vec<f64>> {
        if !self.values.is_empty() {
            let mut v = self.values.clone();
            if v.iter().any(|t| !t.is_finite()) {
                return Err(Error::Parameter("thresholds must be finite".into()));
            }
            v.sort_by(f64::total_cmp);
            return Ok(v);
        }
        match self.count {
            0 => Err(Error::Parameter("threshold sweep is empty".into())),
            1 => Ok(vec![self.max.unwrap_or(observed_max)]),
            n => {
                let top = self.max.unwrap_or(observed_max);
                Ok((0..n).map(|k| top * k as f64 / (n - 1) as f64).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    TP,
    FP,
    FN,
    TN,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query: usize,
    pub predicted: usize,
    pub d: f64,
    /// Whether `(query, predicted)` is a true revisit.
    pub correct: bool,
    /// Outcome at the max-F1 threshold.
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Points with defined precision and recall, ascending by recall.
    pub pr_points: Vec<PrPoint>,
    pub auc: f64,
    /// False when no query has a true revisit; precision/recall metrics are then empty.
    pub recall_defined: bool,
    pub max_f1: f64,
    pub max_f1_threshold: Option<f64>,
    /// Computed over queries that have at least one true revisit.
    pub recall_at_1: Option<f64>,
    /// `TP / (TP + FN)` at the max-F1 threshold.
    pub tp_detection_rate: Option<f64>,
    pub covered_queries: usize,
    pub records: Vec<QueryRecord>,
}

impl EvalReport {
    pub fn f1_curve(&self) -> Vec<(f64, f64)> {
        self.pr_points.iter().map(|p| (p.f1, p.recall)).collect()
    }

    pub fn count(&self, label: Label) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Area under `(recall, precision)` points sorted by recall, extended to
/// recall 0 at the precision of the first point.
pub fn pr_auc(points: &[PrPoint]) -> f64 {
    let Some(first) = points.first() else {
        return 0.0;
    };
    let mut area = 0.0;
    let (mut r0, mut p0) = (0.0, first.precision);
    for p in points {
        area += (p.recall - r0) * (p.precision + p0) / 2.0;
        r0 = p.recall;
        p0 = p.precision;
    }
    area
}

pub fn evaluate(outcomes: &[QueryOutcome], gt: &LoopGroundTruth, sweep: &ThresholdSweep) -> Result<EvalReport> {
    let observed_max = outcomes.iter().map(|o| o.d).fold(0.0, f64::max);
    let thresholds = sweep.thresholds(observed_max)?;
    let covered = gt.covered_queries();
    let n_covered = outcomes.iter().filter(|o| covered.contains(&o.query)).count();
    let recall_defined = n_covered > 0;
    let correct: Vec<bool> = outcomes.iter().map(|o| gt.contains(o.query, o.predicted)).collect();

    let mut points = Vec::new();
    for &t in &thresholds {
        let (mut tp, mut fp) = (0usize, 0usize);
        for (o, &ok) in outcomes.iter().zip(&correct) {
            if o.d <= t {
                if ok {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        if tp + fp == 0 || !recall_defined {
            continue;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / n_covered as f64;
        points.push(PrPoint {
            threshold: t,
            precision,
            recall,
            f1: f1(precision, recall),
        });
    }
    points.sort_by(|a, b| {
        a.recall
            .total_cmp(&b.recall)
            .then(b.precision.total_cmp(&a.precision))
            .then(a.threshold.total_cmp(&b.threshold))
    });
    let auc = pr_auc(&points);

    let best = points
        .iter()
        .copied()
        .reduce(|a, b| if b.f1 > a.f1 || (b.f1 == a.f1 && b.threshold < a.threshold) { b } else { a });
    let cut = best.map(|p| p.threshold).unwrap_or(f64::NEG_INFINITY);
    let records: Vec<QueryRecord> = outcomes
        .iter()
        .zip(&correct)
        .map(|(o, &ok)| {
            let label = match (o.d <= cut, ok, covered.contains(&o.query)) {
                (true, true, _) => Label::TP,
                (true, false, _) => Label::FP,
                (false, _, true) => Label::FN,
                (false, _, false) => Label::TN,
            };
            QueryRecord {
                query: o.query,
                predicted: o.predicted,
                d: o.d,
                correct: ok,
                label,
            }
        })
        .collect();

    let recall_at_1 = recall_defined.then(|| {
        outcomes
            .iter()
            .zip(&correct)
            .filter(|(o, &ok)| ok && covered.contains(&o.query))
            .count() as f64
            / n_covered as f64
    });
    let tp_detection_rate = best.map(|_| {
        let tp = records.iter().filter(|r| r.label == Label::TP).count();
        let fn_ = records.iter().filter(|r| r.label == Label::FN).count();
        if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        }
    });

    Ok(EvalReport {
        auc,
        recall_defined,
        max_f1: best.map(|p| p.f1).unwrap_or(0.0),
        max_f1_threshold: best.map(|p| p.threshold),
        recall_at_1,
        tp_detection_rate,
        covered_queries: n_covered,
        pr_points: points,
        records,
    })
}

pub fn pr_csv(report: &EvalReport) -> String {
    let mut out = String::from("threshold,precision,recall,f1\n");
    for p in &report.pr_points {
        let _ = writeln!(out, "{},{},{},{}", p.threshold, p.precision, p.recall, p.f1);
    }
    out
}

fn labelled<'a>(report: &'a EvalReport, poses: &'a [PoseRecord]) -> Result<Vec<(&'a PoseRecord, Label)>> {
    report
        .records
        .iter()
        .filter(|r| r.label != Label::TN)
        .map(|r| {
            poses
                .get(r.query)
                .map(|p| (p, r.label))
                .ok_or(Error::Index {
                    index: r.query,
                    len: poses.len(),
                })
        })
        .collect()
}

/// `x,y,label` rows for every TP, FN and FP query.
pub fn tp_trajectory_csv(report: &EvalReport, poses: &[PoseRecord]) -> Result<String> {
    let mut out = String::from("x,y,label\n");
    for (p, label) in labelled(report, poses)? {
        let _ = writeln!(out, "{},{},{:?}", p.x, p.y, label);
    }
    Ok(out)
}

/// Scatter plot of the trajectory with labelled queries.
pub fn tp_trajectory_svg(report: &EvalReport, poses: &[PoseRecord]) -> Result<String> {
    let points = labelled(report, poses)?;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in poses {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    if poses.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let span = (x1 - x0).max(y1 - y0).max(1.0);
    let size = 600.0;
    let pad = 20.0;
    let sx = |x: f64| pad + (x - x0) / span * (size - 2.0 * pad);
    let sy = |y: f64| size - pad - (y - y0) / span * (size - 2.0 * pad);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n"
    );
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<polyline fill=\"none\" stroke=\"#999\" stroke-width=\"1\" points=\"");
    for p in poses {
        let _ = write!(svg, "{:.2},{:.2} ", sx(p.x), sy(p.y));
    }
    svg.push_str("\"/>\n");
    for (p, label) in points {
        let color = match label {
            Label::TP => "#1a9641",
            Label::FN => "#d7191c",
            _ => "#fdae61",
        };
        let _ = writeln!(
            svg,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"><title>{label:?}</title></circle>",
            sx(p.x),
            sy(p.y)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Writes the TP trajectory as CSV, or as SVG when `path` ends in `.svg`.
pub fn export_tp_trajectory(report: &EvalReport, poses: &[PoseRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let body = if path.extension().is_some_and(|e| e == "svg") {
        tp_trajectory_svg(report, poses)?
    } else {
        tp_trajectory_csv(report, poses)?
    };
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensitivityConfig {
    /// Side of the compared crops, in pixels (odd).
    pub crop_side: usize,
    pub meters_per_pixel: f64,
    pub n_theta: usize,
    pub score_mode: ScoreMode,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            crop_side: 201,
            meters_per_pixel: 1.0,
            n_theta: crate::radon::DEFAULT_N_THETA,
            score_mode: ScoreMode::Raw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "amount", rename_all = "snake_case")]
pub enum Transform {
    RotationDeg(f64),
    TranslateXPx(isize),
    TranslateYPx(isize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub transform: Transform,
    pub d: f64,
    /// `d` over the unrelated-place threshold; below 1 means still recognized.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    /// Distance between the query and a scan of an unrelated place.
    pub threshold: f64,
    pub points: Vec<SensitivityPoint>,
}

impl SensitivityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("transform,amount,d,normalized\n");
        for p in &self.points {
            let (kind, amount) = match p.transform {
                Transform::RotationDeg(v) => ("rotation_deg", v),
                Transform::TranslateXPx(v) => ("translate_x_px", v as f64),
                Transform::TranslateYPx(v) => ("translate_y_px", v as f64),
            };
            let _ = writeln!(out, "{kind},{amount},{},{}", p.d, p.normalized);
        }
        out
    }
}

/// Distance curves for rotated and translated virtual candidates.
///
/// The sweep is warped onto a grid large enough that every rotated or
/// shifted crop is filled with real data; the query is the centered crop.
/// Translations shift the crop window along `x` and then along `y`.
pub fn sensitivity_sweep(
    scan: &PolarScan,
    unrelated: &PolarScan,
    rotations_deg: &[f64],
    translations_px: &[isize],
    cfg: &SensitivityConfig,
) -> Result<SensitivityReport> {
    let max_shift = translations_px.iter().map(|t| t.unsigned_abs()).max().unwrap_or(0);
    let mut full_side = (cfg.crop_side as f64 * std::f64::consts::SQRT_2).ceil() as usize + 2 * max_shift + 2;
    if full_side % 2 == 0 {
        full_side += 1;
    }
    let grid = GridSpec::new(full_side, cfg.meters_per_pixel)?;
    let full = backward_warp(scan, &grid)?;
    let other = backward_warp(unrelated, &grid)?.crop(cfg.crop_side, 0, 0)?;

    let describe = |img: &CartesianImage| -> Result<_> { Ok(make_descriptor(&radon_transform(img, cfg.n_theta)?, 0)) };
    let query = describe(&full.crop(cfg.crop_side, 0, 0)?)?;
    let scorer = Scorer::new(query.n_l());
    let prepared = scorer.prepare(&query, cfg.score_mode)?;
    let mut scratch = scorer.scratch();
    let mut distance = |img: &CartesianImage| -> Result<f64> {
        Ok(scorer.score(&prepared, &describe(img)?.half_spectrum(), &mut scratch).d)
    };

    let threshold = distance(&other)?;
    if !(threshold > 0.0) {
        return Err(Error::Parameter("unrelated reference is indistinguishable from the query".into()));
    }
    let mut points = Vec::new();
    for &deg in rotations_deg {
        let d = distance(&full.rotated(deg.to_radians()).crop(cfg.crop_side, 0, 0)?)?;
        points.push(SensitivityPoint {
            transform: Transform::RotationDeg(deg),
            d,
            normalized: d / threshold,
        });
    }
    for (axis, make) in [
        (0, Transform::TranslateXPx as fn(isize) -> Transform),
        (1, Transform::TranslateYPx as fn(isize) -> Transform),
    ] {
        for &t in translations_px {
            let (dx, dy) = if axis == 0 { (t, 0) } else { (0, t) };
            let d = distance(&full.crop(cfg.crop_side, dx, dy)?)?;
            points.push(SensitivityPoint {
                transform: make(t),
                d,
                normalized: d / threshold,
            });
        }
    }
    Ok(SensitivityReport { threshold, points })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose(i: i64, x: f64, y: f64) -> PoseRecord {
        PoseRecord::new(i, x, y, 0.0)
    }

    #[test]
    fn boundary_examples() {
        let poses = [pose(0, 0.0, 0.0), pose(1, 25.0, 0.0)];
        let gt = build_ground_truth(&poses, 20.0, GroundTruthMode::Multi, 0).unwrap();
        assert!(gt.pairs.is_empty());
        let gt = build_ground_truth_sessions(&poses[..1], &poses[1..], 50.0).unwrap();
        assert_eq!(gt.pairs.len(), 1);
        assert!(matches!(
            build_ground_truth(&[], 20.0, GroundTruthMode::Intra, 0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn intra_pairs_match_brute_force() {
        let path = crate::synth::square_loop(30.0, 8);
        let poses: Vec<_> = path.iter().enumerate().map(|(i, p)| pose(i as i64, p.x, p.y)).collect();
        let gt = build_ground_truth(&poses, 10.0, GroundTruthMode::Intra, 5).unwrap();
        let mut want = BTreeSet::new();
        for i in 0..poses.len() {
            for j in 0..poses.len() {
                let d = ((poses[i].x - poses[j].x).powi(2) + (poses[i].y - poses[j].y).powi(2)).sqrt();
                if j + 5 < i && d <= 10.0 {
                    want.insert((i, j));
                }
            }
        }
        assert_eq!(gt.pairs, want);
        assert!(gt.contains(32, 0));
    }

    fn gt_from(pairs: &[(usize, usize)]) -> LoopGroundTruth {
        LoopGroundTruth {
            boundary_m: 20.0,
            mode: GroundTruthMode::Intra,
            pairs: pairs.iter().copied().collect(),
        }
    }

    #[test]
    fn perfect_classifier() {
        let gt = gt_from(&[(0, 10), (1, 11), (2, 12)]);
        let out: Vec<_> = (0..3)
            .map(|q| QueryOutcome {
                query: q,
                predicted: q + 10,
                d: 0.0,
            })
            .collect();
        let r = evaluate(&out, &gt, &ThresholdSweep::explicit(vec![0.0, 0.5, 1.0])).unwrap();
        assert!(r.pr_points.iter().all(|p| p.precision == 1.0 && p.recall == 1.0));
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.recall_at_1, Some(1.0));
        assert_eq!(r.max_f1, 1.0);
    }

    #[test]
    fn no_ground_truth_is_flagged() {
        let gt = gt_from(&[]);
        let out = [QueryOutcome {
            query: 0,
            predicted: 1,
            d: 0.3,
        }];
        let r = evaluate(&out, &gt, &ThresholdSweep::default()).unwrap();
        assert!(!r.recall_defined);
        assert!(r.pr_points.is_empty());
        assert_eq!(r.auc, 0.0);
        assert_eq!(r.recall_at_1, None);
        assert!(matches!(
            evaluate(&out, &gt, &ThresholdSweep::explicit(vec![]).with_count(0)),
            Err(Error::Parameter(_))
        ));
    }

    impl ThresholdSweep {
        fn with_count(mut self, n: usize) -> Self {
            self.count = n;
            self
        }
    }

    #[test]
    fn recall_is_monotone_in_threshold() {
        let gt = gt_from(&[(0, 5), (1, 6), (2, 7), (3, 8)]);
        let out: Vec<_> = (0..8)
            .map(|q| QueryOutcome {
                query: q,
                predicted: if q % 2 == 0 { q + 5 } else { 0 },
                d: q as f64 * 0.37 % 1.0,
            })
            .collect();
        let r = evaluate(&out, &gt, &ThresholdSweep::default()).unwrap();
        let mut by_t = r.pr_points.clone();
        by_t.sort_by(|a, b| a.threshold.total_cmp(&b.threshold));
        assert!(by_t.windows(2).all(|w| w[0].recall <= w[1].recall));
        assert!(r.pr_points.windows(2).all(|w| w[0].recall <= w[1].recall));
        for p in &r.pr_points {
            assert!((0.0..=1.0).contains(&p.precision) && (0.0..=1.0).contains(&p.recall));
        }
    }

    #[test]
    fn trajectory_exports() {
        let gt = gt_from(&[(0, 3), (1, 4)]);
        let out = [
            QueryOutcome { query: 0, predicted: 3, d: 0.1 },
            QueryOutcome { query: 1, predicted: 2, d: 0.9 },
            QueryOutcome { query: 2, predicted: 0, d: 0.2 },
        ];
        let r = evaluate(&out, &gt, &ThresholdSweep::explicit(vec![0.15])).unwrap();
        let poses: Vec<_> = (0..5).map(|i| pose(i, i as f64, 0.0)).collect();
        let csv = tp_trajectory_csv(&r, &poses).unwrap();
        assert_eq!(csv, "x,y,label\n0,0,TP\n1,0,FN\n");
        let empty = EvalReport {
            records: vec![],
            ..r.clone()
        };
        assert_eq!(tp_trajectory_csv(&empty, &poses).unwrap(), "x,y,label\n");
        assert!(tp_trajectory_svg(&r, &poses).unwrap().contains("<circle"));
    }
}
