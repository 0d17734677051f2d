//! Hand-computed evaluation fixture shared by the eval and acceptance tests.
//!
//! Ten queries; q0–q5 have a true revisit (candidate `100 + q`), q6–q9 have
//! none. Predictions of 200 are wrong.
//!
//! | q | predicted | d    | at t = 0.5 |
//! |---|-----------|------|------------|
//! | 0 | 100       | 0.10 | TP         |
//! | 1 | 101       | 0.30 | TP         |
//! | 2 | 102       | 0.45 | TP         |
//! | 3 | 200       | 0.20 | FP         |
//! | 4 | 104       | 0.80 | FN         |
//! | 5 | 200       | 0.90 | FN         |
//! | 6 | 200       | 0.40 | FP         |
//! | 7 | 200       | 0.70 | TN         |
//! | 8 | 200       | 0.95 | TN         |
//! | 9 | 200       | 1.00 | TN         |
//!
//! Over thresholds {0.25, 0.5, 0.75, 1.0}:
//! t = 0.25: TP 1 FP 1 → P 1/2, R 1/6
//! t = 0.50: TP 3 FP 2 → P 3/5, R 1/2, F1 6/11 (the maximum)
//! t = 0.75: TP 3 FP 3 → P 1/2, R 1/2
//! t = 1.00: TP 4 FP 6 → P 2/5, R 2/3
//! AUC, trapezoids from recall 0 at the first precision:
//! 1/6·1/2 + 1/3·(3/5+1/2)/2 + 0 + 1/6·(2/5+1/2)/2 = 41/120.

#![allow(dead_code)]

use std::collections::BTreeSet;

use raplace_core::eval::{GroundTruthMode, Label, LoopGroundTruth, QueryOutcome, ThresholdSweep};

pub const TOL: f64 = 1e-12;

pub struct Expected {
    /// `(threshold, precision, recall)` ascending by recall.
    pub points: Vec<(f64, f64, f64)>,
    pub auc: f64,
    pub max_f1: f64,
    pub max_f1_threshold: f64,
    pub recall_at_1: f64,
    pub tp_detection_rate: f64,
    pub labels: [Label; 10],
}

pub fn ten_queries() -> (Vec<QueryOutcome>, LoopGroundTruth, ThresholdSweep) {
    let rows: [(usize, f64); 10] = [
        (100, 0.10),
        (101, 0.30),
        (102, 0.45),
        (200, 0.20),
        (104, 0.80),
        (200, 0.90),
        (200, 0.40),
        (200, 0.70),
        (200, 0.95),
        (200, 1.00),
    ];
    let outcomes = rows
        .iter()
        .enumerate()
        .map(|(query, &(predicted, d))| QueryOutcome { query, predicted, d })
        .collect();
    let gt = LoopGroundTruth {
        boundary_m: 20.0,
        mode: GroundTruthMode::Intra,
        pairs: (0..6).map(|q| (q, 100 + q)).collect::<BTreeSet<_>>(),
    };
    (outcomes, gt, ThresholdSweep::explicit(vec![0.25, 0.5, 0.75, 1.0]))
}

pub fn ten_queries_expected() -> Expected {
    use Label::*;
    Expected {
        points: vec![
            (0.25, 0.5, 1.0 / 6.0),
            (0.5, 0.6, 0.5),
            (0.75, 0.5, 0.5),
            (1.0, 0.4, 2.0 / 3.0),
        ],
        auc: 41.0 / 120.0,
        max_f1: 6.0 / 11.0,
        max_f1_threshold: 0.5,
        recall_at_1: 4.0 / 6.0,
        tp_detection_rate: 3.0 / 5.0,
        labels: [TP, TP, TP, FP, FN, FN, FP, TN, TN, TN],
    }
}

/// Every revisit found with a smaller distance than any non-revisit.
pub fn perfect_classifier() -> (Vec<QueryOutcome>, LoopGroundTruth, ThresholdSweep) {
    let mut outcomes = Vec::new();
    let mut pairs = BTreeSet::new();
    for q in 0..8 {
        if q % 2 == 0 {
            pairs.insert((q, 50 + q));
            outcomes.push(QueryOutcome {
                query: q,
                predicted: 50 + q,
                d: 0.1 + 0.01 * q as f64,
            });
        } else {
            outcomes.push(QueryOutcome {
                query: q,
                predicted: 99,
                d: 0.8 + 0.01 * q as f64,
            });
        }
    }
    let gt = LoopGroundTruth {
        boundary_m: 20.0,
        mode: GroundTruthMode::Intra,
        pairs,
    };
    (outcomes, gt, ThresholdSweep::default())
}

/// Largest absolute deviation of the report from `Expected`, or a
/// description of a structural mismatch.
pub fn fixture_error(report: &raplace_core::eval::EvalReport, want: &Expected) -> Result<f64, String> {
    if report.pr_points.len() != want.points.len() {
        return Err(format!("{} PR points, want {}", report.pr_points.len(), want.points.len()));
    }
    let labels: Vec<Label> = report.records.iter().map(|r| r.label).collect();
    if labels != want.labels {
        return Err(format!("labels {labels:?}"));
    }
    let mut err: f64 = 0.0;
    for (p, &(t, pr, rc)) in report.pr_points.iter().zip(&want.points) {
        err = err
            .max((p.threshold - t).abs())
            .max((p.precision - pr).abs())
            .max((p.recall - rc).abs());
    }
    let opt = |v: Option<f64>| v.unwrap_or(f64::NAN);
    for (got, w) in [
        (report.auc, want.auc),
        (report.max_f1, want.max_f1),
        (opt(report.max_f1_threshold), want.max_f1_threshold),
        (opt(report.recall_at_1), want.recall_at_1),
        (opt(report.tp_detection_rate), want.tp_detection_rate),
    ] {
        let e = (got - w).abs();
        if e.is_nan() {
            return Err(format!("undefined metric, want {w}"));
        }
        err = err.max(e);
    }
    Ok(err)
}
