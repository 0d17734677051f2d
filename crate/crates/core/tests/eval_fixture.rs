mod common;

use common::*;
use raplace_core::eval::{evaluate, pr_csv, Label};

#[test]
fn ten_query_fixture_is_reproduced() {
    let (outcomes, gt, sweep) = ten_queries();
    let report = evaluate(&outcomes, &gt, &sweep).unwrap();
    let err = fixture_error(&report, &ten_queries_expected()).unwrap();
    assert!(err <= TOL, "deviation {err:e}");
    assert_eq!(report.covered_queries, 6);
    assert_eq!(report.count(Label::TP), 3);
    assert_eq!(report.count(Label::FN), 2);
    // one header plus one row per point
    assert_eq!(pr_csv(&report).lines().count(), 5);
}

#[test]
fn order_of_outcomes_does_not_matter() {
    let (mut outcomes, gt, sweep) = ten_queries();
    let a = evaluate(&outcomes, &gt, &sweep).unwrap();
    outcomes.reverse();
    let b = evaluate(&outcomes, &gt, &sweep).unwrap();
    assert_eq!(a.pr_points, b.pr_points);
    assert_eq!(a.auc, b.auc);
    assert_eq!(a.max_f1_threshold, b.max_f1_threshold);
}

#[test]
fn perfect_classifier_has_unit_auc() {
    let (outcomes, gt, sweep) = perfect_classifier();
    let report = evaluate(&outcomes, &gt, &sweep).unwrap();
    assert!((report.auc - 1.0).abs() <= TOL, "{}", report.auc);
    assert_eq!(report.max_f1, 1.0);
    assert_eq!(report.recall_at_1, Some(1.0));
    assert_eq!(report.tp_detection_rate, Some(1.0));
}
