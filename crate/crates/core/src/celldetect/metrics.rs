use serde::Serialize;

use crate::error::{Error, Result};

use super::CircleHit;

/// Detection scored against ground truth.
///
/// `paper_ratio` is the literal `(FP + FN) / (TP + FP)`, kept next to the
/// standard precision and recall for comparison with published figures.
/// Undefined ratios (zero denominator) are reported as 0 with the matching
/// `*_defined` flag cleared.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub precision: f64,
    pub recall: f64,
    pub paper_ratio: f64,
    pub precision_defined: bool,
    pub recall_defined: bool,
    pub ratio_defined: bool,
}

impl DetectionReport {
    pub fn from_counts(true_pos: usize, false_pos: usize, false_neg: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                (0.0, false)
            } else {
                (num as f64 / den as f64, true)
            }
        };
        let (precision, precision_defined) = ratio(true_pos, true_pos + false_pos);
        let (recall, recall_defined) = ratio(true_pos, true_pos + false_neg);
        let (paper_ratio, ratio_defined) = ratio(false_pos + false_neg, true_pos + false_pos);
        DetectionReport {
            true_pos,
            false_pos,
            false_neg,
            precision,
            recall,
            paper_ratio,
            precision_defined,
            recall_defined,
            ratio_defined,
        }
    }

    /// Sums counts over several reports and recomputes the ratios.
    pub fn pooled<'a>(reports: impl IntoIterator<Item = &'a DetectionReport>) -> Self {
        let (mut tp, mut fp, mut fneg) = (0, 0, 0);
        for r in reports {
            tp += r.true_pos;
            fp += r.false_pos;
            fneg += r.false_neg;
        }
        Self::from_counts(tp, fp, fneg)
    }
}

/// Greedy one-to-one matching by ascending center distance. A pair is
/// eligible when both the center distance and `|dr|` are within `tol`.
/// Returns `(pred_index, truth_index)` pairs.
pub fn match_circles(pred: &[CircleHit], truth: &[CircleHit], tol: f64) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            let d = (p.cx - t.cx).hypot(p.cy - t.cy);
            let dr = (p.r - t.r).abs();
            if d <= tol && dr <= tol {
                pairs.push((d, dr, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut pred_used = vec![false; pred.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut matched = Vec::new();
    for (_, _, i, j) in pairs {
        if !pred_used[i] && !truth_used[j] {
            pred_used[i] = true;
            truth_used[j] = true;
            matched.push((i, j));
        }
    }
    matched
}

pub fn detection_metrics(pred: &[CircleHit], truth: &[CircleHit], match_tol: f64) -> Result<DetectionReport> {
    if !(match_tol > 0.0) {
        return Err(Error::invalid(format!("match_tol must be > 0, got {match_tol}")));
    }
    let tp = match_circles(pred, truth, match_tol).len();
    Ok(DetectionReport::from_counts(tp, pred.len() - tp, truth.len() - tp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(cx: f64, cy: f64, r: f64) -> CircleHit {
        CircleHit { cx, cy, r, votes: 1.0 }
    }

    #[test]
    fn perfect_match() {
        let t = vec![c(10.0, 10.0, 12.0), c(50.0, 40.0, 20.0)];
        let rep = detection_metrics(&t, &t, 5.0).unwrap();
        assert_eq!((rep.precision, rep.recall, rep.paper_ratio), (1.0, 1.0, 0.0));
    }

    #[test]
    fn arithmetic_from_counts() {
        let rep = DetectionReport::from_counts(95, 2, 3);
        assert!((rep.precision - 95.0 / 97.0).abs() < 1e-15);
        assert!((rep.precision - 0.9794).abs() < 1e-4);
        // 95 / (95 + 3)
        assert!((rep.recall - 95.0 / 98.0).abs() < 1e-15);
        assert!((rep.paper_ratio - 5.0 / 97.0).abs() < 1e-15);
        assert!((rep.paper_ratio - 0.0515).abs() < 1e-4);
    }

    #[test]
    fn empty_predictions_flagged() {
        let rep = detection_metrics(&[], &[c(1.0, 1.0, 12.0)], 5.0).unwrap();
        assert_eq!(rep.precision, 0.0);
        assert!(!rep.precision_defined);
        assert_eq!(rep.recall, 0.0);
        assert!(rep.recall_defined);
        assert_eq!(rep.false_neg, 1);
        assert!(detection_metrics(&[], &[], 0.0).is_err());
    }

    #[test]
    fn radius_tolerance_applies() {
        let rep = detection_metrics(&[c(0.0, 0.0, 20.0)], &[c(1.0, 0.0, 26.0)], 5.0).unwrap();
        assert_eq!(rep.true_pos, 0);
    }

    #[test]
    fn greedy_prefers_nearest() {
        let pred = vec![c(0.0, 0.0, 15.0), c(3.0, 0.0, 15.0)];
        let truth = vec![c(2.5, 0.0, 15.0)];
        assert_eq!(match_circles(&pred, &truth, 5.0), vec![(1, 0)]);
    }

    proptest! {
        #[test]
        fn tp_symmetric(
            a in proptest::collection::vec((0.0f64..100.0, 0.0f64..100.0, 12.0f64..30.0), 0..25),
            b in proptest::collection::vec((0.0f64..100.0, 0.0f64..100.0, 12.0f64..30.0), 0..25),
        ) {
            let a: Vec<_> = a.into_iter().map(|(x, y, r)| c(x, y, r)).collect();
            let b: Vec<_> = b.into_iter().map(|(x, y, r)| c(x, y, r)).collect();
            let ab = detection_metrics(&a, &b, 5.0).unwrap();
            let ba = detection_metrics(&b, &a, 5.0).unwrap();
            prop_assert_eq!(ab.true_pos, ba.true_pos);
            prop_assert_eq!(ab.false_pos, ba.false_neg);
        }
    }
}
