use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::Label;

/// Binary confusion counts with Infected as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_pos: usize,
    pub false_neg: usize,
    pub true_neg: usize,
    pub false_pos: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.true_pos + self.false_neg + self.true_neg + self.false_pos
    }

    /// The same counts with Healthy as the positive class.
    pub fn swapped(&self) -> Self {
        ConfusionMatrix {
            true_pos: self.true_neg,
            false_neg: self.false_pos,
            true_neg: self.true_pos,
            false_pos: self.false_neg,
        }
    }
}

pub fn confusion(predicted: &[Label], truth: &[Label]) -> Result<ConfusionMatrix> {
    if predicted.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (p, t) in predicted.iter().zip(truth) {
        match (t, p) {
            (Label::Infected, Label::Infected) => cm.true_pos += 1,
            (Label::Infected, Label::Healthy) => cm.false_neg += 1,
            (Label::Healthy, Label::Healthy) => cm.true_neg += 1,
            (Label::Healthy, Label::Infected) => cm.false_pos += 1,
        }
    }
    Ok(cm)
}

/// Which ratios had a zero denominator. Such ratios are reported as 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Undefined {
    pub sensitivity: bool,
    pub specificity: bool,
    pub precision: bool,
    pub f_score: bool,
}

impl Undefined {
    pub fn any(&self) -> bool {
        self.sensitivity || self.specificity || self.precision || self.f_score
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
    pub precision: f64,
    /// F1: harmonic mean of precision and sensitivity.
    pub f_score: f64,
    /// `1 - sensitivity`; undefined together with sensitivity.
    pub fnr: f64,
    pub counts: ConfusionMatrix,
    pub undefined: Undefined,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    if cm.total() == 0 {
        return Err(Error::invalid("cannot score an empty confusion matrix"));
    }
    let (sensitivity, u_sens) = ratio(cm.true_pos, cm.true_pos + cm.false_neg);
    let (specificity, u_spec) = ratio(cm.true_neg, cm.true_neg + cm.false_pos);
    let (precision, u_prec) = ratio(cm.true_pos, cm.true_pos + cm.false_pos);
    let (accuracy, _) = ratio(cm.true_pos + cm.true_neg, cm.total());
    let u_f = u_sens || u_prec || precision + sensitivity == 0.0;
    let f_score = if u_f {
        0.0
    } else {
        2.0 * precision * sensitivity / (precision + sensitivity)
    };
    Ok(MetricsReport {
        sensitivity,
        specificity,
        accuracy,
        precision,
        f_score,
        fnr: if u_sens { 0.0 } else { 1.0 - sensitivity },
        counts: *cm,
        undefined: Undefined {
            sensitivity: u_sens,
            specificity: u_spec,
            precision: u_prec,
            f_score: u_f,
        },
    })
}

impl MetricsReport {
    /// `(name, value)` for every scalar metric, in table order.
    pub fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("accuracy", self.accuracy),
            ("sensitivity", self.sensitivity),
            ("specificity", self.specificity),
            ("precision", self.precision),
            ("f_score", self.f_score),
            ("fnr", self.fnr),
        ]
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, v) in self.named() {
            writeln!(f, "{name:<12} {:>7.3} %", 100.0 * v)?;
        }
        let c = &self.counts;
        write!(
            f,
            "counts       tp {} fn {} tn {} fp {}",
            c.true_pos, c.false_neg, c.true_neg, c.false_pos
        )?;
        if self.undefined.any() {
            write!(f, "\nundefined    {:?}", self.undefined)?;
        }
        Ok(())
    }
}
