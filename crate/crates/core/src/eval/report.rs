//! Experiment reports.
//!
//! A [`CvReport`] serialises to TOML with this schema:
//!
//! ```text
//! architecture = "vgg-s"
//! protocol = "kfold" | "holdout"
//! folds_requested = 5
//! seed = 7
//! [train]   TrainConfig fields
//! [mean]    accuracy, sensitivity, specificity, precision, f_score, fnr
//! [std]     same keys, sample standard deviation over scored folds
//! [[folds]] fold_index, n_train, n_val, n_test, epochs_run, best_epoch,
//!           optional error, optional [folds.metrics] (MetricsReport)
//! ```

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::TrainConfig;

use super::MetricsReport;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f_score: f64,
    pub fnr: f64,
}

impl MetricSummary {
    fn reduce(reports: &[&MetricsReport], std: bool) -> Self {
        let n = reports.len();
        let rows: Vec<[f64; 6]> = reports.iter().map(|r| r.named().map(|(_, v)| v)).collect();
        let mut out = [0.0; 6];
        for (j, o) in out.iter_mut().enumerate() {
            if n == 0 || (std && n < 2) {
                continue;
            }
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            *o = if std {
                (rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                mean
            };
        }
        let [accuracy, sensitivity, specificity, precision, f_score, fnr] = out;
        MetricSummary { accuracy, sensitivity, specificity, precision, f_score, fnr }
    }

    pub fn mean_of(reports: &[&MetricsReport]) -> Self {
        Self::reduce(reports, false)
    }

    /// Sample standard deviation (n - 1); 0 for fewer than two reports.
    pub fn std_of(reports: &[&MetricsReport]) -> Self {
        Self::reduce(reports, true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_index: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub architecture: String,
    pub protocol: String,
    pub folds_requested: usize,
    pub seed: u64,
    pub train: TrainConfig,
    pub mean: MetricSummary,
    pub std: MetricSummary,
    pub folds: Vec<FoldResult>,
}

impl CvReport {
    /// Fills `mean` and `std` from the scored folds.
    pub(crate) fn aggregate(&mut self) {
        let scored: Vec<&MetricsReport> = self.folds.iter().filter_map(|f| f.metrics.as_ref()).collect();
        self.mean = MetricSummary::mean_of(&scored);
        self.std = MetricSummary::std_of(&scored);
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("serialising report: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("report: {e}")))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

const COLUMNS: [&str; 6] = ["acc", "sens", "spec", "prec", "F1", "FNR"];

fn pct_row(f: &mut fmt::Formatter<'_>, head: &str, v: &MetricSummary) -> fmt::Result {
    write!(f, "{head:<8}{:>7}", "")?;
    for x in [v.accuracy, v.sensitivity, v.specificity, v.precision, v.f_score, v.fnr] {
        write!(f, " {:>7.2}", 100.0 * x)?;
    }
    writeln!(f)
}

impl fmt::Display for CvReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} | {} | seed {} | epochs {} lr {} batch {}",
            self.architecture,
            self.protocol,
            self.seed,
            self.train.epochs,
            self.train.learning_rate,
            self.train.batch_size
        )?;
        write!(f, "{:<8}{:>7}", "fold", "n_test")?;
        for c in COLUMNS {
            write!(f, " {c:>7}")?;
        }
        writeln!(f)?;
        for fold in &self.folds {
            write!(f, "{:<8}{:>7}", fold.fold_index, fold.n_test)?;
            match (&fold.metrics, &fold.error) {
                (Some(m), _) => {
                    for (_, v) in m.named() {
                        write!(f, " {:>7.2}", 100.0 * v)?;
                    }
                    writeln!(f)?;
                }
                (None, e) => writeln!(f, " failed: {}", e.as_deref().unwrap_or("unknown"))?,
            }
        }
        pct_row(f, "mean", &self.mean)?;
        pct_row(f, "std", &self.std)
    }
}

/// Several architectures scored on the same folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub runs: Vec<CvReport>,
}

impl ComparisonReport {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("serialising comparison: {e}")))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "false-negative rate per fold (%)")?;
        write!(f, "{:<8}", "fold")?;
        for r in &self.runs {
            write!(f, " {:>12}", r.architecture)?;
        }
        writeln!(f)?;
        let folds = self.runs.iter().map(|r| r.folds.len()).max().unwrap_or(0);
        for i in 0..folds {
            write!(f, "{i:<8}")?;
            for r in &self.runs {
                match r.folds.get(i).and_then(|x| x.metrics.as_ref()) {
                    Some(m) => write!(f, " {:>12.2}", 100.0 * m.fnr)?,
                    None => write!(f, " {:>12}", "-")?,
                }
            }
            writeln!(f)?;
        }
        for (name, pick) in [("mean", true), ("std", false)] {
            write!(f, "{name:<8}")?;
            for r in &self.runs {
                let v = if pick { r.mean.fnr } else { r.std.fnr };
                write!(f, " {:>12.2}", 100.0 * v)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
