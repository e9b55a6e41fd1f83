//! Scoring (Infected is the positive class), cross-validation and holdout
//! experiments, training-curve export and feature-map dumps.

mod curves;
mod cv;
mod featuremap;
mod metrics;
mod report;

pub use curves::{export_curves, read_curves};
pub use cv::{
    classify, cross_validate, run_experiment, score, train_model, Experiment, ExperimentOptions,
    FoldArtifacts, Protocol, TrainedModel, DEFAULT_VAL_FRACTION,
};
pub use featuremap::{dump_feature_maps, feature_map_grid, SEPARATOR};
pub use metrics::{confusion, metrics, ConfusionMatrix, MetricsReport, Undefined};
pub use report::{ComparisonReport, CvReport, FoldResult, MetricSummary};

pub(crate) use cv::sub_seed;
