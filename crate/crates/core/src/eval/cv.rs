use crate::dataset::{
    balance_by_augmentation, compute_mean, normalize, stratified_holdout, stratified_kfold,
    LabeledTile, NormalizationStats, Side,
};
use crate::error::{Error, Result};
use crate::imagecore::Label;
use crate::nn::{argmax, train, ArchitectureSpec, EpochStats, Network, TrainConfig, TrainOutcome};
use crate::par;

use super::report::{CvReport, FoldResult, MetricSummary};
use super::{confusion, metrics, MetricsReport};

/// Validation share carved from each fold's training side, matching the
/// 104 : 632 validation-to-training ratio of the published split.
pub const DEFAULT_VAL_FRACTION: f64 = 104.0 / 736.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Protocol {
    /// Stratified k-fold; validation tiles come out of each training side.
    KFold { k: usize, val_fraction: f64 },
    /// One stratified train/validation/test split with these train and
    /// validation shares.
    Holdout { train: f64, val: f64 },
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::KFold { .. } => "kfold",
            Protocol::Holdout { .. } => "holdout",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOptions {
    pub protocol: Protocol,
    /// Seeds the splits, augmentation and weight initialisation.
    /// Training shuffles and dropout use `TrainConfig::seed`.
    pub seed: u64,
    /// Balance classes on the training side with dihedral variants.
    pub balance: bool,
}

/// Everything a fold produced besides its report row.
#[derive(Debug, Clone)]
pub struct FoldArtifacts {
    pub model: Option<(Network, NormalizationStats)>,
    pub curve: Vec<EpochStats>,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub report: CvReport,
    pub folds: Vec<FoldArtifacts>,
}

/// splitmix64 finaliser, for deriving independent sub-seeds.
pub(crate) fn sub_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct SplitSides<'a> {
    train: Vec<&'a LabeledTile>,
    val: Vec<&'a LabeledTile>,
    test: Vec<&'a LabeledTile>,
}

fn owned(v: &[&LabeledTile]) -> Vec<LabeledTile> {
    v.iter().map(|&t| t.clone()).collect()
}

/// A network trained on one split, with the normalisation it expects.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub net: Network,
    pub stats: NormalizationStats,
    pub outcome: TrainOutcome,
    /// Training tiles after balancing.
    pub n_train: usize,
}

/// Mean from `train`, normalise both sides, optionally balance-augment the
/// training side (seeded by `balance_seed`), then train a fresh network
/// initialised from `init_seed`.
pub fn train_model(
    train_side: &[&LabeledTile],
    val_side: &[&LabeledTile],
    spec: &ArchitectureSpec,
    config: &TrainConfig,
    balance_seed: Option<u64>,
    init_seed: u64,
) -> Result<TrainedModel> {
    let train_raw = owned(train_side);
    let stats = compute_mean(&train_raw)?;
    let mut train_set = normalize(&train_raw, &stats);
    if let Some(seed) = balance_seed {
        train_set = balance_by_augmentation(&train_set, seed)?.tiles;
    }
    let val_set = normalize(&owned(val_side), &stats);
    let mut net = Network::build(spec.clone(), init_seed)?;
    let outcome = train(
        &mut net,
        &train_set.iter().collect::<Vec<_>>(),
        &val_set.iter().collect::<Vec<_>>(),
        config,
    )?;
    Ok(TrainedModel { net, stats, outcome, n_train: train_set.len() })
}

/// Predicted labels for raw (unnormalised) tiles.
pub fn classify(net: &Network, stats: &NormalizationStats, tiles: &[&LabeledTile]) -> Result<Vec<Label>> {
    let normed = normalize(&owned(tiles), stats);
    let planes: Vec<_> = normed.iter().map(|t| &t.tile.plane).collect();
    Ok(net
        .predict(&planes)?
        .iter()
        .map(|p| Label::from_class_index(argmax(p)).expect("two classes"))
        .collect())
}

/// Scores raw tiles against their labels.
pub fn score(net: &Network, stats: &NormalizationStats, tiles: &[&LabeledTile]) -> Result<MetricsReport> {
    let predicted = classify(net, stats, tiles)?;
    let truth: Vec<Label> = tiles.iter().map(|t| t.label).collect();
    metrics(&confusion(&predicted, &truth)?)
}

fn run_fold(
    fold_index: usize,
    sides: &SplitSides<'_>,
    spec: &ArchitectureSpec,
    config: &TrainConfig,
    opts: &ExperimentOptions,
) -> (FoldResult, FoldArtifacts) {
    let mut result = FoldResult {
        fold_index,
        n_train: sides.train.len(),
        n_val: sides.val.len(),
        n_test: sides.test.len(),
        epochs_run: 0,
        best_epoch: 0,
        error: None,
        metrics: None,
    };
    let mut artifacts = FoldArtifacts { model: None, curve: Vec::new() };
    let attempt = || -> Result<_> {
        let balance_seed = opts.balance.then(|| sub_seed(opts.seed, 100 + fold_index as u64));
        let model = train_model(
            &sides.train,
            &sides.val,
            spec,
            config,
            balance_seed,
            sub_seed(opts.seed, 200 + fold_index as u64),
        )?;
        let m = score(&model.net, &model.stats, &sides.test)?;
        Ok((m, model.outcome, model.net, model.stats, model.n_train))
    };
    match attempt() {
        Ok((m, outcome, net, stats, n_train)) => {
            result.n_train = n_train;
            result.epochs_run = outcome.stats.len();
            result.best_epoch = outcome.best_epoch;
            result.metrics = Some(m);
            artifacts.model = Some((net, stats));
            artifacts.curve = outcome.stats;
        }
        Err(e) => result.error = Some(e.to_string()),
    }
    (result, artifacts)
}

/// Runs the protocol on original (variant-0) tiles. A fold that fails
/// (for instance by diverging) is reported with its error; the others
/// still run.
pub fn run_experiment(
    tiles: &[LabeledTile],
    spec: &ArchitectureSpec,
    config: &TrainConfig,
    opts: &ExperimentOptions,
) -> Result<Experiment> {
    config.validate()?;
    spec.shapes()?;
    if tiles.iter().any(|t| !t.is_original()) {
        return Err(Error::invalid("experiments take original tiles; augmentation happens per fold"));
    }
    let splits: Vec<SplitSides<'_>> = match opts.protocol {
        Protocol::KFold { k, val_fraction } => {
            if !(0.0..1.0).contains(&val_fraction) || val_fraction == 0.0 {
                return Err(Error::invalid(format!("val_fraction must lie in (0, 1), got {val_fraction}")));
            }
            let folds = stratified_kfold(tiles, k, opts.seed)?;
            let mut out = Vec::with_capacity(k);
            for f in &folds {
                let train_side: Vec<LabeledTile> = owned(&f.select(tiles, Side::Train));
                let inner = stratified_holdout(
                    &train_side,
                    (1.0 - val_fraction, val_fraction),
                    sub_seed(opts.seed, 300 + f.fold_index as u64),
                )?;
                let pick = |ids: &[usize]| -> Vec<&LabeledTile> {
                    tiles.iter().filter(|t| ids.binary_search(&t.id).is_ok()).collect()
                };
                // rounding may leave a tile on the inner test side; it trains
                let mut train_ids = [inner.train_ids.clone(), inner.test_ids.clone()].concat();
                train_ids.sort_unstable();
                out.push(SplitSides {
                    train: pick(&train_ids),
                    val: pick(&inner.val_ids),
                    test: f.select(tiles, Side::Test),
                });
            }
            out
        }
        Protocol::Holdout { train, val } => {
            if !(val > 0.0) {
                return Err(Error::invalid("holdout needs a nonzero validation share"));
            }
            let h = stratified_holdout(tiles, (train, val), opts.seed)?;
            vec![SplitSides {
                train: h.select(tiles, Side::Train),
                val: h.select(tiles, Side::Val),
                test: h.select(tiles, Side::Test),
            }]
        }
    };
    if splits.iter().any(|s| s.test.is_empty() || s.val.is_empty()) {
        return Err(Error::invalid("a split has an empty validation or test side"));
    }
    let runs = par::map_range(splits.len(), |i| run_fold(i, &splits[i], spec, config, opts));
    let (rows, folds): (Vec<FoldResult>, Vec<FoldArtifacts>) = runs.into_iter().unzip();
    let mut report = CvReport {
        architecture: spec.name.clone(),
        protocol: opts.protocol.name().to_string(),
        folds_requested: rows.len(),
        seed: opts.seed,
        train: config.clone(),
        mean: MetricSummary::default(),
        std: MetricSummary::default(),
        folds: rows,
    };
    report.aggregate();
    Ok(Experiment { report, folds })
}

/// Stratified k-fold cross-validation with balancing and the default
/// validation share.
pub fn cross_validate(
    tiles: &[LabeledTile],
    spec: &ArchitectureSpec,
    config: &TrainConfig,
    k: usize,
    seed: u64,
) -> Result<CvReport> {
    let opts = ExperimentOptions {
        protocol: Protocol::KFold { k, val_fraction: DEFAULT_VAL_FRACTION },
        seed,
        balance: true,
    };
    Ok(run_experiment(tiles, spec, config, &opts)?.report)
}
