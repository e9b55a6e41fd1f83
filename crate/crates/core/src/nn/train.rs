use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledTile;
use crate::error::{Error, Result};

use super::layers::{softmax_cross_entropy, softmax_cross_entropy_backward};
use super::{Network, Tensor};

/// Items per forward pass when evaluating.
const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
    /// Stop once validation accuracy has not improved for `patience`
    /// epochs, and restore the best weights.
    pub early_stop: bool,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 1e-4,
            dropout_rate: 0.5,
            batch_size: 128,
            momentum: 0.9,
            seed: 0,
            early_stop: false,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.early_stop && self.patience == 0 {
            return bad("patience must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted mean over the epoch's minibatches (dropout on).
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub stats: Vec<EpochStats>,
    /// Epoch whose weights the network holds on return.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn batch(net: &Network, tiles: &[&LabeledTile]) -> Result<(Tensor, Vec<usize>)> {
    let planes: Vec<_> = tiles.iter().map(|t| &t.tile.plane).collect();
    let labels = tiles.iter().map(|t| t.label.class_index()).collect();
    Ok((net.batch_tensor(&planes)?, labels))
}

fn correct(probs: &Tensor, labels: &[usize]) -> usize {
    probs
        .data()
        .chunks(probs.item_len())
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count()
}

/// Index of the largest value; the first on ties.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy and accuracy in inference mode.
pub fn evaluate(net: &Network, tiles: &[&LabeledTile]) -> Result<(f64, f64)> {
    if tiles.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty tile set"));
    }
    let (mut loss, mut hits) = (0.0, 0);
    for chunk in tiles.chunks(EVAL_CHUNK) {
        let (x, labels) = batch(net, chunk)?;
        let (l, probs) = softmax_cross_entropy(net.forward(&x)?.logits(), &labels)?;
        loss += l * chunk.len() as f64;
        hits += correct(&probs, &labels);
    }
    let n = tiles.len() as f64;
    Ok((loss / n, hits as f64 / n))
}

/// Minibatch SGD with momentum (`v = mu v + g; p -= lr v`) on normalised
/// tiles. Batches are reshuffled every epoch and the last short batch is
/// kept. Dropout masks come from a generator seeded by `config.seed`, so
/// the run is a function of the initial network, the data order and the
/// config.
pub fn train(
    net: &mut Network,
    train_set: &[&LabeledTile],
    val_set: &[&LabeledTile],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if val_set.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    net.set_dropout_rate(config.dropout_rate)?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(1);
    net.rng = dropout_rng;
    net.trained_with = Some(format!(
        "sgd momentum={} learning_rate={} batch_size={} dropout_rate={} seed={}",
        config.momentum, config.learning_rate, config.batch_size, config.dropout_rate, config.seed
    ));

    let mut velocity: Vec<Vec<f64>> = net.params().iter().map(|p| vec![0.0; p.len()]).collect();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stats = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Network)> = None;
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut order_rng);
        let (mut loss_sum, mut hits) = (0.0, 0);
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let tiles: Vec<&LabeledTile> = idx.iter().map(|&i| train_set[i]).collect();
            let (x, labels) = batch(net, &tiles)?;
            let relabel = |e: Error| match e {
                Error::Diverged { layer, detail, .. } => {
                    Error::Diverged { epoch, batch: b, layer, detail }
                }
                other => other,
            };
            let fwd = net.forward_train(&x).map_err(relabel)?;
            let (loss, probs) = softmax_cross_entropy(fwd.logits(), &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    layer: "loss".into(),
                    detail: format!("loss is {loss}"),
                });
            }
            loss_sum += loss * tiles.len() as f64;
            hits += correct(&probs, &labels);
            let dlogits = softmax_cross_entropy_backward(&probs, &labels);
            let grads = net.backward(&fwd, &dlogits)?;
            for ((p, v), g) in net.params_mut().into_iter().zip(&mut velocity).zip(&grads) {
                for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                    *vi = config.momentum * *vi + gi;
                    *pi -= config.learning_rate * *vi;
                }
            }
        }
        let (val_loss, val_accuracy) = evaluate(net, val_set)?;
        let n = train_set.len() as f64;
        stats.push(EpochStats {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: hits as f64 / n,
            val_loss,
            val_accuracy,
            wall_time: started.elapsed().as_secs_f64(),
        });
        if best.as_ref().map_or(true, |(acc, _, _)| val_accuracy > *acc) {
            best = Some((val_accuracy, epoch, net.clone()));
        }
        if config.early_stop {
            let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
            if epoch - best_epoch >= config.patience {
                stopped_early = epoch < config.epochs;
                break;
            }
        }
    }

    let last = stats.len();
    let best_epoch = match best {
        Some((_, e, saved)) if config.early_stop => {
            let rng = net.rng.clone();
            *net = saved;
            net.rng = rng;
            e
        }
        _ => last,
    };
    Ok(TrainOutcome { stats, best_epoch, stopped_early })
}
