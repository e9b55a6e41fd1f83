use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::LabeledTile;

/// Which side of a split a tile falls on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Train,
    Val,
    Test,
}

/// One cross-validation fold over original tile ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

impl FoldSplit {
    /// Side of any tile, augmented or not: variants follow their source.
    pub fn side_of(&self, tile: &LabeledTile) -> Option<Side> {
        let id = tile.source_id();
        if self.test_ids.binary_search(&id).is_ok() {
            Some(Side::Test)
        } else if self.train_ids.binary_search(&id).is_ok() {
            Some(Side::Train)
        } else {
            None
        }
    }

    pub fn select<'a>(&self, tiles: &'a [LabeledTile], side: Side) -> Vec<&'a LabeledTile> {
        tiles.iter().filter(|t| self.side_of(t) == Some(side)).collect()
    }
}

/// A fixed train/validation/test partition of original tile ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HoldoutSplit {
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

impl HoldoutSplit {
    pub fn side_of(&self, tile: &LabeledTile) -> Option<Side> {
        let id = tile.source_id();
        [
            (&self.train_ids, Side::Train),
            (&self.val_ids, Side::Val),
            (&self.test_ids, Side::Test),
        ]
        .into_iter()
        .find(|(ids, _)| ids.binary_search(&id).is_ok())
        .map(|(_, s)| s)
    }

    pub fn select<'a>(&self, tiles: &'a [LabeledTile], side: Side) -> Vec<&'a LabeledTile> {
        tiles.iter().filter(|t| self.side_of(t) == Some(side)).collect()
    }
}

/// Original ids per class, sorted then shuffled by `rng`.
fn shuffled_by_class(tiles: &[LabeledTile], rng: &mut ChaCha8Rng) -> Result<[Vec<usize>; 2]> {
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut seen = HashSet::new();
    for t in tiles.iter().filter(|t| t.is_original()) {
        if !seen.insert(t.id) {
            return Err(Error::invalid(format!("duplicate original tile id {}", t.id)));
        }
        by_class[t.label.class_index()].push(t.id);
    }
    for ids in by_class.iter_mut() {
        ids.sort_unstable();
        ids.shuffle(rng);
    }
    Ok(by_class)
}

/// Stratified k-fold split over the original (variant 0) tiles.
///
/// Each class is shuffled with `seed` and dealt round-robin into the folds,
/// continuing where the previous class stopped, so fold sizes differ by at
/// most one overall and per class.
pub fn stratified_kfold(tiles: &[LabeledTile], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::invalid(format!("k must be >= 2, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let by_class = shuffled_by_class(tiles, &mut rng)?;
    for (c, ids) in by_class.iter().enumerate() {
        if ids.len() < k {
            return Err(Error::invalid(format!(
                "class {} has {} tiles, fewer than k = {k}",
                super::label_of_class(c),
                ids.len()
            )));
        }
    }
    let mut test: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut slot = 0;
    for ids in &by_class {
        for &id in ids {
            test[slot % k].push(id);
            slot += 1;
        }
    }
    let all: Vec<usize> = {
        let mut v: Vec<usize> = by_class.concat();
        v.sort_unstable();
        v
    };
    Ok(test
        .into_iter()
        .enumerate()
        .map(|(fold_index, mut test_ids)| {
            test_ids.sort_unstable();
            let train_ids = all
                .iter()
                .copied()
                .filter(|id| test_ids.binary_search(id).is_err())
                .collect();
            FoldSplit {
                fold_index,
                train_ids,
                test_ids,
            }
        })
        .collect())
}

/// Stratified train/validation/test partition. `fractions` are the train
/// and validation shares; the test side takes the rest of each class.
pub fn stratified_holdout(tiles: &[LabeledTile], fractions: (f64, f64), seed: u64) -> Result<HoldoutSplit> {
    let (ft, fv) = fractions;
    if !(ft > 0.0 && fv >= 0.0 && ft + fv <= 1.0) {
        return Err(Error::invalid(format!(
            "holdout fractions train {ft}, val {fv} must be positive and sum to at most 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let by_class = shuffled_by_class(tiles, &mut rng)?;
    let mut split = HoldoutSplit {
        train_ids: Vec::new(),
        val_ids: Vec::new(),
        test_ids: Vec::new(),
    };
    for ids in &by_class {
        let n = ids.len();
        let n_train = ((n as f64 * ft).round() as usize).min(n);
        let n_val = ((n as f64 * fv).round() as usize).min(n - n_train);
        split.train_ids.extend(&ids[..n_train]);
        split.val_ids.extend(&ids[n_train..n_train + n_val]);
        split.test_ids.extend(&ids[n_train + n_val..]);
    }
    split.train_ids.sort_unstable();
    split.val_ids.sort_unstable();
    split.test_ids.sort_unstable();
    Ok(split)
}
