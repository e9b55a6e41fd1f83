//! Labelled-tile management: annotation files, dihedral augmentation,
//! mean normalisation, stratified splits and the synthetic smear generator.

mod augment;
mod folds;
mod labeled;
mod normalize;
mod synth;

pub use augment::{balance_by_augmentation, dihedral_variants, Balanced, Dihedral};
pub use folds::{stratified_holdout, stratified_kfold, FoldSplit, HoldoutSplit, Side};
pub use labeled::{load_annotations, parse_tile_origin, tile_file_name, write_labels_csv, LabeledTile};
pub use normalize::{compute_mean, normalize, NormalizationStats};
pub use synth::{synth_smear, SynthParams, SynthSmear};

use crate::imagecore::Label;

/// Number of tiles per class, `[healthy, infected]`.
pub fn class_counts(tiles: &[LabeledTile]) -> [usize; 2] {
    let mut counts = [0; 2];
    for t in tiles {
        counts[t.label.class_index()] += 1;
    }
    counts
}

pub(crate) fn label_of_class(i: usize) -> Label {
    Label::from_class_index(i).expect("binary class index")
}
