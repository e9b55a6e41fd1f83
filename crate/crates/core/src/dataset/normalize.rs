use crate::error::{Error, Result};

use super::LabeledTile;

/// Scalar dataset mean, computed on training tiles and stored with the
/// model so inference subtracts the same value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationStats {
    pub mean: f64,
}

pub fn compute_mean(tiles: &[LabeledTile]) -> Result<NormalizationStats> {
    if tiles.is_empty() {
        return Err(Error::invalid("cannot compute a mean over zero tiles"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in tiles {
        sum += t.tile.plane.values().iter().sum::<f64>();
        count += t.tile.plane.values().len();
    }
    let mean = sum / count as f64;
    if !mean.is_finite() {
        return Err(Error::invalid("tile mean is not finite"));
    }
    Ok(NormalizationStats { mean })
}

/// Subtracts `stats.mean` from every pixel.
pub fn normalize(tiles: &[LabeledTile], stats: &NormalizationStats) -> Vec<LabeledTile> {
    tiles
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.tile
                .plane
                .values_mut()
                .iter_mut()
                .for_each(|v| *v -= stats.mean);
            t
        })
        .collect()
}
