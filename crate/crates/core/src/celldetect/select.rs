use crate::error::{Error, Result};
use crate::imagecore::{FloatPlane, Tile};

use super::CircleHit;

/// The `size`x`size` tile centred on the rounded hit center, if it lies
/// inside the plane and the disk of radius `r + margin` fits inside it.
/// Hits near the border are dropped rather than shifted.
pub fn complete_cell_tile(p: &FloatPlane, hit: &CircleHit, size: usize, margin: usize) -> Option<Tile> {
    let half = (size / 2) as isize;
    let ox = hit.cx.round() as isize - half;
    let oy = hit.cy.round() as isize - half;
    if ox < 0 || oy < 0 || ox as usize + size > p.width() || oy as usize + size > p.height() {
        return None;
    }
    let reach = hit.r + margin as f64;
    let (lx, ly) = (hit.cx - ox as f64, hit.cy - oy as f64);
    let last = (size - 1) as f64;
    if lx - reach < 0.0 || ly - reach < 0.0 || lx + reach > last || ly + reach > last {
        return None;
    }
    let (ox, oy) = (ox as usize, oy as usize);
    let plane = p.crop(ox, oy, size, size).ok()?;
    Tile::new((ox, oy), plane, None).ok()
}

/// One tile per hit that holds a complete cell, in hit order.
pub fn select_complete_cell_tiles(
    p: &FloatPlane,
    hits: &[CircleHit],
    size: usize,
    margin: usize,
) -> Result<Vec<Tile>> {
    if let Some(big) = hits
        .iter()
        .find(|h| 2.0 * (h.r + margin as f64) > size as f64)
    {
        return Err(Error::invalid(format!(
            "tile size {size} too small for hit radius {:.2} with margin {margin}",
            big.r
        )));
    }
    Ok(hits
        .iter()
        .filter_map(|h| complete_cell_tile(p, h, size, margin))
        .collect())
}
