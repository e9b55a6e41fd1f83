//! Raster ingestion, float conversion, Gaussian blur and tiling.

mod blur;
mod io;
mod raster;
mod tile;

pub use blur::{gaussian_blur, gaussian_kernel};
pub use io::{load_raster, save_plane, save_raster, PlaneRange};
pub use raster::{FloatPlane, Raster};
pub use tile::{tile_grid, Label, Tile};

/// Half-sample symmetric reflection of `i` into `0..n` (`d c b a | a b c d`).
///
/// This extension is the adjoint of folding, so filtering with a symmetric
/// kernel under it conserves the plane's total mass.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}
