use std::path::Path;

use crate::error::{Error, Result};
use crate::imagecore::{save_raster, FloatPlane, Raster};
use crate::nn::{LayerSpec, Network};

/// Gray level of the 1-pixel separators and of unused grid cells.
pub const SEPARATOR: u16 = 128;

/// Channel `c` of a conv output scaled to 0..=255 by its own min and max.
/// A constant channel has no range and renders as 0.
fn channel_to_u8(values: &[f64]) -> Vec<u16> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u16
            } else {
                0
            }
        })
        .collect()
}

/// Renders the output channels of conv layer `layer_index` (an index into
/// the architecture's layer list) for one tile as a near-square grid:
/// `ceil(sqrt(n))` columns, cells separated by 1-pixel mid-gray lines.
pub fn feature_map_grid(net: &Network, tile: &FloatPlane, layer_index: usize) -> Result<Raster> {
    match net.spec().layers.get(layer_index) {
        Some(LayerSpec::Conv { .. }) => {}
        Some(other) => {
            return Err(Error::invalid(format!(
                "layer {layer_index} is {}, not a conv layer",
                other.kind()
            )))
        }
        None => {
            return Err(Error::invalid(format!(
                "layer {layer_index} does not exist ({} layers)",
                net.spec().layers.len()
            )))
        }
    }
    let x = net.batch_tensor(&[tile])?;
    let fwd = net.forward(&x)?;
    let out = fwd.output_of(layer_index).expect("layer ran");
    let (c, h, w) = (out.shape()[1], out.shape()[2], out.shape()[3]);
    let cols = (c as f64).sqrt().ceil() as usize;
    let rows = c.div_ceil(cols);
    let (gw, gh) = (cols * w + cols - 1, rows * h + rows - 1);
    let mut pixels = vec![SEPARATOR; gw * gh];
    let item = out.item(0);
    for ch in 0..c {
        let img = channel_to_u8(&item[ch * h * w..(ch + 1) * h * w]);
        let (x0, y0) = ((ch % cols) * (w + 1), (ch / cols) * (h + 1));
        for y in 0..h {
            pixels[(y0 + y) * gw + x0..(y0 + y) * gw + x0 + w].copy_from_slice(&img[y * w..(y + 1) * w]);
        }
    }
    Raster::new(gw, gh, 8, pixels)
}

/// [`feature_map_grid`] written as PNG (by extension) or PGM.
pub fn dump_feature_maps(
    net: &Network,
    tile: &FloatPlane,
    layer_index: usize,
    path: impl AsRef<Path>,
) -> Result<Raster> {
    let grid = feature_map_grid(net, tile, layer_index)?;
    save_raster(&grid, path)?;
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ArchitectureSpec;

    fn vgg() -> Network {
        Network::build(ArchitectureSpec::preset("vgg-s", 0.5).unwrap(), 1).unwrap()
    }

    fn ramp() -> FloatPlane {
        FloatPlane::from_fn(71, 71, |x, y| ((x * 7 + y * 3) % 23) as f64 / 23.0 - 0.5)
    }

    #[test]
    fn first_conv_is_three_by_three_with_blank() {
        let g = feature_map_grid(&vgg(), &ramp(), 0).unwrap();
        assert_eq!((g.width(), g.height()), (3 * 71 + 2, 3 * 71 + 2));
        // ninth cell unused
        let (x0, y0) = (2 * 72, 2 * 72);
        assert!((0..71).all(|d| g.pixels()[(y0 + d) * g.width() + x0 + d] == SEPARATOR));
        // separator column
        assert!((0..g.height()).all(|y| g.pixels()[y * g.width() + 71] == SEPARATOR));
    }

    #[test]
    fn zero_tile_renders_constant_channels_black() {
        let g = feature_map_grid(&vgg(), &FloatPlane::filled(71, 71, 0.0), 0).unwrap();
        for ch in 0..8 {
            let (x0, y0) = ((ch % 3) * 72, (ch / 3) * 72);
            for y in 0..71 {
                for x in 0..71 {
                    assert_eq!(g.pixels()[(y0 + y) * g.width() + x0 + x], 0);
                }
            }
        }
    }

    #[test]
    fn channels_use_full_range() {
        let g = feature_map_grid(&vgg(), &ramp(), 0).unwrap();
        let cell: Vec<u16> = (0..71).flat_map(|y| g.pixels()[y * g.width()..y * g.width() + 71].to_vec()).collect();
        assert_eq!(cell.iter().min(), Some(&0));
        assert_eq!(cell.iter().max(), Some(&255));
    }

    #[test]
    fn non_conv_layer_rejected() {
        assert!(feature_map_grid(&vgg(), &ramp(), 1).unwrap_err().to_string().contains("relu"));
        assert!(feature_map_grid(&vgg(), &ramp(), 999).is_err());
    }

    #[test]
    fn identical_bytes_twice() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
        let net = vgg();
        dump_feature_maps(&net, &ramp(), 2, &a).unwrap();
        dump_feature_maps(&net, &ramp(), 2, &b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }
}
