use crate::error::{Error, Result};
use crate::imagecore::{reflect, FloatPlane};
use crate::par;

/// Horizontal/vertical derivatives and their magnitude, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub magnitude: Vec<f64>,
}

impl GradientField {
    /// Builds a field from explicit derivative planes; the magnitude is
    /// derived.
    pub fn from_components(width: usize, height: usize, gx: Vec<f64>, gy: Vec<f64>) -> Result<Self> {
        if gx.len() != width * height || gy.len() != width * height {
            return Err(Error::Shape("gradient planes do not match dimensions".into()));
        }
        let magnitude = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
        Ok(GradientField {
            width,
            height,
            gx,
            gy,
            magnitude,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        GradientField {
            width,
            height,
            gx: vec![0.0; n],
            gy: vec![0.0; n],
            magnitude: vec![0.0; n],
        }
    }
}

/// 3x3 Sobel derivatives (cross-correlation) with mirror-reflected borders.
///
/// `gx` responds to intensity increasing to the right, `gy` to intensity
/// increasing downwards.
pub fn sobel_gradients(p: &FloatPlane) -> Result<GradientField> {
    let (w, h) = (p.width(), p.height());
    if w < 3 || h < 3 {
        return Err(Error::invalid(format!("sobel needs at least 3x3, got {w}x{h}")));
    }
    let v = p.values();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = par::map_range(h, |y| {
        let up = &v[reflect(y as isize - 1, h) * w..][..w];
        let mid = &v[y * w..][..w];
        let down = &v[reflect(y as isize + 1, h) * w..][..w];
        let mut gx = vec![0.0; w];
        let mut gy = vec![0.0; w];
        for x in 0..w {
            let l = reflect(x as isize - 1, w);
            let r = reflect(x as isize + 1, w);
            gx[x] = (up[r] + 2.0 * mid[r] + down[r]) - (up[l] + 2.0 * mid[l] + down[l]);
            gy[x] = (down[l] + 2.0 * down[x] + down[r]) - (up[l] + 2.0 * up[x] + up[r]);
        }
        (gx, gy)
    });
    let mut gx = Vec::with_capacity(w * h);
    let mut gy = Vec::with_capacity(w * h);
    for (a, b) in rows {
        gx.extend(a);
        gy.extend(b);
    }
    GradientField::from_components(w, h, gx, gy)
}
