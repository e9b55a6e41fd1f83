use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// A 2-D grayscale image with 8- or 16-bit unsigned samples, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    depth: u8,
    pixels: Vec<u16>,
    source: Option<PathBuf>,
}

impl Raster {
    pub fn new(width: usize, height: usize, depth: u8, pixels: Vec<u16>) -> Result<Self> {
        if depth != 8 && depth != 16 {
            return Err(Error::Format(format!("unsupported bit depth {depth}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("raster dimensions must be nonzero"));
        }
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{} samples for a {width}x{height} raster",
                pixels.len()
            )));
        }
        let max = max_sample(depth);
        if let Some(bad) = pixels.iter().position(|&s| s > max) {
            return Err(Error::invalid(format!(
                "sample {} at index {bad} exceeds {depth}-bit range",
                pixels[bad]
            )));
        }
        Ok(Raster {
            width,
            height,
            depth,
            pixels,
            source: None,
        })
    }

    pub fn with_source(mut self, path: impl Into<PathBuf>) -> Self {
        self.source = Some(path.into());
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> u8 {
        self.depth
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }

    pub fn max_value(&self) -> u16 {
        max_sample(self.depth)
    }

    /// Maps every sample `s` to `s / (2^depth - 1)`.
    pub fn to_float(&self) -> FloatPlane {
        let scale = 1.0 / f64::from(self.max_value());
        FloatPlane {
            width: self.width,
            height: self.height,
            values: self.pixels.iter().map(|&s| f64::from(s) * scale).collect(),
        }
    }
}

fn max_sample(depth: u8) -> u16 {
    if depth == 8 {
        u8::MAX as u16
    } else {
        u16::MAX
    }
}

/// Row-major plane of reals: the working representation for filtering,
/// detection and the CNN input.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatPlane {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl FloatPlane {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "{} values for a {width}x{height} plane",
                values.len()
            )));
        }
        Ok(FloatPlane {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        FloatPlane {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        FloatPlane {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.values[y * self.width + x] = v;
    }

    /// Copies the `w`x`h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<FloatPlane> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::invalid(format!(
                "window {w}x{h} at ({x0},{y0}) exceeds {}x{} plane",
                self.width, self.height
            )));
        }
        let mut values = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            let row = y * self.width;
            values.extend_from_slice(&self.values[row + x0..row + x0 + w]);
        }
        Ok(FloatPlane {
            width: w,
            height: h,
            values,
        })
    }

    pub fn transpose(&self) -> FloatPlane {
        FloatPlane::from_fn(self.height, self.width, |x, y| self.get(y, x))
    }

    /// Rotates by 90 degrees counter-clockwise.
    pub fn rotate90(&self) -> FloatPlane {
        let (w, h) = (self.width, self.height);
        FloatPlane::from_fn(h, w, |x, y| self.get(w - 1 - y, x))
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Quantises values assumed to lie in `[0, 1]` back to `depth`-bit
    /// samples. Inverse of [`Raster::to_float`] for planes produced by it.
    pub fn to_raster_unit(&self, depth: u8) -> Result<Raster> {
        let max = f64::from(max_sample(depth));
        let pixels = self
            .values
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * max).round() as u16)
            .collect();
        Raster::new(self.width, self.height, depth, pixels)
    }
}
