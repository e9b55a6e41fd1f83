//! Synthetic unstained-smear images with known cell positions and labels.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::celldetect::{write_circles_csv, TruthCircle};
use crate::error::{Error, Result};
use crate::imagecore::{save_raster, Label, Raster};
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub n_cells: usize,
    pub infected_fraction: f64,
    pub width: usize,
    pub height: usize,
    pub r_min: f64,
    pub r_max: f64,
    /// Standard deviation of the additive Gaussian noise, in [0, 1] units.
    pub noise: f64,
    pub background: f64,
    pub cell_level: f64,
    pub inclusion_level: f64,
    /// Minimum rim-to-rim distance between cells.
    pub min_gap: f64,
    /// Placement attempts per cell before giving up.
    pub retry_cap: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_cells: 40,
            infected_fraction: 0.4,
            width: 512,
            height: 512,
            r_min: 12.0,
            r_max: 30.0,
            noise: 0.03,
            background: 0.62,
            cell_level: 0.45,
            inclusion_level: 0.12,
            min_gap: 4.0,
            retry_cap: 10_000,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.infected_fraction) {
            return Err(Error::invalid("infected_fraction must lie in [0, 1]"));
        }
        if !(self.r_min > 0.0 && self.r_min <= self.r_max) {
            return Err(Error::invalid("synthetic radii need 0 < r_min <= r_max"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("synthetic image must be nonempty"));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::invalid("noise must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Inclusion {
    x: f64,
    y: f64,
    r: f64,
}

#[derive(Debug, Clone)]
struct Cell {
    truth: TruthCircle,
    inclusions: Vec<Inclusion>,
}

/// A generated image with its ground truth.
#[derive(Debug, Clone)]
pub struct SynthSmear {
    pub raster: Raster,
    pub cells: Vec<TruthCircle>,
}

impl SynthSmear {
    /// Writes `<stem>.pgm`, `<stem>_circles.csv` (`cx,cy,r`) and
    /// `<stem>_labels.csv` (`cx,cy,r,label`) into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<[PathBuf; 3]> {
        let dir = dir.as_ref();
        let paths = [
            dir.join(format!("{stem}.pgm")),
            dir.join(format!("{stem}_circles.csv")),
            dir.join(format!("{stem}_labels.csv")),
        ];
        save_raster(&self.raster, &paths[0])?;
        write_circles_csv(&paths[1], &self.cells, false)?;
        write_circles_csv(&paths[2], &self.cells, true)?;
        Ok(paths)
    }
}

fn smooth_step(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Generates a 16-bit smear of dark, soft-edged disks on a lighter
/// background. `round(n_cells * infected_fraction)` cells are infected and
/// carry one to three small dark inclusions. Cells lie fully inside the
/// image and never overlap. Identical arguments give identical output.
pub fn synth_smear(params: &SynthParams, seed: u64) -> Result<SynthSmear> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (params.width as f64, params.height as f64);
    const BORDER: f64 = 2.0;

    let mut cells: Vec<Cell> = Vec::with_capacity(params.n_cells);
    for n in 0..params.n_cells {
        let mut placed = false;
        for _ in 0..params.retry_cap {
            let r = rng.gen_range(params.r_min..=params.r_max);
            let lo = r + BORDER;
            if 2.0 * lo >= w || 2.0 * lo >= h {
                continue;
            }
            let cx = rng.gen_range(lo..w - lo);
            let cy = rng.gen_range(lo..h - lo);
            let clear = cells.iter().all(|c| {
                let t = &c.truth;
                (t.cx - cx).hypot(t.cy - cy) >= t.r + r + params.min_gap
            });
            if clear {
                cells.push(Cell {
                    truth: TruthCircle {
                        cx,
                        cy,
                        r,
                        label: Some(Label::Healthy),
                    },
                    inclusions: Vec::new(),
                });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::invalid(format!(
                "could not place cell {} of {} after {} attempts; density infeasible",
                n + 1,
                params.n_cells,
                params.retry_cap
            )));
        }
    }

    let n_infected = (params.n_cells as f64 * params.infected_fraction).round() as usize;
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.shuffle(&mut rng);
    for &i in order.iter().take(n_infected) {
        let cell = &mut cells[i];
        cell.truth.label = Some(Label::Infected);
        let count = rng.gen_range(1..=3);
        for _ in 0..count {
            let ang = rng.gen_range(0.0..std::f64::consts::TAU);
            let dist = rng.gen_range(0.0..0.6) * cell.truth.r;
            cell.inclusions.push(Inclusion {
                x: cell.truth.cx + dist * ang.cos(),
                y: cell.truth.cy + dist * ang.sin(),
                r: rng.gen_range(1.5..3.0),
            });
        }
    }

    let noise = Normal::new(0.0, params.noise.max(0.0)).expect("finite noise sigma");
    let width = params.width;
    let rows: Vec<Vec<u16>> = par::map_range(params.height, |y| {
        let yf = y as f64;
        let mut row = vec![params.background; width];
        for cell in &cells {
            let t = &cell.truth;
            let reach = t.r + 6.0;
            if (yf - t.cy).abs() > reach {
                continue;
            }
            let x0 = (t.cx - reach).floor().max(0.0) as usize;
            let x1 = ((t.cx + reach).ceil() as usize).min(width - 1);
            for (x, v) in row.iter_mut().enumerate().take(x1 + 1).skip(x0) {
                let d = (x as f64 - t.cx).hypot(yf - t.cy);
                // slightly paler centre, soft rim
                let interior = params.cell_level + 0.04 * (1.0 - (d / t.r).min(1.0).powi(2));
                *v += (interior - *v) * smooth_step((t.r - d) / 0.8);
                for inc in &cell.inclusions {
                    let di = (x as f64 - inc.x).hypot(yf - inc.y);
                    *v += (params.inclusion_level - *v) * smooth_step((inc.r - di) / 0.5);
                }
            }
        }
        let mut row_rng = ChaCha8Rng::seed_from_u64(seed);
        row_rng.set_stream(y as u64 + 1);
        row.into_iter()
            .map(|v| {
                let v = v + noise.sample(&mut row_rng);
                (v.clamp(0.0, 1.0) * 65535.0).round() as u16
            })
            .collect()
    });
    let raster = Raster::new(params.width, params.height, 16, rows.concat())?;
    Ok(SynthSmear {
        raster,
        cells: cells.into_iter().map(|c| c.truth).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_smear_is_noise() {
        let p = SynthParams { n_cells: 0, width: 64, height: 48, ..Default::default() };
        let s = synth_smear(&p, 1).unwrap();
        assert!(s.cells.is_empty());
        let f = s.raster.to_float();
        let mean = f.sum() / f.values().len() as f64;
        assert!((mean - p.background).abs() < 0.01);
        assert!(f.values().iter().any(|&v| v != f.values()[0]));
    }

    #[test]
    fn counts_by_construction() {
        let p = SynthParams { n_cells: 50, infected_fraction: 0.4, ..Default::default() };
        let s = synth_smear(&p, 7).unwrap();
        assert_eq!(s.cells.len(), 50);
        let infected = s.cells.iter().filter(|c| c.label == Some(Label::Infected)).count();
        assert_eq!(infected, 20);
        for (i, a) in s.cells.iter().enumerate() {
            assert!(a.r >= 12.0 && a.r <= 30.0);
            assert!(a.cx - a.r >= 0.0 && a.cx + a.r <= 512.0);
            for b in &s.cells[i + 1..] {
                assert!((a.cx - b.cx).hypot(a.cy - b.cy) >= a.r + b.r);
            }
        }
    }

    #[test]
    fn deterministic() {
        let p = SynthParams { width: 200, height: 160, n_cells: 8, ..Default::default() };
        let a = synth_smear(&p, 3).unwrap();
        let b = synth_smear(&p, 3).unwrap();
        assert_eq!(a.raster, b.raster);
        assert_eq!(a.cells, b.cells);
        assert_ne!(synth_smear(&p, 4).unwrap().raster, a.raster);
    }

    #[test]
    fn infeasible_density() {
        let p = SynthParams { n_cells: 500, width: 128, height: 128, retry_cap: 200, ..Default::default() };
        assert!(synth_smear(&p, 0).unwrap_err().to_string().contains("infeasible"));
    }

    #[test]
    fn writes_three_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = SynthParams { width: 120, height: 120, n_cells: 3, ..Default::default() };
        let s = synth_smear(&p, 2).unwrap();
        let paths = s.write(dir.path(), "smear").unwrap();
        let back = crate::imagecore::load_raster(&paths[0]).unwrap();
        assert_eq!(back.pixels(), s.raster.pixels());
        let labels = crate::celldetect::read_circles_csv(&paths[2]).unwrap();
        assert_eq!(labels, s.cells);
    }
}
