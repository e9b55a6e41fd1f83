//! Gradient-directed circular Hough transform.
//!
//! Each thinned edge pixel casts one vote per radius on each side of the
//! edge, along its gradient direction. Votes are splatted bilinearly into
//! fixed-point integer accumulators (so partial accumulators built by
//! different workers merge exactly), smoothed with a small peak-normalised
//! Gaussian, and divided by the circumference `2 pi r`. A complete, thin
//! circle therefore scores about 1 at its center at every radius.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::par;

use super::GradientField;

/// Fixed-point scale of one vote in the integer accumulator.
const VOTE_SCALE: f64 = 256.0;
/// Accumulator smoothing width is `SMOOTH_BASE + SMOOTH_SLOPE * r`: the
/// angular error of gradient directions displaces votes by about
/// `r * dtheta`, so the tolerance grows with the radius.
const SMOOTH_BASE: f64 = 1.0;
const SMOOTH_SLOPE: f64 = 0.04;
/// Radius half-window of the non-maximum suppression.
const RADIUS_NMS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct HoughParams {
    pub r_min: usize,
    pub r_max: usize,
    /// Minimum normalised vote score, in (0, 1].
    pub vote_threshold: f64,
    /// Spatial suppression radius in pixels.
    pub nms_radius: f64,
}

impl Default for HoughParams {
    fn default() -> Self {
        HoughParams {
            r_min: 12,
            r_max: 30,
            vote_threshold: 0.45,
            nms_radius: 20.0,
        }
    }
}

impl HoughParams {
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.r_min == 0 || self.r_min > self.r_max {
            return Err(Error::invalid(format!(
                "empty radius range [{}, {}]",
                self.r_min, self.r_max
            )));
        }
        if 2 * self.r_max >= width.min(height) {
            return Err(Error::invalid(format!(
                "r_max {} must be below half the smaller image side ({width}x{height})",
                self.r_max
            )));
        }
        if !(self.vote_threshold > 0.0 && self.vote_threshold <= 1.0) {
            return Err(Error::invalid(format!(
                "vote_threshold must lie in (0, 1], got {}",
                self.vote_threshold
            )));
        }
        if !(self.nms_radius >= 0.0) {
            return Err(Error::invalid("nms_radius must be >= 0"));
        }
        Ok(())
    }
}

/// A detected circle. `votes` is the normalised accumulator score clamped
/// to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleHit {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
    pub votes: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgePixel {
    pub x: usize,
    pub y: usize,
    /// Unit gradient direction.
    pub ux: f64,
    pub uy: f64,
}

/// Otsu's threshold over a 256-bin histogram of `values` spanning
/// `[0, max]`. Returns `None` when there is nothing above zero.
pub fn otsu_threshold(values: &[f64]) -> Option<f64> {
    const BINS: usize = 256;
    let max = values.iter().copied().fold(0.0f64, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return None;
    }
    let mut hist = [0u64; BINS];
    for &v in values {
        let b = ((v / max) * BINS as f64) as usize;
        hist[b.min(BINS - 1)] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_k) = (-1.0, 0);
    for (k, &c) in hist.iter().enumerate().take(BINS - 1) {
        w0 += c as f64;
        sum0 += k as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_k = k;
        }
    }
    Some((best_k + 1) as f64 * max / BINS as f64)
}

/// Edge pixels: magnitude at or above the Otsu threshold and a local
/// maximum across the edge (Canny-style thinning along the gradient).
/// Directions are taken from the gradient summed over the 3x3
/// neighbourhood.
pub fn edge_pixels(g: &GradientField) -> Vec<EdgePixel> {
    let Some(threshold) = otsu_threshold(&g.magnitude) else {
        return Vec::new();
    };
    let (w, h) = (g.width, g.height);
    let mag = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            g.magnitude[y as usize * w + x as usize]
        }
    };
    let rows: Vec<Vec<EdgePixel>> = par::map_range(h, |y| {
        let mut out = Vec::new();
        for x in 0..w {
            let i = y * w + x;
            let m = g.magnitude[i];
            if m < threshold || m == 0.0 {
                continue;
            }
            let (gx, gy) = (g.gx[i], g.gy[i]);
            // quantise the gradient direction to one of four neighbour axes
            let angle = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            let (dx, dy) = if !(22.5..157.5).contains(&angle) {
                (1, 0)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (0, 1)
            } else {
                (-1, 1)
            };
            let (xi, yi) = (x as isize, y as isize);
            let ahead = mag(xi + dx, yi + dy);
            let behind = mag(xi - dx, yi - dy);
            if m >= ahead && m > behind {
                // vote direction from the 3x3 mean gradient, which damps
                // noise-induced angular error (it grows into r * dtheta)
                let (mut sx, mut sy) = (0.0, 0.0);
                for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        sx += g.gx[ny * w + nx];
                        sy += g.gy[ny * w + nx];
                    }
                }
                let norm = sx.hypot(sy);
                let (ux, uy) = if norm > 0.0 { (sx / norm, sy / norm) } else { (gx / m, gy / m) };
                out.push(EdgePixel { x, y, ux, uy });
            }
        }
        out
    });
    rows.into_iter().flatten().collect()
}

fn accumulate(edges: &[EdgePixel], w: usize, h: usize, r: f64) -> Vec<u32> {
    let workers = par::current_threads().max(1);
    let chunk = edges.len().div_ceil(workers).max(1);
    let chunks: Vec<&[EdgePixel]> = edges.chunks(chunk).collect();
    let partials = par::map(&chunks, |chunk| {
        let mut acc = vec![0u32; w * h];
        let (wf, hf) = ((w - 1) as f64, (h - 1) as f64);
        for e in chunk.iter() {
            for sign in [1.0, -1.0] {
                let px = e.x as f64 + sign * r * e.ux;
                let py = e.y as f64 + sign * r * e.uy;
                if !(0.0..=wf).contains(&px) || !(0.0..=hf).contains(&py) {
                    continue;
                }
                let (x0, y0) = (px.floor() as usize, py.floor() as usize);
                let (fx, fy) = (px - x0 as f64, py - y0 as f64);
                let x1 = (x0 + 1).min(w - 1);
                let y1 = (y0 + 1).min(h - 1);
                let splat = |wt: f64| (wt * VOTE_SCALE).round() as u32;
                acc[y0 * w + x0] += splat((1.0 - fx) * (1.0 - fy));
                acc[y0 * w + x1] += splat(fx * (1.0 - fy));
                acc[y1 * w + x0] += splat((1.0 - fx) * fy);
                acc[y1 * w + x1] += splat(fx * fy);
            }
        }
        acc
    });
    let mut iter = partials.into_iter();
    let mut total = iter.next().unwrap_or_else(|| vec![0; w * h]);
    for p in iter {
        total.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    total
}

/// Smoothed, circumference-normalised score plane for radius `r`.
fn score_plane(edges: &[EdgePixel], w: usize, h: usize, r: usize) -> Vec<f64> {
    let acc = accumulate(edges, w, h, r as f64);
    let sigma = SMOOTH_BASE + SMOOTH_SLOPE * r as f64;
    let kr = (2.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-kr..=kr)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let mut tmp = vec![0.0; w * h];
    par::for_each_chunk_mut(&mut tmp, w, |y, row| {
        let line = &acc[y * w..(y + 1) * w];
        for (x, out) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for (j, &k) in kernel.iter().enumerate() {
                let sx = x as isize + j as isize - kr;
                if sx >= 0 && (sx as usize) < w {
                    s += k * f64::from(line[sx as usize]);
                }
            }
            *out = s;
        }
    });
    let norm = 1.0 / (VOTE_SCALE * 2.0 * PI * r as f64);
    let mut out = vec![0.0; w * h];
    par::for_each_chunk_mut(&mut out, w, |y, row| {
        for (j, &k) in kernel.iter().enumerate() {
            let sy = y as isize + j as isize - kr;
            if sy < 0 || sy as usize >= h {
                continue;
            }
            let line = &tmp[sy as usize * w..(sy as usize + 1) * w];
            for (o, &v) in row.iter_mut().zip(line) {
                *o += k * v;
            }
        }
        row.iter_mut().for_each(|o| *o *= norm);
    });
    out
}

struct Candidate {
    x: usize,
    y: usize,
    r: usize,
    cx: f64,
    cy: f64,
    rr: f64,
    score: f64,
}

/// Offset of the vertex of the parabola through `(-1, a), (0, b), (1, c)`.
fn parabolic_offset(a: f64, b: f64, c: f64) -> f64 {
    let denom = a - 2.0 * b + c;
    if denom < 0.0 {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

fn local_candidates(
    prev: Option<&[f64]>,
    cur: &[f64],
    next: Option<&[f64]>,
    w: usize,
    h: usize,
    r: usize,
    params: &HoughParams,
) -> Vec<Candidate> {
    let rows: Vec<Vec<Candidate>> = par::map_range(h, |y| {
        let mut out = Vec::new();
        for x in 0..w {
            let s = cur[y * w + x];
            if s < params.vote_threshold {
                continue;
            }
            let mut is_max = true;
            'scan: for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    let beaten = (j != y * w + x && cur[j] > s)
                        || prev.is_some_and(|p| p[j] > s)
                        || next.is_some_and(|n| n[j] > s);
                    if beaten {
                        is_max = false;
                        break 'scan;
                    }
                }
            }
            if !is_max {
                continue;
            }
            let at = |dx: isize, dy: isize| -> f64 {
                let (px, py) = (x as isize + dx, y as isize + dy);
                if px < 0 || py < 0 || px >= w as isize || py >= h as isize {
                    s
                } else {
                    cur[py as usize * w + px as usize]
                }
            };
            let ox = parabolic_offset(at(-1, 0), s, at(1, 0));
            let oy = parabolic_offset(at(0, -1), s, at(0, 1));
            let or = match (prev, next) {
                (Some(p), Some(n)) => parabolic_offset(p[y * w + x], s, n[y * w + x]),
                _ => 0.0,
            };
            let rr = (r as f64 + or).clamp(params.r_min as f64, params.r_max as f64);
            out.push(Candidate {
                x,
                y,
                r,
                cx: x as f64 + ox,
                cy: y as f64 + oy,
                rr,
                score: s,
            });
        }
        out
    });
    rows.into_iter().flatten().collect()
}

/// Finds circles with radius in `[r_min, r_max]`, strongest first.
///
/// An all-zero gradient field yields an empty list.
pub fn hough_circles(g: &GradientField, params: &HoughParams) -> Result<Vec<CircleHit>> {
    params.validate(g.width, g.height)?;
    let (w, h) = (g.width, g.height);
    let edges = edge_pixels(g);
    if edges.is_empty() {
        return Ok(Vec::new());
    }

    let radii: Vec<usize> = (params.r_min..=params.r_max).collect();
    let mut candidates = Vec::new();
    let mut prev: Option<Vec<f64>> = None;
    let mut cur = score_plane(&edges, w, h, radii[0]);
    for (i, &r) in radii.iter().enumerate() {
        let next = radii.get(i + 1).map(|&nr| score_plane(&edges, w, h, nr));
        candidates.extend(local_candidates(
            prev.as_deref(),
            &cur,
            next.as_deref(),
            w,
            h,
            r,
            params,
        ));
        match next {
            Some(n) => prev = Some(std::mem::replace(&mut cur, n)),
            None => break,
        }
    }

    candidates.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then((a.r, a.y, a.x).cmp(&(b.r, b.y, b.x)))
    });
    let nms2 = params.nms_radius * params.nms_radius;
    let mut hits: Vec<CircleHit> = Vec::new();
    for c in candidates {
        let suppressed = hits.iter().any(|h| {
            let (dx, dy) = (h.cx - c.cx, h.cy - c.cy);
            dx * dx + dy * dy <= nms2 && (h.r - c.rr).abs() <= RADIUS_NMS
        });
        if !suppressed {
            hits.push(CircleHit {
                cx: c.cx,
                cy: c.cy,
                r: c.rr,
                votes: c.score.min(1.0),
            });
        }
    }
    Ok(hits)
}
