//! Layer kernels: forward and backward passes on batched tensors.
//!
//! Every kernel processes batch items independently and reduces parameter
//! gradients over the batch in item order, so results do not depend on the
//! batch size or the number of worker threads.

use rand::Rng;

use crate::error::{Error, Result};
use crate::par;

use super::gemm::gemm;
use super::Tensor;

/// Geometry of a 2-D convolution over `[c, h, w]` items.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn weight_len(&self) -> usize {
        self.out_c * self.in_c * self.kernel * self.kernel
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.kernel == 0 || self.in_c == 0 || self.out_c == 0 {
            return Err(Error::Shape(format!("degenerate convolution {self:?}")));
        }
        if self.kernel > self.in_h + 2 * self.padding || self.kernel > self.in_w + 2 * self.padding
        {
            return Err(Error::Shape(format!(
                "kernel {} does not fit padded input {}x{} (padding {})",
                self.kernel, self.in_h, self.in_w, self.padding
            )));
        }
        Ok(())
    }

    fn cols(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let want = [self.in_c, self.in_h, self.in_w];
        if x.shape().len() != 4 || x.shape()[1..] != want {
            return Err(Error::Shape(format!(
                "conv expects [b, {}, {}, {}], got {:?}",
                self.in_c,
                self.in_h,
                self.in_w,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Unfolds one item into a `[c*k*k, oh*ow]` patch matrix.
    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let (oh, ow) = (self.out_h(), self.out_w());
        for c in 0..self.in_c {
            let plane = &x[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p;
                        let line = &mut dst[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= self.in_h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            *v = if ix < 0 || ix >= self.in_w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters patch gradients back.
    fn col2im(&self, col: &[f64], dx: &mut [f64]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let (oh, ow) = (self.out_h(), self.out_w());
        for c in 0..self.in_c {
            let plane = &mut dx[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &col[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        let line = &mut plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        for ox in 0..ow {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < self.in_w as isize {
                                line[ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_params(geom: &ConvGeom, w: &[f64], b: &[f64]) -> Result<()> {
    if w.len() != geom.weight_len() || b.len() != geom.out_c {
        return Err(Error::Shape(format!(
            "conv parameters: expected {} weights and {} biases, got {} and {}",
            geom.weight_len(),
            geom.out_c,
            w.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Cross-correlation. `w` is `[out_c, in_c, k, k]`, `b` is `[out_c]`.
pub fn conv2d_forward(x: &Tensor, w: &[f64], b: &[f64], geom: &ConvGeom) -> Result<Tensor> {
    geom.validate()?;
    geom.check_input(x)?;
    check_params(geom, w, b)?;
    let (oc, cols, pos) = (geom.out_c, geom.cols(), geom.positions());
    let mut out = Tensor::zeros(vec![x.batch(), oc, geom.out_h(), geom.out_w()]);
    par::for_each_chunk_mut(out.data_mut(), oc * pos, |i, y| {
        let mut col = vec![0.0; cols * pos];
        geom.im2col(x.item(i), &mut col);
        gemm(oc, cols, pos, w, false, &col, false, 0.0, y);
        for (o, &bias) in b.iter().enumerate() {
            y[o * pos..(o + 1) * pos].iter_mut().for_each(|v| *v += bias);
        }
    });
    Ok(out)
}

/// Gradients of a convolution with respect to input, weights and bias.
pub struct ConvGrads {
    pub dx: Tensor,
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

pub fn conv2d_backward(x: &Tensor, w: &[f64], geom: &ConvGeom, dy: &Tensor) -> Result<ConvGrads> {
    geom.check_input(x)?;
    let (oc, cols, pos) = (geom.out_c, geom.cols(), geom.positions());
    if dy.shape() != [x.batch(), oc, geom.out_h(), geom.out_w()] {
        return Err(Error::Shape(format!("conv upstream gradient {:?}", dy.shape())));
    }
    let per_item = par::map_range(x.batch(), |i| {
        let g = dy.item(i);
        let mut col = vec![0.0; cols * pos];
        geom.im2col(x.item(i), &mut col);
        let mut dw = vec![0.0; oc * cols];
        gemm(oc, pos, cols, g, false, &col, true, 0.0, &mut dw);
        let db: Vec<f64> = (0..oc).map(|o| g[o * pos..(o + 1) * pos].iter().sum()).collect();
        gemm(cols, oc, pos, w, true, g, false, 0.0, &mut col);
        let mut dx = vec![0.0; x.item_len()];
        geom.col2im(&col, &mut dx);
        (dx, dw, db)
    });
    let mut dw = vec![0.0; oc * cols];
    let mut db = vec![0.0; oc];
    let mut dx = Vec::with_capacity(x.len());
    for (dxi, dwi, dbi) in per_item {
        dx.extend_from_slice(&dxi);
        dw.iter_mut().zip(&dwi).for_each(|(a, b)| *a += b);
        db.iter_mut().zip(&dbi).for_each(|(a, b)| *a += b);
    }
    Ok(ConvGrads {
        dx: Tensor::new(x.shape().to_vec(), dx)?,
        dw,
        db,
    })
}

/// Output side of a pooling window sweep.
pub fn pool_out(n: usize, window: usize, stride: usize) -> usize {
    (n - window) / stride + 1
}

/// Max pooling over `[b, c, h, w]`. Returns the pooled tensor and, for each
/// output value, the flat index of its argmax within the input item. Ties go
/// to the first maximum in row-major scan order.
pub fn maxpool2d_forward(x: &Tensor, window: usize, stride: usize) -> Result<(Tensor, Vec<u32>)> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::Shape(format!("maxpool expects [b, c, h, w], got {s:?}")));
    }
    let (c, h, w) = (s[1], s[2], s[3]);
    if window == 0 || stride == 0 || window > h || window > w {
        return Err(Error::Shape(format!(
            "pool window {window} (stride {stride}) does not fit {h}x{w}"
        )));
    }
    let (oh, ow) = (pool_out(h, window, stride), pool_out(w, window, stride));
    let n_out = c * oh * ow;
    let mut out = Tensor::zeros(vec![s[0], c, oh, ow]);
    let mut arg = vec![0u32; s[0] * n_out];
    let items: Vec<(Vec<f64>, Vec<u32>)> = par::map_range(s[0], |i| {
        let xi = x.item(i);
        let mut vals = Vec::with_capacity(n_out);
        let mut idx = Vec::with_capacity(n_out);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for ky in 0..window {
                        for kx in 0..window {
                            let j = (ch * h + oy * stride + ky) * w + ox * stride + kx;
                            if xi[j] > best || (ky == 0 && kx == 0) {
                                best = xi[j];
                                best_i = j;
                            }
                        }
                    }
                    vals.push(best);
                    idx.push(best_i as u32);
                }
            }
        }
        (vals, idx)
    });
    for (i, (vals, idx)) in items.into_iter().enumerate() {
        out.data_mut()[i * n_out..(i + 1) * n_out].copy_from_slice(&vals);
        arg[i * n_out..(i + 1) * n_out].copy_from_slice(&idx);
    }
    Ok((out, arg))
}

/// Routes each output gradient to its window's argmax.
pub fn maxpool2d_backward(in_shape: &[usize], argmax: &[u32], dy: &Tensor) -> Result<Tensor> {
    if argmax.len() != dy.len() {
        return Err(Error::Shape("maxpool argmax and gradient lengths differ".into()));
    }
    let mut dx = Tensor::zeros(in_shape.to_vec());
    let n_in = dx.item_len();
    let n_out = dy.item_len();
    par::for_each_chunk_mut(dx.data_mut(), n_in, |i, d| {
        let g = dy.item(i);
        for (o, &j) in argmax[i * n_out..(i + 1) * n_out].iter().enumerate() {
            d[j as usize] += g[o];
        }
    });
    Ok(dx)
}

/// Affine map of each row: `y = x w + b` with `w` stored `[n_in, n_out]`.
/// Inputs of any rank are flattened to `[b, n_in]`.
pub fn dense_forward(x: &Tensor, w: &[f64], b: &[f64], n_in: usize, n_out: usize) -> Result<Tensor> {
    if x.item_len() != n_in || w.len() != n_in * n_out || b.len() != n_out {
        return Err(Error::Shape(format!(
            "dense {n_in}->{n_out}: input items of {}, {} weights, {} biases",
            x.item_len(),
            w.len(),
            b.len()
        )));
    }
    let mut out = Tensor::zeros(vec![x.batch(), n_out]);
    par::for_each_chunk_mut(out.data_mut(), n_out, |i, y| {
        y.copy_from_slice(b);
        for (k, &xk) in x.item(i).iter().enumerate() {
            if xk == 0.0 {
                continue;
            }
            let row = &w[k * n_out..(k + 1) * n_out];
            y.iter_mut().zip(row).for_each(|(yj, wj)| *yj += xk * wj);
        }
    });
    Ok(out)
}

pub struct DenseGrads {
    pub dx: Tensor,
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

pub fn dense_backward(x: &Tensor, w: &[f64], n_in: usize, n_out: usize, dy: &Tensor) -> Result<DenseGrads> {
    if dy.shape() != [x.batch(), n_out] || x.item_len() != n_in {
        return Err(Error::Shape(format!("dense upstream gradient {:?}", dy.shape())));
    }
    let batch = x.batch();
    let mut dw = vec![0.0; n_in * n_out];
    par::for_each_chunk_mut(&mut dw, n_out, |k, row| {
        for i in 0..batch {
            let xk = x.item(i)[k];
            row.iter_mut().zip(dy.item(i)).for_each(|(r, g)| *r += xk * g);
        }
    });
    let mut db = vec![0.0; n_out];
    for i in 0..batch {
        db.iter_mut().zip(dy.item(i)).for_each(|(d, g)| *d += g);
    }
    let mut dx = Tensor::zeros(x.shape().to_vec());
    par::for_each_chunk_mut(dx.data_mut(), n_in, |i, d| {
        let g = dy.item(i);
        for (k, dk) in d.iter_mut().enumerate() {
            *dk = w[k * n_out..(k + 1) * n_out].iter().zip(g).map(|(a, b)| a * b).sum();
        }
    });
    Ok(DenseGrads { dx, dw, db })
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Passes gradient where the input was strictly positive; the subgradient
/// at 0 is 0.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    dx.data_mut()
        .iter_mut()
        .zip(x.data())
        .for_each(|(d, &v)| if v <= 0.0 { *d = 0.0 });
    dx
}

/// Inverted dropout. In training mode each unit is kept with probability
/// `1 - rate` and scaled by `1 / (1 - rate)`; the returned mask holds the
/// applied factor per unit. Inference mode, or rate 0, is the identity and
/// returns no mask.
pub fn dropout_forward<R: Rng>(
    x: &Tensor,
    rate: f64,
    rng: &mut R,
    train: bool,
) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    if !train || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 })
        .collect();
    let mut y = x.clone();
    y.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
    Ok((y, Some(mask)))
}

pub fn dropout_backward(mask: Option<&[f64]>, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    if let Some(mask) = mask {
        dx.data_mut().iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
    }
    dx
}

/// Row-wise softmax with the row maximum subtracted first.
pub fn softmax(logits: &Tensor) -> Tensor {
    let k = logits.item_len();
    let mut p = logits.clone();
    if k == 0 {
        return p;
    }
    for row in p.data_mut().chunks_mut(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    p
}

/// Mean cross-entropy of `logits` `[b, k]` against class ids, with the
/// softmax probabilities.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, k) = (logits.batch(), logits.item_len());
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for a batch of {b}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!("label {bad} out of range for {k} classes")));
    }
    let probs = softmax(logits);
    let mut loss = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        // log-sum-exp form keeps the loss finite when a probability underflows
        let row = logits.item(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row[l];
    }
    Ok((loss / b.max(1) as f64, probs))
}

/// `(probs - onehot) / b`.
pub fn softmax_cross_entropy_backward(probs: &Tensor, labels: &[usize]) -> Tensor {
    let b = probs.batch().max(1) as f64;
    let k = probs.item_len();
    let mut d = probs.clone();
    for (i, row) in d.data_mut().chunks_mut(k).enumerate() {
        row[labels[i]] -= 1.0;
        row.iter_mut().for_each(|v| *v /= b);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn rel(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
    }

    /// Direct-loop cross-correlation oracle.
    fn conv_naive(x: &Tensor, w: &[f64], b: &[f64], g: &ConvGeom) -> Vec<f64> {
        let (oh, ow) = (g.out_h(), g.out_w());
        let mut out = Vec::new();
        for i in 0..x.batch() {
            let xi = x.item(i);
            for o in 0..g.out_c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = b[o];
                        for c in 0..g.in_c {
                            for ky in 0..g.kernel {
                                for kx in 0..g.kernel {
                                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= g.in_h as isize || ix >= g.in_w as isize {
                                        continue;
                                    }
                                    s += w[((o * g.in_c + c) * g.kernel + ky) * g.kernel + kx]
                                        * xi[(c * g.in_h + iy as usize) * g.in_w + ix as usize];
                                }
                            }
                        }
                        out.push(s);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let g = ConvGeom { in_c: 1, in_h: 3, in_w: 3, out_c: 1, kernel: 1, stride: 1, padding: 0 };
        let x = Tensor::new(vec![1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let y = conv2d_forward(&x, &[1.0], &[0.0], &g).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn same_padding_keeps_71() {
        let g = ConvGeom { in_c: 1, in_h: 71, in_w: 71, out_c: 4, kernel: 3, stride: 1, padding: 1 };
        let x = Tensor::zeros(vec![1, 1, 71, 71]);
        let y = conv2d_forward(&x, &[0.0; 36], &[0.0; 4], &g).unwrap();
        assert_eq!(y.shape(), [1, 4, 71, 71]);
    }

    #[test]
    fn conv_matches_direct_loops() {
        for g in [
            ConvGeom { in_c: 2, in_h: 9, in_w: 7, out_c: 3, kernel: 3, stride: 1, padding: 1 },
            ConvGeom { in_c: 1, in_h: 15, in_w: 15, out_c: 2, kernel: 5, stride: 2, padding: 0 },
            ConvGeom { in_c: 3, in_h: 6, in_w: 6, out_c: 2, kernel: 5, stride: 2, padding: 2 },
        ] {
            let x = Tensor::new(vec![2, g.in_c, g.in_h, g.in_w], randn(2 * g.in_c * g.in_h * g.in_w, 1)).unwrap();
            let w = randn(g.weight_len(), 2);
            let b = randn(g.out_c, 3);
            let y = conv2d_forward(&x, &w, &b, &g).unwrap();
            for (a, e) in y.data().iter().zip(conv_naive(&x, &w, &b, &g)) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_rejects_wrong_params() {
        let g = ConvGeom { in_c: 1, in_h: 4, in_w: 4, out_c: 2, kernel: 3, stride: 1, padding: 0 };
        let x = Tensor::zeros(vec![1, 1, 4, 4]);
        assert!(conv2d_forward(&x, &[0.0; 9], &[0.0; 2], &g).is_err());
        let big = ConvGeom { kernel: 7, ..g };
        assert!(conv2d_forward(&x, &[0.0; 98], &[0.0; 2], &big).is_err());
    }

    /// Central differences of `sum(y * r)` for a fixed random `r`.
    #[test]
    fn conv_gradients_match_finite_differences() {
        let g = ConvGeom { in_c: 2, in_h: 8, in_w: 8, out_c: 3, kernel: 3, stride: 1, padding: 1 };
        let x = Tensor::new(vec![1, 2, 8, 8], randn(128, 4)).unwrap();
        let w = randn(g.weight_len(), 5);
        let b = randn(3, 6);
        let r = Tensor::new(vec![1, 3, 8, 8], randn(192, 7)).unwrap();
        let loss = |x: &Tensor, w: &[f64], b: &[f64]| -> f64 {
            let y = conv2d_forward(x, w, b, &g).unwrap();
            y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        let grads = conv2d_backward(&x, &w, &g, &r).unwrap();
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for j in 0..w.len() {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[j] += eps;
            wm[j] -= eps;
            let num = (loss(&x, &wp, &b) - loss(&x, &wm, &b)) / (2.0 * eps);
            worst = worst.max(rel(grads.dw[j], num));
        }
        for j in 0..b.len() {
            let (mut bp, mut bm) = (b.clone(), b.clone());
            bp[j] += eps;
            bm[j] -= eps;
            let num = (loss(&x, &w, &bp) - loss(&x, &w, &bm)) / (2.0 * eps);
            worst = worst.max(rel(grads.db[j], num));
        }
        for j in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[j] += eps;
            xm.data_mut()[j] -= eps;
            let num = (loss(&xp, &w, &b) - loss(&xm, &w, &b)) / (2.0 * eps);
            worst = worst.max(rel(grads.dx.data()[j], num));
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn strided_conv_backward_is_adjoint() {
        // with zero bias the output is linear in x and in w separately
        let g = ConvGeom { in_c: 2, in_h: 11, in_w: 10, out_c: 2, kernel: 5, stride: 2, padding: 2 };
        let x = Tensor::new(vec![2, 2, 11, 10], randn(440, 8)).unwrap();
        let w = randn(g.weight_len(), 9);
        let zero_b = vec![0.0; 2];
        let y = conv2d_forward(&x, &w, &zero_b, &g).unwrap();
        let r = Tensor::new(y.shape().to_vec(), randn(y.len(), 10)).unwrap();
        let grads = conv2d_backward(&x, &w, &g, &r).unwrap();
        let lhs: f64 = y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
        let via_dx: f64 = x.data().iter().zip(grads.dx.data()).map(|(a, b)| a * b).sum();
        let via_dw: f64 = w.iter().zip(&grads.dw).map(|(a, b)| a * b).sum();
        assert!((lhs - via_dx).abs() < 1e-9 * lhs.abs().max(1.0));
        assert!((lhs - via_dw).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn maxpool_basics() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool2d_forward(&x, 2, 2).unwrap();
        assert_eq!(y.data(), [4.0]);
        assert_eq!(arg, [3]);
        let big = Tensor::zeros(vec![1, 1, 71, 71]);
        assert_eq!(maxpool2d_forward(&big, 2, 2).unwrap().0.shape(), [1, 1, 35, 35]);
        assert!(maxpool2d_forward(&x, 3, 1).is_err());
    }

    #[test]
    fn maxpool_tie_goes_to_first() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![5.0; 4]).unwrap();
        let (y, arg) = maxpool2d_forward(&x, 2, 2).unwrap();
        let dy = Tensor::new(y.shape().to_vec(), vec![1.5]).unwrap();
        let dx = maxpool2d_backward(x.shape(), &arg, &dy).unwrap();
        assert_eq!(dx.data(), [1.5, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn dense_identity_and_bias() {
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap();
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        assert_eq!(dense_forward(&x, &eye, &[0.0; 3], 3, 3).unwrap(), x);
        let y = dense_forward(&x, &[0.0; 6], &[4.0, -1.0], 3, 2).unwrap();
        assert_eq!(y.data(), [4.0, -1.0, 4.0, -1.0]);
        assert!(dense_forward(&x, &[0.0; 6], &[0.0; 2], 2, 3).is_err());
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let (n_in, n_out) = (6, 4);
        let x = Tensor::new(vec![3, n_in], randn(18, 11)).unwrap();
        let w = randn(n_in * n_out, 12);
        let b = randn(n_out, 13);
        let r = Tensor::new(vec![3, n_out], randn(12, 14)).unwrap();
        let loss = |x: &Tensor, w: &[f64], b: &[f64]| -> f64 {
            let y = dense_forward(x, w, b, n_in, n_out).unwrap();
            y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        let g = dense_backward(&x, &w, n_in, n_out, &r).unwrap();
        let eps = 1e-5;
        for j in 0..w.len() {
            let (mut p, mut m) = (w.clone(), w.clone());
            p[j] += eps;
            m[j] -= eps;
            let num = (loss(&x, &p, &b) - loss(&x, &m, &b)) / (2.0 * eps);
            assert!(rel(g.dw[j], num) < 1e-4);
        }
        for j in 0..b.len() {
            let (mut p, mut m) = (b.clone(), b.clone());
            p[j] += eps;
            m[j] -= eps;
            let num = (loss(&x, &w, &p) - loss(&x, &w, &m)) / (2.0 * eps);
            assert!(rel(g.db[j], num) < 1e-4);
        }
        for j in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p.data_mut()[j] += eps;
            m.data_mut()[j] -= eps;
            let num = (loss(&p, &w, &b) - loss(&m, &w, &b)) / (2.0 * eps);
            assert!(rel(g.dx.data()[j], num) < 1e-4);
        }
    }

    #[test]
    fn relu_values_and_mask() {
        let x = Tensor::new(vec![1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), [0.0, 0.0, 2.0]);
        let dy = Tensor::new(vec![1, 3], vec![1.0; 3]).unwrap();
        assert_eq!(relu_backward(&x, &dy).data(), [0.0, 0.0, 1.0]);
        let pos = Tensor::new(vec![1, 2], vec![0.1, 3.0]).unwrap();
        assert_eq!(relu_forward(&pos), pos);
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(dropout_forward(&x, 0.0, &mut rng, true).unwrap().0, x);
        assert_eq!(dropout_forward(&x, 0.9, &mut rng, false).unwrap().0, x);
        assert!(dropout_forward(&x, 1.0, &mut rng, true).is_err());
    }

    #[test]
    fn dropout_survivor_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 1_000_000;
        let x = Tensor::new(vec![1, n], vec![1.0; n]).unwrap();
        let (y, mask) = dropout_forward(&x, 0.5, &mut rng, true).unwrap();
        let kept = mask.unwrap().iter().filter(|&&m| m > 0.0).count() as f64 / n as f64;
        assert!((kept - 0.5).abs() < 0.002, "{kept}");
        let mean = y.data().iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01);
    }

    #[test]
    fn softmax_ce_closed_forms() {
        let logits = Tensor::new(vec![3, 2], vec![0.0, 0.0, 1.0, 1.0, -4.0, -4.0]).unwrap();
        let (loss, p) = softmax_cross_entropy(&logits, &[0, 1, 0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        for row in p.data().chunks(2) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(softmax_cross_entropy(&logits, &[0, 2, 0]).is_err());
        let huge = Tensor::new(vec![1, 2], vec![1000.0, -1000.0]).unwrap();
        let (l, _) = softmax_cross_entropy(&huge, &[1]).unwrap();
        assert!((l - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_ce_gradient() {
        let logits = Tensor::new(vec![2, 3], randn(6, 20)).unwrap();
        let labels = [2, 0];
        let (_, p) = softmax_cross_entropy(&logits, &labels).unwrap();
        let d = softmax_cross_entropy_backward(&p, &labels);
        let eps = 1e-6;
        for j in 0..6 {
            let (mut a, mut b) = (logits.clone(), logits.clone());
            a.data_mut()[j] += eps;
            b.data_mut()[j] -= eps;
            let num = (softmax_cross_entropy(&a, &labels).unwrap().0
                - softmax_cross_entropy(&b, &labels).unwrap().0)
                / (2.0 * eps);
            assert!((num - d.data()[j]).abs() < 1e-8);
        }
    }

    proptest::proptest! {
        #[test]
        fn softmax_shift_invariant(v in proptest::collection::vec(-20.0f64..20.0, 4), c in -50.0f64..50.0) {
            let a = Tensor::new(vec![2, 2], v.clone()).unwrap();
            let b = Tensor::new(vec![2, 2], v.iter().map(|x| x + c).collect()).unwrap();
            let (la, pa) = softmax_cross_entropy(&a, &[0, 1]).unwrap();
            let (lb, pb) = softmax_cross_entropy(&b, &[0, 1]).unwrap();
            proptest::prop_assert!((la - lb).abs() < 1e-9);
            for (x, y) in pa.data().iter().zip(pb.data()) {
                proptest::prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
