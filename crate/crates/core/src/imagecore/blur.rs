use crate::error::{Error, Result};
use crate::par;

use super::{reflect, FloatPlane};

/// Normalised 1-D Gaussian of radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::invalid(format!("blur sigma must be finite and > 0, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let denom = 2.0 * sigma * sigma;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / denom).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    Ok(k)
}

/// Separable Gaussian blur with mirror-reflected borders. Output has the
/// input's dimensions.
pub fn gaussian_blur(p: &FloatPlane, sigma: f64) -> Result<FloatPlane> {
    let k = gaussian_kernel(sigma)?;
    let radius = (k.len() / 2) as isize;
    let (w, h) = (p.width(), p.height());
    let src = p.values();

    let mut tmp = vec![0.0; w * h];
    par::for_each_chunk_mut(&mut tmp, w, |y, row| {
        let line = &src[y * w..(y + 1) * w];
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, &kj) in k.iter().enumerate() {
                acc += kj * line[reflect(x as isize + j as isize - radius, w)];
            }
            *out = acc;
        }
    });

    let mut out = vec![0.0; w * h];
    par::for_each_chunk_mut(&mut out, w, |y, row| {
        for (j, &kj) in k.iter().enumerate() {
            let sy = reflect(y as isize + j as isize - radius, h);
            let line = &tmp[sy * w..(sy + 1) * w];
            for (o, &v) in row.iter_mut().zip(line) {
                *o += kj * v;
            }
        }
    });
    FloatPlane::new(w, h, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(w: usize, h: usize, seed: u64) -> FloatPlane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FloatPlane::from_fn(w, h, |_, _| rng.gen::<f64>())
    }

    #[test]
    fn kernel_shape() {
        let k = gaussian_kernel(1.0).unwrap();
        assert_eq!(k.len(), 7);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(gaussian_kernel(0.4).unwrap().len(), 5);
        assert!(gaussian_kernel(0.0).is_err());
        assert!(gaussian_kernel(-1.0).is_err());
        assert!(gaussian_kernel(f64::NAN).is_err());
        assert!(gaussian_kernel(f64::INFINITY).is_err());
    }

    #[test]
    fn constant_plane_is_fixed() {
        let p = FloatPlane::filled(13, 9, 0.7);
        for sigma in [0.3, 1.0, 2.0, 5.0] {
            let b = gaussian_blur(&p, sigma).unwrap();
            assert!(b.values().iter().all(|v| (v - 0.7).abs() < 1e-12));
        }
    }

    #[test]
    fn impulse_response_is_outer_product() {
        // oracle: normalised 1-D weights computed directly, outer product
        let sigma = 1.0f64;
        let raw: Vec<f64> = (-3..=3).map(|i: i32| (-(i * i) as f64 / 2.0).exp()).collect();
        let s: f64 = raw.iter().sum();
        let k1: Vec<f64> = raw.iter().map(|v| v / s).collect();

        let mut p = FloatPlane::filled(9, 9, 0.0);
        p.set(4, 4, 1.0);
        let b = gaussian_blur(&p, sigma).unwrap();
        for y in 0..9 {
            for x in 0..9 {
                let dx = x as i32 - 4;
                let dy = y as i32 - 4;
                let expect = if dx.abs() <= 3 && dy.abs() <= 3 {
                    k1[(dx + 3) as usize] * k1[(dy + 3) as usize]
                } else {
                    0.0
                };
                assert!((b.get(x, y) - expect).abs() < 1e-15, "({x},{y})");
            }
        }
    }

    #[test]
    fn mass_is_conserved() {
        for (seed, sigma) in [(1, 0.8), (2, 2.0), (3, 6.0)] {
            let p = random_plane(32, 32, seed);
            let direct: f64 = p.values().iter().sum();
            let b = gaussian_blur(&p, sigma).unwrap();
            assert!((b.sum() - direct).abs() < 1e-9, "sigma {sigma}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn blur_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, c in -3.0f64..3.0, sigma in 0.5f64..3.0) {
            let p = random_plane(17, 11, seed);
            let q = random_plane(17, 11, seed + 1);
            let mix = FloatPlane::new(17, 11, p.values().iter().zip(q.values()).map(|(x, y)| a * x + c * y).collect()).unwrap();
            let lhs = gaussian_blur(&mix, sigma).unwrap();
            let bp = gaussian_blur(&p, sigma).unwrap();
            let bq = gaussian_blur(&q, sigma).unwrap();
            for i in 0..lhs.values().len() {
                let rhs = a * bp.values()[i] + c * bq.values()[i];
                prop_assert!((lhs.values()[i] - rhs).abs() < 1e-9);
            }
        }

        #[test]
        fn blur_commutes_with_rotation(seed in 0u64..1000, sigma in 0.5f64..4.0) {
            let p = random_plane(15, 10, seed);
            let a = gaussian_blur(&p.rotate90(), sigma).unwrap();
            let b = gaussian_blur(&p, sigma).unwrap().rotate90();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
