//! Single worker against the full pool for the data-parallel kernels.
//! Without the `parallel` feature both arms run the sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use smearnet::celldetect::{hough_circles, sobel_gradients, HoughParams};
use smearnet::dataset::{synth_smear, SynthParams};
use smearnet::imagecore::{gaussian_blur, FloatPlane};
use smearnet::nn::layers::{conv2d_forward, ConvGeom};
use smearnet::nn::{ArchitectureSpec, Network, Tensor};
use smearnet::par;

fn arms() -> [(&'static str, usize); 2] {
    [("sequential", 1), ("pool", par::current_threads())]
}

fn bench(c: &mut Criterion) {
    let smear = synth_smear(&SynthParams::default(), 1).unwrap().raster.to_float();
    let big = FloatPlane::from_fn(1024, 1024, |x, y| ((x * 31 + y * 17) % 97) as f64 / 97.0);
    let grad = sobel_gradients(&gaussian_blur(&smear, 2.0).unwrap()).unwrap();
    let geom = ConvGeom { in_c: 1, in_h: 71, in_w: 71, out_c: 8, kernel: 3, stride: 1, padding: 1 };
    let x = Tensor::new(vec![16, 1, 71, 71], (0..16 * 71 * 71).map(|i| (i % 13) as f64 / 13.0).collect()).unwrap();
    let w: Vec<f64> = (0..geom.weight_len()).map(|i| (i % 7) as f64 / 7.0 - 0.5).collect();
    let b = vec![0.1; 8];
    let net = Network::build(ArchitectureSpec::preset("alexnet-s", 0.5).unwrap(), 0).unwrap();

    let mut g = c.benchmark_group("kernels");
    g.sample_size(10);
    for (name, threads) in arms() {
        g.bench_function(BenchmarkId::new("blur_1024", name), |bn| {
            bn.iter(|| par::with_threads(threads, || gaussian_blur(&big, 2.0).unwrap()))
        });
        g.bench_function(BenchmarkId::new("hough_512", name), |bn| {
            bn.iter(|| par::with_threads(threads, || hough_circles(&grad, &HoughParams::default()).unwrap()))
        });
        g.bench_function(BenchmarkId::new("conv_batch16", name), |bn| {
            bn.iter(|| par::with_threads(threads, || conv2d_forward(&x, &w, &b, &geom).unwrap()))
        });
        g.bench_function(BenchmarkId::new("alexnet_forward_batch16", name), |bn| {
            bn.iter(|| par::with_threads(threads, || net.forward(&x).unwrap()))
        });
        g.bench_function(BenchmarkId::new("synth_512", name), |bn| {
            bn.iter(|| par::with_threads(threads, || synth_smear(&SynthParams::default(), 7).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
