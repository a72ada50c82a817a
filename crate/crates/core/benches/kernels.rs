//! Hot kernels on a single-worker pool against the full pool. Build with
//! `--no-default-features` to time the sequential fallback instead.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use vast_core::metrics::{divergence_residuals, ssim};
use vast_core::reconstruction::{pod_decompose, uod_correct, ReconOptions};
use vast_core::segmentation::{segment, SegmentationOptions};
use vast_core::synth::{
    add_noise, analytic_poiseuille, apply_psf, magnitude_model, synthesize_signal, GridSpec,
};
use vast_core::{FlowBundle, MaskVolume, VelocityField};

struct Case {
    bundle: FlowBundle,
    truth: VelocityField,
    mask: MaskVolume,
    raw: VelocityField,
}

fn case() -> Case {
    let spec = GridSpec { dims: [24, 24, 24, 13], spacing: [1.0; 3], frame_interval: 60.0 };
    let gt = analytic_poiseuille(&spec, 8.0, 2, 70.0).unwrap();
    let clean = synthesize_signal(&gt, [50.0; 3], 1.0, 0.2).unwrap();
    let bundle = add_noise(&apply_psf(&clean).unwrap(), &magnitude_model(&gt, 1.0, 0.2), 5.0, 9).unwrap();
    let raw = bundle.raw_velocity();
    Case { bundle, truth: gt.velocity, mask: gt.lumen_mask, raw }
}

fn pools() -> Vec<(&'static str, usize)> {
    let all = std::thread::available_parallelism().map_or(1, |n| n.get());
    vec![("sequential", 1), ("parallel", all)]
}

fn kernels(c: &mut Criterion) {
    let data = case();
    let uod = ReconOptions::default().uod();
    let mut group = c.benchmark_group("kernels");
    group.sample_size(10);
    for (name, threads) in pools() {
        let run = |op: &(dyn Fn() + Sync)| vast_core::par::with_threads(threads, op);
        group.bench_function(BenchmarkId::new("uod", name), |b| {
            b.iter(|| {
                run(&|| {
                    let mut f = data.raw.clone();
                    black_box(uod_correct(&mut f, &data.mask, &uod));
                })
            })
        });
        group.bench_function(BenchmarkId::new("ssim", name), |b| {
            b.iter(|| run(&|| {
                black_box(ssim(&data.raw, &data.truth, &data.mask).unwrap());
            }))
        });
        group.bench_function(BenchmarkId::new("divergence", name), |b| {
            b.iter(|| run(&|| {
                black_box(divergence_residuals(&data.raw, &data.mask).unwrap());
            }))
        });
        group.bench_function(BenchmarkId::new("pod", name), |b| {
            b.iter(|| run(&|| {
                black_box(pod_decompose(&data.raw, &data.mask).unwrap());
            }))
        });
        group.bench_function(BenchmarkId::new("segment", name), |b| {
            b.iter(|| run(&|| {
                black_box(segment(&data.bundle, &SegmentationOptions::default()).unwrap());
            }))
        });
    }
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
