//! Sequential versus data-parallel kernels.
//!
//! With the `parallel` feature each kernel runs once on a one-thread rayon
//! pool and once on the default pool; without it both rows measure the
//! sequential fallback.

use std::collections::BTreeMap;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use phasesep::audio::AudioClip;
use phasesep::dataset::Instrument;
use phasesep::nn::matmul;
use phasesep::phase::{extract_phase_features, PhaseFeatureConfig};
use phasesep::separation::{wiener_filter, WienerConfig};
use phasesep::stft::{amplitude, phase, stft, StftConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::{ThreadPool, ThreadPoolBuilder};

fn pools() -> Vec<(&'static str, ThreadPool)> {
    let one = ThreadPoolBuilder::new().num_threads(1).build().expect("pool");
    let all = ThreadPoolBuilder::new().build().expect("pool");
    vec![("sequential", one), ("parallel", all)]
}

fn noise(channels: usize, len: usize, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AudioClip::new(
        Array2::from_shape_simple_fn((channels, len), || rng.random_range(-1.0..1.0)),
        8000,
    )
    .expect("clip")
}

fn bench_stft(c: &mut Criterion) {
    let cfg = StftConfig::desk();
    let clip = noise(2, 8 * 8000, 1);
    let mut g = c.benchmark_group("stft_8s_stereo");
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::new("forward", name), |b| {
            b.iter(|| pool.install(|| stft(&clip, &cfg).expect("stft")))
        });
    }
    g.finish();
}

fn bench_features(c: &mut Criterion) {
    let cfg = StftConfig::desk();
    let ph = phase(&stft(&noise(2, 8 * 8000, 2), &cfg).expect("stft"));
    let feat = PhaseFeatureConfig::full(cfg.fft_size, cfg.hop);
    let mut g = c.benchmark_group("phase_features_8s_stereo");
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::new("dt_shift+df_shift", name), |b| {
            b.iter(|| pool.install(|| extract_phase_features(&ph, &feat).expect("features")))
        });
    }
    g.finish();
}

fn bench_wiener(c: &mut Criterion) {
    let cfg = StftConfig::desk();
    let mixture = stft(&noise(2, 4 * 8000, 3), &cfg).expect("stft");
    let estimates: BTreeMap<Instrument, _> = Instrument::ALL
        .iter()
        .enumerate()
        .map(|(n, &i)| {
            (
                i,
                amplitude(&stft(&noise(2, 4 * 8000, 10 + n as u64), &cfg).expect("stft")),
            )
        })
        .collect();
    let wiener = WienerConfig::default();
    let mut g = c.benchmark_group("wiener_4s_stereo");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::new("multichannel", name), |b| {
            b.iter(|| pool.install(|| wiener_filter(&estimates, &mixture, &wiener).expect("filter")))
        });
    }
    g.finish();
}

fn bench_matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = Array2::from_shape_simple_fn((256, 2570), || rng.random_range(-1.0..1.0));
    let w = Array2::from_shape_simple_fn((2570, 128), || rng.random_range(-1.0..1.0));
    let mut g = c.benchmark_group("matmul_256x2570x128");
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::new("dense", name), |b| {
            b.iter(|| pool.install(|| matmul(a.view(), w.view())))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_stft, bench_features, bench_wiener, bench_matmul);
criterion_main!(benches);
