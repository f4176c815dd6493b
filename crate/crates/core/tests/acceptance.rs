//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, Array3, Axis};
use phasesep::audio::{mix, AudioClip, WavFormat};
use phasesep::config::ExperimentConfig;
use phasesep::dataset::{compute_stats, DatasetStats, ExampleConfig, Instrument, SynthSpec, Task};
use phasesep::eval::{ScoreReport, SdrMode};
use phasesep::experiment::{
    median_final_mse, run_feature_experiment, score_bundle, synth_corpus, train_bundle, upper_bounds, BundleSpec,
    Corpus, FeatureExperiment, UpperBounds,
};
use phasesep::nn::{Architecture, ModelBundle, TrainConfig};
use phasesep::phase::{correct_time_shift, feature_histogram, time_diff, wrap, PhaseFeatureConfig};
use phasesep::separation::{
    is_hermitian_psd, separate_from_amplitudes, spatial_covariances, wiener_filter, AmpMap, WienerConfig, WienerMode,
};
use phasesep::stft::{amplitude, istft, phase, stft, StftConfig};
use phasesep::theory::{median, relation_convergence, SampledSignal, TfGrid, TheoryConfig, QUADRATURE_FLOOR};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

const CORPUS_SEED: u64 = 2024;
const SONG_SECONDS: f64 = 4.0;
const SONGS: usize = 10;
const TEST_SONGS: usize = 4;
const SEEDS: [u64; 3] = [0, 1, 2];
/// Hidden width at desk scale.
const HIDDEN: usize = 128;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn report(id: usize, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let o = f();
    let elapsed = t.elapsed();
    let in_time = elapsed <= limit;
    let pass = o.pass && in_time;
    let timing = if in_time {
        format!("{:.2} s", elapsed.as_secs_f64())
    } else {
        format!("{:.2} s, over the {} s budget", elapsed.as_secs_f64(), limit.as_secs())
    };
    println!(
        "{} criterion {id} ({name}): {} [{timing}]",
        if pass { "PASS" } else { "FAIL" },
        o.detail
    );
    pass
}

fn rel_l2(a: &AudioClip, b: &AudioClip) -> f64 {
    let num: f64 = (&a.samples() - &b.samples()).mapv(|d| d * d).sum();
    (num / b.samples().mapv(|d| d * d).sum()).sqrt()
}

fn stft_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = StftConfig::desk();
    let clip = AudioClip::new(
        Array2::from_shape_simple_fn((2, 3 * cfg.sample_rate as usize), || rng.random_range(-1.0..1.0)),
        cfg.sample_rate,
    )
    .expect("valid clip");
    let err = stft(&clip, &cfg).and_then(|s| istft(&s)).map(|b| rel_l2(&b, &clip));
    match err {
        Ok(e) => outcome(e < 1e-10, format!("relative L2 error {e:.2e} (< 1e-10)")),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn shift_correction() -> Outcome {
    let cfg = StftConfig::desk();
    let k0 = 32;
    let w = 2.0 * PI * k0 as f64 / cfg.fft_size as f64;
    let x: Vec<f64> = (0..cfg.sample_rate as usize)
        .map(|n| (w * n as f64 + 0.7).cos())
        .collect();
    let clip = AudioClip::from_channels(&[x], cfg.sample_rate).expect("valid clip");
    let spec = stft(&clip, &cfg).expect("stft");
    let dt = time_diff(&phase(&spec)).expect("two frames");
    let corrected = correct_time_shift(&dt, cfg.fft_size, cfg.hop);
    // interior frames: both windows of the difference lie inside the signal
    let edge = cfg.fft_size / cfg.hop / 2 + 1;
    let interior = edge..spec.frames() - edge;
    let worst = interior
        .clone()
        .map(|m| corrected[[0, m, k0]].abs())
        .fold(0.0, f64::max);
    let values: Array1<f64> = interior.map(|m| dt[[0, m, k0]]).collect();
    let h = feature_histogram(values.view(), 64, k0, "dt").expect("values");
    let target = wrap(-(k0 as f64) * PI / 2.0);
    let off = wrap(h.mode() - target).abs();
    outcome(
        worst < 1e-6 && off <= h.bin_width(),
        format!(
            "max |corrected dt| {worst:.2e} (< 1e-6); uncorrected mode {:.4} vs {target:.4}, bin width {:.4}",
            h.mode(),
            h.bin_width()
        ),
    )
}

fn theory_relation() -> Outcome {
    let cfg = TheoryConfig::default();
    let run = || -> phasesep::Result<(String, bool)> {
        let (coarse, fine) = relation_convergence(&cfg.signal(), &cfg.grid()?, cfg.threshold)?;
        let within = coarse.passes(cfg.tolerance) && fine.passes(cfg.tolerance);
        // on a linear chirp the centred differences are exact, so refinement
        // can only hold the quadrature floor; curvature shows the order
        let holds = |c: f64, f: f64| f <= c.max(QUADRATURE_FLOOR);
        let refined = holds(coarse.median_relative_a, fine.median_relative_a)
            && holds(coarse.median_relative_b, fine.median_relative_b);
        let fm = SampledSignal::quadratic_fm(100.0, 2000.0, 0.5, 1.0, 2000.0);
        let grid = TfGrid::spanning((0.4, 0.6), 2e-3, (2.0 * PI * 60.0, 2.0 * PI * 160.0), 4.0, cfg.lambda)?;
        let (c2, f2) = relation_convergence(&fm, &grid, cfg.threshold)?;
        let order_a = c2.median_relative_a / f2.median_relative_a;
        let order_b = c2.median_relative_b / f2.median_relative_b;
        let improving = order_a > 3.0 && order_b > 3.0;
        Ok((
            format!(
                "chirp median rel. residual a {:.2e} -> {:.2e}, b {:.2e} -> {:.2e} (< 5 %); curved FM refinement gain a {order_a:.2}x, b {order_b:.2}x",
                coarse.median_relative_a, fine.median_relative_a, coarse.median_relative_b, fine.median_relative_b
            ),
            within && refined && improving,
        ))
    };
    match run() {
        Ok((d, p)) => outcome(p, d),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn gradient_checks() -> Outcome {
    let errs = common::layer_gradient_errors(7, 8);
    let (name, worst) = errs
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .expect("some layers");
    let kinds: std::collections::BTreeSet<&str> = errs.iter().filter_map(|(n, _)| n.split(' ').nth(2)).collect();
    outcome(
        worst < common::TOL && kinds.len() == 4,
        format!(
            "{} checks over {} layer kinds, worst relative error {worst:.2e} ({name})",
            errs.len(),
            kinds.len()
        ),
    )
}

struct Shared {
    corpus: Corpus,
    stats: DatasetStats,
}

fn shared() -> Shared {
    let spec = SynthSpec {
        duration: SONG_SECONDS,
        ..SynthSpec::default()
    };
    let corpus = synth_corpus(&spec, SONGS, TEST_SONGS, CORPUS_SEED).expect("synthetic corpus");
    let stats = compute_stats(&corpus.dev, &StftConfig::desk()).expect("stats");
    Shared { corpus, stats }
}

fn feature_ordering(sh: &Shared) -> Outcome {
    let stft_cfg = StftConfig::desk();
    let derived = PhaseFeatureConfig::full(stft_cfg.fft_size, stft_cfg.hop);
    let raw = PhaseFeatureConfig::raw(stft_cfg.fft_size, stft_cfg.hop);
    let exp = FeatureExperiment {
        stft: stft_cfg,
        variants: vec![derived.clone(), raw.clone()],
        tasks: vec![Task::Reconstruction, Task::Separation],
        instruments: Instrument::ALL.to_vec(),
        context: 5,
        hidden: HIDDEN,
        train: TrainConfig {
            epochs: 5,
            batch_size: 64,
            validation_fraction: 0.0,
            ..TrainConfig::default()
        },
        seeds: SEEDS.to_vec(),
    };
    let runs = match run_feature_experiment(&exp, &sh.corpus.dev, &sh.stats) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for task in [Task::Reconstruction, Task::Separation] {
        for i in Instrument::ALL {
            let d = median_final_mse(&runs, task, &derived.label(), i).expect("derived runs");
            let r = median_final_mse(&runs, task, &raw.label(), i).expect("raw runs");
            pass &= d < r;
            println!("    {task:?} {i}: derivative features {d:.5} vs raw phase {r:.5}");
            parts.push(if d < r { "<" } else { ">=" });
        }
    }
    outcome(
        pass,
        format!(
            "median final train MSE, derivative vs raw, reconstruction then separation, per instrument: {}",
            parts.join(" ")
        ),
    )
}

fn bundle_spec(arch: Architecture, seed: u64) -> BundleSpec {
    let stft_cfg = StftConfig::desk();
    let phase = arch
        .uses_phase()
        .then(|| PhaseFeatureConfig::full(stft_cfg.fft_size, stft_cfg.hop));
    BundleSpec {
        architecture: arch,
        stft: stft_cfg,
        examples: ExampleConfig {
            context: 5,
            amplitude: arch.uses_amplitude(),
            phase,
            task: Task::Separation,
        },
        hidden: HIDDEN,
        instruments: Instrument::ALL.to_vec(),
        train: TrainConfig {
            epochs: 8,
            batch_size: 64,
            validation_fraction: 0.1,
            patience: 3,
            ..TrainConfig::default()
        },
        seed,
    }
}

fn joint_vs_amplitude(sh: &Shared, amp_bundles: &mut Vec<ModelBundle>) -> Outcome {
    let mut joint = Vec::new();
    let mut amp = Vec::new();
    for seed in SEEDS {
        let run = |arch| -> phasesep::Result<(ModelBundle, ScoreReport)> {
            let b = train_bundle(&bundle_spec(arch, seed), &sh.corpus.dev, &sh.stats)?;
            let r = score_bundle(
                &b,
                &sh.corpus.test,
                &WienerConfig::default(),
                SdrMode::WholeClip,
                BTreeMap::new(),
            )?;
            Ok((b, r))
        };
        match (run(Architecture::Joint), run(Architecture::AmpOnly)) {
            (Ok((_, j)), Ok((b, a))) => {
                println!(
                    "    seed {seed}: joint {:.3} dB, amplitude only {:.3} dB",
                    j.overall_db, a.overall_db
                );
                joint.push(j.overall_db);
                amp.push(a.overall_db);
                amp_bundles.push(b);
            }
            (Err(e), _) | (_, Err(e)) => return outcome(false, e.to_string()),
        }
    }
    let (j, a) = (median(&mut joint), median(&mut amp));
    outcome(
        j >= a,
        format!("median test SDR over seeds: joint {j:.3} dB vs amplitude only {a:.3} dB"),
    )
}

fn upper_bound_ordering(sh: &Shared, amp_bundles: &[ModelBundle]) -> Outcome {
    if amp_bundles.is_empty() {
        return outcome(false, "no amplitude-only bundles were trained");
    }
    let bounds: Vec<UpperBounds> = match amp_bundles
        .iter()
        .map(|b| upper_bounds(b, &sh.corpus.test, 1.0, SdrMode::WholeClip, BTreeMap::new()))
        .collect()
    {
        Ok(b) => b,
        Err(e) => return outcome(false, e.to_string()),
    };
    let med = |pick: fn(&UpperBounds) -> &ScoreReport, i: Instrument| {
        let mut v: Vec<f64> = bounds.iter().map(|b| pick(b).median_db[&i]).collect();
        median(&mut v)
    };
    let mut pass = true;
    for i in Instrument::ALL {
        let irm = med(|b| &b.irm_mixture_phase, i);
        let oracle = med(|b| &b.dnn_oracle_phase, i);
        let dnn = med(|b| &b.dnn_mixture_phase, i);
        println!("    {i}: irm+mixture phase {irm:.3}, dnn+oracle phase {oracle:.3}, dnn+mixture phase {dnn:.3} dB");
        pass &= irm > dnn && oracle > dnn;
    }
    outcome(
        pass,
        "per instrument, irm amplitude + mixture phase > dnn and dnn + oracle phase > dnn + mixture phase",
    )
}

fn wiener_invariants() -> Outcome {
    let spec = SynthSpec {
        duration: 2.0,
        ..SynthSpec::default()
    };
    let song = phasesep::dataset::generate_synthetic_song(&spec, 77).expect("song");
    let cfg = StftConfig::desk();
    let run = || -> phasesep::Result<(f64, f64, bool)> {
        let mix_spec = stft(&song.mixture, &cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // true amplitudes with multiplicative noise stand in for estimates
        let amps: AmpMap = song
            .sources
            .iter()
            .map(|(&i, c)| Ok((i, amplitude(&stft(c, &cfg)?).mapv(|a| a * rng.random_range(0.5..1.5)))))
            .collect::<phasesep::Result<_>>()?;

        let res = separate_from_amplitudes(amps.clone(), &song.mixture, &cfg, &WienerConfig::ratio_mask())?;
        let sum = mix(&res.estimates.values().cloned().collect::<Vec<_>>())?;
        let conservation = rel_l2(&sum, &song.mixture);

        let mc = WienerConfig {
            mode: WienerMode::Multichannel,
            ..WienerConfig::default()
        };
        let base = wiener_filter(&amps, &mix_spec, &mc)?;
        let scaled: AmpMap = amps.iter().map(|(&i, a)| (i, a * 10f64.sqrt())).collect();
        let other = wiener_filter(&scaled, &mix_spec, &mc)?;
        let mut scale_err: f64 = 0.0;
        for (a, b) in base.values().zip(other.values()) {
            let diff = (a.values() - b.values())
                .mapv(|z| z.norm())
                .fold(0.0, |m: f64, &d| m.max(d));
            let norm = a.values().mapv(|z| z.norm()).fold(0.0, |m: f64, &d| m.max(d));
            scale_err = scale_err.max(diff / norm.max(f64::MIN_POSITIVE));
        }

        let v: Vec<Array2<f64>> = amps
            .values()
            .map(|a: &Array3<f64>| a.mapv(|x| x * x).mean_axis(Axis(0)).expect("channels"))
            .collect();
        let covs = spatial_covariances(&v, &mix_spec, mc.epsilon)?;
        let psd = covs
            .iter()
            .all(|r| r.axis_iter(Axis(0)).all(|m| is_hermitian_psd(m, 1e-12)));
        Ok((conservation, scale_err, psd))
    };
    match run() {
        Ok((c, s, psd)) => outcome(
            c < 1e-12 && s < 1e-10 && psd,
            format!("conservation {c:.2e} (< 1e-12), scale invariance {s:.2e} (< 1e-10), all covariances Hermitian PSD: {psd}"),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

/// Loss curves, bundle bytes and stem WAV bytes of one run.
type RunArtifacts = (Vec<Vec<f64>>, Vec<u8>, Vec<Vec<u8>>);

fn determinism() -> Outcome {
    let cfg = ExperimentConfig {
        synth: SynthSpec {
            duration: 1.0,
            ..SynthSpec::default()
        },
        songs: 3,
        test_songs: 1,
        hidden: 16,
        context: 2,
        architectures: vec![Architecture::Joint],
        train: TrainConfig {
            epochs: 3,
            batch_size: 32,
            ..TrainConfig::default()
        },
        seeds: vec![5],
        ..ExperimentConfig::default()
    };
    let run = || -> phasesep::Result<RunArtifacts> {
        let seed = cfg.seeds[0];
        let corpus = synth_corpus(&cfg.synth, cfg.songs, cfg.test_songs, seed)?;
        let stft_cfg = cfg.stft_config();
        let stats = compute_stats(&corpus.dev, &stft_cfg)?;
        let spec = BundleSpec {
            architecture: Architecture::Joint,
            stft: stft_cfg,
            examples: cfg.example_config(Architecture::Joint)?,
            hidden: cfg.hidden,
            instruments: Instrument::ALL.to_vec(),
            train: cfg.train.clone(),
            seed,
        };
        let bundle = train_bundle(&spec, &corpus.dev, &stats)?;
        let curves = bundle.reports.values().map(|r| r.train_mse.clone()).collect();
        let res = phasesep::separation::separate(&bundle, &corpus.test[0].mixture, &cfg.wiener)?;
        let dir = tempfile::tempdir().map_err(|e| phasesep::Error::Config(e.to_string()))?;
        let paths = res.write_stems(
            dir.path(),
            &corpus.test[0].name,
            WavFormat::Float32,
            &cfg.provenance(seed),
        )?;
        let wavs = paths
            .iter()
            .map(|p| std::fs::read(p).map_err(|e| phasesep::Error::Config(e.to_string())))
            .collect::<phasesep::Result<_>>()?;
        Ok((curves, bundle.to_bytes()?, wavs))
    };
    match (run(), run()) {
        (Ok((c1, b1, w1)), Ok((c2, b2, w2))) => {
            let curve_diff = c1
                .iter()
                .flatten()
                .zip(c2.iter().flatten())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let same_wavs = w1 == w2;
            outcome(
                curve_diff <= 1e-12 && same_wavs && b1 == b2,
                format!(
                    "loss curve max difference {curve_diff:.1e} (<= 1e-12), float32 stems bitwise equal: {same_wavs}, bundles bitwise equal: {}",
                    b1 == b2
                ),
            )
        }
        (Err(e), _) | (_, Err(e)) => outcome(false, e.to_string()),
    }
}

fn main() {
    let started = Instant::now();
    let secs = Duration::from_secs;
    let mut passed = vec![
        report(1, "STFT round trip", secs(1), stft_round_trip),
        report(2, "shift-theorem correction", secs(1), shift_correction),
        report(3, "phase/amplitude relation on a chirp", secs(30), theory_relation),
        report(4, "gradient checks", secs(10), gradient_checks),
    ];
    let sh = shared();
    passed.push(report(5, "phase feature ordering", secs(20 * 60), || {
        feature_ordering(&sh)
    }));
    let mut amp_bundles = Vec::new();
    passed.push(report(6, "joint vs amplitude only", secs(20 * 60), || {
        joint_vs_amplitude(&sh, &mut amp_bundles)
    }));
    passed.push(report(7, "upper-bound ordering", secs(5 * 60), || {
        upper_bound_ordering(&sh, &amp_bundles)
    }));
    passed.push(report(8, "Wiener invariants", secs(60), wiener_invariants));
    passed.push(report(9, "determinism", secs(10 * 60), determinism));

    let n = passed.iter().filter(|&&p| p).count();
    println!(
        "{n}/{} criteria passed in {:.1} s",
        passed.len(),
        started.elapsed().as_secs_f64()
    );
    if n != passed.len() {
        std::process::exit(1);
    }
}
