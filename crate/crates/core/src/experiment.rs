//! Experiment drivers shared by the command line and the acceptance suite:
//! corpus construction, bundle training, the phase-feature comparison and
//! the oracle upper bounds.

use std::collections::BTreeMap;
use std::path::Path;

use crate::audio::{AudioClip, WavFormat};
use crate::dataset::{
    generate_synthetic_song, make_example_set, scan_corpus, write_song, DatasetStats, ExampleConfig, Instrument, Song,
    Split, SynthSpec, Task,
};
use crate::error::{Error, Result};
use crate::eval::{aggregate, evaluate_song, method_table, ScoreReport, SdrMode};
use crate::nn::{build_network, train, Architecture, ModelBundle, NetShape, TrainConfig, TrainReport};
use crate::par;
use crate::phase::PhaseFeatureConfig;
use crate::separation::{
    estimate_amplitudes, irm_amplitude, mixture_phase_synthesize, oracle_phase_synthesize, separate, WienerConfig,
};
use crate::stft::{stft, StftConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub dev: Vec<Song>,
    pub test: Vec<Song>,
}

/// Seed of song `n` in a corpus generated from `seed`.
pub fn song_seed(seed: u64, n: usize) -> u64 {
    seed.wrapping_mul(1000).wrapping_add(n as u64)
}

/// `songs` synthetic songs; the last `test_songs` form the test split.
pub fn synth_corpus(spec: &SynthSpec, songs: usize, test_songs: usize, seed: u64) -> Result<Corpus> {
    if test_songs == 0 || test_songs >= songs {
        return Err(Error::Config(format!(
            "{test_songs} test songs out of {songs} leaves a split empty"
        )));
    }
    let all: Vec<Song> = par::map_range(songs, |n| generate_synthetic_song(spec, song_seed(seed, n)))
        .into_iter()
        .collect::<Result<_>>()?;
    let mut dev = all;
    let test = dev.split_off(songs - test_songs);
    Ok(Corpus { dev, test })
}

/// Writes both splits in the standard corpus layout.
pub fn write_corpus(root: impl AsRef<Path>, corpus: &Corpus, format: WavFormat, note: &str) -> Result<()> {
    for (split, songs) in [(Split::Dev, &corpus.dev), (Split::Test, &corpus.test)] {
        for s in songs {
            write_song(root.as_ref(), split, s, format, Some(note))?;
        }
    }
    Ok(())
}

pub fn load_corpus(root: impl AsRef<Path>) -> Result<Corpus> {
    let scan = scan_corpus(root)?;
    let load = |split| -> Result<Vec<Song>> { par::map_slice(&scan.split(split), |r| r.load()).into_iter().collect() };
    Ok(Corpus {
        dev: load(Split::Dev)?,
        test: load(Split::Test)?,
    })
}

/// Everything needed to train one bundle.
#[derive(Clone, Debug)]
pub struct BundleSpec {
    pub architecture: Architecture,
    pub stft: StftConfig,
    pub examples: ExampleConfig,
    pub hidden: usize,
    pub instruments: Vec<Instrument>,
    pub train: TrainConfig,
    pub seed: u64,
}

impl BundleSpec {
    pub fn shape(&self, channels: usize) -> NetShape {
        NetShape {
            channels,
            bins: self.stft.bins(),
            context: self.examples.context,
            phase_features: self.examples.phase_features(),
            hidden: self.hidden,
        }
    }
}

/// Initialization seed of one instrument's network.
fn init_seed(seed: u64, instrument: Instrument) -> u64 {
    seed.wrapping_mul(31).wrapping_add(instrument as u64)
}

/// Trains one network per instrument on `songs`.
pub fn train_bundle(spec: &BundleSpec, songs: &[Song], stats: &DatasetStats) -> Result<ModelBundle> {
    let channels = songs
        .first()
        .ok_or_else(|| Error::Empty("no training songs".into()))?
        .mixture
        .channels();
    let shape = spec.shape(channels);
    let mut networks = BTreeMap::new();
    let mut reports = BTreeMap::new();
    let train_cfg = TrainConfig {
        seed: spec.seed,
        ..spec.train.clone()
    };
    for &i in &spec.instruments {
        let set = make_example_set(songs, &spec.stft, &spec.examples, i)?;
        let mut net = build_network(spec.architecture, &shape, stats, i, init_seed(spec.seed, i))?;
        let report = train(&mut net, &set, &train_cfg)?;
        log::info!(
            "{} {i}: {} epochs, final train mse {:.6}",
            spec.architecture,
            report.train_mse.len(),
            report.final_train_mse()
        );
        networks.insert(i, net);
        reports.insert(i, report);
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("architecture".into(), spec.architecture.to_string());
    metadata.insert("seed".into(), spec.seed.to_string());
    if let Some(p) = &spec.examples.phase {
        metadata.insert("phase_features".into(), p.label());
    }
    let bundle = ModelBundle {
        architecture: spec.architecture,
        stft: spec.stft.clone(),
        examples: spec.examples.clone(),
        shape,
        stats: stats.clone(),
        networks,
        reports,
        train: Some(train_cfg),
        metadata,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// One phase-only training run of the feature comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRun {
    pub task: Task,
    pub features: String,
    pub instrument: Instrument,
    pub seed: u64,
    pub report: TrainReport,
}

/// Settings of the phase-feature comparison.
#[derive(Clone, Debug)]
pub struct FeatureExperiment {
    pub stft: StftConfig,
    pub variants: Vec<PhaseFeatureConfig>,
    pub tasks: Vec<Task>,
    pub instruments: Vec<Instrument>,
    pub context: usize,
    pub hidden: usize,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
}

/// Trains a phase-only network for every task, feature variant, instrument
/// and seed. Examples are built once per (task, variant, instrument).
pub fn run_feature_experiment(
    exp: &FeatureExperiment,
    songs: &[Song],
    stats: &DatasetStats,
) -> Result<Vec<FeatureRun>> {
    let mut runs = Vec::new();
    for &task in &exp.tasks {
        for variant in &exp.variants {
            let examples = ExampleConfig {
                context: exp.context,
                amplitude: false,
                phase: Some(variant.clone()),
                task,
            };
            for &instrument in &exp.instruments {
                let set = make_example_set(songs, &exp.stft, &examples, instrument)?;
                for &seed in &exp.seeds {
                    let spec = BundleSpec {
                        architecture: Architecture::PhaseOnly,
                        stft: exp.stft.clone(),
                        examples: examples.clone(),
                        hidden: exp.hidden,
                        instruments: vec![instrument],
                        train: exp.train.clone(),
                        seed,
                    };
                    let shape = spec.shape(set.channels());
                    let mut net = build_network(
                        Architecture::PhaseOnly,
                        &shape,
                        stats,
                        instrument,
                        init_seed(seed, instrument),
                    )?;
                    let report = train(
                        &mut net,
                        &set,
                        &TrainConfig {
                            seed,
                            ..exp.train.clone()
                        },
                    )?;
                    log::info!(
                        "{task:?} {} {instrument} seed {seed}: final train mse {:.6}",
                        variant.label(),
                        report.final_train_mse()
                    );
                    runs.push(FeatureRun {
                        task,
                        features: variant.label(),
                        instrument,
                        seed,
                        report,
                    });
                }
            }
        }
    }
    Ok(runs)
}

/// Median over seeds of the final training MSE.
pub fn median_final_mse(runs: &[FeatureRun], task: Task, features: &str, instrument: Instrument) -> Option<f64> {
    let mut v: Vec<f64> = runs
        .iter()
        .filter(|r| r.task == task && r.features == features && r.instrument == instrument)
        .map(|r| r.report.final_train_mse())
        .collect();
    (!v.is_empty()).then(|| crate::theory::median(&mut v))
}

/// `task,features,instrument,seed,epoch,train_mse`.
pub fn feature_runs_csv(runs: &[FeatureRun]) -> String {
    let mut out = String::from("task,features,instrument,seed,epoch,train_mse\n");
    for r in runs {
        let task = match r.task {
            Task::Separation => "separation",
            Task::Reconstruction => "reconstruction",
        };
        for (e, mse) in r.report.train_mse.iter().enumerate() {
            out.push_str(&format!(
                "{task},{},{},{},{},{mse}\n",
                r.features,
                r.instrument,
                r.seed,
                e + 1
            ));
        }
    }
    out
}

/// Scores per-song estimates against the songs' stems.
pub fn score_estimates(
    songs: &[Song],
    estimates: &[BTreeMap<Instrument, AudioClip>],
    mode: SdrMode,
    metadata: BTreeMap<String, String>,
) -> Result<ScoreReport> {
    if songs.len() != estimates.len() {
        return Err(Error::Shape(format!(
            "{} songs, {} estimate sets",
            songs.len(),
            estimates.len()
        )));
    }
    let scores = par::map_range(songs.len(), |n| evaluate_song(&songs[n], &estimates[n], mode))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    aggregate(scores, metadata)
}

/// Separates every song with `bundle` and scores the result.
pub fn score_bundle(
    bundle: &ModelBundle,
    songs: &[Song],
    wiener: &WienerConfig,
    mode: SdrMode,
    mut metadata: BTreeMap<String, String>,
) -> Result<ScoreReport> {
    let estimates = songs
        .iter()
        .map(|s| Ok(separate(bundle, &s.mixture, wiener)?.estimates))
        .collect::<Result<Vec<_>>>()?;
    metadata.extend(bundle.metadata.clone());
    score_estimates(songs, &estimates, mode, metadata)
}

/// The three reference points of the upper-bound comparison.
#[derive(Clone, Debug)]
pub struct UpperBounds {
    /// Ideal-ratio-mask amplitude with the mixture phase.
    pub irm_mixture_phase: ScoreReport,
    /// Network amplitude with each source's true phase.
    pub dnn_oracle_phase: ScoreReport,
    /// Network amplitude with the mixture phase, no post-filter.
    pub dnn_mixture_phase: ScoreReport,
}

impl UpperBounds {
    pub fn table(&self) -> String {
        method_table(&[
            ("irm_amplitude+mixture_phase", &self.irm_mixture_phase),
            ("dnn_amplitude+oracle_phase", &self.dnn_oracle_phase),
            ("dnn_amplitude+mixture_phase", &self.dnn_mixture_phase),
        ])
    }
}

pub fn upper_bounds(
    bundle: &ModelBundle,
    songs: &[Song],
    irm_exponent: f64,
    mode: SdrMode,
    metadata: BTreeMap<String, String>,
) -> Result<UpperBounds> {
    let cfg = &bundle.stft;
    let mut irm = Vec::with_capacity(songs.len());
    let mut oracle = Vec::with_capacity(songs.len());
    let mut dnn = Vec::with_capacity(songs.len());
    for song in songs {
        let mix = stft(&song.mixture, cfg)?;
        let sources = song
            .sources
            .iter()
            .map(|(&i, c)| Ok((i, stft(c, cfg)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let irm_amp = irm_amplitude(&sources, &mix, irm_exponent)?;
        irm.push(mixture_phase_synthesize(&irm_amp, &mix)?);

        let amps = estimate_amplitudes(bundle, &song.mixture)?;
        oracle.push(
            amps.iter()
                .map(|(&i, a)| Ok((i, oracle_phase_synthesize(a, song.source(i), cfg)?)))
                .collect::<Result<BTreeMap<_, _>>>()?,
        );
        dnn.push(mixture_phase_synthesize(&amps, &mix)?);
    }
    let mut meta = metadata;
    meta.extend(bundle.metadata.clone());
    meta.insert("irm_exponent".into(), irm_exponent.to_string());
    Ok(UpperBounds {
        irm_mixture_phase: score_estimates(songs, &irm, mode, meta.clone())?,
        dnn_oracle_phase: score_estimates(songs, &oracle, mode, meta.clone())?,
        dnn_mixture_phase: score_estimates(songs, &dnn, mode, meta)?,
    })
}
