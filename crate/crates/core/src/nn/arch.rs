//! The per-instrument network architectures.

use std::fmt;
use std::str::FromStr;

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::Layer;
use super::network::{Branch, InputBlock, Network};
use crate::dataset::{DatasetStats, Instrument};
use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: usize = 500;
/// Upper bound on parameters per network.
pub const MAX_PARAMS: usize = 250_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Phase features only.
    PhaseOnly,
    /// Normalized amplitude only.
    AmpOnly,
    /// Amplitude and phase branches fused after two layers each.
    Joint,
    /// One chain over `[amplitude ∥ phase]`; diagnostic only.
    NaiveConcat,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::PhaseOnly,
        Architecture::AmpOnly,
        Architecture::Joint,
        Architecture::NaiveConcat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::PhaseOnly => "phase_only",
            Architecture::AmpOnly => "amp_only",
            Architecture::Joint => "joint",
            Architecture::NaiveConcat => "naive_concat",
        }
    }

    pub fn uses_amplitude(self) -> bool {
        self != Architecture::PhaseOnly
    }

    pub fn uses_phase(self) -> bool {
        self != Architecture::AmpOnly
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown architecture {s:?}")))
    }
}

/// Input geometry shared by all architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub channels: usize,
    pub bins: usize,
    pub context: usize,
    /// Phase features per bin.
    pub phase_features: usize,
    pub hidden: usize,
}

impl NetShape {
    /// `I·(2C+1)·K`.
    pub fn amp_dim(&self) -> usize {
        self.channels * (2 * self.context + 1) * self.bins
    }

    /// `I·(2C+1)·K·F`.
    pub fn phase_dim(&self) -> usize {
        self.amp_dim() * self.phase_features
    }

    /// `I·K`.
    pub fn output_dim(&self) -> usize {
        self.channels * self.bins
    }

    fn check(&self, arch: Architecture, stats: &DatasetStats) -> Result<()> {
        if self.channels == 0 || self.bins == 0 || self.hidden == 0 {
            return Err(Error::Config(format!("degenerate network shape {self:?}")));
        }
        if arch.uses_phase() && self.phase_features == 0 {
            return Err(Error::Config(format!("{arch} needs at least one phase feature")));
        }
        if (stats.channels(), stats.bins()) != (self.channels, self.bins) {
            return Err(Error::Config(format!(
                "stats cover {}×{} channel-bins, network expects {}×{}",
                stats.channels(),
                stats.bins(),
                self.channels,
                self.bins
            )));
        }
        let h = self.hidden;
        let input = match arch {
            Architecture::PhaseOnly => self.phase_dim(),
            Architecture::AmpOnly => self.amp_dim(),
            Architecture::Joint | Architecture::NaiveConcat => self.amp_dim() + self.phase_dim(),
        };
        let approx = input
            .checked_mul(h)
            .and_then(|v| v.checked_add(4 * h * h + 2 * h * self.output_dim()));
        match approx {
            Some(p) if p <= MAX_PARAMS => Ok(()),
            _ => Err(Error::Config(format!(
                "{arch} network with input {input} and {h} hidden units exceeds {MAX_PARAMS} parameters"
            ))),
        }
    }
}

fn trunk(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Vec<Layer> {
    vec![
        Layer::dense(input, hidden, rng),
        Layer::relu(hidden),
        Layer::dense(hidden, hidden, rng),
        Layer::relu(hidden),
    ]
}

fn output_stage(
    input: usize,
    shape: &NetShape,
    stats: &DatasetStats,
    instrument: Instrument,
    rng: &mut ChaCha8Rng,
) -> Vec<Layer> {
    let out = shape.output_dim();
    vec![
        Layer::dense(input, out, rng),
        Layer::bias(stats.target_mean(instrument)),
        Layer::relu(out),
    ]
}

fn normalization(stats: &DatasetStats, context: usize) -> Result<Vec<Layer>> {
    let (mean, std) = stats.input_normalization(context);
    Ok(vec![Layer::bias(-mean), Layer::scale(std.mapv(|s| 1.0 / s))?])
}

/// `dense(D_φ,H) relu dense(H,H) relu dense(H,I·K) bias(avg amplitude) relu`.
pub fn build_phase_net(shape: &NetShape, stats: &DatasetStats, instrument: Instrument, seed: u64) -> Result<Network> {
    shape.check(Architecture::PhaseOnly, stats)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = trunk(shape.phase_dim(), shape.hidden, &mut rng);
    layers.extend(output_stage(shape.hidden, shape, stats, instrument, &mut rng));
    Network::chain(InputBlock::Phase, layers)
}

/// `bias(−mean) scale(1/std)` followed by the phase-net chain on `D_A` inputs.
pub fn build_amp_net(shape: &NetShape, stats: &DatasetStats, instrument: Instrument, seed: u64) -> Result<Network> {
    shape.check(Architecture::AmpOnly, stats)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = normalization(stats, shape.context)?;
    layers.extend(trunk(shape.amp_dim(), shape.hidden, &mut rng));
    layers.extend(output_stage(shape.hidden, shape, stats, instrument, &mut rng));
    Network::chain(InputBlock::Amplitude, layers)
}

/// Amplitude branch (normalization + two layers) and phase branch (two
/// layers), concatenated into `dense(2H, I·K) bias relu`.
pub fn build_joint_net(shape: &NetShape, stats: &DatasetStats, instrument: Instrument, seed: u64) -> Result<Network> {
    shape.check(Architecture::Joint, stats)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut amp = normalization(stats, shape.context)?;
    amp.extend(trunk(shape.amp_dim(), shape.hidden, &mut rng));
    let phase = trunk(shape.phase_dim(), shape.hidden, &mut rng);
    let head = output_stage(2 * shape.hidden, shape, stats, instrument, &mut rng);
    Network::new(
        vec![
            Branch {
                input: InputBlock::Amplitude,
                layers: amp,
            },
            Branch {
                input: InputBlock::Phase,
                layers: phase,
            },
        ],
        head,
    )
}

/// One chain over `[amplitude ∥ phase]`. The amplitude part is normalized
/// from stats; the phase part passes through unchanged (bias 0, scale 1).
pub fn build_naive_concat_net(
    shape: &NetShape,
    stats: &DatasetStats,
    instrument: Instrument,
    seed: u64,
) -> Result<Network> {
    shape.check(Architecture::NaiveConcat, stats)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mean, std) = stats.input_normalization(shape.context);
    let pd = shape.phase_dim();
    let bias: Array1<f64> = (-mean).into_iter().chain(std::iter::repeat_n(0.0, pd)).collect();
    let scale: Array1<f64> = std
        .iter()
        .map(|s| 1.0 / s)
        .chain(std::iter::repeat_n(1.0, pd))
        .collect();
    let mut layers = vec![Layer::bias(bias), Layer::scale(scale)?];
    layers.extend(trunk(shape.amp_dim() + pd, shape.hidden, &mut rng));
    layers.extend(output_stage(shape.hidden, shape, stats, instrument, &mut rng));
    Network::chain(InputBlock::Concat, layers)
}

pub fn build_network(
    arch: Architecture,
    shape: &NetShape,
    stats: &DatasetStats,
    instrument: Instrument,
    seed: u64,
) -> Result<Network> {
    match arch {
        Architecture::PhaseOnly => build_phase_net(shape, stats, instrument, seed),
        Architecture::AmpOnly => build_amp_net(shape, stats, instrument, seed),
        Architecture::Joint => build_joint_net(shape, stats, instrument, seed),
        Architecture::NaiveConcat => build_naive_concat_net(shape, stats, instrument, seed),
    }
}

/// Mean |weight| on phase inputs over mean |weight| on amplitude inputs in
/// the first dense layer of a naive-concatenation network.
pub fn phase_weight_ratio(net: &Network, amp_dim: usize) -> Result<f64> {
    let branch = &net.branches()[0];
    if branch.input != InputBlock::Concat {
        return Err(Error::Config(
            "weight ratio is defined for concatenated inputs only".into(),
        ));
    }
    let weight = branch
        .layers
        .iter()
        .find_map(|l| match l {
            Layer::Dense { weight, .. } => Some(weight),
            _ => None,
        })
        .ok_or_else(|| Error::Config("network has no dense layer".into()))?;
    if amp_dim == 0 || amp_dim >= weight.nrows() {
        return Err(Error::Shape(format!(
            "amplitude width {amp_dim} does not split {} inputs",
            weight.nrows()
        )));
    }
    let mean_abs = |rows: std::ops::Range<usize>| {
        let v = weight.slice(ndarray::s![rows, ..]);
        v.iter().map(|w| w.abs()).sum::<f64>() / v.len() as f64
    };
    Ok(mean_abs(amp_dim..weight.nrows()) / mean_abs(0..amp_dim))
}
