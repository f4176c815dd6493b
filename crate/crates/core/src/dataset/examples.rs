//! Context-stacked network examples, one per STFT frame.
//!
//! Row layout for frame `m` with context radius `C`: channel-major, then
//! context frame `m−C..=m+C` (indices clamped to the valid range, i.e. edge
//! frames replicated), then bin, then (phase block only) feature. Targets are
//! the instrument amplitude at frame `m`, laid out channel then bin.

use ndarray::{s, Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use super::{Instrument, Song};
use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::par;
use crate::phase::{extract_phase_features, PhaseFeatureConfig};
use crate::stft::{amplitude, phase, stft, StftConfig};

pub const DEFAULT_CONTEXT: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Inputs from the mixture.
    Separation,
    /// Inputs from the target instrument's own stem.
    Reconstruction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleConfig {
    pub context: usize,
    pub amplitude: bool,
    pub phase: Option<PhaseFeatureConfig>,
    pub task: Task,
}

impl ExampleConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.amplitude && self.phase.is_none() {
            return Err(Error::Config("examples need amplitude and/or phase inputs".into()));
        }
        if let Some(p) = &self.phase {
            p.validate()?;
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        2 * self.context + 1
    }

    pub fn phase_features(&self) -> usize {
        self.phase.as_ref().map_or(0, PhaseFeatureConfig::feature_count)
    }
}

/// Per-frame input tensors of one clip.
#[derive(Clone, Debug)]
pub struct InputFeatures {
    /// `channels × frames × bins`.
    pub amp: Option<Array3<f64>>,
    /// `channels × frames × bins × features`.
    pub phase: Option<Array4<f64>>,
    pub frames: usize,
}

impl InputFeatures {
    pub fn from_clip(clip: &AudioClip, stft_cfg: &StftConfig, cfg: &ExampleConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = stft(clip, stft_cfg)?;
        if spec.frames() < cfg.width() {
            return Err(Error::TooShort(format!(
                "{} frames, context needs at least {}",
                spec.frames(),
                cfg.width()
            )));
        }
        let amp = cfg.amplitude.then(|| amplitude(&spec));
        let phase = match &cfg.phase {
            Some(p) => Some(extract_phase_features(&phase(&spec), p)?),
            None => None,
        };
        Ok(Self {
            amp,
            phase,
            frames: spec.frames(),
        })
    }

    fn channels_bins(&self) -> (usize, usize) {
        match (&self.amp, &self.phase) {
            (Some(a), _) => (a.dim().0, a.dim().2),
            (None, Some(p)) => (p.dim().0, p.dim().2),
            (None, None) => (0, 0),
        }
    }

    /// Input rows for `frames`, as `(amplitude block, phase block)`.
    pub fn gather(&self, frames: &[usize], context: usize) -> (Option<Array2<f64>>, Option<Array2<f64>>) {
        let last = self.frames - 1;
        let ctx = |m: usize, j: usize| (m + j).saturating_sub(context).min(last);
        let width = 2 * context + 1;
        let amp = self.amp.as_ref().map(|a| {
            let (ch, _, bins) = a.dim();
            let mut out = Array2::zeros((frames.len(), ch * width * bins));
            for (r, &m) in frames.iter().enumerate() {
                let mut row = out.row_mut(r);
                let row = row.as_slice_mut().expect("standard layout");
                let mut o = 0;
                for c in 0..ch {
                    for j in 0..width {
                        let src = a.slice(s![c, ctx(m, j), ..]);
                        row[o..o + bins].copy_from_slice(src.as_slice().expect("contiguous bins"));
                        o += bins;
                    }
                }
            }
            out
        });
        let phase = self.phase.as_ref().map(|p| {
            let (ch, _, bins, feats) = p.dim();
            let block = bins * feats;
            let mut out = Array2::zeros((frames.len(), ch * width * block));
            for (r, &m) in frames.iter().enumerate() {
                let mut row = out.row_mut(r);
                let row = row.as_slice_mut().expect("standard layout");
                let mut o = 0;
                for c in 0..ch {
                    for j in 0..width {
                        let src = p.slice(s![c, ctx(m, j), .., ..]);
                        row[o..o + block].copy_from_slice(src.as_slice().expect("contiguous bins"));
                        o += block;
                    }
                }
            }
            out
        });
        (amp, phase)
    }
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub amp: Option<Array2<f64>>,
    pub phase: Option<Array2<f64>>,
    pub target: Array2<f64>,
}

impl Batch {
    pub fn rows(&self) -> usize {
        self.target.nrows()
    }
}

#[derive(Clone, Debug)]
struct SongExamples {
    inputs: InputFeatures,
    /// `channels × frames × bins`.
    target: Array3<f64>,
}

/// Examples of one or more songs, assembled lazily by [`ExampleSet::gather`].
#[derive(Clone, Debug)]
pub struct ExampleSet {
    pub config: ExampleConfig,
    pub instrument: Instrument,
    channels: usize,
    bins: usize,
    songs: Vec<SongExamples>,
    index: Vec<(usize, usize)>,
}

/// One example per frame of `song`.
pub fn make_examples(
    song: &Song,
    stft_cfg: &StftConfig,
    cfg: &ExampleConfig,
    instrument: Instrument,
) -> Result<ExampleSet> {
    let input_clip = match cfg.task {
        Task::Separation => &song.mixture,
        Task::Reconstruction => song.source(instrument),
    };
    let inputs = InputFeatures::from_clip(input_clip, stft_cfg, cfg)?;
    let target = amplitude(&stft(song.source(instrument), stft_cfg)?);
    let (channels, bins) = inputs.channels_bins();
    if target.dim() != (channels, inputs.frames, bins) {
        return Err(Error::Shape(format!(
            "target {:?} vs inputs {:?}",
            target.dim(),
            (channels, inputs.frames, bins)
        )));
    }
    let index = (0..inputs.frames).map(|m| (0, m)).collect();
    Ok(ExampleSet {
        config: cfg.clone(),
        instrument,
        channels,
        bins,
        songs: vec![SongExamples { inputs, target }],
        index,
    })
}

/// [`make_examples`] over several songs (in parallel), concatenated in order.
pub fn make_example_set(
    songs: &[Song],
    stft_cfg: &StftConfig,
    cfg: &ExampleConfig,
    instrument: Instrument,
) -> Result<ExampleSet> {
    let parts = par::map_slice(songs, |s| make_examples(s, stft_cfg, cfg, instrument));
    let mut iter = parts.into_iter();
    let mut set = iter
        .next()
        .ok_or_else(|| Error::Empty("example set needs at least one song".into()))??;
    for part in iter {
        set.extend(part?)?;
    }
    Ok(set)
}

impl ExampleSet {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn amp_dim(&self) -> usize {
        if self.config.amplitude {
            self.channels * self.config.width() * self.bins
        } else {
            0
        }
    }

    pub fn phase_dim(&self) -> usize {
        self.channels * self.config.width() * self.bins * self.config.phase_features()
    }

    pub fn target_dim(&self) -> usize {
        self.channels * self.bins
    }

    pub fn extend(&mut self, other: ExampleSet) -> Result<()> {
        if other.config != self.config
            || other.instrument != self.instrument
            || (other.channels, other.bins) != (self.channels, self.bins)
        {
            return Err(Error::Shape("cannot merge example sets with different layouts".into()));
        }
        let offset = self.songs.len();
        self.index.extend(other.index.into_iter().map(|(s, m)| (s + offset, m)));
        self.songs.extend(other.songs);
        Ok(())
    }

    /// Rows for the given example indices, in that order.
    pub fn gather(&self, examples: &[usize]) -> Batch {
        let ch = self.channels;
        let bins = self.bins;
        let mut amp = self
            .config
            .amplitude
            .then(|| Array2::zeros((examples.len(), self.amp_dim())));
        let mut phase = self
            .config
            .phase
            .as_ref()
            .map(|_| Array2::zeros((examples.len(), self.phase_dim())));
        let mut target = Array2::zeros((examples.len(), ch * bins));
        let ctx = self.config.context;
        for (r, &e) in examples.iter().enumerate() {
            let (s, m) = self.index[e];
            let song = &self.songs[s];
            let (a, p) = song.inputs.gather(&[m], ctx);
            if let (Some(dst), Some(src)) = (amp.as_mut(), a) {
                dst.row_mut(r).assign(&src.row(0));
            }
            if let (Some(dst), Some(src)) = (phase.as_mut(), p) {
                dst.row_mut(r).assign(&src.row(0));
            }
            let mut t = target.row_mut(r);
            for c in 0..ch {
                t.slice_mut(s![c * bins..(c + 1) * bins])
                    .assign(&song.target.slice(s![c, m, ..]));
            }
        }
        Batch { amp, phase, target }
    }
}
