//! Songs, corpora and network training material.
//!
//! A [`Song`] holds one clip per [`Instrument`] plus the mixture. Songs come
//! from the deterministic generator in [`synth`] or from a DSD100-layout tree
//! ([`corpus`]). [`examples`] turns songs into context-stacked network inputs
//! and [`stats`] accumulates the per-bin normalization statistics.

pub mod corpus;
pub mod examples;
pub mod stats;
pub mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::{max_abs_diff, mix, AudioClip};
use crate::error::{Error, Result};

pub use corpus::{scan_corpus, write_song, CorpusScan, SkippedSong, SongRef, Split};
pub use examples::{
    make_example_set, make_examples, Batch, ExampleConfig, ExampleSet, InputFeatures, Task, DEFAULT_CONTEXT,
};
pub use stats::{compute_stats, DatasetStats, STD_FLOOR};
pub use synth::{generate_synthetic_song, SynthSpec};

/// Tolerance for `mixture = Σ sources` on loaded corpora.
pub const MIX_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Instrument {
    Bass,
    Drums,
    Vocals,
    Other,
}

impl Instrument {
    pub const ALL: [Instrument; 4] = [
        Instrument::Bass,
        Instrument::Drums,
        Instrument::Vocals,
        Instrument::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Instrument::Bass => "bass",
            Instrument::Drums => "drums",
            Instrument::Vocals => "vocals",
            Instrument::Other => "other",
        }
    }
}

impl fmt::Display for Instrument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Instrument {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Instrument::ALL
            .into_iter()
            .find(|i| i.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown instrument {s:?}")))
    }
}

/// Sources for every instrument plus their mixture, all the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Song {
    pub name: String,
    pub sources: BTreeMap<Instrument, AudioClip>,
    pub mixture: AudioClip,
}

impl Song {
    /// Mixture computed as the exact sum of `sources`.
    pub fn from_sources(name: impl Into<String>, sources: BTreeMap<Instrument, AudioClip>) -> Result<Self> {
        check_instruments(&sources)?;
        let clips: Vec<AudioClip> = sources.values().cloned().collect();
        let mixture = mix(&clips)?;
        Ok(Self {
            name: name.into(),
            sources,
            mixture,
        })
    }

    /// Takes the mixture as given. Shapes must agree; a mixture that deviates
    /// from the source sum by more than [`MIX_TOLERANCE`] is only logged.
    pub fn with_mixture(
        name: impl Into<String>,
        sources: BTreeMap<Instrument, AudioClip>,
        mixture: AudioClip,
    ) -> Result<Self> {
        check_instruments(&sources)?;
        let song = Self {
            name: name.into(),
            sources,
            mixture,
        };
        let residual = song.mixture_residual()?;
        if residual > MIX_TOLERANCE {
            log::warn!(
                "song {}: mixture differs from the sum of its stems by {residual:.3e}",
                song.name
            );
        }
        Ok(song)
    }

    /// Largest absolute difference between the mixture and the source sum.
    pub fn mixture_residual(&self) -> Result<f64> {
        let clips: Vec<AudioClip> = self.sources.values().cloned().collect();
        let sum = mix(&clips)?;
        if sum.samples().dim() != self.mixture.samples().dim() || sum.sample_rate() != self.mixture.sample_rate() {
            return Err(Error::Shape(format!(
                "song {}: mixture {:?} vs stems {:?}",
                self.name,
                self.mixture.samples().dim(),
                sum.samples().dim()
            )));
        }
        Ok(max_abs_diff(&sum, &self.mixture))
    }

    pub fn source(&self, instrument: Instrument) -> &AudioClip {
        &self.sources[&instrument]
    }

    pub fn sample_rate(&self) -> u32 {
        self.mixture.sample_rate()
    }

    pub fn len(&self) -> usize {
        self.mixture.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mixture.is_empty()
    }
}

fn check_instruments(sources: &BTreeMap<Instrument, AudioClip>) -> Result<()> {
    for i in Instrument::ALL {
        if !sources.contains_key(&i) {
            return Err(Error::Corpus(format!("missing {i} stem")));
        }
    }
    Ok(())
}
