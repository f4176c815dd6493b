//! One JSON file drives every experiment; its hash tags every output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{ExampleConfig, SynthSpec, Task, DEFAULT_CONTEXT};
use crate::error::{Error, Result};
use crate::eval::SdrMode;
use crate::nn::{Architecture, TrainConfig, DEFAULT_HIDDEN};
use crate::phase::PhaseFeatureConfig;
use crate::separation::{WienerConfig, DEFAULT_IRM_EXPONENT};
use crate::stft::StftConfig;
use crate::theory::TheoryConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 8 kHz, N = 512, hop 128.
    #[default]
    Desk,
    /// 44.1 kHz, N = 4096, hop 1024.
    Paper,
}

impl Profile {
    pub fn stft(self) -> StftConfig {
        match self {
            Profile::Desk => StftConfig::desk(),
            Profile::Paper => StftConfig::paper(),
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::Config(format!("unknown profile {s:?}, expected desk or paper"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub profile: Profile,
    /// Overrides the profile's STFT parameters.
    pub stft: Option<StftConfig>,
    /// Phase features of phase-using architectures, as a feature label such
    /// as `dt_shift+df_shift` or `raw`.
    pub phase_features: String,
    /// Feature labels trained by the ablation grid.
    pub ablation: Vec<String>,
    pub architectures: Vec<Architecture>,
    pub context: usize,
    pub hidden: usize,
    pub task: Task,
    pub train: TrainConfig,
    pub synth: SynthSpec,
    /// Synthetic corpus size and how many of its songs form the test split.
    pub songs: usize,
    pub test_songs: usize,
    /// Existing corpus to use instead of synthesizing one.
    pub corpus_root: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub wiener: WienerConfig,
    pub sdr: SdrMode,
    /// 1 (magnitude ratio) or 2 (power ratio).
    pub irm_exponent: f64,
    pub theory: TheoryConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            profile: Profile::Desk,
            stft: None,
            phase_features: "dt_shift+df_shift".into(),
            ablation: ["raw", "dt", "dt_shift", "df", "df_shift", "dt+df", "dt_shift+df_shift"]
                .map(String::from)
                .into(),
            architectures: vec![Architecture::AmpOnly, Architecture::Joint],
            context: DEFAULT_CONTEXT,
            hidden: DEFAULT_HIDDEN,
            task: Task::Separation,
            train: TrainConfig::default(),
            synth: SynthSpec::default(),
            songs: 10,
            test_songs: 4,
            corpus_root: None,
            seeds: vec![0],
            output: PathBuf::from("out"),
            wiener: WienerConfig::default(),
            sdr: SdrMode::WholeClip,
            irm_exponent: DEFAULT_IRM_EXPONENT,
            theory: TheoryConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::read(path, e))?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Switches profile, dropping any STFT override and matching the
    /// synthesis rate.
    pub fn with_profile(mut self, profile: Profile) -> Self {
        self.profile = profile;
        self.stft = None;
        self.synth.sample_rate = profile.stft().sample_rate;
        self
    }

    pub fn stft_config(&self) -> StftConfig {
        self.stft.clone().unwrap_or_else(|| self.profile.stft())
    }

    pub fn phase_config(&self, label: &str) -> Result<PhaseFeatureConfig> {
        let s = self.stft_config();
        PhaseFeatureConfig::from_label(label, s.fft_size, s.hop)
    }

    /// Example layout for `arch` with the configured phase features.
    pub fn example_config(&self, arch: Architecture) -> Result<ExampleConfig> {
        let phase = if arch.uses_phase() {
            Some(self.phase_config(&self.phase_features)?)
        } else {
            None
        };
        Ok(ExampleConfig {
            context: self.context,
            amplitude: arch.uses_amplitude(),
            phase,
            task: self.task,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let stft = self.stft_config();
        stft.validate()?;
        stft.check_cola()?;
        self.synth.validate()?;
        if self.synth.sample_rate != stft.sample_rate {
            return bad(format!(
                "synthesis at {} Hz does not match the STFT rate {} Hz",
                self.synth.sample_rate, stft.sample_rate
            ));
        }
        self.phase_config(&self.phase_features)?;
        for l in &self.ablation {
            self.phase_config(l)?;
        }
        self.train.validate()?;
        self.wiener.validate()?;
        if self.architectures.is_empty() {
            return bad("at least one architecture is required".into());
        }
        if self.hidden == 0 {
            return bad("hidden width must be >= 1".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.corpus_root.is_none() && (self.test_songs == 0 || self.test_songs >= self.songs) {
            return bad(format!(
                "{} test songs out of {} leaves a split empty",
                self.test_songs, self.songs
            ));
        }
        if self.irm_exponent != 1.0 && self.irm_exponent != 2.0 {
            return bad(format!("mask exponent must be 1 or 2, got {}", self.irm_exponent));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// `config_sha256=<hash> seed=<seed>`, embedded in every output.
    pub fn provenance(&self, seed: u64) -> String {
        format!("config_sha256={} seed={seed}", self.hash())
    }
}
