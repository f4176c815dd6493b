//! Trained models on disk.
//!
//! Little-endian layout:
//!
//! ```text
//! "PSNN" | u32 version | u64 n | n bytes JSON header
//! u32 networks
//!   per network: u32 name length | name | u32 branches
//!     per branch: u8 input block | layer table
//!   head layer table
//! layer table: u32 count, per layer u8 kind | u32 a | u32 b
//! then every parameter array in storage order: u64 length | f64 values
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::arch::{Architecture, NetShape};
use super::layers::LayerKind;
use super::network::{InputBlock, Network, NetworkLayout};
use super::train::{TrainConfig, TrainReport};
use crate::dataset::{DatasetStats, ExampleConfig, Instrument};
use crate::error::{Error, Result};
use crate::stft::StftConfig;

pub const BUNDLE_MAGIC: &[u8; 4] = b"PSNN";
pub const BUNDLE_VERSION: u32 = 1;

/// One network per instrument plus everything needed to run them.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub architecture: Architecture,
    pub stft: StftConfig,
    pub examples: ExampleConfig,
    pub shape: NetShape,
    pub stats: DatasetStats,
    pub networks: BTreeMap<Instrument, Network>,
    pub reports: BTreeMap<Instrument, TrainReport>,
    pub train: Option<TrainConfig>,
    /// Free-form provenance such as the config hash and seed.
    pub metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    architecture: Architecture,
    stft: StftConfig,
    examples: ExampleConfig,
    shape: NetShape,
    stats: DatasetStats,
    reports: BTreeMap<Instrument, TrainReport>,
    train: Option<TrainConfig>,
    metadata: BTreeMap<String, String>,
}

fn expected_inputs(arch: Architecture) -> &'static [InputBlock] {
    match arch {
        Architecture::PhaseOnly => &[InputBlock::Phase],
        Architecture::AmpOnly => &[InputBlock::Amplitude],
        Architecture::Joint => &[InputBlock::Amplitude, InputBlock::Phase],
        Architecture::NaiveConcat => &[InputBlock::Concat],
    }
}

impl ModelBundle {
    /// Checks that every network matches the architecture tag and shape.
    pub fn validate(&self) -> Result<()> {
        let inputs = expected_inputs(self.architecture);
        let want_dims: Vec<usize> = inputs
            .iter()
            .map(|b| match b {
                InputBlock::Amplitude => self.shape.amp_dim(),
                InputBlock::Phase => self.shape.phase_dim(),
                InputBlock::Concat => self.shape.amp_dim() + self.shape.phase_dim(),
            })
            .collect();
        if self.networks.is_empty() {
            return Err(Error::Config("bundle holds no networks".into()));
        }
        for (i, net) in &self.networks {
            let got: Vec<InputBlock> = net.branches().iter().map(|b| b.input).collect();
            if got != inputs || net.input_dims() != want_dims || net.output_dim() != self.shape.output_dim() {
                return Err(Error::Config(format!(
                    "{i} network does not match the {} tag and shape",
                    self.architecture
                )));
            }
        }
        if self.examples.context != self.shape.context
            || self.examples.amplitude != self.architecture.uses_amplitude()
            || self.examples.phase.is_some() != self.architecture.uses_phase()
            || (self.architecture.uses_phase() && self.examples.phase_features() != self.shape.phase_features)
        {
            return Err(Error::Config(
                "example configuration disagrees with the architecture".into(),
            ));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let header = serde_json::to_vec(&Header {
            architecture: self.architecture,
            stft: self.stft.clone(),
            examples: self.examples.clone(),
            shape: self.shape,
            stats: self.stats.clone(),
            reports: self.reports.clone(),
            train: self.train.clone(),
            metadata: self.metadata.clone(),
        })?;
        let mut out = Vec::new();
        out.extend_from_slice(BUNDLE_MAGIC);
        out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.networks.len() as u32).to_le_bytes());
        for (i, net) in &self.networks {
            let name = i.name().as_bytes();
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name);
            let layout = net.layout();
            out.extend_from_slice(&(layout.branches.len() as u32).to_le_bytes());
            for (input, kinds) in &layout.branches {
                out.push(match input {
                    InputBlock::Amplitude => 0,
                    InputBlock::Phase => 1,
                    InputBlock::Concat => 2,
                });
                write_table(&mut out, kinds);
            }
            write_table(&mut out, &layout.head);
        }
        for net in self.networks.values() {
            for p in net.params() {
                out.extend_from_slice(&(p.len() as u64).to_le_bytes());
                for v in p {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != BUNDLE_MAGIC {
            return Err(Error::CorruptBundle("bad magic".into()));
        }
        let version = r.u32("version")?;
        if version != BUNDLE_VERSION {
            return Err(Error::BundleVersion {
                found: version,
                expected: BUNDLE_VERSION,
            });
        }
        let len = r.u64("header length")? as usize;
        let header: Header =
            serde_json::from_slice(r.take(len, "header")?).map_err(|e| Error::CorruptBundle(format!("header: {e}")))?;
        let count = r.u32("network count")? as usize;
        let mut layouts = Vec::with_capacity(count.min(16));
        for _ in 0..count {
            let n = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(n, "name")?)
                .map_err(|_| Error::CorruptBundle("instrument name is not UTF-8".into()))?;
            let instrument: Instrument = name
                .parse()
                .map_err(|_| Error::CorruptBundle(format!("unknown instrument {name:?}")))?;
            let nb = r.u32("branch count")? as usize;
            let mut branches = Vec::new();
            for _ in 0..nb.min(2) {
                let input = match r.take(1, "input block")?[0] {
                    0 => InputBlock::Amplitude,
                    1 => InputBlock::Phase,
                    2 => InputBlock::Concat,
                    b => return Err(Error::CorruptBundle(format!("unknown input block {b}"))),
                };
                branches.push((input, read_table(&mut r)?));
            }
            if nb > 2 {
                return Err(Error::CorruptBundle(format!("{nb} branches")));
            }
            let head = read_table(&mut r)?;
            layouts.push((instrument, NetworkLayout { branches, head }));
        }
        let mut networks = BTreeMap::new();
        for (instrument, layout) in layouts {
            let mut arrays = Vec::new();
            let expected: Vec<usize> = layout
                .branches
                .iter()
                .flat_map(|(_, k)| k.iter())
                .chain(layout.head.iter())
                .flat_map(|k| k.param_lens())
                .collect();
            for want in expected {
                let len = r.u64("array length")? as usize;
                if len != want {
                    return Err(Error::CorruptBundle(format!(
                        "array of {len} values where {want} expected"
                    )));
                }
                let raw = r.take(
                    len.checked_mul(8)
                        .ok_or_else(|| Error::CorruptBundle("array too large".into()))?,
                    "parameters",
                )?;
                arrays.push(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect::<Vec<f64>>(),
                );
            }
            networks.insert(instrument, Network::from_layout(&layout, arrays.into_iter())?);
        }
        if r.pos != bytes.len() {
            return Err(Error::CorruptBundle(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let bundle = ModelBundle {
            architecture: header.architecture,
            stft: header.stft,
            examples: header.examples,
            shape: header.shape,
            stats: header.stats,
            networks,
            reports: header.reports,
            train: header.train,
            metadata: header.metadata,
        };
        bundle.validate().map_err(|e| Error::CorruptBundle(e.to_string()))?;
        Ok(bundle)
    }
}

pub fn save_bundle(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, bundle.to_bytes()?).map_err(|e| Error::write(path, e))
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::read(path, e))?;
    ModelBundle::from_bytes(&bytes)
}

fn write_table(out: &mut Vec<u8>, kinds: &[LayerKind]) {
    out.extend_from_slice(&(kinds.len() as u32).to_le_bytes());
    for k in kinds {
        let (tag, a, b) = match *k {
            LayerKind::Dense { input, output } => (0u8, input, output),
            LayerKind::Relu { dim } => (1, dim, 0),
            LayerKind::Bias { dim } => (2, dim, 0),
            LayerKind::Scale { dim } => (3, dim, 0),
        };
        out.push(tag);
        out.extend_from_slice(&(a as u32).to_le_bytes());
        out.extend_from_slice(&(b as u32).to_le_bytes());
    }
}

fn read_table(r: &mut Reader<'_>) -> Result<Vec<LayerKind>> {
    let n = r.u32("layer count")? as usize;
    let mut kinds = Vec::with_capacity(n.min(64));
    for _ in 0..n {
        let tag = r.take(1, "layer kind")?[0];
        let a = r.u32("layer dim")? as usize;
        let b = r.u32("layer dim")? as usize;
        kinds.push(match tag {
            0 => LayerKind::Dense { input: a, output: b },
            1 => LayerKind::Relu { dim: a },
            2 => LayerKind::Bias { dim: a },
            3 => LayerKind::Scale { dim: a },
            t => return Err(Error::CorruptBundle(format!("unknown layer kind {t}"))),
        });
    }
    Ok(kinds)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptBundle(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}
