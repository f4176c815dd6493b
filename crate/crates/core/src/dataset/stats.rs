//! Per-bin amplitude statistics over a training split.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::{Instrument, Song};
use crate::error::{Error, Result};
use crate::par;
use crate::stft::{amplitude, stft, StftConfig};

pub const STD_FLOOR: f64 = 1e-5;

/// Shapes are `channels × bins`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    /// Mixture amplitude mean.
    pub mean: Array2<f64>,
    /// Mixture amplitude standard deviation, floored at [`STD_FLOOR`].
    pub std: Array2<f64>,
    /// Mean amplitude of each instrument.
    pub instrument_mean: BTreeMap<Instrument, Array2<f64>>,
    pub frames: u64,
}

/// Count, mean and sum of squared deviations per cell (Chan et al. merge).
#[derive(Clone, Debug)]
struct Moments {
    n: f64,
    mean: Array2<f64>,
    m2: Array2<f64>,
}

impl Moments {
    /// Two-pass moments over the frame axis of `amp` (`channels × frames × bins`).
    fn of(amp: &Array3<f64>) -> Self {
        let n = amp.len_of(Axis(1)) as f64;
        let mean = amp.mean_axis(Axis(1)).expect("non-empty frames");
        let mut m2 = Array2::zeros(mean.dim());
        for ((c, _, k), &v) in amp.indexed_iter() {
            let d = v - mean[[c, k]];
            m2[[c, k]] += d * d;
        }
        Self { n, mean, m2 }
    }

    fn merge(&mut self, other: &Moments) {
        let n = self.n + other.n;
        let delta = &other.mean - &self.mean;
        let w = self.n * other.n / n;
        self.m2 = &self.m2 + &other.m2 + &(&delta * &delta * w);
        self.mean = &self.mean + &(&delta * (other.n / n));
        self.n = n;
    }
}

impl DatasetStats {
    pub fn channels(&self) -> usize {
        self.mean.nrows()
    }

    pub fn bins(&self) -> usize {
        self.mean.ncols()
    }

    /// Mean and std tiled over `2C+1` context frames in the input layout
    /// (channel, context frame, bin).
    pub fn input_normalization(&self, context: usize) -> (Array1<f64>, Array1<f64>) {
        let width = 2 * context + 1;
        let tile = |a: &Array2<f64>| {
            let mut out = Vec::with_capacity(a.len() * width);
            for row in a.rows() {
                for _ in 0..width {
                    out.extend(row.iter());
                }
            }
            Array1::from(out)
        };
        (tile(&self.mean), tile(&self.std))
    }

    /// Instrument mean flattened in the target layout (channel, bin).
    pub fn target_mean(&self, instrument: Instrument) -> Array1<f64> {
        self.instrument_mean[&instrument].iter().copied().collect()
    }
}

/// Streaming mean and standard deviation of the mixture amplitude per
/// `(channel, bin)` over every frame of every song, plus each instrument's mean
/// amplitude. Per-song moments are merged in list order.
pub fn compute_stats(songs: &[Song], cfg: &StftConfig) -> Result<DatasetStats> {
    if songs.is_empty() {
        return Err(Error::Empty("statistics need at least one training song".into()));
    }
    let per_song = par::map_slice(songs, |song| -> Result<(Moments, BTreeMap<Instrument, Moments>)> {
        let mix = Moments::of(&amplitude(&stft(&song.mixture, cfg)?));
        let mut inst = BTreeMap::new();
        for (&i, clip) in &song.sources {
            inst.insert(i, Moments::of(&amplitude(&stft(clip, cfg)?)));
        }
        Ok((mix, inst))
    });
    let mut iter = per_song.into_iter();
    let (mut mix, mut inst) = iter.next().expect("non-empty")?;
    for item in iter {
        let (m, i) = item?;
        if m.mean.dim() != mix.mean.dim() {
            return Err(Error::Shape(format!(
                "songs disagree on channels × bins: {:?} vs {:?}",
                m.mean.dim(),
                mix.mean.dim()
            )));
        }
        mix.merge(&m);
        for (k, v) in i {
            inst.get_mut(&k).expect("every song has all instruments").merge(&v);
        }
    }
    let std = mix.m2.mapv(|m2| (m2 / mix.n).sqrt().max(STD_FLOOR));
    Ok(DatasetStats {
        mean: mix.mean,
        std,
        instrument_mean: inst.into_iter().map(|(k, v)| (k, v.mean)).collect(),
        frames: mix.n as u64,
    })
}
