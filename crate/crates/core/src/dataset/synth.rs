//! Deterministic four-instrument songs at desk scale.
//!
//! All randomness comes from one `ChaCha8` stream seeded by the caller, so a
//! `(spec, seed)` pair always yields the same samples on every platform.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Instrument, Song};
use crate::audio::AudioClip;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    /// Seconds.
    pub duration: f64,
    pub sample_rate: u32,
    pub channels: usize,
    /// Mixture peak after normalization.
    pub peak: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            duration: 6.0,
            sample_rate: 8000,
            channels: 2,
            peak: 0.7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Config(format!(
                "synth duration must be positive, got {}",
                self.duration
            )));
        }
        // the vocal stack reaches 1 kHz
        if self.sample_rate < 4000 {
            return Err(Error::Config(format!(
                "synth sample rate must be >= 4000 Hz, got {}",
                self.sample_rate
            )));
        }
        if !(1..=2).contains(&self.channels) {
            return Err(Error::Config(format!(
                "synth channels must be 1 or 2, got {}",
                self.channels
            )));
        }
        if !(self.peak > 0.0 && self.peak <= 1.0) {
            return Err(Error::Config(format!(
                "synth peak must be in (0, 1], got {}",
                self.peak
            )));
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        (self.duration * self.sample_rate as f64).round() as usize
    }
}

fn midi_hz(m: f64) -> f64 {
    440.0 * 2f64.powf((m - 69.0) / 12.0)
}

/// Linear attack and release ramps, `1` in between.
fn ramp(i: usize, len: usize, attack: usize, release: usize) -> f64 {
    let a = if attack > 0 && i < attack {
        i as f64 / attack as f64
    } else {
        1.0
    };
    let r = if release > 0 && i + release > len {
        (len - i) as f64 / release as f64
    } else {
        1.0
    };
    a.min(r)
}

struct Ctx {
    n: usize,
    fs: f64,
    beat: f64,
    key: f64,
}

impl Ctx {
    fn beat_samples(&self, beats: f64) -> usize {
        (beats * self.beat * self.fs).round().max(1.0) as usize
    }
}

const MAJOR: [f64; 7] = [0.0, 2.0, 4.0, 5.0, 7.0, 9.0, 11.0];

fn bass(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0; ctx.n];
    let mut start = 0;
    while start < ctx.n {
        let len = ctx.beat_samples(if rng.random_bool(0.5) { 1.0 } else { 2.0 });
        let degree = MAJOR[rng.random_range(0..MAJOR.len())];
        // 40-200 Hz fundamentals
        let mut m = 28.0 + ctx.key + degree;
        while midi_hz(m) > 196.0 {
            m -= 12.0;
        }
        let f = midi_hz(m);
        let tau = rng.random_range(0.3..0.8) * ctx.fs;
        let phase0 = rng.random_range(0.0..2.0 * PI);
        let end = (start + len).min(ctx.n);
        let attack = (0.03 * ctx.fs) as usize;
        let release = (0.02 * ctx.fs) as usize;
        for (i, o) in out[start..end].iter_mut().enumerate() {
            let ph = phase0 + 2.0 * PI * f * i as f64 / ctx.fs;
            let env = ramp(i, len, attack, release) * (-(i as f64) / tau).exp();
            *o = env * (ph.sin() + 0.35 * (2.0 * ph).sin());
        }
        start += len;
    }
    out
}

/// One-pole low-pass `y += a (x − y)`.
fn lowpass(x: &[f64], a: f64) -> Vec<f64> {
    let mut y = 0.0;
    x.iter()
        .map(|&v| {
            y += a * (v - y);
            y
        })
        .collect()
}

fn drums(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0; ctx.n];
    let step = ctx.beat_samples(0.5);
    let swing: f64 = rng.random_range(0.0..0.08);
    for (s, pos) in (0..ctx.n).step_by(step).enumerate() {
        let pos = if s % 2 == 1 {
            pos + (swing * step as f64) as usize
        } else {
            pos
        };
        let (kind, hit) = match s % 4 {
            0 => (0, rng.random_bool(0.95)),
            2 => (1, rng.random_bool(0.9)),
            _ => (if rng.random_bool(0.15) { 0 } else { 2 }, rng.random_bool(0.75)),
        };
        if !hit {
            continue;
        }
        let (decay, gain) = match kind {
            0 => (0.09, 4.0),
            1 => (0.06, 1.6),
            _ => (0.02, 0.8),
        };
        let len = ((5.0 * decay * ctx.fs) as usize).min(ctx.n.saturating_sub(pos));
        if len == 0 {
            continue;
        }
        let noise: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let shaped = match kind {
            0 => lowpass(&noise, 0.04),
            1 => {
                let wide = lowpass(&noise, 0.5);
                let narrow = lowpass(&noise, 0.1);
                wide.iter().zip(&narrow).map(|(w, n)| w - n).collect()
            }
            _ => {
                let mut prev = 0.0;
                noise
                    .iter()
                    .map(|&v| {
                        let d = v - prev;
                        prev = v;
                        0.5 * d
                    })
                    .collect()
            }
        };
        let velocity = rng.random_range(0.7..1.0);
        for (i, v) in shaped.iter().enumerate() {
            out[pos + i] += gain * velocity * v * (-(i as f64) / (decay * ctx.fs)).exp();
        }
    }
    out
}

fn vocals(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0; ctx.n];
    let rate = rng.random_range(4.5..6.5);
    let depth = rng.random_range(0.008..0.02);
    let mut start = 0;
    let mut first = true;
    while start < ctx.n {
        let len = ctx.beat_samples([1.0, 1.0, 2.0][rng.random_range(0..3)]);
        let rest = !first && rng.random_bool(0.2);
        first = false;
        if !rest {
            let degree = MAJOR[rng.random_range(0..MAJOR.len())];
            // fundamentals 200-500 Hz, stack capped at 1 kHz
            let mut m = 56.0 + ctx.key + degree;
            while midi_hz(m) > 494.0 {
                m -= 12.0;
            }
            while midi_hz(m) < 200.0 {
                m += 12.0;
            }
            let f0 = midi_hz(m);
            let harmonics = (1000.0 / f0).floor() as usize;
            let attack = (0.04 * ctx.fs) as usize;
            let end = (start + len).min(ctx.n);
            let mut ph = rng.random_range(0.0..2.0 * PI);
            for (i, o) in out[start..end].iter_mut().enumerate() {
                let t = (start + i) as f64 / ctx.fs;
                let f = f0 * (1.0 + depth * (2.0 * PI * rate * t).sin());
                let env = ramp(i, len, attack, attack);
                let mut v = 0.0;
                for h in 1..=harmonics {
                    v += (h as f64 * ph).sin() / h as f64;
                }
                *o = env * v;
                ph += 2.0 * PI * f / ctx.fs;
            }
        }
        start += len;
    }
    out
}

fn other(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0; ctx.n];
    let len = ctx.beat_samples(4.0);
    let fade = (0.2 * ctx.fs) as usize;
    let mut start = 0;
    while start < ctx.n {
        let root = 48.0 + ctx.key + MAJOR[rng.random_range(0..MAJOR.len())];
        let third = if rng.random_bool(0.5) { 4.0 } else { 3.0 };
        let end = (start + len).min(ctx.n);
        for interval in [0.0, third, 7.0] {
            let f = midi_hz(root + interval);
            let detune = 1.0 + rng.random_range(-0.003..0.003);
            let ph0 = rng.random_range(0.0..2.0 * PI);
            for (i, o) in out[start..end].iter_mut().enumerate() {
                let env = ramp(i, len, fade, fade);
                let ph = ph0 + 2.0 * PI * f * detune * i as f64 / ctx.fs;
                *o += env * (ph.sin() + 0.5 * (2.0 * ph).sin() + 0.25 * (3.0 * ph).sin());
            }
        }
        start += len;
    }
    out
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

/// Bass tone sequence, filtered-noise drums, a vibrato harmonic stack and a
/// chord pad, each panned with constant gains. The mixture is the exact sum
/// of the returned sources; all sources share the gain that brings the
/// mixture peak to `spec.peak`.
pub fn generate_synthetic_song(spec: &SynthSpec, seed: u64) -> Result<Song> {
    spec.validate()?;
    let n = spec.samples();
    if n == 0 {
        return Err(Error::Config("synth duration rounds to zero samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ctx = Ctx {
        n,
        fs: spec.sample_rate as f64,
        beat: rng.random_range(0.4..0.6),
        key: rng.random_range(0..12) as f64,
    };
    let seeds: [u64; 4] = std::array::from_fn(|_| rng.random());
    let levels = [1.0, 0.8, 0.9, 0.6];
    let generators: [fn(&Ctx, &mut ChaCha8Rng) -> Vec<f64>; 4] = [bass, drums, vocals, other];

    let mut raw = Vec::with_capacity(4);
    for (idx, instrument) in Instrument::ALL.into_iter().enumerate() {
        let mut src_rng = ChaCha8Rng::seed_from_u64(seeds[idx]);
        let mono = generators[idx](&ctx, &mut src_rng);
        let level = levels[idx] * rng.random_range(0.8..1.2) / rms(&mono).max(1e-12);
        let pan: f64 = rng.random_range(0.15..0.85);
        let gains = if spec.channels == 1 {
            vec![1.0]
        } else {
            vec![
                (pan * PI / 2.0).cos() * 2f64.sqrt(),
                (pan * PI / 2.0).sin() * 2f64.sqrt(),
            ]
        };
        let samples = Array2::from_shape_fn((spec.channels, n), |(c, i)| gains[c] * level * mono[i]);
        raw.push((instrument, samples));
    }

    let mut sum = Array2::<f64>::zeros((spec.channels, n));
    for (_, s) in &raw {
        sum += s;
    }
    let peak = sum.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 0.0 { spec.peak / peak } else { 1.0 };
    let sources: BTreeMap<Instrument, AudioClip> = raw
        .into_iter()
        .map(|(i, s)| AudioClip::new(s * gain, spec.sample_rate).map(|c| (i, c)))
        .collect::<Result<_>>()?;
    Song::from_sources(format!("synth_{seed:04}"), sources)
}
