//! Short-time Fourier transform with weighted overlap-add resynthesis.
//!
//! Frames use the usual asymmetric convention: frame `m` covers padded samples
//! `[m·hop, m·hop + N)` and bin `k` is `Σ_n w(n) x(m·hop + n) e^{-2πjkn/N}`.
//! No extra modulation factor is applied. The symmetric continuous-time
//! convention lives in [`crate::theory`] only.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Hann,
    SqrtHann,
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
    #[serde(default = "default_window")]
    pub window: WindowKind,
    /// Gaussian window width in seconds; ignored for the other kinds.
    #[serde(default)]
    pub gaussian_lambda: Option<f64>,
    pub sample_rate: u32,
    #[serde(default = "default_center")]
    pub center_pad: bool,
}

fn default_window() -> WindowKind {
    WindowKind::Hann
}

fn default_center() -> bool {
    true
}

impl StftConfig {
    pub fn new(fft_size: usize, hop: usize, window: WindowKind, sample_rate: u32) -> Result<Self> {
        let cfg = Self {
            fft_size,
            hop,
            window,
            gaussian_lambda: None,
            sample_rate,
            center_pad: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 8 kHz, N = 512, hop 128 (75 % overlap), Hann.
    pub fn desk() -> Self {
        Self::new(512, 128, WindowKind::Hann, 8000).expect("valid preset")
    }

    /// 44.1 kHz, N = 4096, hop 1024, Hann.
    pub fn paper() -> Self {
        Self::new(4096, 1024, WindowKind::Hann, 44100).expect("valid preset")
    }

    pub fn with_gaussian(mut self, lambda: f64) -> Result<Self> {
        self.window = WindowKind::Gaussian;
        self.gaussian_lambda = Some(lambda);
        self.validate()?;
        Ok(self)
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 2 || !self.fft_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "fft_size must be even and >= 2, got {}",
                self.fft_size
            )));
        }
        if self.hop == 0 || self.hop > self.fft_size {
            return Err(Error::Config(format!(
                "hop must be in 1..={}, got {}",
                self.fft_size, self.hop
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        if self.window == WindowKind::Gaussian {
            match self.gaussian_lambda {
                Some(l) if l > 0.0 && l.is_finite() => {}
                other => {
                    return Err(Error::Config(format!(
                        "gaussian window needs lambda > 0, got {other:?}"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Checks that `Σ_m w²(n − m·hop)` is constant, which makes weighted
    /// overlap-add exact in the interior.
    pub fn check_cola(&self) -> Result<()> {
        if self.window == WindowKind::Gaussian {
            return Err(Error::NotCola("gaussian windows are analysis-only".into()));
        }
        let w = make_window(self)?;
        let sums: Vec<f64> = (0..self.hop)
            .map(|n| (n..self.fft_size).step_by(self.hop).map(|i| w[i] * w[i]).sum())
            .collect();
        let hi = sums.iter().cloned().fold(f64::MIN, f64::max);
        let lo = sums.iter().cloned().fold(f64::MAX, f64::min);
        if hi <= 0.0 || (hi - lo) > 1e-10 * hi {
            return Err(Error::NotCola(format!(
                "{:?} window with N={} hop={} has squared-window sum in [{lo}, {hi}]",
                self.window, self.fft_size, self.hop
            )));
        }
        Ok(())
    }

    /// Number of frames for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> Result<usize> {
        if len == 0 {
            return Err(Error::TooShort("empty signal".into()));
        }
        if self.center_pad {
            Ok(len / self.hop + 1)
        } else if len < self.fft_size {
            Err(Error::TooShort(format!(
                "{len} samples < fft size {} without center padding",
                self.fft_size
            )))
        } else {
            Ok(1 + (len - self.fft_size).div_ceil(self.hop))
        }
    }

    fn left_pad(&self) -> usize {
        if self.center_pad {
            self.fft_size / 2
        } else {
            0
        }
    }
}

/// Analysis window of length N.
///
/// Hann is the periodic variant (`[0, .5, 1, .5]` for N = 4). The Gaussian is
/// `λ^{-1/2} π^{-1/4} exp(-t²/(2λ²))` sampled at `t = (i − N/2)/fs`.
pub fn make_window(cfg: &StftConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = cfg.fft_size;
    let hann = |i: usize| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
    Ok(match cfg.window {
        WindowKind::Hann => (0..n).map(hann).collect(),
        WindowKind::SqrtHann => (0..n).map(|i| hann(i).sqrt()).collect(),
        WindowKind::Gaussian => {
            let lambda = cfg.gaussian_lambda.expect("validated");
            let norm = lambda.powf(-0.5) * PI.powf(-0.25);
            (0..n)
                .map(|i| {
                    let t = (i as f64 - (n / 2) as f64) / cfg.sample_rate as f64;
                    norm * (-t * t / (2.0 * lambda * lambda)).exp()
                })
                .collect()
        }
    })
}

/// Complex STFT of a multichannel clip, `channels × frames × bins`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    values: Array3<Complex64>,
    config: StftConfig,
    signal_len: usize,
}

impl Spectrogram {
    pub fn new(values: Array3<Complex64>, config: StftConfig, signal_len: usize) -> Result<Self> {
        let (_, frames, bins) = values.dim();
        if bins != config.bins() {
            return Err(Error::Shape(format!(
                "spectrogram has {bins} bins, config implies {}",
                config.bins()
            )));
        }
        if signal_len > 0 && frames != config.frame_count(signal_len)? {
            return Err(Error::Shape(format!(
                "{frames} frames do not match a {signal_len}-sample signal"
            )));
        }
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Shape("non-finite spectrogram entry".into()));
        }
        Ok(Self {
            values,
            config,
            signal_len,
        })
    }

    pub fn values(&self) -> &Array3<Complex64> {
        &self.values
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn channels(&self) -> usize {
        self.values.dim().0
    }

    pub fn frames(&self) -> usize {
        self.values.dim().1
    }

    pub fn bins(&self) -> usize {
        self.values.dim().2
    }

    pub fn with_values(&self, values: Array3<Complex64>) -> Result<Self> {
        if values.dim() != self.values.dim() {
            return Err(Error::Shape(format!(
                "replacement values {:?} vs {:?}",
                values.dim(),
                self.values.dim()
            )));
        }
        Self::new(values, self.config.clone(), self.signal_len)
    }
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    }
}

pub fn stft(clip: &AudioClip, cfg: &StftConfig) -> Result<Spectrogram> {
    let window = make_window(cfg)?;
    stft_with_window(clip, cfg, &window)
}

/// STFT with an explicit analysis window (e.g. all ones for a rectangular
/// reference path).
pub fn stft_with_window(clip: &AudioClip, cfg: &StftConfig, window: &[f64]) -> Result<Spectrogram> {
    cfg.validate()?;
    if clip.sample_rate() != cfg.sample_rate {
        return Err(Error::SampleRate {
            expected: cfg.sample_rate,
            found: clip.sample_rate(),
        });
    }
    if window.len() != cfg.fft_size {
        return Err(Error::Shape(format!(
            "window length {} != fft size {}",
            window.len(),
            cfg.fft_size
        )));
    }
    let len = clip.len();
    let frames = cfg.frame_count(len)?;
    let (n, hop, bins, pad) = (cfg.fft_size, cfg.hop, cfg.bins(), cfg.left_pad());
    let channels = clip.channels();
    let fft = plan(n, false);
    let samples = clip.samples();

    let rows = par::map_range(channels * frames, |idx| {
        let (c, m) = (idx / frames, idx % frames);
        let x = samples.row(c);
        let mut buf: Vec<Complex64> = (0..n)
            .map(|i| {
                // position in the unpadded signal
                let p = (m * hop + i) as isize - pad as isize;
                let v = if p >= 0 && (p as usize) < len {
                    x[p as usize]
                } else {
                    0.0
                };
                Complex64::new(v * window[i], 0.0)
            })
            .collect();
        fft.process(&mut buf);
        buf.truncate(bins);
        buf
    });
    let flat: Vec<Complex64> = rows.into_iter().flatten().collect();
    let values = Array3::from_shape_vec((channels, frames, bins), flat).map_err(|e| Error::Shape(e.to_string()))?;
    Spectrogram::new(values, cfg.clone(), len)
}

/// Weighted overlap-add inverse of [`stft`].
///
/// Each frame is inverse transformed, multiplied by the window again and
/// accumulated; the sum is divided sample-wise by `Σ_m w²`.
pub fn istft(spec: &Spectrogram) -> Result<AudioClip> {
    let cfg = spec.config();
    cfg.check_cola()?;
    let window = make_window(cfg)?;
    let (n, hop, pad) = (cfg.fft_size, cfg.hop, cfg.left_pad());
    let (channels, frames, bins) = spec.values.dim();
    let padded_len = (frames - 1) * hop + n;
    let len = spec.signal_len;
    let ifft = plan(n, true);

    let blocks = par::map_range(channels * frames, |idx| {
        let (c, m) = (idx / frames, idx % frames);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for k in 0..bins {
            buf[k] = spec.values[[c, m, k]];
        }
        for k in 1..n / 2 {
            buf[n - k] = spec.values[[c, m, k]].conj();
        }
        ifft.process(&mut buf);
        buf.iter()
            .zip(&window)
            .map(|(z, w)| z.re / n as f64 * w)
            .collect::<Vec<f64>>()
    });

    let mut wsum = vec![0.0; padded_len];
    for m in 0..frames {
        for (i, w) in window.iter().enumerate() {
            wsum[m * hop + i] += w * w;
        }
    }
    let floor = 1e-10 * wsum.iter().cloned().fold(0.0, f64::max);

    let mut out = Array2::<f64>::zeros((channels, len));
    for c in 0..channels {
        let mut acc = vec![0.0; padded_len];
        for m in 0..frames {
            for (i, v) in blocks[c * frames + m].iter().enumerate() {
                acc[m * hop + i] += v;
            }
        }
        for t in 0..len {
            let p = t + pad;
            if p < padded_len && wsum[p] > floor {
                out[[c, t]] = acc[p] / wsum[p];
            }
        }
    }
    AudioClip::new(out, cfg.sample_rate)
}

/// Elementwise modulus.
pub fn amplitude(spec: &Spectrogram) -> Array3<f64> {
    spec.values.mapv(|z| z.norm())
}

/// Principal argument in `[-π, π)`.
pub fn principal_arg(z: Complex64) -> f64 {
    let a = z.im.atan2(z.re);
    if a >= PI {
        -PI
    } else {
        a
    }
}

pub fn phase(spec: &Spectrogram) -> Array3<f64> {
    spec.values.mapv(principal_arg)
}

pub fn polar_to_complex(
    amp: &Array3<f64>,
    ph: &Array3<f64>,
    config: &StftConfig,
    signal_len: usize,
) -> Result<Spectrogram> {
    if amp.dim() != ph.dim() {
        return Err(Error::Shape(format!(
            "amplitude {:?} vs phase {:?}",
            amp.dim(),
            ph.dim()
        )));
    }
    if let Some((idx, &value)) = amp.indexed_iter().find(|(_, a)| **a < 0.0) {
        return Err(Error::NegativeAmplitude { value, index: idx });
    }
    let mut values = Array3::<Complex64>::zeros(amp.dim());
    ndarray::Zip::from(&mut values)
        .and(amp)
        .and(ph)
        .for_each(|z, &a, &p| *z = Complex64::from_polar(a, p));
    Spectrogram::new(values, config.clone(), signal_len)
}
