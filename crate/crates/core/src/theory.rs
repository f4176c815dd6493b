//! Numerical check of the phase/log-amplitude relation of a Gaussian-window
//! continuous-time STFT.
//!
//! With `h(t) = λ^{-1/2} π^{-1/4} exp(-t²/(2λ²))` and the symmetric transform
//!
//! ```text
//! X(ω,t) = exp(jωt/2) ∫ x(u) h(t−u) exp(−jωu) du
//! ```
//!
//! phase `φ` and amplitude `A` satisfy
//!
//! ```text
//! ∂φ/∂t =  λ⁻² ∂(log A)/∂ω + ω/2
//! ∂φ/∂ω = −λ²  ∂(log A)/∂t − t/2
//! ```
//!
//! The transform is evaluated by trapezoidal quadrature (window truncated at
//! ±6λ) on a uniform (ω, t) grid and every derivative is a centred finite
//! difference. Phase differences are taken as `arg(X₊ · conj(X₋))`, which is
//! the wrapped difference.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Truncation radius of the Gaussian window, in units of λ.
pub const WINDOW_RADIUS: f64 = 6.0;
/// Minimum ratio between the Nyquist angular frequency and the largest |ω|.
pub const MIN_OVERSAMPLING: f64 = 4.0;

/// Complex samples `x(start + n/fs)`.
#[derive(Clone, Debug)]
pub struct SampledSignal {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
    pub start: f64,
}

impl SampledSignal {
    pub fn from_fn(start: f64, duration: f64, sample_rate: f64, f: impl Fn(f64) -> Complex64) -> Self {
        let n = (duration * sample_rate).round() as usize + 1;
        let samples = (0..n).map(|i| f(start + i as f64 / sample_rate)).collect();
        Self {
            samples,
            sample_rate,
            start,
        }
    }

    pub fn time(&self, n: usize) -> f64 {
        self.start + n as f64 / self.sample_rate
    }

    pub fn end(&self) -> f64 {
        self.time(self.samples.len().saturating_sub(1))
    }

    /// `exp(j ω0 u)`.
    pub fn tone(omega0: f64, start: f64, duration: f64, sample_rate: f64) -> Self {
        Self::from_fn(start, duration, sample_rate, |u| Complex64::from_polar(1.0, omega0 * u))
    }

    /// Analytic linear chirp sweeping `f0 → f1` Hz over `[0, duration]`.
    pub fn linear_chirp(f0: f64, f1: f64, duration: f64, sample_rate: f64) -> Self {
        let rate = (f1 - f0) / duration;
        Self::from_fn(0.0, duration, sample_rate, |u| {
            Complex64::from_polar(1.0, 2.0 * PI * (f0 * u + 0.5 * rate * u * u))
        })
    }

    /// Frequency `f_center + curvature·(u − t_center)²` Hz. The cubic phase
    /// makes centred differences inexact, so grid refinement is observable.
    pub fn quadratic_fm(f_center: f64, curvature: f64, t_center: f64, duration: f64, sample_rate: f64) -> Self {
        Self::from_fn(0.0, duration, sample_rate, |u| {
            let d = u - t_center;
            Complex64::from_polar(1.0, 2.0 * PI * (f_center * u + curvature * d * d * d / 3.0))
        })
    }

    /// Multiplies every sample by `exp(j·angle)`.
    pub fn rotated(&self, angle: f64) -> Self {
        let r = Complex64::from_polar(1.0, angle);
        Self {
            samples: self.samples.iter().map(|z| z * r).collect(),
            ..self.clone()
        }
    }
}

/// Uniform grid of analysis times (s) and angular frequencies (rad/s).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfGrid {
    pub t_start: f64,
    pub t_step: f64,
    pub t_count: usize,
    pub omega_start: f64,
    pub omega_step: f64,
    pub omega_count: usize,
    pub lambda: f64,
}

impl TfGrid {
    /// Grid covering `[t0, t1] × [w0, w1]` with the given steps.
    pub fn spanning(t: (f64, f64), t_step: f64, omega: (f64, f64), omega_step: f64, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !(t_step > 0.0) || !(omega_step > 0.0) || t.1 <= t.0 || omega.1 <= omega.0 {
            return Err(Error::Config(
                "grid needs positive steps, λ > 0 and non-empty ranges".into(),
            ));
        }
        let grid = Self {
            t_start: t.0,
            t_step,
            t_count: ((t.1 - t.0) / t_step).round() as usize + 1,
            omega_start: omega.0,
            omega_step,
            omega_count: ((omega.1 - omega.0) / omega_step).round() as usize + 1,
            lambda,
        };
        if grid.t_count < 3 || grid.omega_count < 3 {
            return Err(Error::Config("grid needs at least 3 points per axis".into()));
        }
        Ok(grid)
    }

    pub fn time(&self, j: usize) -> f64 {
        self.t_start + j as f64 * self.t_step
    }

    pub fn omega(&self, i: usize) -> f64 {
        self.omega_start + i as f64 * self.omega_step
    }

    /// Same span with both steps halved.
    pub fn refined(&self) -> Self {
        Self {
            t_step: self.t_step / 2.0,
            t_count: 2 * self.t_count - 1,
            omega_step: self.omega_step / 2.0,
            omega_count: 2 * self.omega_count - 1,
            ..self.clone()
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..self.clone() }
    }
}

pub fn gaussian_window(t: f64, lambda: f64) -> f64 {
    lambda.powf(-0.5) * PI.powf(-0.25) * (-t * t / (2.0 * lambda * lambda)).exp()
}

/// Closed form of the symmetric Gaussian STFT of `exp(j ω0 u)`.
pub fn tone_stft(omega0: f64, omega: f64, t: f64, lambda: f64) -> Complex64 {
    let d = omega0 - omega;
    let mag = lambda.sqrt() * PI.powf(-0.25) * (2.0 * PI).sqrt() * (-lambda * lambda * d * d / 2.0).exp();
    Complex64::from_polar(mag, omega * t / 2.0 + d * t)
}

/// Quadrature of the symmetric STFT at every grid point, `ω × t`.
pub fn gaussian_stft_grid(signal: &SampledSignal, grid: &TfGrid) -> Result<Array2<Complex64>> {
    let fs = signal.sample_rate;
    let max_omega = grid.omega(0).abs().max(grid.omega(grid.omega_count - 1).abs());
    if PI * fs < MIN_OVERSAMPLING * max_omega {
        return Err(Error::GridMismatch(format!(
            "sample rate {fs} Hz is below {MIN_OVERSAMPLING}x oversampling of |ω| = {max_omega}"
        )));
    }
    let radius = WINDOW_RADIUS * grid.lambda;
    let (t_first, t_last) = (grid.time(0), grid.time(grid.t_count - 1));
    if t_first - radius < signal.start || t_last + radius > signal.end() {
        return Err(Error::GridMismatch(format!(
            "analysis times [{t_first}, {t_last}] ± {radius} s exceed the signal support [{}, {}]",
            signal.start,
            signal.end()
        )));
    }
    let du = 1.0 / fs;
    let columns = par::map_range(grid.t_count, |j| {
        let t = grid.time(j);
        let lo = ((t - radius - signal.start) * fs).ceil() as usize;
        let hi = (((t + radius - signal.start) * fs).floor() as usize).min(signal.samples.len() - 1);
        let weighted: Vec<Complex64> = (lo..=hi)
            .map(|n| {
                let end = if n == lo || n == hi { 0.5 } else { 1.0 };
                signal.samples[n] * gaussian_window(t - signal.time(n), grid.lambda) * (end * du)
            })
            .collect();
        let u0 = signal.time(lo);
        (0..grid.omega_count)
            .map(|i| {
                let omega = grid.omega(i);
                let step = Complex64::from_polar(1.0, -omega * du);
                let mut rot = Complex64::from_polar(1.0, -omega * u0);
                let mut acc = Complex64::new(0.0, 0.0);
                for g in &weighted {
                    acc += g * rot;
                    rot *= step;
                }
                acc * Complex64::from_polar(1.0, omega * t / 2.0)
            })
            .collect::<Vec<_>>()
    });
    let mut out = Array2::zeros((grid.omega_count, grid.t_count));
    for (j, col) in columns.into_iter().enumerate() {
        for (i, z) in col.into_iter().enumerate() {
            out[[i, j]] = z;
        }
    }
    Ok(out)
}

/// Residuals of both relations on the interior grid points.
#[derive(Clone, Debug)]
pub struct RelationReport {
    pub grid: TfGrid,
    pub threshold: f64,
    /// `∂φ/∂t − λ⁻² ∂logA/∂ω − ω/2`, indexed like the grid.
    pub residual_a: Array2<f64>,
    /// `∂φ/∂ω + λ² ∂logA/∂t + t/2`.
    pub residual_b: Array2<f64>,
    pub relative_a: Array2<f64>,
    pub relative_b: Array2<f64>,
    /// Interior points whose amplitude exceeds `threshold · max A`.
    pub mask: Array2<bool>,
    pub masked_points: usize,
    pub median_relative_a: f64,
    pub median_relative_b: f64,
}

impl RelationReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.median_relative_a < tolerance && self.median_relative_b < tolerance
    }

    /// `omega,t,residual_a,residual_b` for every masked point.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("omega,t,residual_a,residual_b\n");
        for ((i, j), &m) in self.mask.indexed_iter() {
            if m {
                s.push_str(&format!(
                    "{},{},{},{}\n",
                    self.grid.omega(i),
                    self.grid.time(j),
                    self.residual_a[[i, j]],
                    self.residual_b[[i, j]]
                ));
            }
        }
        s
    }

    pub fn summary(&self) -> String {
        format!(
            "lambda={} points={} median_rel_a={:.3e} median_rel_b={:.3e}",
            self.grid.lambda, self.masked_points, self.median_relative_a, self.median_relative_b
        )
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn relation_residual(signal: &SampledSignal, grid: &TfGrid, threshold: f64) -> Result<RelationReport> {
    let x = gaussian_stft_grid(signal, grid)?;
    let amp = x.mapv(|z| z.norm());
    let peak = amp.iter().cloned().fold(0.0, f64::max);
    let (nw, nt) = amp.dim();
    let lambda = grid.lambda;
    let (dt, dw) = (grid.t_step, grid.omega_step);

    let mut residual_a = Array2::zeros((nw, nt));
    let mut residual_b = Array2::zeros((nw, nt));
    let mut relative_a = Array2::zeros((nw, nt));
    let mut relative_b = Array2::zeros((nw, nt));
    let mut mask = Array2::from_elem((nw, nt), false);
    let mut rel_a = Vec::new();
    let mut rel_b = Vec::new();
    let floor = threshold * peak;

    for i in 1..nw - 1 {
        for j in 1..nt - 1 {
            let neighbours = [
                amp[[i, j]],
                amp[[i + 1, j]],
                amp[[i - 1, j]],
                amp[[i, j + 1]],
                amp[[i, j - 1]],
            ];
            if peak == 0.0 || amp[[i, j]] <= floor || neighbours.iter().any(|&a| a <= 0.0) {
                continue;
            }
            let (omega, t) = (grid.omega(i), grid.time(j));
            let dphi_dt = (x[[i, j + 1]] * x[[i, j - 1]].conj()).arg() / (2.0 * dt);
            let dphi_dw = (x[[i + 1, j]] * x[[i - 1, j]].conj()).arg() / (2.0 * dw);
            let dloga_dw = (amp[[i + 1, j]].ln() - amp[[i - 1, j]].ln()) / (2.0 * dw);
            let dloga_dt = (amp[[i, j + 1]].ln() - amp[[i, j - 1]].ln()) / (2.0 * dt);

            let ra = dphi_dt - dloga_dw / (lambda * lambda) - omega / 2.0;
            let rb = dphi_dw + lambda * lambda * dloga_dt + t / 2.0;
            let na = ra.abs() / (dphi_dt.abs() + (omega / 2.0).abs());
            let nb = rb.abs() / (dphi_dw.abs() + (t / 2.0).abs());

            residual_a[[i, j]] = ra;
            residual_b[[i, j]] = rb;
            relative_a[[i, j]] = na;
            relative_b[[i, j]] = nb;
            mask[[i, j]] = true;
            rel_a.push(na);
            rel_b.push(nb);
        }
    }
    if rel_a.is_empty() {
        return Err(Error::EmptyMask);
    }
    let masked_points = rel_a.len();
    Ok(RelationReport {
        grid: grid.clone(),
        threshold,
        residual_a,
        residual_b,
        relative_a,
        relative_b,
        mask,
        masked_points,
        median_relative_a: median(&mut rel_a),
        median_relative_b: median(&mut rel_b),
    })
}

/// Median relative residuals at or below this are quadrature error from the
/// ±6λ truncation, not finite-difference error.
pub const QUADRATURE_FLOOR: f64 = 1e-7;

/// Reports on `grid` and on its 2× refinement.
pub fn relation_convergence(
    signal: &SampledSignal,
    grid: &TfGrid,
    threshold: f64,
) -> Result<(RelationReport, RelationReport)> {
    let coarse = relation_residual(signal, grid, threshold)?;
    let fine = relation_residual(signal, &grid.refined(), threshold)?;
    Ok((coarse, fine))
}

/// Parameters of the chirp experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryConfig {
    pub lambda: f64,
    pub sample_rate: f64,
    pub chirp_start_hz: f64,
    pub chirp_end_hz: f64,
    pub duration: f64,
    pub t_range: (f64, f64),
    pub t_step: f64,
    pub freq_range_hz: (f64, f64),
    pub omega_step: f64,
    pub threshold: f64,
    pub tolerance: f64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            lambda: 0.02,
            sample_rate: 2000.0,
            chirp_start_hz: 60.0,
            chirp_end_hz: 140.0,
            duration: 1.0,
            t_range: (0.4, 0.6),
            t_step: 1e-3,
            freq_range_hz: (60.0, 140.0),
            omega_step: 2.0,
            threshold: 0.01,
            tolerance: 0.05,
        }
    }
}

impl TheoryConfig {
    pub fn signal(&self) -> SampledSignal {
        SampledSignal::linear_chirp(self.chirp_start_hz, self.chirp_end_hz, self.duration, self.sample_rate)
    }

    pub fn grid(&self) -> Result<TfGrid> {
        TfGrid::spanning(
            self.t_range,
            self.t_step,
            (2.0 * PI * self.freq_range_hz.0, 2.0 * PI * self.freq_range_hz.1),
            self.omega_step,
            self.lambda,
        )
    }
}
