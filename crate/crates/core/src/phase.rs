//! Phase pre-processing: instantaneous frequency (`Δt φ`), group delay
//! (`Δf φ`), removal of the systematic offsets the framed DFT introduces, and
//! wrapping to `[-π, π)`.
//!
//! Boundary entries (frame 0 for `Δt`, bin 0 for `Δf`) are 0 so every feature
//! tensor keeps the `channels × frames × bins` shape of the amplitude.

use std::f64::consts::PI;
use std::fmt;

use ndarray::{Array3, Array4, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;

/// Maps `x` to `((x + π) mod 2π) − π`, i.e. into `[-π, π)`.
#[inline]
pub fn wrap(x: f64) -> f64 {
    let mut r = (x + PI).rem_euclid(TWO_PI);
    // rem_euclid can round up to exactly 2π for tiny negative arguments
    if r >= TWO_PI {
        r = 0.0;
    }
    r - PI
}

pub fn wrap_tensor<D: ndarray::Dimension>(x: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
    x.mapv(wrap)
}

/// `wrap(φ(k,m) − φ(k,m−1))`; frame 0 is 0.
pub fn time_diff(ph: &Array3<f64>) -> Result<Array3<f64>> {
    let (_, frames, _) = ph.dim();
    if frames < 2 {
        return Err(Error::Shape(format!("time difference needs >= 2 frames, got {frames}")));
    }
    let mut out = Array3::zeros(ph.dim());
    for ((c, m, k), v) in out.indexed_iter_mut() {
        if m > 0 {
            *v = wrap(ph[[c, m, k]] - ph[[c, m - 1, k]]);
        }
    }
    Ok(out)
}

/// `wrap(φ(k,m) − φ(k−1,m))`; bin 0 is 0.
pub fn freq_diff(ph: &Array3<f64>) -> Result<Array3<f64>> {
    let (_, _, bins) = ph.dim();
    if bins < 2 {
        return Err(Error::Shape(format!(
            "frequency difference needs >= 2 bins, got {bins}"
        )));
    }
    let mut out = Array3::zeros(ph.dim());
    for ((c, m, k), v) in out.indexed_iter_mut() {
        if k > 0 {
            *v = wrap(ph[[c, m, k]] - ph[[c, m, k - 1]]);
        }
    }
    Ok(out)
}

/// Phase advance of a stationary bin-centred tone between consecutive frames,
/// `2πk·hop/N`, under the forward-DFT sign convention of [`crate::stft`].
pub fn frame_advance(k: usize, fft_size: usize, hop: usize) -> f64 {
    TWO_PI * (k * hop % fft_size) as f64 / fft_size as f64
}

/// Removes the linear term `2πk·hop/N` from `Δt φ` so a stationary bin-centred
/// tone maps to 0, then wraps.
pub fn correct_time_shift(dt: &Array3<f64>, fft_size: usize, hop: usize) -> Array3<f64> {
    let mut out = dt.clone();
    for ((_, m, k), v) in out.indexed_iter_mut() {
        if m > 0 {
            *v = wrap(*v - frame_advance(k, fft_size, hop));
        }
    }
    out
}

/// `wrap(Δf φ − π)`, centring the group delay of a centred window on 0.
pub fn correct_freq_shift(df: &Array3<f64>) -> Array3<f64> {
    let mut out = df.clone();
    for ((_, _, k), v) in out.indexed_iter_mut() {
        if k > 0 {
            *v = wrap(*v - PI);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseFeatureConfig {
    /// Feed the wrapped raw phase instead of derivatives (ablation baseline).
    #[serde(default)]
    pub raw_phase: bool,
    #[serde(default)]
    pub use_time_derivative: bool,
    #[serde(default)]
    pub use_freq_derivative: bool,
    #[serde(default)]
    pub correct_time_shift: bool,
    #[serde(default)]
    pub correct_freq_shift: bool,
    pub fft_size: usize,
    pub hop: usize,
}

impl PhaseFeatureConfig {
    /// Both derivatives, both corrections.
    pub fn full(fft_size: usize, hop: usize) -> Self {
        Self {
            raw_phase: false,
            use_time_derivative: true,
            use_freq_derivative: true,
            correct_time_shift: true,
            correct_freq_shift: true,
            fft_size,
            hop,
        }
    }

    pub fn raw(fft_size: usize, hop: usize) -> Self {
        Self {
            raw_phase: true,
            use_time_derivative: false,
            use_freq_derivative: false,
            correct_time_shift: false,
            correct_freq_shift: false,
            fft_size,
            hop,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.raw_phase && (self.use_time_derivative || self.use_freq_derivative) {
            return Err(Error::Config("raw phase cannot be combined with derivatives".into()));
        }
        if !self.raw_phase && !self.use_time_derivative && !self.use_freq_derivative {
            return Err(Error::Config("no phase derivative enabled".into()));
        }
        if self.fft_size == 0 || self.hop == 0 {
            return Err(Error::Config("fft_size and hop must be positive".into()));
        }
        Ok(())
    }

    /// Size of the trailing feature axis.
    pub fn feature_count(&self) -> usize {
        if self.raw_phase {
            1
        } else {
            self.use_time_derivative as usize + self.use_freq_derivative as usize
        }
    }

    /// Short label used in file names, e.g. `dt_shift+df_shift`.
    pub fn label(&self) -> String {
        if self.raw_phase {
            return "raw".into();
        }
        let mut parts = Vec::new();
        if self.use_time_derivative {
            parts.push(if self.correct_time_shift { "dt_shift" } else { "dt" });
        }
        if self.use_freq_derivative {
            parts.push(if self.correct_freq_shift { "df_shift" } else { "df" });
        }
        parts.join("+")
    }

    /// Parses labels produced by [`PhaseFeatureConfig::label`].
    pub fn from_label(label: &str, fft_size: usize, hop: usize) -> Result<Self> {
        if label == "raw" {
            return Ok(Self::raw(fft_size, hop));
        }
        let mut cfg = Self {
            raw_phase: false,
            use_time_derivative: false,
            use_freq_derivative: false,
            correct_time_shift: false,
            correct_freq_shift: false,
            fft_size,
            hop,
        };
        for part in label.split('+') {
            match part {
                "dt" => cfg.use_time_derivative = true,
                "dt_shift" => {
                    cfg.use_time_derivative = true;
                    cfg.correct_time_shift = true;
                }
                "df" => cfg.use_freq_derivative = true,
                "df_shift" => {
                    cfg.use_freq_derivative = true;
                    cfg.correct_freq_shift = true;
                }
                other => return Err(Error::Config(format!("unknown phase feature '{other}' in '{label}'"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The ablation grid: raw phase, each derivative with and without its
/// correction, and both derivatives together.
pub fn ablation_variants(fft_size: usize, hop: usize) -> Vec<PhaseFeatureConfig> {
    ["raw", "dt", "dt_shift", "df", "df_shift", "dt+df", "dt_shift+df_shift"]
        .iter()
        .map(|l| PhaseFeatureConfig::from_label(l, fft_size, hop).expect("static labels"))
        .collect()
}

/// Applies the configured derivatives and corrections and stacks them on a
/// trailing axis, `[Δt, Δf]` when both are enabled.
pub fn extract_phase_features(ph: &Array3<f64>, cfg: &PhaseFeatureConfig) -> Result<Array4<f64>> {
    cfg.validate()?;
    let mut parts: Vec<Array3<f64>> = Vec::with_capacity(2);
    if cfg.raw_phase {
        parts.push(wrap_tensor(ph));
    }
    if cfg.use_time_derivative {
        let dt = time_diff(ph)?;
        parts.push(if cfg.correct_time_shift {
            correct_time_shift(&dt, cfg.fft_size, cfg.hop)
        } else {
            dt
        });
    }
    if cfg.use_freq_derivative {
        let df = freq_diff(ph)?;
        parts.push(if cfg.correct_freq_shift {
            correct_freq_shift(&df)
        } else {
            df
        });
    }
    let (c, m, k) = ph.dim();
    let mut out = Array4::zeros((c, m, k, parts.len()));
    for (f, part) in parts.iter().enumerate() {
        out.index_axis_mut(Axis(3), f).assign(part);
    }
    Ok(out)
}

/// Counts over `bins` uniform bins spanning `[-π, π]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub bin_index: usize,
    pub feature: String,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Centre of the most populated bin (first one on ties).
    pub fn mode(&self) -> f64 {
        let (i, _) = self
            .counts
            .iter()
            .enumerate()
            .fold((0, 0), |best, (i, &c)| if c > best.1 { (i, c) } else { best });
        0.5 * (self.edges[i] + self.edges[i + 1])
    }

    pub fn bin_width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }

    /// CSV with header `bin_lo,bin_hi,count`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", self.edges[i], self.edges[i + 1], c));
        }
        s
    }
}

impl fmt::Display for Histogram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} k={} ({} values)", self.feature, self.bin_index, self.total())
    }
}

pub fn feature_histogram(values: ArrayView1<'_, f64>, bins: usize, k: usize, feature: &str) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::Config(format!("histogram needs >= 2 bins, got {bins}")));
    }
    if values.is_empty() {
        return Err(Error::Empty("no values to histogram".into()));
    }
    let width = TWO_PI / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| -PI + i as f64 * width).collect();
    let mut counts = vec![0u64; bins];
    for &v in values.iter() {
        let idx = (((v + PI) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Ok(Histogram {
        edges,
        counts,
        bin_index: k,
        feature: feature.to_string(),
    })
}

/// All values of bin `k` across channels and frames (skipping the boundary
/// frame for `Δt` when `skip_first_frame`).
pub fn bin_values(t: &Array3<f64>, k: usize, skip_first_frame: bool) -> Vec<f64> {
    let (channels, frames, _) = t.dim();
    let start = skip_first_frame as usize;
    (0..channels)
        .flat_map(|c| (start..frames).map(move |m| (c, m)))
        .map(|(c, m)| t[[c, m, k]])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array1;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn in_range(x: f64) -> bool {
        (-PI..PI).contains(&x)
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap(PI), -PI);
        assert_abs_diff_eq!(wrap(5.0 * PI / 2.0), PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap(-3.0 * PI / 2.0), PI / 2.0, epsilon = 1e-12);
        assert_eq!(wrap(-PI), -PI);
        assert_eq!(wrap(0.0), 0.0);
        assert!(in_range(wrap(-1e-17)));
        assert!(in_range(wrap(-TWO_PI * 1e9 - 1e-9)));
    }

    #[test]
    fn time_diff_examples() {
        let constant = Array3::from_elem((2, 5, 4), 1.3);
        assert!(time_diff(&constant).unwrap().iter().all(|&v| v == 0.0));

        let ramp = Array3::from_shape_fn((1, 6, 3), |(_, m, _)| wrap(m as f64 * 0.3));
        let d = time_diff(&ramp).unwrap();
        for m in 1..6 {
            for k in 0..3 {
                assert_abs_diff_eq!(d[[0, m, k]], 0.3, epsilon = 1e-12);
            }
        }

        let mut jump = Array3::from_elem((1, 2, 1), 3.0);
        jump[[0, 1, 0]] = -3.0;
        assert_abs_diff_eq!(time_diff(&jump).unwrap()[[0, 1, 0]], TWO_PI - 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(TWO_PI - 6.0, 0.28319, epsilon = 1e-5);

        assert!(time_diff(&Array3::zeros((1, 1, 4))).is_err());
    }

    #[test]
    fn freq_diff_examples() {
        let constant = Array3::from_elem((1, 3, 5), -2.0);
        assert!(freq_diff(&constant).unwrap().iter().all(|&v| v == 0.0));
        let ramp = Array3::from_shape_fn((1, 2, 8), |(_, _, k)| k as f64 * 0.1);
        let d = freq_diff(&ramp).unwrap();
        for k in 1..8 {
            assert_abs_diff_eq!(d[[0, 1, k]], 0.1, epsilon = 1e-12);
        }
        assert!(freq_diff(&Array3::zeros((1, 4, 1))).is_err());
    }

    #[test]
    fn freq_diff_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ph = Array3::from_shape_fn((2, 7, 9), |_| rng.random_range(-PI..PI));
        let d = freq_diff(&ph).unwrap();
        for c in 0..2 {
            for m in 0..7 {
                assert_eq!(d[[c, m, 0]], 0.0);
                for k in 1..9 {
                    let raw = ph[[c, m, k]] - ph[[c, m, k - 1]];
                    let mut expected = raw;
                    while expected >= PI {
                        expected -= TWO_PI;
                    }
                    while expected < -PI {
                        expected += TWO_PI;
                    }
                    assert_abs_diff_eq!(d[[c, m, k]], expected, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn time_shift_term_at_75_percent_overlap() {
        // N = 4096, hop = 1024: the term removed at bin k is kπ/2
        let zeros = Array3::zeros((1, 2, 8));
        let out = correct_time_shift(&zeros, 4096, 1024);
        for k in 0..8 {
            assert_abs_diff_eq!(out[[0, 1, k]], wrap(-(k as f64) * PI / 2.0), epsilon = 1e-12);
            assert_abs_diff_eq!(
                frame_advance(k, 4096, 1024),
                (k as f64 * PI / 2.0).rem_euclid(TWO_PI),
                epsilon = 1e-12
            );
        }
        // k = 4, N = 8, hop = 2 -> 2π -> 0
        let zeros = Array3::zeros((1, 2, 5));
        let out = correct_time_shift(&zeros, 8, 2);
        assert_abs_diff_eq!(out[[0, 1, 4]], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[[0, 1, 1]], -PI / 2.0, epsilon = 1e-12);
        assert_eq!(out[[0, 0, 1]], 0.0);
    }

    #[test]
    fn freq_shift_examples() {
        let mut df = Array3::zeros((1, 1, 3));
        df[[0, 0, 1]] = PI;
        let out = correct_freq_shift(&df);
        assert_eq!(out[[0, 0, 0]], 0.0);
        assert_abs_diff_eq!(out[[0, 0, 1]], 0.0, epsilon = 1e-12);
        assert_eq!(out[[0, 0, 2]], -PI);
    }

    #[test]
    fn extract_on_constant_phase() {
        let ph = Array3::from_elem((1, 4, 9), 0.7);
        let f = extract_phase_features(&ph, &PhaseFeatureConfig::full(8, 2)).unwrap();
        assert_eq!(f.dim(), (1, 4, 9, 2));
        for m in 1..4 {
            for k in 0..9 {
                // hop/N = 1/4: the removed term is a multiple of 2π on every 4th bin
                if k % 4 == 0 {
                    assert_abs_diff_eq!(f[[0, m, k, 0]], 0.0, epsilon = 1e-12);
                }
            }
        }
        for m in 0..4 {
            for k in 1..9 {
                assert_eq!(f[[0, m, k, 1]], -PI);
            }
        }
    }

    #[test]
    fn extract_single_feature_is_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ph = Array3::from_shape_fn((2, 5, 6), |_| rng.random_range(-PI..PI));
        let mut cfg = PhaseFeatureConfig::full(10, 5);
        cfg.use_time_derivative = false;
        cfg.correct_time_shift = false;
        let f = extract_phase_features(&ph, &cfg).unwrap();
        assert_eq!(f.dim(), (2, 5, 6, 1));
        let manual = correct_freq_shift(&freq_diff(&ph).unwrap());
        assert_eq!(f.index_axis(Axis(3), 0), manual);
    }

    #[test]
    fn extract_requires_a_derivative() {
        let mut cfg = PhaseFeatureConfig::full(8, 2);
        cfg.use_time_derivative = false;
        cfg.use_freq_derivative = false;
        let ph = Array3::zeros((1, 3, 5));
        assert!(matches!(extract_phase_features(&ph, &cfg), Err(Error::Config(_))));
        let raw = extract_phase_features(&ph, &PhaseFeatureConfig::raw(8, 2)).unwrap();
        assert_eq!(raw.dim(), (1, 3, 5, 1));
    }

    #[test]
    fn labels_round_trip() {
        for v in ablation_variants(512, 128) {
            assert_eq!(PhaseFeatureConfig::from_label(&v.label(), 512, 128).unwrap(), v);
        }
        assert!(PhaseFeatureConfig::from_label("dq", 512, 128).is_err());
    }

    #[test]
    fn histogram_examples() {
        let zeros = Array1::zeros(10);
        let h = feature_histogram(zeros.view(), 4, 3, "dt").unwrap();
        assert_eq!(h.counts, vec![0, 0, 10, 0]);
        assert_eq!(h.total(), 10);

        let grid: Array1<f64> = (0..80).map(|i| -PI + i as f64 * TWO_PI / 80.0).collect();
        let h = feature_histogram(grid.view(), 8, 0, "dt").unwrap();
        assert!(h.counts.iter().all(|&c| c == 10), "{:?}", h.counts);

        assert!(feature_histogram(Array1::zeros(0).view(), 4, 0, "dt").is_err());
        assert!(feature_histogram(zeros.view(), 1, 0, "dt").is_err());
        assert!(h.to_csv().starts_with("bin_lo,bin_hi,count\n"));
    }

    proptest! {
        #[test]
        fn wrap_is_idempotent_and_in_range(x in -1e6f64..1e6) {
            let w = wrap(x);
            prop_assert!(in_range(w));
            prop_assert_eq!(wrap(w), w);
            // same angle
            prop_assert!(((x - w) / TWO_PI - ((x - w) / TWO_PI).round()).abs() < 1e-6);
        }

        #[test]
        fn features_stay_in_range(seed in 0u64..1000, label_idx in 0usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ph = Array3::from_shape_fn((2, 4, 6), |_| rng.random_range(-PI..PI));
            let cfg = ablation_variants(16, 4)[label_idx].clone();
            let f = extract_phase_features(&ph, &cfg).unwrap();
            prop_assert!(f.iter().all(|&v| in_range(v)));
        }
    }
}
