//! From mixture to stems: network amplitude estimates, oracle baselines,
//! Wiener post-filtering and inverse STFT.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav_with_comment, AudioClip, WavFormat};
use crate::dataset::{Batch, InputFeatures, Instrument};
use crate::error::{Error, Result};
use crate::nn::ModelBundle;
use crate::par;
use crate::stft::{amplitude, istft, phase, polar_to_complex, stft, Spectrogram, StftConfig};

/// Per-instrument amplitude tensors, `channels × frames × bins`.
pub type AmpMap = BTreeMap<Instrument, Array3<f64>>;

pub const DEFAULT_IRM_EXPONENT: f64 = 1.0;
/// Frames per inference batch.
const INFER_CHUNK: usize = 256;
/// Hermitian and PSD checks allow this much error relative to the trace.
const PSD_TOLERANCE: f64 = 1e-12;

/// Runs every network of `bundle` over the mixture, frame by frame with
/// context.
pub fn estimate_amplitudes(bundle: &ModelBundle, mixture: &AudioClip) -> Result<AmpMap> {
    bundle.validate()?;
    if mixture.sample_rate() != bundle.stft.sample_rate {
        return Err(Error::SampleRate {
            expected: bundle.stft.sample_rate,
            found: mixture.sample_rate(),
        });
    }
    let (ch, bins) = (bundle.shape.channels, bundle.shape.bins);
    if mixture.channels() != ch || bundle.stft.bins() != bins {
        return Err(Error::Shape(format!(
            "bundle expects {ch} channels and {bins} bins, got {} channels and {} bins",
            mixture.channels(),
            bundle.stft.bins()
        )));
    }
    let feats = InputFeatures::from_clip(mixture, &bundle.stft, &bundle.examples)?;
    let frames = feats.frames;
    let mut out = BTreeMap::new();
    for (&instrument, net) in &bundle.networks {
        let mut amp = Array3::zeros((ch, frames, bins));
        for range in par::ranges(frames, INFER_CHUNK) {
            let idx: Vec<usize> = range.collect();
            let (a, p) = feats.gather(&idx, bundle.examples.context);
            let batch = Batch {
                amp: a,
                phase: p,
                target: Array2::zeros((idx.len(), 0)),
            };
            let inputs = net.inputs(&batch)?;
            let views: Vec<_> = inputs.iter().map(|x| x.view()).collect();
            let y = net.predict(&views)?;
            for (r, &m) in idx.iter().enumerate() {
                for c in 0..ch {
                    amp.slice_mut(s![c, m, ..])
                        .assign(&y.slice(s![r, c * bins..(c + 1) * bins]));
                }
            }
        }
        out.insert(instrument, amp);
    }
    Ok(out)
}

fn check_aligned<'a>(specs: impl IntoIterator<Item = &'a Spectrogram>, dim: (usize, usize, usize)) -> Result<()> {
    for sp in specs {
        if sp.values().dim() != dim {
            return Err(Error::Shape(format!(
                "spectrogram {:?} vs {:?}",
                sp.values().dim(),
                dim
            )));
        }
    }
    Ok(())
}

/// `|S_j|^p / Σ_i |S_i|^p`, with `1/J` wherever every source is silent.
pub fn irm_masks(sources: &BTreeMap<Instrument, Spectrogram>, exponent: f64) -> Result<AmpMap> {
    if !(exponent > 0.0 && exponent.is_finite()) {
        return Err(Error::Config(format!("mask exponent must be positive, got {exponent}")));
    }
    let first = sources
        .values()
        .next()
        .ok_or_else(|| Error::Empty("no sources for the mask".into()))?;
    let dim = first.values().dim();
    check_aligned(sources.values(), dim)?;
    let powers: Vec<Array3<f64>> = sources
        .values()
        .map(|sp| sp.values().mapv(|z| z.norm().powf(exponent)))
        .collect();
    let mut total = Array3::<f64>::zeros(dim);
    for p in &powers {
        total += p;
    }
    let equal = 1.0 / sources.len() as f64;
    Ok(sources
        .keys()
        .zip(powers)
        .map(|(&i, mut p)| {
            p.zip_mut_with(&total, |m, &t| *m = if t > 0.0 { *m / t } else { equal });
            (i, p)
        })
        .collect())
}

/// Ideal-ratio-mask amplitudes: `mask_j · |X|`.
pub fn irm_amplitude(
    sources: &BTreeMap<Instrument, Spectrogram>,
    mixture: &Spectrogram,
    exponent: f64,
) -> Result<AmpMap> {
    let masks = irm_masks(sources, exponent)?;
    check_aligned(sources.values(), mixture.values().dim())?;
    let mag = amplitude(mixture);
    Ok(masks.into_iter().map(|(i, m)| (i, m * &mag)).collect())
}

/// `istft(amp · e^{j·ph})`.
pub fn synthesize(amp: &Array3<f64>, ph: &Array3<f64>, cfg: &StftConfig, signal_len: usize) -> Result<AudioClip> {
    istft(&polar_to_complex(amp, ph, cfg, signal_len)?)
}

/// Estimated amplitude combined with the true source's phase.
pub fn oracle_phase_synthesize(amp_est: &Array3<f64>, true_source: &AudioClip, cfg: &StftConfig) -> Result<AudioClip> {
    let spec = stft(true_source, cfg)?;
    synthesize(amp_est, &phase(&spec), cfg, true_source.len())
}

/// Every amplitude estimate combined with the mixture phase.
pub fn mixture_phase_synthesize(amps: &AmpMap, mixture: &Spectrogram) -> Result<BTreeMap<Instrument, AudioClip>> {
    let ph = phase(mixture);
    amps.iter()
        .map(|(&i, a)| Ok((i, synthesize(a, &ph, mixture.config(), mixture.signal_len())?)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WienerMode {
    /// Per channel and bin, `Ŝ_j = v_j / Σ v_i · X` with `v_j = Â_j²`.
    RatioMask,
    /// Spatial covariance per bin and source, power shared across channels.
    Multichannel,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WienerConfig {
    pub mode: WienerMode,
    /// Re-estimation passes after the first filter (multichannel only).
    pub em_iterations: usize,
    /// Diagonal loading as a fraction of the matrix trace.
    pub epsilon: f64,
}

impl Default for WienerConfig {
    fn default() -> Self {
        Self {
            mode: WienerMode::Multichannel,
            em_iterations: 1,
            epsilon: 1e-8,
        }
    }
}

impl WienerConfig {
    pub fn ratio_mask() -> Self {
        Self {
            mode: WienerMode::RatioMask,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "Wiener loading must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Refines amplitude estimates into complex source spectrograms that sum to
/// (ratio mask) or approximate (multichannel) the mixture.
pub fn wiener_filter(
    estimates: &AmpMap,
    mixture: &Spectrogram,
    cfg: &WienerConfig,
) -> Result<BTreeMap<Instrument, Spectrogram>> {
    cfg.validate()?;
    if estimates.len() < 2 {
        return Err(Error::Config(format!(
            "Wiener filtering needs >= 2 sources, got {}",
            estimates.len()
        )));
    }
    let dim = mixture.values().dim();
    for a in estimates.values() {
        if a.dim() != dim {
            return Err(Error::Shape(format!("estimate {:?} vs mixture {:?}", a.dim(), dim)));
        }
    }
    let outputs = match cfg.mode {
        WienerMode::RatioMask => ratio_mask(estimates, mixture.values()),
        WienerMode::Multichannel => {
            let mut v: Vec<Array2<f64>> = estimates
                .values()
                .map(|a| a.mapv(|x| x * x).mean_axis(Axis(0)).expect("channels"))
                .collect();
            let mut out = multichannel(&v, mixture.values(), cfg.epsilon)?;
            for _ in 0..cfg.em_iterations {
                v = out
                    .iter()
                    .map(|s| s.mapv(|z| z.norm_sqr()).mean_axis(Axis(0)).expect("channels"))
                    .collect();
                out = multichannel(&v, mixture.values(), cfg.epsilon)?;
            }
            out
        }
    };
    estimates
        .keys()
        .zip(outputs)
        .map(|(&i, values)| Ok((i, mixture.with_values(values)?)))
        .collect()
}

fn ratio_mask(estimates: &AmpMap, x: &Array3<Complex64>) -> Vec<Array3<Complex64>> {
    let power: Vec<Array3<f64>> = estimates.values().map(|a| a.mapv(|v| v * v)).collect();
    let mut total = Array3::<f64>::zeros(x.dim());
    for p in &power {
        total += p;
    }
    let equal = 1.0 / power.len() as f64;
    power
        .iter()
        .map(|p| {
            let mut out = x.clone();
            ndarray::Zip::from(&mut out)
                .and(p)
                .and(&total)
                .for_each(|z, &v, &t| *z *= if t > 0.0 { v / t } else { equal });
            out
        })
        .collect()
}

/// Weighted spatial covariance of every source in bin `k`, loaded by
/// `epsilon · trace`. Frames are weighted by each source's share of the power.
/// A source with no weight in the bin gets the identity.
fn bin_covariances(v: &[Array2<f64>], x: &Array3<Complex64>, k: usize, epsilon: f64) -> Result<Vec<Array2<Complex64>>> {
    let (ch, frames, _) = x.dim();
    let equal = 1.0 / v.len() as f64;
    let mut out = Vec::with_capacity(v.len());
    for vj in v {
        let mut r = Array2::<Complex64>::zeros((ch, ch));
        let mut wsum = 0.0;
        for m in 0..frames {
            let total: f64 = v.iter().map(|vi| vi[[m, k]]).sum();
            let w = if total > 0.0 { vj[[m, k]] / total } else { equal };
            if w == 0.0 {
                continue;
            }
            wsum += w;
            for a in 0..ch {
                for b in 0..ch {
                    r[[a, b]] += w * x[[a, m, k]] * x[[b, m, k]].conj();
                }
            }
        }
        let trace: f64 = (0..ch).map(|a| r[[a, a]].re).sum();
        if wsum == 0.0 || trace == 0.0 {
            r = Array2::eye(ch).mapv(|d: f64| Complex64::new(d, 0.0));
        } else {
            r /= Complex64::new(wsum, 0.0);
            let load = epsilon * trace / wsum;
            for a in 0..ch {
                r[[a, a]] += load;
            }
        }
        if !is_hermitian_psd(r.view(), PSD_TOLERANCE) {
            return Err(Error::IndefiniteCovariance { bin: k });
        }
        out.push(r);
    }
    Ok(out)
}

/// Spatial covariances `R_j(k)` for source powers `v_j` (`frames × bins`),
/// as one `bins × channels × channels` tensor per source.
pub fn spatial_covariances(v: &[Array2<f64>], mixture: &Spectrogram, epsilon: f64) -> Result<Vec<Array3<Complex64>>> {
    let x = mixture.values();
    let (ch, frames, bins) = x.dim();
    if v.iter().any(|vj| vj.dim() != (frames, bins)) {
        return Err(Error::Shape(format!("source powers must be {frames}×{bins}")));
    }
    let per_bin = par::map_range(bins, |k| bin_covariances(v, x, k, epsilon));
    let mut out = vec![Array3::zeros((bins, ch, ch)); v.len()];
    for (k, covs) in per_bin.into_iter().enumerate() {
        for (o, r) in out.iter_mut().zip(covs?) {
            o.index_axis_mut(Axis(0), k).assign(&r);
        }
    }
    Ok(out)
}

fn multichannel(v: &[Array2<f64>], x: &Array3<Complex64>, epsilon: f64) -> Result<Vec<Array3<Complex64>>> {
    let (ch, frames, bins) = x.dim();
    let equal = Complex64::new(1.0 / v.len() as f64, 0.0);
    // per bin: sources × channels × frames
    let per_bin = par::map_range(bins, |k| -> Result<Array3<Complex64>> {
        let r = bin_covariances(v, x, k, epsilon)?;
        let mut out = Array3::zeros((v.len(), ch, frames));
        for m in 0..frames {
            let xm: Array1<Complex64> = x.slice(s![.., m, k]).to_owned();
            let total: f64 = v.iter().map(|vj| vj[[m, k]]).sum();
            if total == 0.0 {
                out.slice_mut(s![.., .., m])
                    .assign(&(&xm * equal).broadcast((v.len(), ch)).expect("channels"));
                continue;
            }
            let mut c = Array2::<Complex64>::zeros((ch, ch));
            for (vj, rj) in v.iter().zip(&r) {
                c.scaled_add(Complex64::new(vj[[m, k]], 0.0), rj);
            }
            let trace: f64 = (0..ch).map(|a| c[[a, a]].re).sum();
            for a in 0..ch {
                c[[a, a]] += epsilon * trace;
            }
            let y = solve(c, xm).ok_or(Error::SingularCovariance { bin: k, frame: m })?;
            for (j, (vj, rj)) in v.iter().zip(&r).enumerate() {
                let sj = rj.dot(&y) * vj[[m, k]];
                out.slice_mut(s![j, .., m]).assign(&sj);
            }
        }
        Ok(out)
    });
    let mut outputs = vec![Array3::zeros((ch, frames, bins)); v.len()];
    for (k, block) in per_bin.into_iter().enumerate() {
        let block = block?;
        for (j, o) in outputs.iter_mut().enumerate() {
            o.slice_mut(s![.., .., k]).assign(&block.index_axis(Axis(0), j));
        }
    }
    Ok(outputs)
}

/// Solves `a · y = b` by Gaussian elimination with partial pivoting. `None`
/// when a pivot vanishes relative to the largest diagonal entry.
fn solve(mut a: Array2<Complex64>, mut b: Array1<Complex64>) -> Option<Array1<Complex64>> {
    let n = b.len();
    let scale = (0..n).map(|i| a[[i, i]].norm()).fold(0.0, f64::max);
    if !(scale > 0.0 && scale.is_finite()) {
        return None;
    }
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[[i, col]].norm().total_cmp(&a[[j, col]].norm()))?;
        if a[[pivot, col]].norm() <= 1e-14 * scale {
            return None;
        }
        if pivot != col {
            for c in 0..n {
                a.swap([pivot, c], [col, c]);
            }
            b.swap(pivot, col);
        }
        for row in col + 1..n {
            let f = a[[row, col]] / a[[col, col]];
            for c in col..n {
                let v = a[[col, c]];
                a[[row, c]] -= f * v;
            }
            let v = b[col];
            b[row] -= f * v;
        }
    }
    for row in (0..n).rev() {
        let mut acc = b[row];
        for c in row + 1..n {
            acc -= a[[row, c]] * b[c];
        }
        b[row] = acc / a[[row, row]];
    }
    Some(b)
}

/// Hermitian within `tol · trace` and positive semidefinite: Cholesky of
/// `m + tol · trace · I` succeeds.
pub fn is_hermitian_psd(m: ArrayView2<'_, Complex64>, tol: f64) -> bool {
    let n = m.nrows();
    if m.ncols() != n {
        return false;
    }
    let scale = (0..n).map(|i| m[[i, i]].re.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..n {
            if (m[[i, j]] - m[[j, i]].conj()).norm() > tol * scale {
                return false;
            }
        }
    }
    let mut l = Array2::<Complex64>::zeros((n, n));
    for j in 0..n {
        let d = m[[j, j]].re + tol * scale - (0..j).map(|k| l[[j, k]].norm_sqr()).sum::<f64>();
        if !(d > 0.0) {
            return false;
        }
        l[[j, j]] = Complex64::new(d.sqrt(), 0.0);
        for i in j + 1..n {
            let mut acc = m[[i, j]];
            for k in 0..j {
                acc -= l[[i, k]] * l[[j, k]].conj();
            }
            l[[i, j]] = acc / l[[j, j]];
        }
    }
    true
}

/// Estimated stems with the amplitudes they came from.
#[derive(Clone, Debug)]
pub struct SeparationResult {
    pub estimates: BTreeMap<Instrument, AudioClip>,
    /// Network (or oracle) amplitudes before filtering.
    pub amplitudes: AmpMap,
    /// Moduli of the filtered spectrograms.
    pub filtered: AmpMap,
    pub mixture: Spectrogram,
}

impl SeparationResult {
    /// Writes `<dir>/<song>/<instrument>_estimate.wav` for every stem.
    pub fn write_stems(
        &self,
        dir: impl AsRef<Path>,
        song: &str,
        format: WavFormat,
        comment: &str,
    ) -> Result<Vec<PathBuf>> {
        let song_dir = dir.as_ref().join(song);
        std::fs::create_dir_all(&song_dir).map_err(|e| Error::write(&song_dir, e))?;
        self.estimates
            .iter()
            .map(|(i, clip)| {
                let path = song_dir.join(format!("{}_estimate.wav", i.name()));
                write_wav_with_comment(&path, clip, format, Some(comment))?;
                Ok(path)
            })
            .collect()
    }
}

/// Wiener filtering and synthesis from given amplitude estimates.
pub fn separate_from_amplitudes(
    amplitudes: AmpMap,
    mixture: &AudioClip,
    cfg: &StftConfig,
    wiener: &WienerConfig,
) -> Result<SeparationResult> {
    let spec = stft(mixture, cfg)?;
    let filtered_specs = wiener_filter(&amplitudes, &spec, wiener)?;
    let mut estimates = BTreeMap::new();
    let mut filtered = BTreeMap::new();
    for (i, sp) in filtered_specs {
        estimates.insert(i, istft(&sp)?);
        filtered.insert(i, amplitude(&sp));
    }
    Ok(SeparationResult {
        estimates,
        amplitudes,
        filtered,
        mixture: spec,
    })
}

/// Network estimates, Wiener filter, inverse STFT.
pub fn separate(bundle: &ModelBundle, mixture: &AudioClip, wiener: &WienerConfig) -> Result<SeparationResult> {
    let amps = estimate_amplitudes(bundle, mixture)?;
    separate_from_amplitudes(amps, mixture, &bundle.stft, wiener)
}
