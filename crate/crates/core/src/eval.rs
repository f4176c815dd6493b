//! Scoring separations and comparing runs.
//!
//! SDR here is the plain energy ratio `10·log₁₀(‖s‖² / ‖s − ŝ‖²)`, not the
//! filtered-projection variant of the usual evaluation toolkits. Absolute
//! values are therefore only comparable between runs of this crate.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{s, Axis};
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::dataset::{Instrument, Song};
use crate::error::{Error, Result};
use crate::par;
use crate::theory::median;

/// Scores are capped here so a perfect estimate stays finite and sortable.
pub const SDR_CAP_DB: f64 = 300.0;
/// Stated in every emitted report.
pub const SDR_NOTE: &str =
    "sdr is the plain energy ratio 10*log10(|s|^2/|s-s_hat|^2); values are not comparable to filtered-projection sdr";

fn ratio_db(signal: f64, residual: f64) -> f64 {
    if residual == 0.0 {
        SDR_CAP_DB
    } else {
        (10.0 * (signal / residual).log10()).min(SDR_CAP_DB)
    }
}

/// Channel-averaged SDR over the whole clip. Silent reference channels are
/// left out of the average; a fully silent reference has no score.
pub fn sdr(reference: &AudioClip, estimate: &AudioClip) -> Result<f64> {
    if reference.samples().dim() != estimate.samples().dim() {
        return Err(Error::Shape(format!(
            "reference {:?} vs estimate {:?}",
            reference.samples().dim(),
            estimate.samples().dim()
        )));
    }
    sdr_span(reference, estimate, 0, reference.len())
}

fn sdr_span(reference: &AudioClip, estimate: &AudioClip, start: usize, end: usize) -> Result<f64> {
    let r = reference.samples();
    let e = estimate.samples();
    let mut scores = Vec::with_capacity(r.nrows());
    for (rc, ec) in r.axis_iter(Axis(0)).zip(e.axis_iter(Axis(0))) {
        let (rc, ec) = (rc.slice(s![start..end]), ec.slice(s![start..end]));
        let signal: f64 = rc.iter().map(|x| x * x).sum();
        if signal == 0.0 {
            continue;
        }
        let residual: f64 = rc.iter().zip(ec.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        scores.push(ratio_db(signal, residual));
    }
    if scores.is_empty() {
        return Err(Error::SilentReference);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum SdrMode {
    #[default]
    WholeClip,
    /// Mean over non-overlapping windows of this many seconds; windows with
    /// a silent reference are skipped.
    Segments { seconds: f64 },
}

pub fn sdr_with_mode(reference: &AudioClip, estimate: &AudioClip, mode: SdrMode) -> Result<f64> {
    match mode {
        SdrMode::WholeClip => sdr(reference, estimate),
        SdrMode::Segments { seconds } => {
            if reference.samples().dim() != estimate.samples().dim() {
                return Err(Error::Shape("reference and estimate differ in shape".into()));
            }
            let len = (seconds * reference.sample_rate() as f64).round() as usize;
            if !(seconds > 0.0) || len == 0 {
                return Err(Error::Config(format!(
                    "segment length {seconds} s is shorter than a sample"
                )));
            }
            let scores: Vec<f64> = par::ranges(reference.len(), len)
                .into_iter()
                .filter_map(|r| sdr_span(reference, estimate, r.start, r.end).ok())
                .collect();
            if scores.is_empty() {
                return Err(Error::SilentReference);
            }
            Ok(scores.iter().sum::<f64>() / scores.len() as f64)
        }
    }
}

/// Scores of one song.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SongScore {
    pub song: String,
    pub sdr_db: BTreeMap<Instrument, f64>,
    /// Instruments whose reference is silent.
    pub skipped: Vec<Instrument>,
    /// Samples dropped to bring estimates and references to a common length.
    pub trimmed: usize,
}

pub fn evaluate_song(song: &Song, estimates: &BTreeMap<Instrument, AudioClip>, mode: SdrMode) -> Result<SongScore> {
    let mut score = SongScore {
        song: song.name.clone(),
        sdr_db: BTreeMap::new(),
        skipped: Vec::new(),
        trimmed: 0,
    };
    for (&i, est) in estimates {
        let reference = song
            .sources
            .get(&i)
            .ok_or_else(|| Error::ReportMismatch(format!("{} has no {i} stem", song.name)))?;
        let len = reference.len().min(est.len());
        score.trimmed = score.trimmed.max(reference.len().max(est.len()) - len);
        match sdr_with_mode(&reference.truncated(len), &est.truncated(len), mode) {
            Ok(v) => {
                score.sdr_db.insert(i, v);
            }
            Err(Error::SilentReference) => {
                log::warn!("{}: {i} reference is silent, not scored", song.name);
                score.skipped.push(i);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(score)
}

/// Per-song scores with per-instrument medians over songs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub songs: Vec<SongScore>,
    pub median_db: BTreeMap<Instrument, f64>,
    /// Median over songs of each song's mean over its scored instruments.
    pub overall_db: f64,
    /// Architecture, feature flags, seed, config hash.
    pub metadata: BTreeMap<String, String>,
}

pub fn aggregate(songs: Vec<SongScore>, mut metadata: BTreeMap<String, String>) -> Result<ScoreReport> {
    if songs.is_empty() {
        return Err(Error::Empty("no songs to aggregate".into()));
    }
    let mut per_instrument: BTreeMap<Instrument, Vec<f64>> = BTreeMap::new();
    let mut overall = Vec::new();
    for s in &songs {
        for (&i, &v) in &s.sdr_db {
            per_instrument.entry(i).or_default().push(v);
        }
        if !s.sdr_db.is_empty() {
            overall.push(s.sdr_db.values().sum::<f64>() / s.sdr_db.len() as f64);
        }
    }
    if overall.is_empty() {
        return Err(Error::Empty("every reference is silent".into()));
    }
    metadata.insert("sdr".into(), SDR_NOTE.into());
    Ok(ScoreReport {
        median_db: per_instrument
            .into_iter()
            .map(|(i, mut v)| (i, median(&mut v)))
            .collect(),
        overall_db: median(&mut overall),
        songs,
        metadata,
    })
}

impl ScoreReport {
    /// `song,instrument,sdr_db`, skipped instruments omitted.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("song,instrument,sdr_db\n");
        for s in &self.songs {
            for (i, v) in &s.sdr_db {
                out.push_str(&format!("{},{i},{v}\n", s.song));
            }
        }
        out
    }

    pub fn summary_json(&self) -> Result<String> {
        let summary = serde_json::json!({
            "metadata": self.metadata,
            "median_db": self.median_db,
            "overall_db": self.overall_db,
            "songs": self.songs.len(),
        });
        Ok(serde_json::to_string_pretty(&summary)?)
    }

    fn keys(&self) -> BTreeSet<(String, Instrument)> {
        self.songs
            .iter()
            .flat_map(|s| s.sdr_db.keys().map(|&i| (s.song.clone(), i)))
            .collect()
    }
}

/// `100 · (candidate − baseline) / |baseline|`.
pub fn relative_improvement(baseline: f64, candidate: f64) -> f64 {
    100.0 * (candidate - baseline) / baseline.abs()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub instrument: Instrument,
    pub baseline_db: f64,
    pub candidate_db: f64,
    pub delta_db: f64,
    pub relative_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: ScoreReport,
    pub candidate: ScoreReport,
    pub rows: Vec<ComparisonRow>,
}

pub fn compare(baseline: &ScoreReport, candidate: &ScoreReport) -> Result<Comparison> {
    if baseline.keys() != candidate.keys() {
        return Err(Error::ReportMismatch(
            "reports cover different songs or instruments".into(),
        ));
    }
    let rows = baseline
        .median_db
        .iter()
        .map(|(&instrument, &b)| {
            let c = candidate.median_db[&instrument];
            ComparisonRow {
                instrument,
                baseline_db: b,
                candidate_db: c,
                delta_db: c - b,
                relative_pct: relative_improvement(b, c),
            }
        })
        .collect();
    Ok(Comparison {
        baseline: baseline.clone(),
        candidate: candidate.clone(),
        rows,
    })
}

impl Comparison {
    /// One row per instrument: baseline, candidate, change in dB and percent.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("instrument,baseline_db,candidate_db,delta_db,relative_improvement_pct\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.2},{:.2},{:+.2},{:+.2}\n",
                r.instrument, r.baseline_db, r.candidate_db, r.delta_db, r.relative_pct
            ));
        }
        out
    }
}

/// Methods as rows, instruments as columns, median SDR in each cell.
pub fn method_table(methods: &[(&str, &ScoreReport)]) -> String {
    let mut out = String::from("method");
    for i in Instrument::ALL {
        out.push_str(&format!(",{i}"));
    }
    out.push('\n');
    for (name, report) in methods {
        out.push_str(name);
        for i in Instrument::ALL {
            match report.median_db.get(&i) {
                Some(v) => out.push_str(&format!(",{v:.2}")),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_improvement_rounding() {
        assert_eq!(format!("{:+.2}", relative_improvement(3.24, 3.44)), "+6.17");
        assert_eq!(format!("{:+.2}", relative_improvement(4.68, 4.71)), "+0.64");
        assert_eq!(relative_improvement(-2.0, -1.0), 50.0);
    }

    #[test]
    fn ratio_is_capped() {
        assert_eq!(ratio_db(1.0, 0.0), SDR_CAP_DB);
        assert_eq!(ratio_db(1.0, 1e-40), SDR_CAP_DB);
        assert!((ratio_db(1.0, 0.01) - 20.0).abs() < 1e-12);
    }
}
