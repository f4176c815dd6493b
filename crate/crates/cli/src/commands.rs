use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context as _, Result};
use phasesep::audio::{read_wav, AudioClip, WavFormat};
use phasesep::config::{ExperimentConfig, Profile};
use phasesep::dataset::{compute_stats, Instrument, Song};
use phasesep::dump::{write_feature_dump, write_spectrogram_dump};
use phasesep::eval::{compare, evaluate_song, method_table, ScoreReport};
use phasesep::experiment::{
    load_corpus, score_bundle, synth_corpus, train_bundle, upper_bounds, write_corpus, BundleSpec, Corpus,
};
use phasesep::nn::{load_bundle, save_bundle, Architecture, ModelBundle};
use phasesep::phase::{
    bin_values, correct_freq_shift, correct_time_shift, extract_phase_features, feature_histogram, freq_diff, time_diff,
};
use phasesep::separation::{oracle_phase_synthesize, separate as separate_mixture, SeparationResult};
use phasesep::stft::{amplitude, phase, stft};
use phasesep::theory::relation_residual;

/// Bad flags or an invalid config; exit code 1.
#[derive(Debug, thiserror::Error)]
#[error("{0:#}")]
pub struct UsageError(anyhow::Error);

/// A checked criterion did not hold; exit code 3.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct CriterionFailed(String);

/// The effective config and where outputs go.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub force: bool,
}

impl Context {
    pub fn new(
        config: Option<&Path>,
        out: Option<PathBuf>,
        seed: Option<u64>,
        profile: Option<Profile>,
        force: bool,
    ) -> Result<Self> {
        let load = || -> Result<ExperimentConfig> {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::load(p).with_context(|| format!("config {}", p.display()))?,
                None => ExperimentConfig::default(),
            };
            if let Some(p) = profile {
                cfg = cfg.with_profile(p);
            }
            if let Some(o) = out {
                cfg.output = o;
            }
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            cfg.validate()?;
            Ok(cfg)
        };
        let cfg = load().map_err(UsageError)?;
        Ok(Self {
            out: cfg.output.clone(),
            cfg,
            force,
        })
    }

    /// Seed of single-run outputs such as the corpus.
    fn seed(&self) -> u64 {
        self.cfg.seeds[0]
    }

    /// `config_sha256=<hash> seed=<seed>` of the effective config.
    fn provenance(&self, seed: u64) -> String {
        self.cfg.provenance(seed)
    }

    /// Creates `<out>/<rel>`, refusing to reuse a non-empty one without --force.
    fn fresh_dir(&self, rel: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = self.out.join(rel);
        let occupied = dir.exists() && fs::read_dir(&dir).map(|mut d| d.next().is_some()).unwrap_or(true);
        if occupied {
            if !self.force {
                return Err(anyhow!("{} already exists; pass --force to replace it", dir.display()));
            }
            fs::remove_dir_all(&dir).with_context(|| format!("removing {}", dir.display()))?;
        }
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    /// The configured corpus, else `<out>/corpus`, else a synthetic one in memory.
    fn corpus(&self) -> Result<Corpus> {
        let on_disk = self.cfg.corpus_root.clone().or_else(|| {
            let p = self.out.join("corpus");
            p.exists().then_some(p)
        });
        Ok(match on_disk {
            Some(root) => load_corpus(&root).with_context(|| format!("corpus {}", root.display()))?,
            None => {
                log::info!(
                    "no corpus on disk; synthesizing {} songs with seed {}",
                    self.cfg.songs,
                    self.seed()
                );
                synth_corpus(&self.cfg.synth, self.cfg.songs, self.cfg.test_songs, self.seed())?
            }
        })
    }

    fn find_song(&self, name: &str) -> Result<Song> {
        let corpus = self.corpus()?;
        corpus
            .dev
            .into_iter()
            .chain(corpus.test)
            .find(|s| s.name == name)
            .ok_or_else(|| anyhow!("song {name:?} is not in the corpus"))
    }

    /// Writes `text` after a `# <provenance>` line.
    fn write_csv(&self, path: &Path, seed: u64, text: &str) -> Result<()> {
        fs::write(path, format!("# {}\n{text}", self.provenance(seed)))
            .with_context(|| format!("writing {}", path.display()))
    }
}

pub fn synth(ctx: &Context) -> Result<()> {
    let seed = ctx.seed();
    let corpus = synth_corpus(&ctx.cfg.synth, ctx.cfg.songs, ctx.cfg.test_songs, seed)?;
    let dir = ctx.fresh_dir("corpus")?;
    write_corpus(&dir, &corpus, WavFormat::Float32, &ctx.provenance(seed))?;
    println!(
        "wrote {} dev and {} test songs to {}",
        corpus.dev.len(),
        corpus.test.len(),
        dir.display()
    );
    Ok(())
}

pub fn features(ctx: &Context, song: &str, source: Option<&str>, hist_bins: usize) -> Result<()> {
    let s = ctx.find_song(song)?;
    let (clip, tag) = match source {
        Some(name) => {
            let i: Instrument = name.parse().map_err(|e| UsageError(anyhow::Error::new(e)))?;
            (s.source(i).clone(), format!("{song}_{i}"))
        }
        None => (s.mixture.clone(), song.to_string()),
    };
    let cfg = ctx.cfg.stft_config();
    let spec = stft(&clip, &cfg)?;
    let ph = phase(&spec);
    let dt = time_diff(&ph)?;
    let df = freq_diff(&ph)?;
    let variants = [
        ("dt", false, dt.clone(), true),
        ("dt", true, correct_time_shift(&dt, cfg.fft_size, cfg.hop), true),
        ("df", false, df.clone(), false),
        ("df", true, correct_freq_shift(&df), false),
    ];

    let mut hist = String::from("feature,corrected,bin,bin_lo,bin_hi,count\n");
    let mut modes = String::from("feature,corrected,bin,mode\n");
    for (feature, corrected, values, skip_first) in &variants {
        for k in 0..values.dim().2 {
            let v = bin_values(values, k, *skip_first);
            let h = feature_histogram(ndarray::ArrayView1::from(&v), hist_bins, k, feature)?;
            for (n, c) in h.counts.iter().enumerate() {
                writeln!(hist, "{feature},{corrected},{k},{},{},{c}", h.edges[n], h.edges[n + 1])?;
            }
            writeln!(modes, "{feature},{corrected},{k},{}", h.mode())?;
        }
    }

    let seed = ctx.seed();
    let dir = ctx.fresh_dir(Path::new("features").join(&tag))?;
    ctx.write_csv(&dir.join("histograms.csv"), seed, &hist)?;
    ctx.write_csv(&dir.join("modes.csv"), seed, &modes)?;
    let note = ctx.provenance(seed);
    write_spectrogram_dump(dir.join("spectrogram.pspc"), &spec, Some(&note))?;
    let feat_cfg = ctx.cfg.phase_config(&ctx.cfg.phase_features)?;
    write_feature_dump(
        dir.join("features.pspc"),
        &extract_phase_features(&ph, &feat_cfg)?,
        &cfg,
        Some(&note),
    )?;
    println!("wrote histograms and dumps for {tag} to {}", dir.display());
    Ok(())
}

fn loss_csv(bundle: &ModelBundle) -> String {
    let mut s = String::from("instrument,epoch,train_mse,val_mse\n");
    for (i, r) in &bundle.reports {
        for (e, (t, v)) in r.train_mse.iter().zip(&r.val_mse).enumerate() {
            let v = v.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{i},{},{t},{v}\n", e + 1));
        }
    }
    s
}

pub fn train(ctx: &Context, ablation: bool) -> Result<()> {
    let cfg = &ctx.cfg;
    let corpus = ctx.corpus()?;
    let stft_cfg = cfg.stft_config();
    let stats = compute_stats(&corpus.dev, &stft_cfg)?;

    let mut jobs = Vec::new();
    for &arch in &cfg.architectures {
        jobs.push((arch.name().to_string(), arch, cfg.example_config(arch)?));
    }
    if ablation {
        for label in &cfg.ablation {
            let mut examples = cfg.example_config(Architecture::PhaseOnly)?;
            examples.phase = Some(cfg.phase_config(label)?);
            jobs.push((format!("phase_only_{label}"), Architecture::PhaseOnly, examples));
        }
    }

    let dir = ctx.fresh_dir("train")?;
    let mut summary = String::from("bundle,instrument,epochs,best_epoch,final_train_mse\n");
    for &seed in &cfg.seeds {
        for (tag, arch, examples) in &jobs {
            let spec = BundleSpec {
                architecture: *arch,
                stft: stft_cfg.clone(),
                examples: examples.clone(),
                hidden: cfg.hidden,
                instruments: Instrument::ALL.to_vec(),
                train: cfg.train.clone(),
                seed,
            };
            let mut bundle = train_bundle(&spec, &corpus.dev, &stats).with_context(|| format!("training {tag}"))?;
            bundle.metadata.insert("config_sha256".into(), cfg.hash());
            let name = format!("{tag}_seed{seed}");
            save_bundle(&bundle, dir.join(format!("{name}.bundle")))?;
            ctx.write_csv(&dir.join(format!("{name}_loss.csv")), seed, &loss_csv(&bundle))?;
            for (i, r) in &bundle.reports {
                writeln!(
                    summary,
                    "{name},{i},{},{},{}",
                    r.train_mse.len(),
                    r.best_epoch + 1,
                    r.final_train_mse()
                )?;
            }
            println!("trained {name}");
        }
    }
    ctx.write_csv(&dir.join("summary.csv"), ctx.seed(), &summary)?;
    Ok(())
}

/// Stems rebuilt from each source's own amplitude and phase.
fn oracle_result(song: &Song, ctx: &Context) -> Result<SeparationResult> {
    let cfg = ctx.cfg.stft_config();
    let mut estimates = BTreeMap::new();
    let mut amplitudes = BTreeMap::new();
    for (&i, clip) in &song.sources {
        let amp = amplitude(&stft(clip, &cfg)?);
        estimates.insert(i, oracle_phase_synthesize(&amp, clip, &cfg)?);
        amplitudes.insert(i, amp);
    }
    Ok(SeparationResult {
        estimates,
        filtered: amplitudes.clone(),
        amplitudes,
        mixture: stft(&song.mixture, &cfg)?,
    })
}

pub fn separate(
    ctx: &Context,
    bundle: Option<&Path>,
    mixture: Option<&Path>,
    song: Option<&str>,
    oracle: bool,
) -> Result<()> {
    let truth = song.map(|s| ctx.find_song(s)).transpose()?;
    let (name, clip): (String, AudioClip) = match (&truth, mixture) {
        (Some(s), _) => (s.name.clone(), s.mixture.clone()),
        (None, Some(p)) => (
            p.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "mixture".into()),
            read_wav(p)?,
        ),
        (None, None) => return Err(UsageError(anyhow!("pass --mixture or --song")).into()),
    };
    let result = match (oracle, bundle, &truth) {
        (true, _, Some(s)) => oracle_result(s, ctx)?,
        (false, Some(b), _) => {
            let bundle = load_bundle(b).with_context(|| format!("bundle {}", b.display()))?;
            separate_mixture(&bundle, &clip, &ctx.cfg.wiener)?
        }
        _ => return Err(UsageError(anyhow!("pass --bundle, or --oracle with --song")).into()),
    };

    let seed = ctx.seed();
    let note = ctx.provenance(seed);
    let root = ctx.out.join("separated");
    ctx.fresh_dir(Path::new("separated").join(&name))?;
    let stems = result.write_stems(&root, &name, WavFormat::Float32, &note)?;
    let dir = root.join(&name);
    write_spectrogram_dump(dir.join("mixture.pspc"), &result.mixture, Some(&note))?;
    let stft_cfg = result.mixture.config().clone();
    for (i, clip) in &result.estimates {
        write_spectrogram_dump(
            dir.join(format!("{i}_estimate.pspc")),
            &stft(clip, &stft_cfg)?,
            Some(&note),
        )?;
    }
    println!("wrote {} stems to {}", stems.len(), dir.display());

    if let Some(s) = &truth {
        let score = evaluate_song(s, &result.estimates, ctx.cfg.sdr)?;
        let mut csv = String::from("instrument,sdr_db\n");
        for (i, v) in &score.sdr_db {
            println!("  {i}: {v:.2} dB");
            writeln!(csv, "{i},{v}")?;
        }
        ctx.write_csv(&dir.join("scores.csv"), seed, &csv)?;
    }
    Ok(())
}

pub fn evaluate(ctx: &Context, bundles: &[PathBuf], bounds: bool) -> Result<()> {
    let corpus = ctx.corpus()?;
    if corpus.test.is_empty() {
        return Err(anyhow!("the test split has no songs"));
    }
    let seed = ctx.seed();
    let mut meta = BTreeMap::new();
    meta.insert("config_sha256".to_string(), ctx.cfg.hash());
    meta.insert("seed".to_string(), seed.to_string());

    let mut loaded = Vec::new();
    for path in bundles {
        let b = load_bundle(path).with_context(|| format!("bundle {}", path.display()))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        loaded.push((name, b));
    }
    let mut reports: Vec<(String, ScoreReport)> = Vec::new();
    for (name, b) in &loaded {
        let mut m = meta.clone();
        m.insert("bundle".into(), name.clone());
        let r = score_bundle(b, &corpus.test, &ctx.cfg.wiener, ctx.cfg.sdr, m)?;
        println!("{name}: overall {:.2} dB", r.overall_db);
        reports.push((name.clone(), r));
    }

    let dir = ctx.fresh_dir("eval")?;
    for (name, r) in &reports {
        ctx.write_csv(&dir.join(format!("{name}_scores.csv")), seed, &r.to_csv())?;
        fs::write(dir.join(format!("{name}_summary.json")), r.summary_json()?)?;
    }
    let table: Vec<(&str, &ScoreReport)> = reports.iter().map(|(n, r)| (n.as_str(), r)).collect();
    let methods = method_table(&table);
    ctx.write_csv(&dir.join("methods.csv"), seed, &methods)?;
    print!("{methods}");
    if let Some(((base, b), rest)) = reports.split_first() {
        for (name, c) in rest {
            let cmp = compare(b, c)?;
            ctx.write_csv(
                &dir.join(format!("comparison_{base}_vs_{name}.csv")),
                seed,
                &cmp.to_csv(),
            )?;
            print!("{}", cmp.to_csv());
        }
    }
    if bounds {
        let (name, b) = &loaded[0];
        let ub = upper_bounds(b, &corpus.test, ctx.cfg.irm_exponent, ctx.cfg.sdr, meta)?;
        ctx.write_csv(&dir.join(format!("upper_bounds_{name}.csv")), seed, &ub.table())?;
        print!("{}", ub.table());
    }
    Ok(())
}

pub fn verify_theory(ctx: &Context) -> Result<()> {
    let t = &ctx.cfg.theory;
    let report = relation_residual(&t.signal(), &t.grid()?, t.threshold)?;
    let dir = ctx.fresh_dir("theory")?;
    ctx.write_csv(&dir.join("relation.csv"), ctx.seed(), &report.to_csv())?;
    let pass = report.passes(t.tolerance);
    let summary = format!(
        "median relative residual a {:.3e}, b {:.3e} over {} points, tolerance {}: {}",
        report.median_relative_a,
        report.median_relative_b,
        report.masked_points,
        t.tolerance,
        if pass { "PASS" } else { "FAIL" }
    );
    println!("{summary}");
    if !pass {
        return Err(CriterionFailed(summary).into());
    }
    Ok(())
}
