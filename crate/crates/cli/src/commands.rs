//! Subcommand implementations. Progress goes to stderr; artifacts go to
//! files.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use tfcdiff::diffusion::{self, derive_seed, validation_loss, EpochStats, Network, TrainState, TrainingPair};
use tfcdiff::metrics::{self, evaluate, MetricsReport, PrdMode, RecordMetrics};
use tfcdiff::predictor::Predictor;
use tfcdiff::schedule::NoiseSchedule;
use tfcdiff::spectral::{estimate_eta_from_dc, scale, to_spectrum, ScalingBound, TimeSignal};
use tfcdiff::synth::filters::{preprocess_filters, remove_baseline_piecewise, resample_linear};
use tfcdiff::synth::{build_corpus, CorpusConfig, NoiseBank, NoiseSource};

use crate::checkpoint::{self, Checkpoint, ResumeState};
use crate::config::{EtaSetting, RunConfig};
use crate::corpus::{assign_splits, write_corpus, Corpus, ManifestRow, Split};
use crate::signal_file::{columns_csv, read_any, read_signal, write_signal};
use crate::{data_err, usage_err, CliError, CliResult};

/// Sizes the global worker pool. Only the first call in a process takes effect.
pub fn init_workers(workers: usize) {
    let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| data_err(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| data_err(format!("{}: {e}", path.display())))
}

fn load_noise(path: &Option<PathBuf>, fs: f64) -> CliResult<NoiseSource> {
    match path {
        None => Ok(NoiseSource::Synthetic),
        Some(p) => {
            let s = read_any(p, Some(fs))?;
            if s.fs() != fs {
                return Err(data_err(format!("{}: rate {} Hz, corpus uses {fs} Hz", p.display(), s.fs())));
            }
            Ok(NoiseSource::Recorded(s.into_samples()))
        }
    }
}

pub fn corpus_config(cfg: &RunConfig) -> CliResult<CorpusConfig> {
    let c = &cfg.corpus;
    let noise = NoiseBank {
        fs: cfg.fs,
        bw: load_noise(&c.noise_bw, cfg.fs)?,
        ma: load_noise(&c.noise_ma, cfg.fs)?,
        em: load_noise(&c.noise_em, cfg.fs)?,
        ..NoiseBank::default()
    };
    Ok(CorpusConfig {
        count: c.count,
        fs: cfg.fs,
        duration: cfg.duration,
        lambda_range: (c.lambda_min, c.lambda_max),
        heart_rate_range: (c.hr_min, c.hr_max),
        sparse_prob: c.sparse_prob,
        filter_clean: c.filter_clean,
        filters: cfg.filter,
        noise,
        seed: cfg.seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub rows: Vec<ManifestRow>,
    pub input_snr_db: Vec<f64>,
}

/// Generates the corpus into `out` and logs an input-SNR histogram.
pub fn synth(cfg: &RunConfig, out: &Path) -> CliResult<SynthSummary> {
    let cc = corpus_config(cfg)?;
    cc.validate().map_err(|e| usage_err(e.to_string()))?;
    let pairs = build_corpus(&cc)?;
    let splits = assign_splits(pairs.len(), cfg.corpus.test_fraction, cfg.corpus.val_fraction, cfg.seed);
    let rows = write_corpus(out, &pairs, &splits)?;
    write_file(&out.join("config.txt"), cfg.to_text())?;
    let snrs: Vec<f64> = pairs.iter().map(|p| metrics::snr(p.clean.samples(), p.noisy.samples()).0).collect();
    eprintln!("synth: {} pairs written to {}", pairs.len(), out.display());
    eprint!("{}", snr_histogram(&snrs, 5.0));
    Ok(SynthSummary { rows, input_snr_db: snrs })
}

/// Text histogram of SNR values in `width`-dB bins.
pub fn snr_histogram(snrs: &[f64], width: f64) -> String {
    let finite: Vec<f64> = snrs.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return "input SNR: no finite values\n".into();
    }
    let lo = (finite.iter().cloned().fold(f64::INFINITY, f64::min) / width).floor() as i64;
    let hi = (finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / width).floor() as i64;
    let mut counts = vec![0usize; (hi - lo + 1) as usize];
    for v in &finite {
        counts[((v / width).floor() as i64 - lo) as usize] += 1;
    }
    let mean = finite.iter().sum::<f64>() / finite.len() as f64;
    let mut s = format!("input SNR (dB): mean {mean:.2}, {} records\n", finite.len());
    for (i, c) in counts.iter().enumerate() {
        let a = (lo + i as i64) as f64 * width;
        s.push_str(&format!("  [{a:>6.1}, {:>6.1}) {c:>5} {}\n", a + width, "#".repeat((*c).min(60))));
    }
    s
}

fn check_record(cfg: &RunConfig, id: &str, s: &TimeSignal) -> CliResult<()> {
    if s.len() != cfg.record_len() || s.fs() != cfg.fs {
        return Err(data_err(format!(
            "record {id}: {} samples at {} Hz, config expects {} at {} Hz",
            s.len(),
            s.fs(),
            cfg.record_len(),
            cfg.fs
        )));
    }
    Ok(())
}

/// `η` from the DC components of the training split's noisy spectra.
pub fn estimate_eta(cfg: &RunConfig, corpus: &Corpus) -> CliResult<ScalingBound> {
    let rows: Vec<&ManifestRow> = corpus.split(Split::Train).map(|(_, r)| r).collect();
    let dc: Vec<f64> = rows
        .par_iter()
        .map(|r| {
            let noisy = corpus.noisy(r)?;
            check_record(cfg, &r.id, &noisy)?;
            Ok(to_spectrum(&noisy, 1)?.dc())
        })
        .collect::<CliResult<_>>()?;
    Ok(estimate_eta_from_dc(dc, cfg.tau, cfg.percentile)?)
}

/// Resolves the configured bound, estimating it when set to `auto`.
pub fn resolve_bound(cfg: &RunConfig, corpus: &Corpus) -> CliResult<ScalingBound> {
    match cfg.eta {
        EtaSetting::Fixed(e) => Ok(ScalingBound::fixed(e)?),
        EtaSetting::Auto => estimate_eta(cfg, corpus),
    }
}

/// Scaled truncated spectra of one split.
pub fn training_pairs(cfg: &RunConfig, corpus: &Corpus, split: Split, bound: &ScalingBound) -> CliResult<Vec<TrainingPair>> {
    let rows: Vec<&ManifestRow> = corpus.split(split).map(|(_, r)| r).collect();
    rows.par_iter()
        .map(|r| {
            let (clean, noisy) = (corpus.clean(r)?, corpus.noisy(r)?);
            check_record(cfg, &r.id, &clean)?;
            check_record(cfg, &r.id, &noisy)?;
            let k = cfg.coeffs();
            Ok(TrainingPair {
                x0: scale(&to_spectrum(&clean, k)?, bound)?.into_coeffs(),
                cond: scale(&to_spectrum(&noisy, k)?, bound)?.into_coeffs(),
            })
        })
        .collect()
}

/// Path of the most recent (resumable) checkpoint next to `out`.
pub fn last_path(out: &Path) -> PathBuf {
    PathBuf::from(format!("{}.last", out.display()))
}

/// Path of the per-epoch loss log next to `out`.
pub fn losses_path(out: &Path) -> PathBuf {
    PathBuf::from(format!("{}.losses.csv", out.display()))
}

pub const LOSSES_HEADER: &str = "epoch,train_loss,val_loss,lr,grad_norm";

fn loss_line(s: &EpochStats) -> String {
    format!("{},{},{},{},{}\n", s.epoch, s.train_loss, s.val_loss, s.lr, s.grad_norm)
}

/// Trains on the corpus, writing the best-validation checkpoint to `out`,
/// the latest state to `<out>.last` and losses to `<out>.losses.csv`.
/// A fresh run logs an epoch-0 row with the initial parameters' losses.
///
/// When `resume` is given, everything but `train.epochs` must match the
/// checkpoint's configuration.
pub fn train(cfg: &RunConfig, corpus: &Corpus, out: &Path, resume: Option<&Path>) -> CliResult<Vec<EpochStats>> {
    let predictor = Predictor::new(cfg.predictor.clone())?;
    let (schedule, bound, mut state, mut best_val) = match resume {
        Some(path) => {
            let ck = checkpoint::load(path)?;
            let mut theirs = ck.config.clone();
            theirs.train.epochs = cfg.train.epochs;
            if theirs != *cfg {
                return Err(usage_err("resume checkpoint was trained with a different configuration"));
            }
            let r = ck.resume.ok_or_else(|| data_err("checkpoint carries no optimiser state"))?;
            let state = TrainState { params: ck.params, adam: r.adam, epoch: r.epoch };
            (ck.schedule, ck.bound, state, r.best_val)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, 0x1417]));
            let params = predictor.init_params(&mut rng);
            (cfg.schedule()?, resolve_bound(cfg, corpus)?, TrainState::new(params, &cfg.train), f64::INFINITY)
        }
    };
    let train_set = training_pairs(cfg, corpus, Split::Train, &bound)?;
    let val_set = training_pairs(cfg, corpus, Split::Val, &bound)?;
    if train_set.is_empty() {
        return Err(data_err("corpus has no training records"));
    }
    eprintln!("train: resolved config\n{}", cfg.to_text());
    eprintln!(
        "train: {} train / {} val pairs, {} parameters, eta {:.6}, K {}",
        train_set.len(),
        val_set.len(),
        predictor.param_count(),
        bound.eta,
        cfg.coeffs()
    );
    let loss_file = losses_path(out);
    let mut log = if resume.is_some() && loss_file.exists() {
        fs::OpenOptions::new().append(true).open(&loss_file)?
    } else {
        if let Some(parent) = loss_file.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let mut f = fs::File::create(&loss_file)?;
        writeln!(f, "{LOSSES_HEADER}")?;
        f
    };
    let mut history = Vec::new();
    if resume.is_none() {
        let net = Network { predictor: predictor.clone(), params: state.params.clone() };
        let seed = derive_seed(&[cfg.seed, 0x7a1]);
        let train_loss = validation_loss(&net, &schedule, &train_set, seed)?;
        let val_loss = if val_set.is_empty() { train_loss } else { validation_loss(&net, &schedule, &val_set, seed)? };
        let s = EpochStats { epoch: 0, train_loss, val_loss, lr: state.adam.current_lr(), grad_norm: 0.0 };
        log.write_all(loss_line(&s).as_bytes())?;
        eprintln!("epoch 0: train {train_loss:.5} val {val_loss:.5}");
        history.push(s);
    }
    let snapshot = |state: &TrainState, best_val: f64| Checkpoint {
        config: cfg.clone(),
        schedule: schedule.clone(),
        bound,
        params: state.params.clone(),
        resume: Some(ResumeState { adam: state.adam.clone(), epoch: state.epoch, best_val }),
    };
    let last = last_path(out);
    let started = std::time::Instant::now();
    let result = diffusion::train(&predictor, &schedule, &cfg.train, &mut state, &train_set, &val_set, |s, st, _| {
        let improved = s.val_loss < best_val;
        if improved {
            best_val = s.val_loss;
        }
        log.write_all(loss_line(s).as_bytes())?;
        let ck = snapshot(st, best_val);
        if improved {
            checkpoint::save(out, &ck).map_err(|e| tfcdiff::Error::Format(e.to_string()))?;
        }
        checkpoint::save(&last, &ck).map_err(|e| tfcdiff::Error::Format(e.to_string()))?;
        eprintln!(
            "epoch {}: train {:.5} val {:.5} lr {:.2e} |g| {:.3}{} ({:.0} s)",
            s.epoch,
            s.train_loss,
            s.val_loss,
            s.lr,
            s.grad_norm,
            if improved { " *" } else { "" },
            started.elapsed().as_secs_f64()
        );
        Ok(())
    });
    match result {
        Ok(h) => {
            history.extend(h);
            Ok(history)
        }
        Err(tfcdiff::Error::Numerical(m)) => {
            eprintln!("train: aborted ({m}); last good checkpoint kept at {}", out.display());
            Err(CliError::Numerical(m))
        }
        Err(e) => Err(e.into()),
    }
}

/// Denoises a signal of any length at any rate: resample to the model rate,
/// process `N`-sample windows (the last one edge-padded), then map back to
/// the input rate and length. Window `w` uses seed `derive_seed([seed, w])`.
pub fn denoise_signal(
    ck: &Checkpoint,
    net: &Network,
    input: &TimeSignal,
    k: usize,
    seed: u64,
    keep_runs: bool,
) -> CliResult<(TimeSignal, Option<Vec<TimeSignal>>)> {
    let cfg = &ck.config;
    let n = cfg.record_len();
    let x = if input.fs() == cfg.fs { input.clone() } else { resample_linear(input, cfg.fs)? };
    let samples = x.samples();
    let windows = samples.len().div_ceil(n);
    let outs: Vec<(Vec<f64>, Option<Vec<Vec<f64>>>)> = (0..windows)
        .into_par_iter()
        .map(|w| {
            let mut chunk = samples[w * n..samples.len().min((w + 1) * n)].to_vec();
            let last = *chunk.last().expect("non-empty window");
            chunk.resize(n, last);
            let cond = TimeSignal::new(chunk, cfg.fs)?;
            let r = diffusion::ensemble_denoise(
                net,
                &ck.schedule,
                &cond,
                &ck.bound,
                cfg.coeffs(),
                k,
                derive_seed(&[seed, w as u64]),
                keep_runs,
            )?;
            let runs = r.per_run_signals.map(|v| v.into_iter().map(TimeSignal::into_samples).collect());
            Ok((r.mean_signal.into_samples(), runs))
        })
        .collect::<CliResult<_>>()?;
    let mut mean = Vec::with_capacity(windows * n);
    let mut runs: Vec<Vec<f64>> = vec![Vec::new(); if keep_runs { k } else { 0 }];
    for (m, r) in outs {
        mean.extend(m);
        if let Some(r) = r {
            for (acc, v) in runs.iter_mut().zip(r) {
                acc.extend(v);
            }
        }
    }
    let restore = |mut v: Vec<f64>| -> CliResult<TimeSignal> {
        v.truncate(samples.len());
        let mut s = TimeSignal::new(v, cfg.fs)?;
        if input.fs() != cfg.fs {
            s = resample_linear(&s, input.fs())?;
        }
        let mut v = s.into_samples();
        let last = *v.last().unwrap_or(&0.0);
        v.resize(input.len(), last);
        Ok(TimeSignal::new(v, input.fs())?)
    };
    let per_run = if keep_runs { Some(runs.into_iter().map(restore).collect::<CliResult<Vec<_>>>()?) } else { None };
    Ok((restore(mean)?, per_run))
}

fn check_k(k: usize) -> CliResult<()> {
    if k == 0 {
        return Err(usage_err("--k must be at least 1"));
    }
    Ok(())
}

/// Options for single-file denoising.
#[derive(Debug, Clone, Default)]
pub struct DenoiseFile {
    pub input: PathBuf,
    pub out: PathBuf,
    /// Sampling rate for CSV inputs.
    pub csv_fs: Option<f64>,
    /// Writes `time_s,noisy,denoised[,clean]` here.
    pub overlay: Option<PathBuf>,
    /// Clean reference added to the overlay.
    pub reference: Option<PathBuf>,
    /// Writes each ensemble member as `<dir>/run<i>.tfcd`.
    pub runs_dir: Option<PathBuf>,
}

pub fn denoise_file(ck: &Checkpoint, opts: &DenoiseFile, k: usize, seed: u64) -> CliResult<TimeSignal> {
    check_k(k)?;
    let net = ck.network()?;
    let input = read_any(&opts.input, opts.csv_fs)?;
    let (out, runs) = denoise_signal(ck, &net, &input, k, seed, opts.runs_dir.is_some())?;
    if opts.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        write_file(&opts.out, columns_csv(out.fs(), &[("denoised", out.samples())]))?;
    } else {
        write_signal(&opts.out, &out)?;
    }
    if let (Some(dir), Some(runs)) = (&opts.runs_dir, runs) {
        fs::create_dir_all(dir)?;
        for (i, r) in runs.iter().enumerate() {
            write_signal(&dir.join(format!("run{i}.tfcd")), r)?;
        }
    }
    if let Some(path) = &opts.overlay {
        let reference = opts.reference.as_ref().map(|p| read_any(p, opts.csv_fs)).transpose()?;
        let mut cols: Vec<(&str, &[f64])> = vec![("noisy", input.samples()), ("denoised", out.samples())];
        if let Some(r) = &reference {
            cols.push(("clean", r.samples()));
        }
        write_file(path, columns_csv(input.fs(), &cols))?;
    }
    eprintln!("denoise: {} samples at {} Hz, k = {k}", out.len(), out.fs());
    Ok(out)
}

/// Denoises every record of `split`, writing `<out>/<id>.tfcd`. Record at
/// manifest index `i` uses seed `derive_seed([seed, i])`.
pub fn denoise_corpus(ck: &Checkpoint, corpus: &Corpus, split: Split, out: &Path, k: usize, seed: u64) -> CliResult<usize> {
    check_k(k)?;
    let net = ck.network()?;
    fs::create_dir_all(out).map_err(|e| data_err(format!("{}: {e}", out.display())))?;
    let rows: Vec<(usize, &ManifestRow)> = corpus.split(split).collect();
    let started = std::time::Instant::now();
    let done = std::sync::atomic::AtomicUsize::new(0);
    rows.par_iter().try_for_each(|(i, r)| -> CliResult<()> {
        let noisy = corpus.noisy(r)?;
        let (y, _) = denoise_signal(ck, &net, &noisy, k, derive_seed(&[seed, *i as u64]), false)?;
        write_signal(&out.join(format!("{}.tfcd", r.id)), &y)?;
        let d = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
        if d % 10 == 0 || d == rows.len() {
            eprintln!("denoise: {d}/{} records ({:.0} s)", rows.len(), started.elapsed().as_secs_f64());
        }
        Ok(())
    })?;
    Ok(rows.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub records: Vec<RecordMetrics>,
    pub overall: [metrics::Stat; 6],
}

impl EvalOutcome {
    pub fn reports(&self) -> Vec<MetricsReport> {
        self.records.iter().map(|r| r.report).collect()
    }
}

/// Scores `<denoised>/<id>.tfcd` against the test split and writes
/// `records.csv` and `summary.csv` into `out`. Every test record needs an
/// output and every output a test record; mismatches are listed in the error.
pub fn eval(corpus: &Corpus, denoised: &Path, out: &Path, mode: PrdMode) -> CliResult<EvalOutcome> {
    let rows: Vec<&ManifestRow> = corpus.split(Split::Test).map(|(_, r)| r).collect();
    let mut present: Vec<String> = fs::read_dir(denoised)
        .map_err(|e| data_err(format!("{}: {e}", denoised.display())))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".tfcd")).map(str::to_string))
        .collect();
    present.sort();
    let missing: Vec<&str> = rows.iter().filter(|r| present.binary_search(&r.id).is_err()).map(|r| r.id.as_str()).collect();
    let extra: Vec<&str> = present
        .iter()
        .filter(|p| !rows.iter().any(|r| &r.id == *p))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(data_err(format!(
            "record id mismatch; missing outputs: [{}]; unknown outputs: [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    let records: Vec<RecordMetrics> = rows
        .par_iter()
        .map(|r| {
            let clean = corpus.clean(r)?;
            let noisy = corpus.noisy(r)?;
            let hat = read_signal(&denoised.join(format!("{}.tfcd", r.id)))?;
            let report = evaluate(&clean, &hat, &noisy, mode).map_err(|e| data_err(format!("{}: {e}", r.id)))?;
            Ok(RecordMetrics { id: r.id.clone(), lambda: r.lambda, weights: r.weights, report })
        })
        .collect::<CliResult<_>>()?;
    let reports: Vec<MetricsReport> = records.iter().map(|r| r.report).collect();
    let tagged: Vec<(f64, MetricsReport)> = records.iter().map(|r| (r.lambda, r.report)).collect();
    let (strata, outside) = metrics::stratify(&tagged);
    fs::create_dir_all(out).map_err(|e| data_err(format!("{}: {e}", out.display())))?;
    write_file(&out.join("records.csv"), metrics::records_csv(&records))?;
    write_file(&out.join("summary.csv"), metrics::summary_csv(&reports, &strata))?;
    let overall = metrics::summarize(&reports);
    eprintln!(
        "eval: {} records, ImSNR {:.3} ± {:.3} dB, CosSim {:.4}, SSD {:.3}{}",
        records.len(),
        overall[5].mean,
        overall[5].std,
        overall[4].mean,
        overall[1].mean,
        if outside > 0 { format!(", {outside} outside every interval") } else { String::new() }
    );
    Ok(EvalOutcome { records, overall })
}

/// Human-readable checkpoint summary.
pub fn describe(ck: &Checkpoint) -> CliResult<String> {
    let net = ck.network()?;
    let s = &ck.schedule;
    let mut out = String::new();
    out.push_str(&format!("signal: N = {} at {} Hz, K = {}\n", ck.config.record_len(), ck.config.fs, ck.config.coeffs()));
    out.push_str(&format!(
        "schedule: T = {}, beta_1 = {:e}, beta_T = {:e}, snr scale {}\n",
        s.steps(),
        s.beta(1),
        s.beta(s.steps()),
        s.snr_scale()
    ));
    out.push_str(&format!("eta = {} (tau {}, {} DC values)\n", ck.bound.eta, ck.bound.tau, ck.bound.sample_count));
    if let Some(r) = &ck.resume {
        out.push_str(&format!("trained epochs: {}, best validation loss {}\n", r.epoch, r.best_val));
    }
    out.push_str(&net.predictor.describe());
    out.push_str("\nconfig:\n");
    out.push_str(&ck.config.to_text());
    Ok(out)
}

/// Prepares an external record: optional resampling, median + bandpass
/// filtering and piecewise baseline removal at the given annotations.
pub fn import(signal: &TimeSignal, target_fs: Option<f64>, cfg: &RunConfig, filter: bool, annotations: Option<&[usize]>) -> CliResult<TimeSignal> {
    let mut s = match target_fs {
        Some(fs) if fs != signal.fs() => resample_linear(signal, fs)?,
        _ => signal.clone(),
    };
    if filter {
        s = preprocess_filters(&s, &cfg.filter)?;
    }
    if let Some(ann) = annotations {
        // Annotations index the input; map them onto the resampled grid.
        let ratio = s.fs() / signal.fs();
        let ann: Vec<usize> =
            ann.iter().map(|&a| ((a as f64 * ratio).round() as usize).min(s.len().saturating_sub(1))).collect();
        s = remove_baseline_piecewise(&s, &ann, cfg.baseline_window)?.signal;
    }
    Ok(s)
}

/// Parses annotation sample indices, one per line or comma-separated.
pub fn parse_annotations(text: &str) -> CliResult<Vec<usize>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| data_err(format!("bad annotation {t:?}"))))
        .collect()
}

pub fn schedule_csv(cfg: &RunConfig) -> CliResult<String> {
    let s: NoiseSchedule = cfg.schedule()?;
    Ok(s.to_csv())
}
