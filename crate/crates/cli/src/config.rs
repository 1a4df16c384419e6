//! Plain-text `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Unknown keys are rejected.
//! The predictor's `input_length` and `full_length` are derived from the
//! signal settings and cannot be set directly.

use std::fmt::Write as _;
use std::path::PathBuf;

use tfcdiff::diffusion::TrainConfig;
use tfcdiff::predictor::PredictorConfig;
use tfcdiff::schedule::NoiseSchedule;
use tfcdiff::spectral::{truncation_index, PercentileRule, ScalingBound};
use tfcdiff::synth::filters::FilterConfig;
use tfcdiff::metrics::PrdMode;

use crate::{usage_err, CliResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaSetting {
    /// Estimate from the training split's noisy DC components.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSettings {
    pub count: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub hr_min: f64,
    pub hr_max: f64,
    pub sparse_prob: f64,
    pub filter_clean: bool,
    /// Fraction of records held out for testing.
    pub test_fraction: f64,
    /// Fraction of the remaining records held out for validation.
    pub val_fraction: f64,
    /// Optional recorded noise traces (signal file or CSV at `signal.fs`).
    pub noise_bw: Option<PathBuf>,
    pub noise_ma: Option<PathBuf>,
    pub noise_em: Option<PathBuf>,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        Self {
            count: 512,
            lambda_min: 0.2,
            lambda_max: 2.0,
            hr_min: 60.0,
            hr_max: 90.0,
            sparse_prob: 0.0,
            filter_clean: false,
            test_fraction: 0.1,
            val_fraction: 0.3,
            noise_bw: None,
            noise_ma: None,
            noise_em: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub fs: f64,
    pub duration: f64,
    pub f_cut: f64,
    pub steps: usize,
    pub beta1: f64,
    pub beta_t: f64,
    pub snr_scale: f64,
    pub eta: EtaSetting,
    pub tau: f64,
    pub percentile: PercentileRule,
    pub predictor: PredictorConfig,
    pub train: TrainConfig,
    pub corpus: CorpusSettings,
    pub filter: FilterConfig,
    pub baseline_window: usize,
    /// Ensemble size used by `denoise` when `--k` is absent.
    pub denoise_k: usize,
    pub prd_mode: PrdMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 0,
            workers: 0,
            fs: 360.0,
            duration: 10.0,
            f_cut: 50.0,
            steps: 50,
            beta1: 1e-4,
            beta_t: 0.5,
            snr_scale: 150.0,
            eta: EtaSetting::Auto,
            tau: 1.75,
            percentile: PercentileRule::Linear,
            predictor: PredictorConfig::default(),
            train: TrainConfig::default(),
            corpus: CorpusSettings::default(),
            filter: FilterConfig::default(),
            baseline_window: 9,
            denoise_k: 1,
            prd_mode: PrdMode::Verbatim,
        };
        cfg.derive().expect("default configuration is consistent");
        cfg
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<T> {
    v.parse().map_err(|_| usage_err(format!("bad value for {key}: {v:?}")))
}

fn flag(key: &str, v: &str) -> CliResult<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(usage_err(format!("bad boolean for {key}: {v:?}"))),
    }
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty() && v != "none").then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(|| "none".to_string(), |p| p.display().to_string())
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| usage_err(format!("line {}: expected key = value", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| usage_err(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.derive()?;
        Ok(cfg)
    }

    pub fn load(p: &std::path::Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(p).map_err(|e| usage_err(format!("{}: {e}", p.display())))?;
        Self::parse(&text)
    }

    /// Applies one setting. Call [`RunConfig::derive`] afterwards.
    pub fn set(&mut self, key: &str, v: &str) -> CliResult<()> {
        match key {
            "seed" => self.seed = num(key, v)?,
            "workers" => self.workers = num(key, v)?,
            "signal.fs" => self.fs = num(key, v)?,
            "signal.duration" => self.duration = num(key, v)?,
            "signal.f_cut" => self.f_cut = num(key, v)?,
            "schedule.steps" => self.steps = num(key, v)?,
            "schedule.beta1" => self.beta1 = num(key, v)?,
            "schedule.beta_t" => self.beta_t = num(key, v)?,
            "schedule.snr_scale" => self.snr_scale = num(key, v)?,
            "eta.value" => {
                self.eta = if v == "auto" { EtaSetting::Auto } else { EtaSetting::Fixed(num(key, v)?) }
            }
            "eta.tau" => self.tau = num(key, v)?,
            "eta.percentile" => {
                self.percentile = match v {
                    "linear" => PercentileRule::Linear,
                    "nearest_rank" => PercentileRule::NearestRank,
                    _ => return Err(usage_err(format!("bad value for {key}: {v:?}"))),
                }
            }
            "train.epochs" => self.train.epochs = num(key, v)?,
            "train.batch_size" => self.train.batch_size = num(key, v)?,
            "train.lr" => self.train.lr = num(key, v)?,
            "train.lr_decay_every" => self.train.lr_decay_every = num(key, v)?,
            "train.lr_decay_factor" => self.train.lr_decay_factor = num(key, v)?,
            "train.clip_norm" => self.train.clip_norm = num(key, v)?,
            "corpus.count" => self.corpus.count = num(key, v)?,
            "corpus.lambda_min" => self.corpus.lambda_min = num(key, v)?,
            "corpus.lambda_max" => self.corpus.lambda_max = num(key, v)?,
            "corpus.hr_min" => self.corpus.hr_min = num(key, v)?,
            "corpus.hr_max" => self.corpus.hr_max = num(key, v)?,
            "corpus.sparse_prob" => self.corpus.sparse_prob = num(key, v)?,
            "corpus.filter_clean" => self.corpus.filter_clean = flag(key, v)?,
            "corpus.test_fraction" => self.corpus.test_fraction = num(key, v)?,
            "corpus.val_fraction" => self.corpus.val_fraction = num(key, v)?,
            "corpus.noise_bw" => self.corpus.noise_bw = path(v),
            "corpus.noise_ma" => self.corpus.noise_ma = path(v),
            "corpus.noise_em" => self.corpus.noise_em = path(v),
            "filter.median_window" => self.filter.median_window = num(key, v)?,
            "filter.low_hz" => self.filter.low_hz = num(key, v)?,
            "filter.high_hz" => self.filter.high_hz = num(key, v)?,
            "filter.baseline_window" => self.baseline_window = num(key, v)?,
            "denoise.k" => self.denoise_k = num(key, v)?,
            "eval.prd" => {
                self.prd_mode = match v {
                    "verbatim" => PrdMode::Verbatim,
                    "conventional" => PrdMode::Conventional,
                    _ => return Err(usage_err(format!("bad value for {key}: {v:?}"))),
                }
            }
            _ => {
                let Some(sub) = key.strip_prefix("predictor.") else {
                    return Err(usage_err(format!("unknown key {key:?}")));
                };
                if sub == "input_length" || sub == "full_length" {
                    return Err(usage_err(format!("{key} is derived from the signal settings")));
                }
                if !self.predictor.set(sub, v).map_err(|e| usage_err(e.to_string()))? {
                    return Err(usage_err(format!("unknown key {key:?}")));
                }
            }
        }
        Ok(())
    }

    /// Recomputes `N` and `K` and checks cross-field consistency.
    pub fn derive(&mut self) -> CliResult<()> {
        if !(self.fs > 0.0 && self.duration > 0.0) {
            return Err(usage_err("signal.fs and signal.duration must be positive"));
        }
        let n = (self.fs * self.duration).round() as usize;
        let k = truncation_index(self.fs, n, self.f_cut).map_err(|e| usage_err(e.to_string()))?;
        self.predictor.input_length = k;
        self.predictor.full_length = n;
        self.predictor.validate().map_err(|e| usage_err(e.to_string()))?;
        let c = &self.corpus;
        if !(0.0..1.0).contains(&c.test_fraction) || !(0.0..1.0).contains(&c.val_fraction) {
            return Err(usage_err("split fractions must lie in [0, 1)"));
        }
        if self.denoise_k == 0 {
            return Err(usage_err("denoise.k must be at least 1"));
        }
        if self.train.batch_size == 0 {
            return Err(usage_err("train.batch_size must be at least 1"));
        }
        if let EtaSetting::Fixed(e) = self.eta {
            ScalingBound::fixed(e).map_err(|e| usage_err(e.to_string()))?;
        }
        self.train.seed = self.seed;
        Ok(())
    }

    /// Samples per record `N`.
    pub fn record_len(&self) -> usize {
        self.predictor.full_length
    }

    /// Retained coefficients `K`.
    pub fn coeffs(&self) -> usize {
        self.predictor.input_length
    }

    pub fn schedule(&self) -> CliResult<NoiseSchedule> {
        let base = NoiseSchedule::build_quadratic(self.steps, self.beta1, self.beta_t)
            .map_err(|e| usage_err(e.to_string()))?;
        Ok(base.apply_snr_scaling(self.snr_scale)?)
    }

    /// Every settable key with its resolved value, one per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("workers", self.workers.to_string());
        kv("signal.fs", format!("{:?}", self.fs));
        kv("signal.duration", format!("{:?}", self.duration));
        kv("signal.f_cut", format!("{:?}", self.f_cut));
        kv("schedule.steps", self.steps.to_string());
        kv("schedule.beta1", format!("{:?}", self.beta1));
        kv("schedule.beta_t", format!("{:?}", self.beta_t));
        kv("schedule.snr_scale", format!("{:?}", self.snr_scale));
        kv(
            "eta.value",
            match self.eta {
                EtaSetting::Auto => "auto".into(),
                EtaSetting::Fixed(e) => format!("{e:?}"),
            },
        );
        kv("eta.tau", format!("{:?}", self.tau));
        kv(
            "eta.percentile",
            match self.percentile {
                PercentileRule::Linear => "linear".into(),
                PercentileRule::NearestRank => "nearest_rank".into(),
            },
        );
        for (k, v) in self.predictor.to_pairs() {
            if k != "input_length" && k != "full_length" {
                kv(&format!("predictor.{k}"), v);
            }
        }
        kv("train.epochs", self.train.epochs.to_string());
        kv("train.batch_size", self.train.batch_size.to_string());
        kv("train.lr", format!("{:?}", self.train.lr));
        kv("train.lr_decay_every", self.train.lr_decay_every.to_string());
        kv("train.lr_decay_factor", format!("{:?}", self.train.lr_decay_factor));
        kv("train.clip_norm", format!("{:?}", self.train.clip_norm));
        let c = &self.corpus;
        kv("corpus.count", c.count.to_string());
        kv("corpus.lambda_min", format!("{:?}", c.lambda_min));
        kv("corpus.lambda_max", format!("{:?}", c.lambda_max));
        kv("corpus.hr_min", format!("{:?}", c.hr_min));
        kv("corpus.hr_max", format!("{:?}", c.hr_max));
        kv("corpus.sparse_prob", format!("{:?}", c.sparse_prob));
        kv("corpus.filter_clean", c.filter_clean.to_string());
        kv("corpus.test_fraction", format!("{:?}", c.test_fraction));
        kv("corpus.val_fraction", format!("{:?}", c.val_fraction));
        kv("corpus.noise_bw", show_path(&c.noise_bw));
        kv("corpus.noise_ma", show_path(&c.noise_ma));
        kv("corpus.noise_em", show_path(&c.noise_em));
        kv("filter.median_window", self.filter.median_window.to_string());
        kv("filter.low_hz", format!("{:?}", self.filter.low_hz));
        kv("filter.high_hz", format!("{:?}", self.filter.high_hz));
        kv("filter.baseline_window", self.baseline_window.to_string());
        kv("denoise.k", self.denoise_k.to_string());
        kv(
            "eval.prd",
            match self.prd_mode {
                PrdMode::Verbatim => "verbatim".into(),
                PrdMode::Conventional => "conventional".into(),
            },
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_derive_lengths() {
        let c = RunConfig::default();
        assert_eq!(c.record_len(), 3600);
        assert_eq!(c.coeffs(), 1000);
        assert_eq!(c.steps, 50);
        assert_eq!(c.snr_scale, 150.0);
        assert_eq!(c.tau, 1.75);
        assert_eq!(c.train.lr, 1e-3);
        assert_eq!((c.corpus.lambda_min, c.corpus.lambda_max), (0.2, 2.0));
    }

    #[test]
    fn dump_parses_back_to_the_same_config() {
        let text = "seed = 7\neta.value = 2.5 # fixed\npredictor.base_channels = 8\npredictor.channel_multipliers = 1,2\npredictor.levels = 2\ncorpus.noise_bw = /tmp/bw.csv\n";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.train.seed, 7);
        assert_eq!(c.eta, EtaSetting::Fixed(2.5));
        assert_eq!(c.predictor.base_channels, 8);
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_and_derived_keys() {
        assert!(matches!(RunConfig::parse("bogus = 1"), Err(crate::CliError::Usage(_))));
        assert!(RunConfig::parse("predictor.bogus = 1").is_err());
        assert!(RunConfig::parse("predictor.input_length = 10").is_err());
        assert!(RunConfig::parse("seed").is_err());
        assert!(RunConfig::parse("train.epochs = many").is_err());
    }

    #[test]
    fn cutoff_changes_coefficient_count() {
        let c = RunConfig::parse("signal.f_cut = 40").unwrap();
        assert_eq!(c.coeffs(), 800);
        assert!(RunConfig::parse("signal.f_cut = 25").is_err());
    }
}
