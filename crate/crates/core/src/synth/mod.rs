//! Synthetic clean ECG, BW/MA/EM noise, fRMN mixing, intensity-scaled
//! contamination and corpus generation.

pub mod filters;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::diffusion::derive_seed;
use crate::error::{invalid, shape, Error, Result};
use crate::spectral::{peak_to_peak, TimeSignal};

pub use filters::{preprocess_filters, remove_baseline_piecewise, resample_linear, BaselineResult, FilterConfig};

/// One Gaussian bump of the beat template, positioned relative to the R peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wave {
    pub amplitude: f64,
    /// Standard deviation in seconds.
    pub width: f64,
    /// Offset from the R peak in seconds.
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanEcgSpec {
    pub fs: f64,
    pub duration: f64,
    pub heart_rate: f64,
    /// Each RR interval uses a rate drawn from `heart_rate ± rate_jitter`.
    pub rate_jitter: f64,
    /// P, Q, R, S, T.
    pub waves: [Wave; 5],
    pub seed: u64,
}

impl Default for CleanEcgSpec {
    fn default() -> Self {
        let w = |amplitude, width, offset| Wave { amplitude, width, offset };
        Self {
            fs: 360.0,
            duration: 10.0,
            heart_rate: 72.0,
            rate_jitter: 4.0,
            waves: [
                w(0.15, 0.025, -0.20),
                w(-0.12, 0.010, -0.035),
                w(1.10, 0.012, 0.0),
                w(-0.25, 0.012, 0.035),
                w(0.30, 0.050, 0.28),
            ],
            seed: 0,
        }
    }
}

impl CleanEcgSpec {
    pub fn samples(&self) -> usize {
        (self.fs * self.duration).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0 && self.duration > 0.0 && self.samples() > 0) {
            return Err(invalid("fs and duration must be positive"));
        }
        if !(self.heart_rate > 0.0 && self.rate_jitter >= 0.0 && self.rate_jitter < self.heart_rate) {
            return Err(invalid("heart rate must be positive and exceed its jitter"));
        }
        if self.waves.iter().any(|w| !(w.width > 0.0) || !w.amplitude.is_finite() || !w.offset.is_finite()) {
            return Err(invalid("wave widths must be positive"));
        }
        Ok(())
    }
}

/// Renders a P-QRS-T template train on a zero baseline. Returns the signal
/// and the R-peak sample indices.
pub fn synth_clean_ecg(spec: &CleanEcgSpec) -> Result<(TimeSignal, Vec<usize>)> {
    spec.validate()?;
    let n = spec.samples();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rr = |rng: &mut ChaCha8Rng| {
        let rate = if spec.rate_jitter > 0.0 {
            spec.heart_rate + rng.gen_range(-spec.rate_jitter..=spec.rate_jitter)
        } else {
            spec.heart_rate
        };
        60.0 / rate
    };
    // Beat times in seconds, starting half an interval in, plus one
    // unannotated beat on each side so edges carry partial waves.
    let first = rr(&mut rng) / 2.0;
    let mut beats = vec![first - rr(&mut rng)];
    let mut t = first;
    while t < spec.duration {
        beats.push(t);
        t += rr(&mut rng);
    }
    beats.push(t);
    let mut x = vec![0.0; n];
    let mut peaks = Vec::new();
    for &b in &beats {
        for w in &spec.waves {
            let centre = (b + w.offset) * spec.fs;
            let sd = w.width * spec.fs;
            let lo = ((centre - 6.0 * sd).floor().max(0.0)) as usize;
            let hi = ((centre + 6.0 * sd).ceil().min(n as f64 - 1.0)).max(-1.0);
            if hi < 0.0 {
                continue;
            }
            for (i, v) in x.iter_mut().enumerate().take(hi as usize + 1).skip(lo) {
                let z = (i as f64 - centre) / sd;
                *v += w.amplitude * (-0.5 * z * z).exp();
            }
        }
        let idx = (b * spec.fs).round();
        if idx >= 0.0 && (idx as usize) < n && b >= first {
            peaks.push(idx as usize);
        }
    }
    Ok((TimeSignal::new(x, spec.fs)?, peaks))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Species {
    Bw,
    Ma,
    Em,
}

impl Species {
    pub const ALL: [Species; 3] = [Species::Bw, Species::Ma, Species::Em];

    pub fn name(self) -> &'static str {
        match self {
            Species::Bw => "bw",
            Species::Ma => "ma",
            Species::Em => "em",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bw" => Ok(Species::Bw),
            "ma" => Ok(Species::Ma),
            "em" => Ok(Species::Em),
            other => Err(invalid(format!("unknown noise species {other:?}"))),
        }
    }
}

/// Where a species' noise comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSource {
    Synthetic,
    /// A recorded noise trace; windows are cut from it at random offsets.
    Recorded(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBank {
    pub fs: f64,
    pub bw: NoiseSource,
    pub ma: NoiseSource,
    pub em: NoiseSource,
    /// Highest baseline-wander component, Hz.
    pub bw_max_hz: f64,
    /// Muscle-artifact band, Hz.
    pub ma_band: (f64, f64),
    /// Mean electrode-motion step rate, per second.
    pub em_step_rate: f64,
}

impl Default for NoiseBank {
    fn default() -> Self {
        Self {
            fs: 360.0,
            bw: NoiseSource::Synthetic,
            ma: NoiseSource::Synthetic,
            em: NoiseSource::Synthetic,
            bw_max_hz: 0.7,
            ma_band: (10.0, 100.0),
            em_step_rate: 0.5,
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

impl NoiseBank {
    fn source(&self, species: Species) -> &NoiseSource {
        match species {
            Species::Bw => &self.bw,
            Species::Ma => &self.ma,
            Species::Em => &self.em,
        }
    }

    /// `length` samples of one species, zero-mean and scaled to unit peak-to-peak.
    pub fn synth_noise(&self, species: Species, length: usize, seed: u64) -> Result<TimeSignal> {
        if length < 2 {
            return Err(invalid("noise length must be at least 2"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = match self.source(species) {
            NoiseSource::Recorded(trace) => {
                if trace.len() < length {
                    return Err(shape(format!(
                        "{} record has {} samples, need {length}",
                        species.name(),
                        trace.len()
                    )));
                }
                let start = rng.gen_range(0..=trace.len() - length);
                trace[start..start + length].to_vec()
            }
            NoiseSource::Synthetic => match species {
                Species::Bw => self.baseline_wander(&mut rng, length),
                Species::Ma => self.muscle_artifact(&mut rng, length)?,
                Species::Em => self.electrode_motion(&mut rng, length)?,
            },
        };
        let p2p = peak_to_peak(&raw);
        if !(p2p > 0.0 && p2p.is_finite()) {
            return Err(Error::Numerical(format!("{} noise is constant", species.name())));
        }
        // A window's mean would land entirely in the DC coefficient and
        // inflate the scaling bound.
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        TimeSignal::new(raw.iter().map(|v| (v - mean) / p2p).collect(), self.fs)
    }

    /// Sum of a few random-phase sinusoids below `bw_max_hz`.
    fn baseline_wander(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let comps: Vec<(f64, f64, f64)> = (0..4)
            .map(|_| {
                let f = rng.gen_range(0.05..self.bw_max_hz);
                let a = rng.gen_range(0.3..1.0);
                let ph = rng.gen_range(0.0..std::f64::consts::TAU);
                (f, a, ph)
            })
            .collect();
        (0..n)
            .map(|i| {
                let t = i as f64 / self.fs;
                comps.iter().map(|(f, a, ph)| a * (std::f64::consts::TAU * f * t + ph).sin()).sum()
            })
            .collect()
    }

    /// White noise through a windowed-sinc bandpass.
    fn muscle_artifact(&self, rng: &mut ChaCha8Rng, n: usize) -> Result<Vec<f64>> {
        let (lo, hi) = self.ma_band;
        let hi = hi.min(0.45 * self.fs);
        let taps = 2 * ((2.0 * self.fs / lo).ceil() as usize / 2) + 1;
        let h_hi = filters::lowpass_taps(hi, self.fs, taps)?;
        let h_lo = filters::lowpass_taps(lo, self.fs, taps)?;
        let band: Vec<f64> = h_hi.iter().zip(&h_lo).map(|(a, b)| a - b).collect();
        let white = gaussian(rng, n + taps - 1);
        Ok((0..n).map(|i| band.iter().enumerate().map(|(k, t)| t * white[i + taps - 1 - k]).sum()).collect())
    }

    /// Random level steps (smoothed over 40 ms) plus short bursts of
    /// low-frequency wobble.
    fn electrode_motion(&self, rng: &mut ChaCha8Rng, n: usize) -> Result<Vec<f64>> {
        let dur = n as f64 / self.fs;
        let steps = 1 + (self.em_step_rate * dur) as usize;
        let mut level = vec![0.0; n];
        for _ in 0..steps {
            let at = rng.gen_range(0..n);
            let jump: f64 = rng.sample(StandardNormal);
            level[at..].iter_mut().for_each(|v| *v += jump);
        }
        let smooth = ((0.04 * self.fs) as usize).max(1);
        let mut out = vec![0.0; n];
        let mut acc = 0.0;
        for i in 0..n {
            acc += level[i];
            if i >= smooth {
                acc -= level[i - smooth];
            }
            out[i] = acc / smooth.min(i + 1) as f64;
        }
        let bursts = 1 + rng.gen_range(0..3);
        for _ in 0..bursts {
            let len = ((rng.gen_range(0.2..1.0) * self.fs) as usize).clamp(2, n);
            let start = rng.gen_range(0..=n - len);
            let f = rng.gen_range(2.0..12.0);
            let amp = rng.gen_range(0.5..1.5);
            for j in 0..len {
                let env = (std::f64::consts::PI * j as f64 / len as f64).sin();
                out[start + j] += amp * env * (std::f64::consts::TAU * f * j as f64 / self.fs).sin();
            }
        }
        Ok(out)
    }
}

/// Checks `w` lies on the probability simplex within `1e-9`.
pub fn check_simplex(w: [f64; 3]) -> Result<()> {
    if w.iter().any(|v| !(*v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("weights {w:?} are not on the simplex")));
    }
    Ok(())
}

/// Uniform draw on the 2-simplex from sorted uniform spacings. With
/// `sparse_prob > 0` each component is independently zeroed with that
/// probability (at least one survives) and the rest renormalised.
pub fn sample_weights<R: Rng + ?Sized>(rng: &mut R, sparse_prob: f64) -> [f64; 3] {
    let (mut u1, mut u2): (f64, f64) = (rng.gen(), rng.gen());
    if u1 > u2 {
        std::mem::swap(&mut u1, &mut u2);
    }
    let mut w = [u1, u2 - u1, 1.0 - u2];
    if sparse_prob > 0.0 {
        let mut keep = [true; 3];
        for k in keep.iter_mut() {
            *k = !rng.gen_bool(sparse_prob.min(1.0));
        }
        if !keep.iter().any(|k| *k) {
            keep[rng.gen_range(0..3)] = true;
        }
        for (v, k) in w.iter_mut().zip(keep) {
            if !k {
                *v = 0.0;
            }
        }
        let s: f64 = w.iter().sum();
        if s > 0.0 {
            w.iter_mut().for_each(|v| *v /= s);
        } else {
            let i = keep.iter().position(|k| *k).unwrap();
            w = [0.0; 3];
            w[i] = 1.0;
        }
    }
    w
}

/// `e = r·e1 + m·e2 + n·e3`.
pub fn mix_frmn(e1: &TimeSignal, e2: &TimeSignal, e3: &TimeSignal, weights: [f64; 3]) -> Result<TimeSignal> {
    check_simplex(weights)?;
    if e1.len() != e2.len() || e1.len() != e3.len() {
        return Err(shape("noise components differ in length"));
    }
    let [r, m, n] = weights;
    let out = (0..e1.len()).map(|i| r * e1.samples()[i] + m * e2.samples()[i] + n * e3.samples()[i]).collect();
    TimeSignal::new(out, e1.fs())
}

/// `x̃ = x0 + λ·(p2p(x0)/p2p(e))·e`.
pub fn contaminate(x0: &TimeSignal, e: &TimeSignal, lambda: f64) -> Result<TimeSignal> {
    if x0.len() != e.len() {
        return Err(shape(format!("signal has {} samples, noise has {}", x0.len(), e.len())));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("intensity {lambda} must be non-negative")));
    }
    let pe = e.peak_to_peak();
    if pe == 0.0 {
        return Err(invalid("noise is constant; peak-to-peak is zero"));
    }
    let k = lambda * x0.peak_to_peak() / pe;
    TimeSignal::new(x0.samples().iter().zip(e.samples()).map(|(x, v)| x + k * v).collect(), x0.fs())
}

/// A clean record, its contaminated counterpart and how it was made.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordPair {
    pub id: String,
    pub clean: TimeSignal,
    pub noisy: TimeSignal,
    pub lambda: f64,
    pub weights: [f64; 3],
    pub seed: u64,
    pub qrs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub count: usize,
    pub fs: f64,
    pub duration: f64,
    pub lambda_range: (f64, f64),
    /// Heart rate drawn per record from this range, bpm.
    pub heart_rate_range: (f64, f64),
    pub sparse_prob: f64,
    /// Run the median + bandpass filters on clean records.
    pub filter_clean: bool,
    pub filters: FilterConfig,
    pub noise: NoiseBank,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            count: 512,
            fs: 360.0,
            duration: 10.0,
            lambda_range: (0.2, 2.0),
            heart_rate_range: (60.0, 90.0),
            sparse_prob: 0.0,
            filter_clean: false,
            filters: FilterConfig::default(),
            noise: NoiseBank::default(),
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.lambda_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(invalid(format!("bad intensity range {lo}..{hi}")));
        }
        let (a, b) = self.heart_rate_range;
        if !(a > 0.0 && a <= b) {
            return Err(invalid(format!("bad heart-rate range {a}..{b}")));
        }
        if !(0.0..=1.0).contains(&self.sparse_prob) {
            return Err(invalid("sparse probability must lie in [0, 1]"));
        }
        if self.noise.fs != self.fs {
            return Err(invalid("noise bank rate differs from corpus rate"));
        }
        Ok(())
    }
}

/// Builds pair `index` from its own sub-seed of the master seed.
pub fn generate_pair(cfg: &CorpusConfig, index: usize) -> Result<RecordPair> {
    let seed = derive_seed(&[cfg.seed, index as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ecg = CleanEcgSpec {
        fs: cfg.fs,
        duration: cfg.duration,
        heart_rate: rng.gen_range(cfg.heart_rate_range.0..=cfg.heart_rate_range.1),
        seed: rng.gen(),
        ..CleanEcgSpec::default()
    };
    ecg.waves[2].amplitude *= rng.gen_range(0.8..1.25);
    ecg.waves[4].amplitude *= rng.gen_range(0.6..1.4);
    let (mut clean, qrs) = synth_clean_ecg(&ecg)?;
    if cfg.filter_clean {
        clean = preprocess_filters(&clean, &cfg.filters)?;
    }
    let n = clean.len();
    let e: Vec<TimeSignal> = Species::ALL
        .iter()
        .map(|&s| cfg.noise.synth_noise(s, n, rng.gen()))
        .collect::<Result<_>>()?;
    let weights = sample_weights(&mut rng, cfg.sparse_prob);
    let lambda = rng.gen_range(cfg.lambda_range.0..=cfg.lambda_range.1);
    let mix = mix_frmn(&e[0], &e[1], &e[2], weights)?;
    let noisy = contaminate(&clean, &mix, lambda)?;
    Ok(RecordPair { id: format!("rec{index:05}"), clean, noisy, lambda, weights, seed, qrs })
}

/// All `count` pairs, generated in parallel; output order is by index.
pub fn build_corpus(cfg: &CorpusConfig) -> Result<Vec<RecordPair>> {
    cfg.validate()?;
    (0..cfg.count).into_par_iter().map(|i| generate_pair(cfg, i)).collect()
}
