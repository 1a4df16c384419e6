//! Time signals, truncated DCT spectra and the DC-percentile scaling bound.

pub mod dct;

use crate::error::{invalid, Error, Result};

/// A sampled single-channel waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal {
    samples: Vec<f64>,
    fs: f64,
}

impl TimeSignal {
    pub fn new(samples: Vec<f64>, fs: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("signal must contain at least one sample"));
        }
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(invalid(format!("sampling rate must be positive, got {fs}")));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(invalid("signal contains non-finite samples"));
        }
        Ok(Self { samples, fs })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Peak-to-peak amplitude.
    pub fn peak_to_peak(&self) -> f64 {
        peak_to_peak(&self.samples)
    }
}

pub(crate) fn peak_to_peak(x: &[f64]) -> f64 {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo
}

/// Leading orthonormal DCT-II coefficients of a [`TimeSignal`].
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    coeffs: Vec<f64>,
    original_length: usize,
    fs: f64,
    scaled: bool,
}

impl Spectrum {
    pub fn new(coeffs: Vec<f64>, original_length: usize, fs: f64, scaled: bool) -> Result<Self> {
        if coeffs.is_empty() || coeffs.len() > original_length {
            return Err(invalid(format!(
                "spectrum length {} must lie in 1..={original_length}",
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("spectrum contains non-finite coefficients".into()));
        }
        if !(fs > 0.0) {
            return Err(invalid("sampling rate must be positive"));
        }
        Ok(Self { coeffs, original_length, fs, scaled })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// DC component.
    pub fn dc(&self) -> f64 {
        self.coeffs[0]
    }

    /// Truncation length `K`.
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn original_length(&self) -> usize {
        self.original_length
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn is_scaled(&self) -> bool {
        self.scaled
    }
}

/// Number of leading DCT coefficients that cover `0..=f_cut` Hz for an
/// `n`-sample signal at `fs` Hz. Coefficient `k` sits at `k·fs / 2n`.
pub fn truncation_index(fs: f64, n: usize, f_cut: f64) -> Result<usize> {
    if !(fs > 0.0) || n == 0 || !(f_cut > 0.0) {
        return Err(invalid("truncation_index needs fs > 0, n >= 1 and f_cut > 0"));
    }
    if f_cut > fs / 2.0 {
        return Err(invalid(format!("cutoff {f_cut} Hz exceeds Nyquist {} Hz", fs / 2.0)));
    }
    // 2·n·f_cut/fs is the exact quotient; the epsilon absorbs representation error.
    let k = (2.0 * n as f64 * f_cut / fs + 1e-9).floor() as usize;
    Ok(k.clamp(1, n))
}

/// Orthonormal DCT-II of `signal`, keeping the first `k` coefficients.
pub fn to_spectrum(signal: &TimeSignal, k: usize) -> Result<Spectrum> {
    let n = signal.len();
    if k == 0 || k > n {
        return Err(invalid(format!("truncation length {k} must lie in 1..={n}")));
    }
    let coeffs = dct::dct2_truncated(signal.samples(), k);
    Spectrum::new(coeffs, n, signal.fs(), false)
}

/// Zero-pads to the original length and applies the orthonormal DCT-III.
pub fn from_spectrum(spec: &Spectrum) -> Result<TimeSignal> {
    if spec.scaled {
        return Err(invalid("cannot invert a scaled spectrum; unscale it first"));
    }
    TimeSignal::new(dct::dct3_padded(&spec.coeffs, spec.original_length), spec.fs)
}

/// Percentile convention used by [`estimate_eta`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PercentileRule {
    /// Linear interpolation between closest ranks at position `p/100·(n−1)`.
    #[default]
    Linear,
    /// Smallest value whose rank is at least `p/100·n`.
    NearestRank,
}

/// `p`-th percentile of already sorted data.
pub fn percentile(sorted: &[f64], p: f64, rule: PercentileRule) -> f64 {
    let n = sorted.len();
    assert!(n > 0);
    match rule {
        PercentileRule::Linear => {
            let pos = p / 100.0 * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = pos - lo as f64;
            sorted[lo] + frac * (sorted[hi] - sorted[lo])
        }
        PercentileRule::NearestRank => {
            let rank = (p / 100.0 * n as f64).ceil() as usize;
            sorted[rank.clamp(1, n) - 1]
        }
    }
}

/// Global coefficient bound `η` derived from the spread of DC components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingBound {
    pub eta: f64,
    pub tau: f64,
    pub sample_count: usize,
}

impl ScalingBound {
    /// Bound with a fixed `η`, used when no corpus is available.
    pub fn fixed(eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(invalid(format!("eta must be positive, got {eta}")));
        }
        Ok(Self { eta, tau: f64::NAN, sample_count: 0 })
    }
}

impl Default for ScalingBound {
    fn default() -> Self {
        Self { eta: 3.0, tau: 1.75, sample_count: 0 }
    }
}

/// `η = max(|P_τ|, |P_{100−τ}|)` over the DC components of `spectra`.
pub fn estimate_eta<'a, I>(spectra: I, tau: f64, rule: PercentileRule) -> Result<ScalingBound>
where
    I: IntoIterator<Item = &'a Spectrum>,
{
    let dc: Vec<f64> = spectra.into_iter().map(Spectrum::dc).collect();
    estimate_eta_from_dc(dc, tau, rule)
}

/// Same as [`estimate_eta`] for a raw list of DC values.
pub fn estimate_eta_from_dc(mut dc: Vec<f64>, tau: f64, rule: PercentileRule) -> Result<ScalingBound> {
    if dc.is_empty() {
        return Err(invalid("cannot estimate eta from an empty collection"));
    }
    if !(tau > 0.0 && tau < 50.0) {
        return Err(invalid(format!("tau must lie in (0, 50), got {tau}")));
    }
    if dc.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite DC component".into()));
    }
    dc.sort_by(f64::total_cmp);
    let lo = percentile(&dc, tau, rule);
    let hi = percentile(&dc, 100.0 - tau, rule);
    let eta = lo.abs().max(hi.abs());
    if eta <= 0.0 {
        return Err(Error::Numerical("degenerate DC distribution gives eta = 0".into()));
    }
    Ok(ScalingBound { eta, tau, sample_count: dc.len() })
}

fn check_bound(bound: &ScalingBound) -> Result<()> {
    if !(bound.eta > 0.0 && bound.eta.is_finite()) {
        return Err(invalid(format!("eta must be positive, got {}", bound.eta)));
    }
    Ok(())
}

/// Divides every coefficient by `η`.
pub fn scale(spec: &Spectrum, bound: &ScalingBound) -> Result<Spectrum> {
    check_bound(bound)?;
    if spec.scaled {
        return Err(invalid("spectrum is already scaled"));
    }
    let coeffs = spec.coeffs.iter().map(|c| c / bound.eta).collect();
    Ok(Spectrum { coeffs, original_length: spec.original_length, fs: spec.fs, scaled: true })
}

/// Multiplies every coefficient by `η`.
pub fn unscale(spec: &Spectrum, bound: &ScalingBound) -> Result<Spectrum> {
    check_bound(bound)?;
    if !spec.scaled {
        return Err(invalid("spectrum is not scaled"));
    }
    let coeffs = spec.coeffs.iter().map(|c| c * bound.eta).collect();
    Ok(Spectrum { coeffs, original_length: spec.original_length, fs: spec.fs, scaled: false })
}
