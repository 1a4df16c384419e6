//! Preprocessing: median filter, linear-phase FIR bandpass, piecewise
//! linear baseline removal and linear-interpolation resampling.

use crate::error::{invalid, shape, Result};
use crate::spectral::TimeSignal;

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - j;
    }
    j as usize
}

/// Running median over an odd window with reflected edges.
pub fn median_filter(x: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window % 2 == 0 {
        return Err(invalid(format!("median window must be odd, got {window}")));
    }
    if x.is_empty() {
        return Err(invalid("empty signal"));
    }
    let h = (window / 2) as isize;
    let mut buf = vec![0.0; window];
    Ok((0..x.len())
        .map(|i| {
            for (k, b) in buf.iter_mut().enumerate() {
                *b = x[reflect(i as isize - h + k as isize, x.len())];
            }
            buf.sort_by(f64::total_cmp);
            buf[window / 2]
        })
        .collect())
}

/// Hamming-windowed sinc lowpass with unit DC gain.
pub fn lowpass_taps(cutoff: f64, fs: f64, taps: usize) -> Result<Vec<f64>> {
    if taps % 2 == 0 {
        return Err(invalid(format!("tap count must be odd, got {taps}")));
    }
    if !(cutoff > 0.0 && cutoff < fs / 2.0) {
        return Err(invalid(format!("cutoff {cutoff} Hz outside (0, {}) Hz", fs / 2.0)));
    }
    let m = (taps - 1) as f64;
    let fc = cutoff / fs;
    let mut h: Vec<f64> = (0..taps)
        .map(|i| {
            let n = i as f64 - m / 2.0;
            let sinc = if n == 0.0 { 2.0 * fc } else { (2.0 * std::f64::consts::PI * fc * n).sin() / (std::f64::consts::PI * n) };
            let w = if taps == 1 { 1.0 } else { 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / m).cos() };
            sinc * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    Ok(h)
}

/// Linear-phase bandpass as the difference of two unit-gain lowpasses, so
/// the DC response cancels. Tap count scales with the lower edge.
pub fn bandpass_taps(low: f64, high: f64, fs: f64) -> Result<Vec<f64>> {
    if !(low > 0.0 && low < high) {
        return Err(invalid(format!("bad band {low}..{high} Hz")));
    }
    let mut taps = (3.3 * fs / low).ceil() as usize;
    if taps % 2 == 0 {
        taps += 1;
    }
    let hi = lowpass_taps(high, fs, taps)?;
    let lo = lowpass_taps(low, fs, taps)?;
    Ok(hi.iter().zip(&lo).map(|(a, b)| a - b).collect())
}

/// Centred ("same") convolution with an odd-length symmetric kernel, so the
/// output is aligned with the input. Edges are reflected.
pub fn filter_same(x: &[f64], taps: &[f64]) -> Result<Vec<f64>> {
    if x.len() < taps.len() {
        return Err(shape(format!("signal of {} samples shorter than {}-tap filter", x.len(), taps.len())));
    }
    let h = (taps.len() / 2) as isize;
    Ok((0..x.len() as isize)
        .map(|i| taps.iter().enumerate().map(|(k, t)| t * x[reflect(i + h - k as isize, x.len())]).sum())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub median_window: usize,
    pub low_hz: f64,
    pub high_hz: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { median_window: 5, low_hz: 0.5, high_hz: 100.0 }
    }
}

/// Median filter followed by the zero-delay bandpass.
pub fn preprocess_filters(signal: &TimeSignal, cfg: &FilterConfig) -> Result<TimeSignal> {
    let med = median_filter(signal.samples(), cfg.median_window)?;
    let taps = bandpass_taps(cfg.low_hz, cfg.high_hz, signal.fs())?;
    TimeSignal::new(filter_same(&med, &taps)?, signal.fs())
}

/// Least-squares line `a + b·n` through `y` indexed from `start`.
fn fit_line(y: &[f64], start: usize) -> (f64, f64) {
    let n = y.len() as f64;
    if y.len() == 1 {
        return (y[0], 0.0);
    }
    let xs = (0..y.len()).map(|i| (start + i) as f64);
    let mx = xs.clone().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, v) in xs.zip(y) {
        sxy += (x - mx) * (v - my);
        sxx += (x - mx) * (x - mx);
    }
    let b = sxy / sxx;
    (my - b * mx, b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub signal: TimeSignal,
    pub baseline: Vec<f64>,
    /// True when fewer than two annotations forced a single global fit.
    pub fallback: bool,
}

/// Subtracts a per-segment least-squares line, segmenting at the given
/// sample indices. At each junction the step between the previous line
/// (extrapolated) and the next one is faded out over `window` samples with
/// the cubic Hermite basis `2s³ − 3s² + 1`, so the baseline stays continuous.
pub fn remove_baseline_piecewise(signal: &TimeSignal, annotations: &[usize], window: usize) -> Result<BaselineResult> {
    let x = signal.samples();
    let n = x.len();
    if let Some(a) = annotations.iter().find(|&&a| a >= n) {
        return Err(invalid(format!("annotation {a} beyond signal length {n}")));
    }
    let mut cuts: Vec<usize> = annotations.iter().copied().filter(|&a| a > 0).collect();
    cuts.sort_unstable();
    cuts.dedup();
    let fallback = annotations.len() < 2;
    if fallback {
        cuts.clear();
    }
    // Segments shorter than two samples cannot carry a line; merge them.
    let mut bounds = vec![0];
    for c in cuts {
        if c >= bounds[bounds.len() - 1] + 2 && c + 2 <= n {
            bounds.push(c);
        }
    }
    bounds.push(n);
    let lines: Vec<(f64, f64)> = bounds.windows(2).map(|w| fit_line(&x[w[0]..w[1]], w[0])).collect();
    let mut baseline = vec![0.0; n];
    for (s, w) in bounds.windows(2).enumerate() {
        let (a, b) = lines[s];
        for (i, v) in baseline[w[0]..w[1]].iter_mut().enumerate() {
            *v = a + b * (w[0] + i) as f64;
        }
        if s > 0 && window > 0 {
            let (pa, pb) = lines[s - 1];
            let j = w[0] as f64;
            let jump = (pa + pb * j) - (a + b * j);
            let end = (w[0] + window).min(w[1]);
            for i in w[0]..end {
                let t = (i - w[0]) as f64 / window as f64;
                baseline[i] += jump * (2.0 * t * t * t - 3.0 * t * t + 1.0);
            }
        }
    }
    let out = x.iter().zip(&baseline).map(|(v, b)| v - b).collect();
    Ok(BaselineResult { signal: TimeSignal::new(out, signal.fs())?, baseline, fallback })
}

/// Linear-interpolation resampler to `target_fs`, keeping the duration.
pub fn resample_linear(signal: &TimeSignal, target_fs: f64) -> Result<TimeSignal> {
    if !(target_fs > 0.0 && target_fs.is_finite()) {
        return Err(invalid(format!("bad target rate {target_fs}")));
    }
    let x = signal.samples();
    let ratio = signal.fs() / target_fs;
    let len = ((x.len() as f64) / ratio).round().max(1.0) as usize;
    let out = (0..len)
        .map(|j| {
            let pos = j as f64 * ratio;
            let i = pos.floor() as usize;
            if i + 1 >= x.len() {
                x[x.len() - 1]
            } else {
                let f = pos - i as f64;
                x[i] * (1.0 - f) + x[i + 1] * f
            }
        })
        .collect();
    TimeSignal::new(out, target_fs)
}
