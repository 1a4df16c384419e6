//! Distortion and similarity metrics, and λ-stratified summaries.

use crate::error::{invalid, shape, Result};
use crate::spectral::TimeSignal;

/// Denominator used by PRD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PrdMode {
    /// `Σ(x̂ − mean(x0))²`.
    #[default]
    Verbatim,
    /// `Σ(x0 − mean(x0))²`.
    Conventional,
}

/// Which values are sentinels rather than finite measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Undefined {
    /// PRD denominator was zero; value is `+∞` (or 0 when the numerator is too).
    pub prd: bool,
    /// A zero-norm argument; value is 0.
    pub cos_sim: bool,
    /// Output matches the reference exactly; value is `+∞`.
    pub im_snr: bool,
    /// Input matches the reference exactly; value is `+∞`.
    pub input_snr: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub ssd: f64,
    pub mad: f64,
    /// Percent.
    pub prd: f64,
    pub cos_sim: f64,
    /// dB.
    pub im_snr: f64,
    /// dB.
    pub input_snr: f64,
    pub undefined: Undefined,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `10·log10(num/den)`, with `+∞` (flagged) when `den = 0`.
fn db_ratio(num: f64, den: f64) -> (f64, bool) {
    if den == 0.0 {
        if num == 0.0 {
            (0.0, true)
        } else {
            (f64::INFINITY, true)
        }
    } else if num == 0.0 {
        (f64::NEG_INFINITY, true)
    } else {
        (10.0 * (num / den).log10(), false)
    }
}

pub fn ssd(x0: &[f64], x_hat: &[f64]) -> f64 {
    sq_dist(x0, x_hat)
}

pub fn mad(x0: &[f64], x_hat: &[f64]) -> f64 {
    x0.iter().zip(x_hat).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Returns `(prd_percent, undefined)`.
pub fn prd(x0: &[f64], x_hat: &[f64], mode: PrdMode) -> (f64, bool) {
    let mean = x0.iter().sum::<f64>() / x0.len() as f64;
    let num = sq_dist(x0, x_hat);
    let den: f64 = match mode {
        PrdMode::Verbatim => x_hat.iter().map(|v| (v - mean) * (v - mean)).sum(),
        PrdMode::Conventional => x0.iter().map(|v| (v - mean) * (v - mean)).sum(),
    };
    if den == 0.0 {
        return (if num == 0.0 { 0.0 } else { f64::INFINITY }, true);
    }
    (100.0 * (num / den).sqrt(), false)
}

/// Returns `(cos_sim, undefined)`.
pub fn cos_sim(x0: &[f64], x_hat: &[f64]) -> (f64, bool) {
    let dot: f64 = x0.iter().zip(x_hat).map(|(a, b)| a * b).sum();
    let n0 = x0.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n1 = x_hat.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n0 == 0.0 || n1 == 0.0 {
        return (0.0, true);
    }
    ((dot / (n0 * n1)).clamp(-1.0, 1.0), false)
}

/// `10·log10(Σ(x0−x̃)² / Σ(x0−x̂)²)`.
pub fn im_snr(x0: &[f64], x_hat: &[f64], x_tilde: &[f64]) -> (f64, bool) {
    db_ratio(sq_dist(x0, x_tilde), sq_dist(x0, x_hat))
}

/// `10·log10(Σx0² / Σ(x0−x̃)²)`.
pub fn snr(x0: &[f64], x: &[f64]) -> (f64, bool) {
    db_ratio(x0.iter().map(|v| v * v).sum(), sq_dist(x0, x))
}

pub fn evaluate(x0: &TimeSignal, x_hat: &TimeSignal, x_tilde: &TimeSignal, mode: PrdMode) -> Result<MetricsReport> {
    evaluate_slices(x0.samples(), x_hat.samples(), x_tilde.samples(), mode)
}

pub fn evaluate_slices(x0: &[f64], x_hat: &[f64], x_tilde: &[f64], mode: PrdMode) -> Result<MetricsReport> {
    if x0.len() != x_hat.len() || x0.len() != x_tilde.len() {
        return Err(shape(format!(
            "metric inputs differ in length: {}, {}, {}",
            x0.len(),
            x_hat.len(),
            x_tilde.len()
        )));
    }
    if x0.is_empty() {
        return Err(invalid("empty signals"));
    }
    let (prd, prd_u) = prd(x0, x_hat, mode);
    let (cs, cs_u) = cos_sim(x0, x_hat);
    let (ims, ims_u) = im_snr(x0, x_hat, x_tilde);
    let (ins, ins_u) = snr(x0, x_tilde);
    Ok(MetricsReport {
        ssd: ssd(x0, x_hat),
        mad: mad(x0, x_hat),
        prd,
        cos_sim: cs,
        im_snr: ims,
        input_snr: ins,
        undefined: Undefined { prd: prd_u, cos_sim: cs_u, im_snr: ims_u, input_snr: ins_u },
    })
}

pub const METRIC_NAMES: [&str; 6] = ["input_snr_db", "ssd", "mad", "prd_pct", "cos_sim", "im_snr_db"];

impl MetricsReport {
    /// Values in [`METRIC_NAMES`] order, `None` for sentinels.
    pub fn values(&self) -> [Option<f64>; 6] {
        let u = &self.undefined;
        let pick = |v: f64, bad: bool| (!bad).then_some(v);
        [
            pick(self.input_snr, u.input_snr),
            Some(self.ssd),
            Some(self.mad),
            pick(self.prd, u.prd),
            pick(self.cos_sim, u.cos_sim),
            pick(self.im_snr, u.im_snr),
        ]
    }
}

/// Mean and population standard deviation of one metric; sentinels excluded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    pub excluded: usize,
}

fn stat(values: impl Iterator<Item = Option<f64>>) -> Stat {
    let mut xs = Vec::new();
    let mut excluded = 0;
    for v in values {
        match v {
            Some(x) => xs.push(x),
            None => excluded += 1,
        }
    }
    if xs.is_empty() {
        return Stat { mean: f64::NAN, std: f64::NAN, count: 0, excluded };
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Stat { mean, std: var.sqrt(), count: xs.len(), excluded }
}

/// Per-metric statistics in [`METRIC_NAMES`] order.
pub fn summarize(reports: &[MetricsReport]) -> [Stat; 6] {
    std::array::from_fn(|i| stat(reports.iter().map(|r| r.values()[i])))
}

/// Intensity intervals, closed on the right except the first, which is closed.
pub const STRATA: [(f64, f64); 4] = [(0.2, 0.6), (0.6, 1.0), (1.0, 1.5), (1.5, 2.0)];

/// Index into [`STRATA`] for `lambda`, if any.
pub fn stratum_of(lambda: f64) -> Option<usize> {
    STRATA.iter().enumerate().find_map(|(i, &(lo, hi))| {
        let inside = if i == 0 { lambda >= lo && lambda <= hi } else { lambda > lo && lambda <= hi };
        inside.then_some(i)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratumRow {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub stats: [Stat; 6],
}

/// Groups `(λ, report)` pairs into [`STRATA`]. Empty intervals are omitted.
/// Also returns how many reports fell outside every interval.
pub fn stratify(tagged: &[(f64, MetricsReport)]) -> (Vec<StratumRow>, usize) {
    let mut buckets: Vec<Vec<MetricsReport>> = vec![Vec::new(); STRATA.len()];
    let mut outside = 0;
    for (lambda, r) in tagged {
        match stratum_of(*lambda) {
            Some(i) => buckets[i].push(*r),
            None => outside += 1,
        }
    }
    let rows = buckets
        .iter()
        .zip(STRATA)
        .filter(|(b, _)| !b.is_empty())
        .map(|(b, (lo, hi))| StratumRow { lo, hi, count: b.len(), stats: summarize(b) })
        .collect();
    (rows, outside)
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.6}")
    }
}

/// One evaluated record.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordMetrics {
    pub id: String,
    pub lambda: f64,
    pub weights: [f64; 3],
    pub report: MetricsReport,
}

pub fn records_csv(rows: &[RecordMetrics]) -> String {
    let mut s = String::from("record_id,lambda,r,m,n,input_snr_db,ssd,mad,prd_pct,cos_sim,im_snr_db\n");
    for r in rows {
        let m = &r.report;
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.id,
            fmt(r.lambda),
            fmt(r.weights[0]),
            fmt(r.weights[1]),
            fmt(r.weights[2]),
            fmt(m.input_snr),
            fmt(m.ssd),
            fmt(m.mad),
            fmt(m.prd),
            fmt(m.cos_sim),
            fmt(m.im_snr)
        ));
    }
    s
}

/// `interval,count,<metric>_mean,<metric>_std,...` with an `all` row first.
pub fn summary_csv(all: &[MetricsReport], strata: &[StratumRow]) -> String {
    let mut s = String::from("interval,count");
    for name in METRIC_NAMES {
        s.push_str(&format!(",{name}_mean,{name}_std"));
    }
    s.push('\n');
    let mut line = |label: String, count: usize, stats: &[Stat; 6]| {
        s.push_str(&format!("{label},{count}"));
        for st in stats {
            s.push_str(&format!(",{},{}", fmt(st.mean), fmt(st.std)));
        }
        s.push('\n');
    };
    line("all".into(), all.len(), &summarize(all));
    for row in strata {
        line(format!("{}-{}", row.lo, row.hi), row.count, &row.stats);
    }
    s
}
