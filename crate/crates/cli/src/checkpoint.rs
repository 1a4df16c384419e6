//! Self-describing model checkpoints.
//!
//! Layout (little-endian): `"TFCK"`, `u16` version, resolved config text,
//! schedule `β` and `ᾱ` arrays with the SNR scale, `η`/`τ`/DC sample count,
//! `K`, `N`, `fs`, the flat parameter vector and, optionally, the optimiser
//! state needed to resume training.

use std::fs;
use std::path::Path;

use tfcdiff::diffusion::{Adam, Network};
use tfcdiff::predictor::{Predictor, PredictorParams};
use tfcdiff::schedule::NoiseSchedule;
use tfcdiff::spectral::ScalingBound;

use crate::config::RunConfig;
use crate::{data_err, CliResult};

pub const MAGIC: &[u8; 4] = b"TFCK";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ResumeState {
    pub adam: Adam,
    /// Completed epochs.
    pub epoch: usize,
    pub best_val: f64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub schedule: NoiseSchedule,
    pub bound: ScalingBound,
    pub params: PredictorParams,
    pub resume: Option<ResumeState>,
}

impl Checkpoint {
    pub fn network(&self) -> CliResult<Network> {
        let predictor = Predictor::new(self.config.predictor.clone())?;
        Ok(Network { predictor, params: self.params.clone() })
    }
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|x| self.f64(*x));
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| data_err("checkpoint is truncated"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u16(&mut self) -> CliResult<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> CliResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self, width: usize) -> CliResult<usize> {
        let n = self.u64()? as usize;
        if n.saturating_mul(width) > self.buf.len() - self.pos {
            return Err(data_err("checkpoint is truncated"));
        }
        Ok(n)
    }
    fn f64(&mut self) -> CliResult<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self) -> CliResult<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn str(&mut self) -> CliResult<String> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| data_err("checkpoint config is not UTF-8"))
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(MAGIC);
    w.u16(VERSION);
    w.str(&ck.config.to_text());
    w.f64s(ck.schedule.betas());
    w.f64s(ck.schedule.alpha_bars());
    w.f64(ck.schedule.snr_scale());
    w.f64(ck.bound.eta);
    w.f64(ck.bound.tau);
    w.u64(ck.bound.sample_count as u64);
    w.u64(ck.config.coeffs() as u64);
    w.u64(ck.config.record_len() as u64);
    w.f64(ck.config.fs);
    w.f64s(ck.params.values());
    match &ck.resume {
        None => w.u16(0),
        Some(r) => {
            w.u16(1);
            let a = &r.adam;
            for v in [a.lr, a.beta1, a.beta2, a.eps, a.decay_factor] {
                w.f64(v);
            }
            w.u64(a.decay_every as u64);
            w.u64(a.steps as u64);
            w.f64s(&a.m);
            w.f64s(&a.v);
            w.u64(r.epoch as u64);
            w.f64(r.best_val);
        }
    }
    w.0
}

pub fn decode(bytes: &[u8]) -> CliResult<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(data_err("not a checkpoint (bad magic)"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(data_err(format!("unsupported checkpoint version {version}")));
    }
    let config = RunConfig::parse(&r.str()?).map_err(|e| data_err(format!("checkpoint config: {e}")))?;
    let beta = r.f64s()?;
    let alpha_bar = r.f64s()?;
    let c = r.f64()?;
    let schedule = NoiseSchedule::from_parts(beta, alpha_bar, c).map_err(|e| data_err(e.to_string()))?;
    let bound = ScalingBound { eta: r.f64()?, tau: r.f64()?, sample_count: r.u64()? as usize };
    let (k, n, fs) = (r.u64()? as usize, r.u64()? as usize, r.f64()?);
    if k != config.coeffs() || n != config.record_len() || fs != config.fs {
        return Err(data_err("checkpoint shapes disagree with its config"));
    }
    let predictor = Predictor::new(config.predictor.clone()).map_err(|e| data_err(e.to_string()))?;
    let params = PredictorParams::from_values(predictor.layout(), r.f64s()?).map_err(|e| data_err(e.to_string()))?;
    let resume = match r.u16()? {
        0 => None,
        1 => {
            let (lr, beta1, beta2, eps, decay_factor) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?);
            let decay_every = r.u64()? as usize;
            let steps = r.u64()? as usize;
            let (m, v) = (r.f64s()?, r.f64s()?);
            if m.len() != params.len() || v.len() != params.len() {
                return Err(data_err("optimiser state length differs from parameter count"));
            }
            let adam = Adam { lr, beta1, beta2, eps, decay_every, decay_factor, m, v, steps };
            Some(ResumeState { adam, epoch: r.u64()? as usize, best_val: r.f64()? })
        }
        other => return Err(data_err(format!("bad resume flag {other}"))),
    };
    if r.pos != bytes.len() {
        return Err(data_err("trailing bytes after checkpoint"));
    }
    Ok(Checkpoint { config, schedule, bound, params, resume })
}

/// Writes through a temporary file so a crash never leaves a torn checkpoint.
pub fn save(path: &Path, ck: &Checkpoint) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode(ck)).map_err(|e| data_err(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| data_err(format!("{}: {e}", path.display())))
}

pub fn load(path: &Path) -> CliResult<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    decode(&bytes).map_err(|e| data_err(format!("{}: {e}", path.display())))
}
