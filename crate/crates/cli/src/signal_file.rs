//! Single-channel signal container: `"TFCD"`, `u16` version, `f64` rate,
//! `u64` length, `u16` channel count, then little-endian `f64` samples.
//! CSV import/export for interop.

use std::fs;
use std::path::Path;

use tfcdiff::spectral::TimeSignal;

use crate::{data_err, CliResult};

pub const MAGIC: &[u8; 4] = b"TFCD";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 8 + 8 + 2;

pub fn encode(signal: &TimeSignal) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * signal.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&signal.fs().to_le_bytes());
    out.extend_from_slice(&(signal.len() as u64).to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    for v in signal.samples() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> CliResult<TimeSignal> {
    if bytes.len() < HEADER_LEN {
        return Err(data_err("signal file shorter than its header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(data_err("not a signal file (bad magic)"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(data_err(format!("unsupported signal file version {version}")));
    }
    let fs = f64::from_le_bytes(bytes[6..14].try_into().unwrap());
    let len = u64::from_le_bytes(bytes[14..22].try_into().unwrap());
    let channels = u16::from_le_bytes([bytes[22], bytes[23]]);
    if channels != 1 {
        return Err(data_err(format!("expected 1 channel, found {channels}")));
    }
    let payload = &bytes[HEADER_LEN..];
    if payload.len() as u64 != len.saturating_mul(8) {
        return Err(data_err(format!("header says {len} samples, payload holds {} bytes", payload.len())));
    }
    let samples = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(TimeSignal::new(samples, fs)?)
}

pub fn write_signal(path: &Path, signal: &TimeSignal) -> CliResult<()> {
    fs::write(path, encode(signal)).map_err(|e| data_err(format!("{}: {e}", path.display())))
}

pub fn read_signal(path: &Path) -> CliResult<TimeSignal> {
    let bytes = fs::read(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    decode(&bytes).map_err(|e| data_err(format!("{}: {e}", path.display())))
}

/// Parses one sample per line. With several comma-separated columns the
/// last one is used. Non-numeric lines (headers) and `#` comments are skipped.
pub fn parse_csv(text: &str, fs: f64) -> CliResult<TimeSignal> {
    let mut samples = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let field = line.rsplit(',').next().unwrap_or("").trim();
        match field.parse::<f64>() {
            Ok(v) => samples.push(v),
            Err(_) if samples.is_empty() => continue,
            Err(_) => return Err(data_err(format!("bad CSV sample {field:?}"))),
        }
    }
    Ok(TimeSignal::new(samples, fs)?)
}

/// Reads a `.csv` file (needs `fs`) or a binary signal file.
pub fn read_any(path: &Path, csv_fs: Option<f64>) -> CliResult<TimeSignal> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let fs = csv_fs.ok_or_else(|| crate::usage_err("CSV input needs --fs"))?;
        let text = fs::read_to_string(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
        parse_csv(&text, fs)
    } else {
        read_signal(path)
    }
}

/// `time_s,<name>...` with one row per sample. Columns must share a length.
pub fn columns_csv(fs: f64, columns: &[(&str, &[f64])]) -> String {
    let n = columns.iter().map(|(_, c)| c.len()).min().unwrap_or(0);
    let mut s = String::from("time_s");
    for (name, _) in columns {
        s.push(',');
        s.push_str(name);
    }
    s.push('\n');
    for i in 0..n {
        s.push_str(&format!("{}", i as f64 / fs));
        for (_, c) in columns {
            s.push_str(&format!(",{}", c[i]));
        }
        s.push('\n');
    }
    s
}
