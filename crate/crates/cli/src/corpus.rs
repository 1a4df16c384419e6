//! Corpus directory: `manifest.csv` plus `clean/<id>.tfcd` and
//! `noisy/<id>.tfcd`.
//!
//! Manifest columns: `id,lambda,r,m,n,seed,split,clean,noisy,qrs`, where
//! `split` is `train`, `val` or `test`, file paths are relative to the
//! corpus directory and `qrs` is a `;`-separated list of R-peak indices.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tfcdiff::diffusion::derive_seed;
use tfcdiff::spectral::TimeSignal;
use tfcdiff::synth::RecordPair;

use crate::signal_file::{read_signal, write_signal};
use crate::{data_err, CliResult};

pub const MANIFEST: &str = "manifest.csv";
pub const HEADER: &str = "id,lambda,r,m,n,seed,split,clean,noisy,qrs";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> CliResult<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(data_err(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub id: String,
    pub lambda: f64,
    pub weights: [f64; 3],
    pub seed: u64,
    pub split: Split,
    pub clean: String,
    pub noisy: String,
    pub qrs: Vec<usize>,
}

/// Assigns splits by a seeded permutation: the first
/// `round(test_fraction·count)` records are test, then
/// `round(val_fraction·rest)` are validation, the remainder train.
pub fn assign_splits(count: usize, test_fraction: f64, val_fraction: f64, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 0x5917])));
    let n_test = ((count as f64) * test_fraction).round() as usize;
    let n_val = (((count - n_test) as f64) * val_fraction).round() as usize;
    let mut out = vec![Split::Train; count];
    for (rank, &i) in order.iter().enumerate() {
        if rank < n_test {
            out[i] = Split::Test;
        } else if rank < n_test + n_val {
            out[i] = Split::Val;
        }
    }
    out
}

pub fn manifest_text(rows: &[ManifestRow]) -> String {
    let mut s = format!("{HEADER}\n");
    for r in rows {
        let qrs: Vec<String> = r.qrs.iter().map(|q| q.to_string()).collect();
        let [wr, wm, wn] = r.weights;
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.id,
            r.lambda,
            wr,
            wm,
            wn,
            r.seed,
            r.split.name(),
            r.clean,
            r.noisy,
            qrs.join(";")
        ));
    }
    s
}

pub fn parse_manifest(text: &str) -> CliResult<Vec<ManifestRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(HEADER) {
        return Err(data_err("manifest header mismatch"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(data_err(format!("manifest row {}: expected 10 fields", i + 1)));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| data_err(format!("manifest row {}: bad number {s:?}", i + 1)));
        let qrs = if f[9].is_empty() {
            Vec::new()
        } else {
            f[9].split(';')
                .map(|q| q.parse().map_err(|_| data_err(format!("manifest row {}: bad qrs", i + 1))))
                .collect::<CliResult<_>>()?
        };
        rows.push(ManifestRow {
            id: f[0].to_string(),
            lambda: num(f[1])?,
            weights: [num(f[2])?, num(f[3])?, num(f[4])?],
            seed: f[5].parse().map_err(|_| data_err(format!("manifest row {}: bad seed", i + 1)))?,
            split: Split::parse(f[6])?,
            clean: f[7].to_string(),
            noisy: f[8].to_string(),
            qrs,
        });
    }
    Ok(rows)
}

/// Writes pairs and the manifest under `dir`, creating it if needed.
pub fn write_corpus(dir: &Path, pairs: &[RecordPair], splits: &[Split]) -> CliResult<Vec<ManifestRow>> {
    for sub in ["clean", "noisy"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| data_err(format!("{}: {e}", dir.join(sub).display())))?;
    }
    let mut rows = Vec::with_capacity(pairs.len());
    for (p, &split) in pairs.iter().zip(splits) {
        let clean = format!("clean/{}.tfcd", p.id);
        let noisy = format!("noisy/{}.tfcd", p.id);
        write_signal(&dir.join(&clean), &p.clean)?;
        write_signal(&dir.join(&noisy), &p.noisy)?;
        rows.push(ManifestRow {
            id: p.id.clone(),
            lambda: p.lambda,
            weights: p.weights,
            seed: p.seed,
            split,
            clean,
            noisy,
            qrs: p.qrs.clone(),
        });
    }
    fs::write(dir.join(MANIFEST), manifest_text(&rows)).map_err(|e| data_err(format!("{}: {e}", dir.display())))?;
    Ok(rows)
}

/// An opened corpus directory.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub dir: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Corpus {
    pub fn open(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
        Ok(Self { dir: dir.to_path_buf(), rows: parse_manifest(&text)? })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = (usize, &ManifestRow)> {
        self.rows.iter().enumerate().filter(move |(_, r)| r.split == split)
    }

    pub fn clean(&self, row: &ManifestRow) -> CliResult<TimeSignal> {
        read_signal(&self.dir.join(&row.clean))
    }

    pub fn noisy(&self, row: &ManifestRow) -> CliResult<TimeSignal> {
        read_signal(&self.dir.join(&row.noisy))
    }
}
