use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tfcdiff_cli::commands::{self, DenoiseFile};
use tfcdiff_cli::config::RunConfig;
use tfcdiff_cli::corpus::{Corpus, Split};
use tfcdiff_cli::signal_file::{read_any, write_signal};
use tfcdiff_cli::{checkpoint, CliError, CliResult};

/// Spectral diffusion ECG denoiser.
#[derive(Debug, Parser)]
#[command(name = "tfcdiff", version)]
struct Cli {
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Overrides the configured value.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic clean/noisy corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the spectral scaling bound from a corpus' training split.
    EstimateEta {
        #[arg(long)]
        corpus: PathBuf,
        /// Also write `eta = <value>` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the noise schedule as CSV.
    Schedule {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the noise predictor.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Best-validation checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint with optimiser state.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Denoise one signal file or a corpus split.
    Denoise {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Signal file (`.tfcd` or `.csv`).
        #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
        input: Option<PathBuf>,
        /// Corpus directory; denoises its test split into `--out/`.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Ensemble size.
        #[arg(long)]
        k: Option<usize>,
        /// Sampling rate of CSV input.
        #[arg(long)]
        fs: Option<f64>,
        /// Waveform overlay CSV (time, noisy, denoised[, clean]).
        #[arg(long)]
        overlay: Option<PathBuf>,
        /// Clean reference for the overlay.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Directory for individual ensemble members.
        #[arg(long)]
        runs_dir: Option<PathBuf>,
    },
    /// Score denoised outputs against a corpus' test split.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        denoised: PathBuf,
        /// Output directory for records.csv and summary.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a checkpoint summary.
    Describe {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Convert an external record, optionally resampling, filtering and
    /// removing baseline wander at annotated beats.
    Import {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        fs: Option<f64>,
        /// Resample to the configured rate.
        #[arg(long)]
        resample: bool,
        /// Apply the median and bandpass filters.
        #[arg(long)]
        filter: bool,
        /// Beat annotation sample indices (whitespace or comma separated).
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.derive()?;
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = load_config(&cli)?;
    commands::init_workers(cfg.workers);
    match cli.command {
        Command::Synth { out } => {
            commands::synth(&cfg, &out)?;
        }
        Command::EstimateEta { corpus, out } => {
            let bound = commands::estimate_eta(&cfg, &Corpus::open(&corpus)?)?;
            let line = format!("eta = {:?}\n", bound.eta);
            eprintln!("estimate-eta: tau {} over {} DC values", bound.tau, bound.sample_count);
            match out {
                Some(p) => write_text(&p, &line)?,
                None => print!("{line}"),
            }
        }
        Command::Schedule { out } => {
            let csv = commands::schedule_csv(&cfg)?;
            match out {
                Some(p) => write_text(&p, &csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Train { corpus, out, resume } => {
            commands::train(&cfg, &Corpus::open(&corpus)?, &out, resume.as_deref())?;
        }
        Command::Denoise { checkpoint: ck, input, corpus, out, k, fs, overlay, reference, runs_dir } => {
            let ck = checkpoint::load(&ck)?;
            let k = k.unwrap_or(cfg.denoise_k);
            let seed = cli.seed.unwrap_or(ck.config.seed);
            match (input, corpus) {
                (Some(input), None) => {
                    let opts = DenoiseFile { input, out, csv_fs: fs, overlay, reference, runs_dir };
                    commands::denoise_file(&ck, &opts, k, seed)?;
                }
                (None, Some(corpus)) => {
                    commands::denoise_corpus(&ck, &Corpus::open(&corpus)?, Split::Test, &out, k, seed)?;
                }
                _ => unreachable!("clap enforces exactly one input"),
            }
        }
        Command::Eval { corpus, denoised, out } => {
            commands::eval(&Corpus::open(&corpus)?, &denoised, &out, cfg.prd_mode)?;
        }
        Command::Describe { checkpoint: ck } => {
            print!("{}", commands::describe(&checkpoint::load(&ck)?)?);
        }
        Command::Import { input, out, fs, resample, filter, annotations } => {
            let signal = read_any(&input, fs)?;
            let ann = match annotations {
                Some(p) => Some(commands::parse_annotations(
                    &std::fs::read_to_string(&p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?,
                )?),
                None => None,
            };
            let target = resample.then_some(cfg.fs);
            let s = commands::import(&signal, target, &cfg, filter, ann.as_deref())?;
            write_signal(&out, &s)?;
        }
    }
    Ok(())
}

/// Every network node allocates tensors of a few hundred kilobytes. glibc's
/// default serves those with fresh mmaps, so each one is faulted in and
/// zeroed by the kernel; keeping them on the heap cuts training time.
#[cfg(all(target_os = "linux", target_env = "gnu"))]
fn tune_allocator() {
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 256 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    }
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
fn tune_allocator() {}

fn main() -> ExitCode {
    tune_allocator();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tfcdiff: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
