//! Command-line front end: encode, corrupt, decode, and batch FER/AIR
//! sweeps driven by a manifest file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use driftcode::alphabet::{format_symbols, parse_symbols};
use driftcode::channel::transmit_multi;
use driftcode::error::Error;
use driftcode::eval::{air_estimate, fer_sim, FerStopRule};
use driftcode::pipeline::{DecodeMode, Scheme, SchemeFile};

mod manifest;

use manifest::{run_sweep, Manifest, PointResult};

/// Exit codes: 0 success, 1 tool/validation error, 2 frame error,
/// 3 undecodable frame.
const EXIT_FRAME_ERROR: u8 = 2;
const EXIT_UNDECODABLE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "driftcode",
    about = "Concatenated coding over insertion/deletion/substitution channels",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Worker threads for frame-parallel simulation (overrides the
    /// DRIFTCODE_THREADS environment variable; default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SchemeArgs {
    /// Scheme configuration file (TOML).
    #[arg(long)]
    config: PathBuf,

    /// Override the number of reads M.
    #[arg(long)]
    reads: Option<usize>,

    /// Override the decode mode (separate | joint).
    #[arg(long)]
    mode: Option<String>,

    /// Override the number of turbo (inner-outer) iterations.
    #[arg(long)]
    turbo: Option<usize>,
}

impl SchemeArgs {
    fn build(&self) -> Result<Scheme, Error> {
        let file = SchemeFile::read(&self.config)?;
        let base = self.config.parent().unwrap_or(Path::new("."));
        let mut config = file.resolve(base)?;
        if let Some(reads) = self.reads {
            config.reads = reads;
        }
        if let Some(mode) = &self.mode {
            config.mode = mode.parse::<DecodeMode>()?;
        }
        if let Some(turbo) = self.turbo {
            config.turbo = turbo;
        }
        config.validate()?;
        Scheme::build(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Encode an information word file into a channel input sequence.
    Encode {
        #[command(flatten)]
        scheme: SchemeArgs,
        /// Input file: one line of comma-separated information symbols.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output sequence file (ACGT text for q = 4).
        #[arg(long)]
        out: PathBuf,
    },
    /// Corrupt a sequence through M independent IDS channel uses.
    Corrupt {
        #[command(flatten)]
        scheme: SchemeArgs,
        /// Input sequence file (one line).
        #[arg(long = "in")]
        input: PathBuf,
        /// Output file: one corrupted read per line.
        #[arg(long)]
        out: PathBuf,
        /// Channel seed; identical seeds give identical reads.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Decode a file of reads back to an information word.
    Decode {
        #[command(flatten)]
        scheme: SchemeArgs,
        /// Input file: one read per line, all reads of one frame.
        #[arg(long = "in")]
        input: PathBuf,
        /// Optional output file for the decoded information word.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional ground-truth information word for frame-error checking.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Dump normalized alpha/beta tables (first read) to this file.
        #[arg(long)]
        dump_tables: Option<PathBuf>,
    },
    /// Run a frame-error-rate sweep from a manifest file.
    Fer {
        /// Manifest file (TOML) naming the scheme, sweep points and output.
        #[arg(long)]
        manifest: PathBuf,
        /// Override the manifest's maximum frame count.
        #[arg(long)]
        max_frames: Option<u64>,
        /// Override the manifest's target error count.
        #[arg(long)]
        target_errors: Option<u64>,
    },
    /// Run an achievable-information-rate sweep from a manifest file.
    Air {
        #[arg(long)]
        manifest: PathBuf,
        /// Override the manifest's per-point frame count.
        #[arg(long)]
        frames: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| std::env::var("DRIFTCODE_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(threads) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn parse_info_word(text: &str, field_order: usize) -> Result<Vec<u8>, Error> {
    let line = text.lines().next().unwrap_or("");
    parse_symbols(line, field_order, 1)
}

fn run(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Encode { scheme, input, out } => {
            let scheme = scheme.build()?;
            let field_order = 1usize << scheme.config().inner.k();
            let u = parse_info_word(&std::fs::read_to_string(&input)?, field_order)?;
            let x = scheme.encode_frame(&u)?;
            std::fs::write(&out, format_symbols(&x, scheme.config().inner.q()) + "\n")?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Corrupt { scheme, input, out, seed } => {
            let scheme = scheme.build()?;
            let q = scheme.config().inner.q();
            let text = std::fs::read_to_string(&input)?;
            let x = parse_symbols(text.lines().next().unwrap_or(""), q, 1)?;
            let reads = transmit_multi(&x, &scheme.config().channel, scheme.config().reads, seed)?;
            let mut buf = String::new();
            for read in &reads {
                buf.push_str(&format_symbols(&read.received, q));
                buf.push('\n');
            }
            std::fs::write(&out, buf)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Decode { scheme, input, out, truth, dump_tables } => {
            let scheme = scheme.build()?;
            let q = scheme.config().inner.q();
            let text = std::fs::read_to_string(&input)?;
            let ys = text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| parse_symbols(l, q, i + 1))
                .collect::<Result<Vec<_>, _>>()?;
            if ys.len() != scheme.config().reads {
                return Err(Error::Config(format!(
                    "scheme expects {} reads, file has {}",
                    scheme.config().reads,
                    ys.len()
                )));
            }
            if let Some(dump_path) = &dump_tables {
                let mut sink = Vec::new();
                let prior = driftcode::PriorMatrix::uniform(
                    scheme.config().n_outer(),
                    1 << scheme.config().inner.k(),
                );
                // diagnostic dump of the first read's tables
                let _ = scheme.inner_decoder().decode_single_dump(&ys[0], &prior, &mut sink);
                std::fs::write(dump_path, sink)?;
            }
            let truth = truth
                .map(|p| {
                    parse_info_word(
                        &std::fs::read_to_string(&p)?,
                        1usize << scheme.config().inner.k(),
                    )
                })
                .transpose()?;
            let result = scheme.decode_frame(&ys, truth.as_deref())?;
            let info_text = format!(
                "{}\n",
                result
                    .decoded_info
                    .iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            );
            if let Some(out) = out {
                std::fs::write(&out, info_text)?;
            } else {
                print!("{info_text}");
            }
            eprintln!(
                "frame: undecodable={} converged={} turbo_rounds={}{}",
                result.undecodable,
                result.converged,
                result.turbo_iterations_used,
                match result.frame_error {
                    Some(e) => format!(" frame_error={e}"),
                    None => String::new(),
                }
            );
            if result.undecodable {
                return Ok(ExitCode::from(EXIT_UNDECODABLE));
            }
            let failed = match result.frame_error {
                Some(e) => e,
                None => !result.converged,
            };
            if failed {
                return Ok(ExitCode::from(EXIT_FRAME_ERROR));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Fer { manifest, max_frames, target_errors } => {
            let m = Manifest::read(&manifest)?;
            run_sweep(&m, "fer", |scheme, seed| {
                let stop = FerStopRule {
                    max_frames: max_frames.unwrap_or(m.max_frames),
                    target_errors: target_errors.unwrap_or(m.target_errors),
                };
                Ok(PointResult::Fer(fer_sim(scheme, &stop, seed)?))
            })?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Air { manifest, frames } => {
            let m = Manifest::read(&manifest)?;
            run_sweep(&m, "air", |scheme, seed| {
                Ok(PointResult::Air(air_estimate(scheme, frames.unwrap_or(m.frames), seed)?))
            })?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
