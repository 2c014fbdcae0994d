use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use slk_core::dataset::Format;
use slk_core::EvalTarget;

mod analyze;
mod output;
mod prepare;
mod spec;
mod train;

#[derive(Parser)]
#[command(name = "slk", version, about = "Train and evaluate Top-K ranking losses for recommendation")]
struct Cli {
    /// Worker threads; defaults to all cores. Results do not depend on it.
    #[arg(long, global = true, env = "SLK_THREADS")]
    threads: Option<usize>,
    /// Suppress progress lines on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Tsv,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Validation,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Filter a raw interaction log to its k-core and split it per user.
    Prepare {
        /// Delimited `user, item[, rating[, timestamp]]` file.
        #[arg(long)]
        input: PathBuf,
        /// New directory for the split; must not exist.
        #[arg(long)]
        out: PathBuf,
        /// Inferred from the extension when omitted.
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        #[arg(long, default_value_t = 10)]
        kcore: usize,
        #[arg(long, default_value_t = 3.0)]
        min_rating: f64,
        #[arg(long, default_value_t = 0.8)]
        train_frac: f64,
        /// Share of the train part moved to validation.
        #[arg(long, default_value_t = 0.1)]
        val_frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train from a TOML experiment spec; grids produce one run per point.
    Train {
        #[arg(long)]
        spec: PathBuf,
        /// Parent directory for run directories (overrides output.dir).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        name: Option<String>,
        /// Overrides train.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Extra `section.key=value` overrides, applied after the environment.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Evaluate a checkpoint on a prepared split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long, default_value = "20")]
        cutoffs: String,
        #[arg(long, value_enum, default_value = "test")]
        target: TargetArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-interaction user-gradient magnitudes for several losses on one sample.
    GradReport {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// Loss labels such as sl@20, lambdaloss@20, lambdaloss@20-s; repeat or comma-separate.
        #[arg(long = "loss", required = true)]
        losses: Vec<String>,
        #[arg(long, default_value_t = 20_000)]
        samples: usize,
        #[arg(long, default_value_t = 200)]
        negatives: usize,
        /// Monte Carlo sample size for SL@K quantiles.
        #[arg(long, default_value_t = 1000)]
        quantile_samples: usize,
        #[arg(long, default_value_t = 0.2)]
        tau_d: f64,
        #[arg(long, default_value_t = 2.5)]
        tau_w: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time single training epochs for several losses.
    Bench {
        #[arg(long)]
        split: PathBuf,
        #[arg(long = "loss", required = true)]
        losses: Vec<String>,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
        #[arg(long, default_value_t = 1000)]
        negatives: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 1024)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 0.2)]
        tau_d: f64,
        #[arg(long, default_value_t = 2.5)]
        tau_w: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Prepare {
            input,
            out,
            format,
            kcore,
            min_rating,
            train_frac,
            val_frac,
            seed,
        } => {
            let format = match format {
                Some(FormatArg::Tsv) => Format::Tsv,
                Some(FormatArg::Csv) => Format::Csv,
                None => Format::from_path(&input),
            };
            let opts = prepare::PrepareOptions {
                input,
                format,
                kcore,
                min_rating,
                train_frac,
                val_frac,
                seed,
            };
            let manifest = prepare::run(&opts, &out)?;
            print_json(&serde_json::to_value(manifest)?)
        }
        Command::Train {
            spec,
            out,
            name,
            seed,
            sets,
        } => {
            let overrides = train::TrainOverrides { out, name, seed, sets };
            let dir = train::run(&spec, &overrides, cli.quiet)?;
            println!("{}", dir.display());
            Ok(())
        }
        Command::Eval {
            checkpoint,
            split,
            cutoffs,
            target,
            out,
        } => {
            analyze::ensure_file(&checkpoint)?;
            let opts = analyze::EvalOptions {
                checkpoint,
                split,
                cutoffs: analyze::parse_cutoffs(&cutoffs)?,
                target: match target {
                    TargetArg::Validation => EvalTarget::Validation,
                    TargetArg::Test => EvalTarget::Test,
                },
                out,
            };
            print_json(&analyze::eval(&opts)?)
        }
        Command::GradReport {
            checkpoint,
            split,
            losses,
            samples,
            negatives,
            quantile_samples,
            tau_d,
            tau_w,
            seed,
            out,
        } => {
            analyze::ensure_file(&checkpoint)?;
            let opts = analyze::GradOptions {
                checkpoint,
                split,
                losses,
                samples,
                negatives,
                quantile_samples,
                tau_d,
                tau_w,
                seed,
                out,
            };
            print_json(&analyze::grad(&opts)?)
        }
        Command::Bench {
            split,
            losses,
            repetitions,
            negatives,
            dim,
            batch_size,
            lr,
            tau_d,
            tau_w,
            seed,
            out,
        } => {
            let opts = analyze::BenchOptions {
                split,
                losses,
                repetitions,
                negatives,
                dim,
                batch_size,
                lr,
                tau_d,
                tau_w,
                seed,
                out,
            };
            print_json(&analyze::bench(&opts)?)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
