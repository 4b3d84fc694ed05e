use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use takedown_core::corpus::{ingest_document, tokenize, DocumentRole};
use takedown_core::decode::{NGramFilter, DEFAULT_FP_RATE, DEFAULT_NGRAM_N};
use takedown_core::experiment::{
    evaluate_checkpoint, report_emit, resolve, run_dir_of, run_experiment, ExperimentConfig, RunStatus,
};
use takedown_core::unlearn::Registry;

/// Sequential takedown experiments on a byte-level language model.
#[derive(Parser)]
#[command(name = "takedown", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Memorize, unlearn step by step, and write checkpoints and metrics.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Re-score a checkpoint at one time step of the config's schedule.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Time step whose D_f, D_prev and D_nor are scored.
        #[arg(long, default_value_t = 1)]
        t: usize,
        /// Vanilla checkpoint for the ability proxy.
        #[arg(long)]
        vanilla: Option<PathBuf>,
        /// Also write the metric report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write tradeoff.csv for a run directory and print the summary table.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Build a MemFree n-gram filter from book files.
    FilterBuild {
        /// Book files; the config's forget books are used when omitted.
        #[arg(long, num_args = 1..)]
        books: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ngram_n: Option<usize>,
        #[arg(long)]
        fp_rate: Option<f64>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    algorithm: Option<String>,
    /// Unlearning learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Unlearning epochs per time step.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// Also evaluate with the MemFree guard.
    #[arg(long)]
    memfree: bool,
    /// Load the vanilla model instead of training it.
    #[arg(long)]
    vanilla_checkpoint: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let text = std::fs::read_to_string(&self.config)
            .with_context(|| format!("reading {}", self.config.display()))?;
        let mut cfg = ExperimentConfig::from_json(&text)?;
        let base = self.config.parent().map(Path::to_path_buf).unwrap_or_default();
        if let Some(d) = &self.output_dir {
            cfg.output_dir = absolute(d)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(a) = &self.algorithm {
            cfg.unlearn.algorithm = a.clone();
        }
        if let Some(lr) = self.lr {
            cfg.unlearn.lr = lr;
        }
        if let Some(e) = self.epochs {
            cfg.unlearn.epochs = e;
        }
        if self.steps.is_some() {
            cfg.steps = self.steps;
        }
        if self.memfree {
            cfg.memfree.enabled = true;
        }
        if let Some(p) = &self.vanilla_checkpoint {
            cfg.memorize.checkpoint = Some(absolute(p)?);
        }
        cfg.validate(&base, &Registry::builtin())?;
        Ok((cfg, base))
    }
}

/// Paths given on the command line are relative to the working directory.
fn absolute(p: &Path) -> Result<PathBuf> {
    Ok(std::path::absolute(p)?)
}

fn run(config: &ConfigArgs) -> Result<ExitCode> {
    let (cfg, base) = config.load()?;
    let manifest = run_experiment(&cfg, &base, &Registry::builtin())?;
    let run_dir = run_dir_of(&cfg, &base);
    if !manifest.steps.is_empty() {
        print!("{}", report_emit(&run_dir)?);
    }
    println!("run directory: {}", run_dir.display());
    match manifest.status {
        RunStatus::Failed { message } => {
            eprintln!("run failed: {message}");
            Ok(ExitCode::FAILURE)
        }
        _ => Ok(ExitCode::SUCCESS),
    }
}

fn filter_build(
    books: &[PathBuf],
    config: Option<&Path>,
    out: &Path,
    ngram_n: Option<usize>,
    fp_rate: Option<f64>,
) -> Result<()> {
    let (paths, n, p) = match config {
        Some(c) => {
            let (cfg, base) = ExperimentConfig::load(c)?;
            let paths = if books.is_empty() {
                cfg.corpus.forget_books.iter().map(|b| resolve(&base, b)).collect()
            } else {
                books.to_vec()
            };
            (paths, cfg.memfree.ngram_n, cfg.memfree.fp_rate)
        }
        None => (books.to_vec(), DEFAULT_NGRAM_N, DEFAULT_FP_RATE),
    };
    if paths.is_empty() {
        bail!("no books given; pass --books or --config");
    }
    let n = ngram_n.unwrap_or(n);
    let p = fp_rate.unwrap_or(p);
    let sequences = paths
        .iter()
        .map(|b| Ok(tokenize(&ingest_document(b, DocumentRole::ForgetCandidate)?.text)))
        .collect::<Result<Vec<_>>>()?;
    let expected: usize = sequences.iter().map(|s| s.len().saturating_sub(n - 1)).sum();
    let mut filter = NGramFilter::with_capacity(n, expected.max(1), p)?;
    for s in &sequences {
        filter.insert_sequence(s.as_slice());
    }
    filter.save(out)?;
    println!(
        "filter: {} n-grams from {} books, n={}, m={} bits, k={} -> {}",
        filter.items_inserted(),
        paths.len(),
        n,
        filter.num_bits(),
        filter.num_hashes(),
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => run(&config),
        Command::Eval {
            config,
            checkpoint,
            t,
            vanilla,
            out,
        } => (|| {
            let (cfg, base) = config.load()?;
            let report = evaluate_checkpoint(&cfg, &base, &checkpoint, t, vanilla.as_deref())?;
            if let Some(o) = &out {
                report.write_json(o)?;
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        })(),
        Command::Report { run_dir } => report_emit(&run_dir)
            .map(|table| {
                print!("{table}");
                ExitCode::SUCCESS
            })
            .map_err(Into::into),
        Command::FilterBuild {
            books,
            config,
            out,
            ngram_n,
            fp_rate,
        } => filter_build(&books, config.as_deref(), &out, ngram_n, fp_rate).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
