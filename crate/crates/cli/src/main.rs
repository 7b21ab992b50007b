use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use mgff_cli::RunConfig;

#[derive(Parser)]
#[command(
    name = "mgff",
    version,
    about = "Video-query moment retrieval with multi-graph feature fusion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic feature corpus into --out.
    GenData(Common),
    /// Train on a corpus; writes model.ckpt and loss_history.csv.
    Train(Common),
    /// Evaluate a checkpoint on the test split.
    Eval(Common),
    /// Run a training-free baseline (chance or frame).
    Baseline(Common),
    /// Train and evaluate over the fusion-layer × graph-count grid.
    Ablate(Common),
}

#[derive(Args)]
struct Common {
    /// `key = value` config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// graph | cnn
    #[arg(long)]
    variant: Option<String>,
    /// Comma-separated tIoU thresholds.
    #[arg(long)]
    thresholds: Option<String>,
    /// chance | frame | none
    #[arg(long)]
    baseline: Option<String>,
    /// Corpus directory or manifest.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_text(&text, &path.display().to_string())?;
        }
        let path = |p: &PathBuf| p.display().to_string();
        let flags = [
            ("seed", self.seed.map(|s| s.to_string())),
            ("out", self.out.as_ref().map(path)),
            ("model.variant", self.variant.clone()),
            ("eval.thresholds", self.thresholds.clone()),
            ("eval.baseline", self.baseline.clone()),
            ("corpus", self.corpus.as_ref().map(path)),
            ("checkpoint", self.checkpoint.as_ref().map(path)),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        for s in &self.sets {
            let (k, v) = s
                .split_once('=')
                .with_context(|| format!("--set `{s}`: expected KEY=VALUE"))?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => {
            let manifest = mgff_cli::gen_data(&c.resolve()?)?;
            println!("{}", manifest.display());
        }
        Command::Train(c) => {
            let ckpt = mgff_cli::train(&c.resolve()?)?;
            println!("{}", ckpt.display());
        }
        Command::Eval(c) => print!("{}", mgff_cli::eval(&c.resolve()?)?.summary_csv()),
        Command::Baseline(c) => print!("{}", mgff_cli::baseline(&c.resolve()?)?.summary_csv()),
        Command::Ablate(c) => {
            let cfg = c.resolve()?;
            let cells = mgff_cli::ablate(&cfg)?;
            print!("{}", mgff_cli::ablation_csv(&cfg.thresholds, &cells));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
