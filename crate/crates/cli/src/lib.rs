//! Reproducible runs: corpus generation, training, evaluation, baselines
//! and the layer/graph ablation grid. Every command writes its resolved
//! configuration to `<out>/config.txt`.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use mgff_core::dataset::{generate_synthetic_corpus, load_corpus, save_corpus, Corpus};
use mgff_core::eval::{evaluate, evaluate_model, ChanceRetriever, EvalReport, FrameRetriever, Retriever};
use mgff_core::model::{load_checkpoint, save_checkpoint};
use mgff_core::training::{loss_history_csv, train_with_checkpoints, TrainResult};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{Baseline, RunConfig};

pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "loss_history.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const QUERIES_FILE: &str = "queries.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_config(cfg: &RunConfig) -> Result<()> {
    write(&cfg.out.join(CONFIG_FILE), &cfg.to_text())
}

fn corpus_of(cfg: &RunConfig) -> Result<Corpus> {
    let path = cfg
        .corpus
        .as_ref()
        .ok_or_else(|| anyhow!("no corpus given (set `corpus` or pass --corpus)"))?;
    load_corpus(path).with_context(|| format!("loading corpus {}", path.display()))
}

fn input_dim(corpus: &Corpus) -> Result<usize> {
    corpus
        .feature_dim()
        .ok_or_else(|| anyhow!("corpus has no videos"))
}

/// Generates the synthetic corpus into `out`. Returns the manifest path.
pub fn gen_data(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let (spec, _) = cfg.seeded();
    let corpus = generate_synthetic_corpus(&spec)?;
    let manifest = save_corpus(&corpus, &cfg.out)?;
    write_config(cfg)?;
    log::info!("{} videos written to {}", corpus.videos.len(), cfg.out.display());
    Ok(manifest)
}

fn train_on(cfg: &RunConfig, corpus: &Corpus, checkpoint_dir: Option<&Path>) -> Result<TrainResult> {
    let (_, train_cfg) = cfg.seeded();
    let model_cfg = cfg.model_for(input_dim(corpus)?);
    Ok(train_with_checkpoints(
        &train_cfg,
        model_cfg,
        corpus,
        |epoch, model| {
            if let Some(dir) = checkpoint_dir {
                save_checkpoint(model, dir.join(format!("epoch_{epoch:05}.ckpt")))?;
            }
            Ok(())
        },
    )?)
}

/// Trains on the corpus' train split and writes the checkpoint, the loss
/// history (and any intermediate checkpoints) under `out`.
pub fn train(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let corpus = corpus_of(cfg)?;
    let ckpt_dir = cfg.out.join("checkpoints");
    let dir = if cfg.train.checkpoint_every > 0 {
        &ckpt_dir
    } else {
        &cfg.out
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let result = train_on(cfg, &corpus, Some(&ckpt_dir))?;
    let path = cfg.out.join(CHECKPOINT_FILE);
    save_checkpoint(&result.model, &path)?;
    write(&cfg.out.join(LOSS_FILE), &loss_history_csv(&result.history))?;
    write_config(cfg)?;
    if let (Some(first), Some(last)) = (result.history.first(), result.history.last()) {
        log::info!(
            "triplet loss {:.4} -> {:.4} over {} epochs",
            first.mean_triplet,
            last.mean_triplet,
            result.history.len()
        );
    }
    Ok(path)
}

fn run_baseline(cfg: &RunConfig, corpus: &Corpus, which: Baseline) -> Result<EvalReport> {
    let mut retriever: Box<dyn Retriever> = match which {
        Baseline::Chance => Box::new(ChanceRetriever(ChaCha8Rng::seed_from_u64(cfg.seed))),
        Baseline::Frame => Box::new(FrameRetriever),
        Baseline::None => bail!("no baseline selected"),
    };
    let mut report = evaluate(corpus, retriever.as_mut(), &cfg.train.proposals, &cfg.thresholds)?;
    report.meta.seed = Some(cfg.seed);
    Ok(report)
}

/// `method,threshold,map` rows of several reports.
pub fn combined_summary(reports: &[(String, &EvalReport)]) -> String {
    let mut out = String::from("method,threshold,map\n");
    for (name, report) in reports {
        for line in report.summary_csv().lines().skip(1) {
            let _ = writeln!(out, "{name},{line}");
        }
    }
    out
}

fn write_baseline(cfg: &RunConfig, which: Baseline, report: &EvalReport) -> Result<()> {
    write(
        &cfg.out.join(format!("baseline_{which}.csv")),
        &report.summary_csv(),
    )?;
    write(
        &cfg.out.join(format!("baseline_{which}_queries.csv")),
        &report.details_csv(),
    )
}

/// Evaluates a checkpoint on the test split, plus the configured baseline.
pub fn eval(cfg: &RunConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let corpus = corpus_of(cfg)?;
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| anyhow!("no checkpoint given (set `checkpoint` or pass --checkpoint)"))?;
    let model = load_checkpoint(path, cfg.model_for(input_dim(&corpus)?))
        .with_context(|| format!("loading checkpoint {}", path.display()))?;
    let (_, train_cfg) = cfg.seeded();
    let adj = train_cfg.adjacency()?;
    let mut report = evaluate_model(&corpus, &model, &adj, &train_cfg.proposals, &cfg.thresholds)?;
    report.meta.seed = Some(cfg.seed);
    write(&cfg.out.join(REPORT_FILE), &report.summary_csv())?;
    write(&cfg.out.join(QUERIES_FILE), &report.details_csv())?;

    let mut rows = vec![("model".to_string(), &report)];
    let baseline = match cfg.baseline {
        Baseline::None => None,
        which => Some((which, run_baseline(cfg, &corpus, which)?)),
    };
    if let Some((which, b)) = &baseline {
        write_baseline(cfg, *which, b)?;
        rows.push((which.to_string(), b));
    }
    write(&cfg.out.join(SUMMARY_FILE), &combined_summary(&rows))?;
    write_config(cfg)?;
    Ok(report)
}

/// Runs only a training-free baseline (`eval.baseline`, default frame).
pub fn baseline(cfg: &RunConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let which = match cfg.baseline {
        Baseline::None => Baseline::Frame,
        b => b,
    };
    let corpus = corpus_of(cfg)?;
    let report = run_baseline(cfg, &corpus, which)?;
    write_baseline(cfg, which, &report)?;
    write(
        &cfg.out.join(SUMMARY_FILE),
        &combined_summary(&[(which.to_string(), &report)]),
    )?;
    let mut resolved = cfg.clone();
    resolved.baseline = which;
    write_config(&resolved)?;
    Ok(report)
}

/// One cell of the ablation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub layers: usize,
    pub graphs: usize,
    pub map: Vec<f64>,
}

/// Header plus one row per cell: `n,k,map@<t>…`.
pub fn ablation_csv(thresholds: &[f64], cells: &[AblationCell]) -> String {
    let mut out = String::from("n,k");
    for t in thresholds {
        let _ = write!(out, ",map@{t}");
    }
    out.push('\n');
    for c in cells {
        let _ = write!(out, "{},{}", c.layers, c.graphs);
        for m in &c.map {
            let _ = write!(out, ",{m:.16e}");
        }
        out.push('\n');
    }
    out
}

/// Trains and evaluates every `(n, k)` with `strides = [1..=k]`, all cells
/// sharing the seed. Each cell's report lands in `out/n<n>_k<k>/`.
pub fn ablate(cfg: &RunConfig) -> Result<Vec<AblationCell>> {
    cfg.validate()?;
    let corpus = corpus_of(cfg)?;
    let mut cells = Vec::new();
    for &n in &cfg.ablate_layers {
        for &k in &cfg.ablate_graphs {
            let mut cell = cfg.clone();
            cell.model.fusion_layers = n;
            cell.train.strides = (1..=k).collect();
            cell.out = cfg.out.join(format!("n{n}_k{k}"));
            cell.validate()?;
            log::info!("ablation cell n={n} k={k}");
            let result = train_on(&cell, &corpus, None).with_context(|| format!("cell n={n} k={k}"))?;
            let (_, train_cfg) = cell.seeded();
            let adj = train_cfg.adjacency()?;
            let report = evaluate_model(
                &corpus,
                &result.model,
                &adj,
                &train_cfg.proposals,
                &cell.thresholds,
            )?;
            write(&cell.out.join(REPORT_FILE), &report.summary_csv())?;
            save_checkpoint(&result.model, cell.out.join(CHECKPOINT_FILE))?;
            write(&cell.out.join(QUERIES_FILE), &report.details_csv())?;
            cells.push(AblationCell {
                layers: n,
                graphs: k,
                map: report.map,
            });
        }
    }
    write(
        &cfg.out.join(ABLATION_FILE),
        &ablation_csv(&cfg.thresholds, &cells),
    )?;
    write_config(cfg)?;
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_csv_shape() {
        let cells = vec![
            AblationCell {
                layers: 1,
                graphs: 2,
                map: vec![0.5, 0.25],
            },
            AblationCell {
                layers: 2,
                graphs: 3,
                map: vec![1.0, 0.0],
            },
        ];
        let csv = ablation_csv(&[0.5, 0.7], &cells);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "n,k,map@0.5,map@0.7");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("2,3,1.0000000000000000e0,"));
    }
}
