//! Flat `key = value` run configuration.
//!
//! Keys carry a section prefix (`dataset.`, `train.`, `model.`,
//! `proposals.`, `eval.`, `ablate.`) except for the top-level `seed`,
//! `corpus`, `checkpoint` and `out`. Lists are comma separated. `#` starts
//! a comment. Unknown keys are errors.

use std::fmt::{self, Display, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use mgff_core::dataset::SyntheticSpec;
use mgff_core::eval::DEFAULT_THRESHOLDS;
use mgff_core::model::ModelConfig;
use mgff_core::training::TrainConfig;

/// Which training-free baseline to run next to (or instead of) the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Baseline {
    #[default]
    None,
    Chance,
    Frame,
}

impl Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Baseline::None => "none",
            Baseline::Chance => "chance",
            Baseline::Frame => "frame",
        })
    }
}

impl FromStr for Baseline {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Baseline::None),
            "chance" => Ok(Baseline::Chance),
            "frame" => Ok(Baseline::Frame),
            other => bail!("unknown baseline `{other}` (chance|frame|none)"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Seeds corpus generation, initialisation, sampling and the chance
    /// baseline.
    pub seed: u64,
    pub corpus: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    pub dataset: SyntheticSpec,
    pub train: TrainConfig,
    /// `input_dim` is taken from the corpus at run time.
    pub model: ModelConfig,
    pub thresholds: Vec<f64>,
    pub baseline: Baseline,
    pub ablate_layers: Vec<usize>,
    pub ablate_graphs: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let dataset = SyntheticSpec::default();
        RunConfig {
            seed: 0,
            corpus: None,
            checkpoint: None,
            out: PathBuf::from("out"),
            model: ModelConfig::new(dataset.feature_dim),
            dataset,
            train: TrainConfig::default(),
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            baseline: Baseline::None,
            ablate_layers: vec![1, 2, 3],
            ablate_graphs: vec![1, 2, 3],
        }
    }
}

fn list<T: FromStr>(v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    v.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|e| anyhow!("`{x}`: {e}")))
        .collect()
}

fn pair<T: FromStr + Copy>(v: &str) -> Result<(T, T)>
where
    T::Err: Display,
{
    match list::<T>(v)?[..] {
        [a, b] => Ok((a, b)),
        _ => bail!("expected two comma-separated values"),
    }
}

fn one<T: FromStr>(v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse::<T>().map_err(|e| anyhow!("`{v}`: {e}"))
}

fn join<T: Display>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let d = &mut self.dataset;
        let t = &mut self.train;
        let m = &mut self.model;
        let applied: Result<()> = (|| {
            match key {
                "seed" => self.seed = one(v)?,
                "corpus" => self.corpus = (!v.is_empty()).then(|| PathBuf::from(v)),
                "checkpoint" => self.checkpoint = (!v.is_empty()).then(|| PathBuf::from(v)),
                "out" => self.out = PathBuf::from(v),

                "dataset.num_classes" => d.num_classes = one(v)?,
                "dataset.subactions_per_class" => d.subactions_per_class = one(v)?,
                "dataset.feature_dim" => d.feature_dim = one(v)?,
                "dataset.video_length_range" => d.video_length_range = pair(v)?,
                "dataset.action_length_range" => d.action_length_range = pair(v)?,
                "dataset.noise_sigma" => d.noise_sigma = one(v)?,
                "dataset.permutation_probability" => d.permutation_probability = one(v)?,
                "dataset.speed_jitter_range" => d.speed_jitter_range = pair(v)?,
                "dataset.videos_per_class" => d.videos_per_class = one(v)?,
                "dataset.train_classes" => d.train_classes = one(v)?,
                "dataset.val_classes" => d.val_classes = one(v)?,
                "dataset.test_classes" => d.test_classes = one(v)?,

                "train.timesteps" => t.timesteps = one(v)?,
                "train.strides" => t.strides = list(v)?,
                "train.gamma" => t.gamma = one(v)?,
                "train.lambda" => t.lambda = one(v)?,
                "train.mu" => t.mu = one(v)?,
                "train.batch_size" => t.batch_size = one(v)?,
                "train.epochs" => t.epochs = one(v)?,
                "train.lr_triplet" => t.lr_triplet = one(v)?,
                "train.lr_regression" => t.lr_regression = one(v)?,
                "train.beta1" => t.beta1 = one(v)?,
                "train.beta2" => t.beta2 = one(v)?,
                "train.adam_eps" => t.adam_eps = one(v)?,
                "train.joint_regression" => t.joint_regression = one(v)?,
                "train.checkpoint_every" => t.checkpoint_every = one(v)?,

                "model.hidden_dim" => m.hidden_dim = one(v)?,
                "model.fusion_layers" => m.fusion_layers = one(v)?,
                "model.fusion_width" => m.fusion_width = one(v)?,
                "model.head_widths" => m.head_widths = list(v)?,
                "model.dropout" => m.dropout = one(v)?,
                "model.variant" => m.variant = v.parse().map_err(|e| anyhow!("{e}"))?,
                "model.share_lstm" => m.share_lstm = one(v)?,
                "model.bn_eps" => m.bn_eps = one(v)?,
                "model.bn_momentum" => m.bn_momentum = one(v)?,

                "proposals.window_fractions" => t.proposals.window_fractions = list(v)?,
                "proposals.stride_fraction" => t.proposals.stride_fraction = one(v)?,

                "eval.thresholds" => self.thresholds = list(v)?,
                "eval.baseline" => self.baseline = v.parse()?,

                "ablate.layers" => self.ablate_layers = list(v)?,
                "ablate.graphs" => self.ablate_graphs = list(v)?,

                _ => bail!("unknown key"),
            }
            Ok(())
        })();
        applied.with_context(|| format!("config key `{key}`"))
    }

    /// Parses a whole config file on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text, "config")?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{origin}: line {}: expected `key = value`", i + 1))?;
            self.set(key.trim(), value)
                .with_context(|| format!("{origin}: line {}", i + 1))?;
        }
        Ok(())
    }

    /// Every key with its resolved value; parsing it back reproduces
    /// `self` exactly.
    pub fn to_text(&self) -> String {
        let (d, t, m) = (&self.dataset, &self.train, &self.model);
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("corpus", path(&self.corpus));
        kv("checkpoint", path(&self.checkpoint));
        kv("out", self.out.display().to_string());

        kv("dataset.num_classes", d.num_classes.to_string());
        kv("dataset.subactions_per_class", d.subactions_per_class.to_string());
        kv("dataset.feature_dim", d.feature_dim.to_string());
        kv(
            "dataset.video_length_range",
            join(&[d.video_length_range.0, d.video_length_range.1]),
        );
        kv(
            "dataset.action_length_range",
            join(&[d.action_length_range.0, d.action_length_range.1]),
        );
        kv("dataset.noise_sigma", d.noise_sigma.to_string());
        kv(
            "dataset.permutation_probability",
            d.permutation_probability.to_string(),
        );
        kv(
            "dataset.speed_jitter_range",
            join(&[d.speed_jitter_range.0, d.speed_jitter_range.1]),
        );
        kv("dataset.videos_per_class", d.videos_per_class.to_string());
        kv("dataset.train_classes", d.train_classes.to_string());
        kv("dataset.val_classes", d.val_classes.to_string());
        kv("dataset.test_classes", d.test_classes.to_string());

        kv("train.timesteps", t.timesteps.to_string());
        kv("train.strides", join(&t.strides));
        kv("train.gamma", t.gamma.to_string());
        kv("train.lambda", t.lambda.to_string());
        kv("train.mu", t.mu.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.epochs", t.epochs.to_string());
        kv("train.lr_triplet", t.lr_triplet.to_string());
        kv("train.lr_regression", t.lr_regression.to_string());
        kv("train.beta1", t.beta1.to_string());
        kv("train.beta2", t.beta2.to_string());
        kv("train.adam_eps", t.adam_eps.to_string());
        kv("train.joint_regression", t.joint_regression.to_string());
        kv("train.checkpoint_every", t.checkpoint_every.to_string());

        kv("model.hidden_dim", m.hidden_dim.to_string());
        kv("model.fusion_layers", m.fusion_layers.to_string());
        kv("model.fusion_width", m.fusion_width.to_string());
        kv("model.head_widths", join(&m.head_widths));
        kv("model.dropout", m.dropout.to_string());
        kv("model.variant", m.variant.to_string());
        kv("model.share_lstm", m.share_lstm.to_string());
        kv("model.bn_eps", m.bn_eps.to_string());
        kv("model.bn_momentum", m.bn_momentum.to_string());

        kv("proposals.window_fractions", join(&t.proposals.window_fractions));
        kv(
            "proposals.stride_fraction",
            t.proposals.stride_fraction.to_string(),
        );

        kv("eval.thresholds", join(&self.thresholds));
        kv("eval.baseline", self.baseline.to_string());

        kv("ablate.layers", join(&self.ablate_layers));
        kv("ablate.graphs", join(&self.ablate_graphs));
        out
    }

    /// The seed drives every random stream of the run.
    pub fn seeded(&self) -> (SyntheticSpec, TrainConfig) {
        let mut dataset = self.dataset.clone();
        dataset.seed = self.seed;
        let mut train = self.train.clone();
        train.seed = self.seed;
        (dataset, train)
    }

    /// Model architecture for `input_dim`-dimensional features; the graph
    /// count always follows `train.strides`.
    pub fn model_for(&self, input_dim: usize) -> ModelConfig {
        let mut m = self.model.clone();
        m.input_dim = input_dim;
        m.graph_count = self.train.strides.len();
        m
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            bail!("config key `eval.thresholds`: at least one threshold required");
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(0.0..1.0).contains(*t)) {
            bail!("config key `eval.thresholds`: {t} outside [0, 1)");
        }
        if self.ablate_layers.is_empty() || self.ablate_graphs.contains(&0) || self.ablate_graphs.is_empty() {
            bail!("config keys `ablate.layers` / `ablate.graphs` need non-empty lists with graphs >= 1");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mgff_core::model::Variant;

    #[test]
    fn defaults_roundtrip_through_text() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn edited_values_roundtrip() {
        let mut cfg = RunConfig::default();
        cfg.set("train.strides", "1, 2").unwrap();
        cfg.set("model.variant", "cnn").unwrap();
        cfg.set("train.lr_triplet", "0.000123456789").unwrap();
        cfg.set("corpus", "/tmp/some corpus").unwrap();
        cfg.set("eval.baseline", "frame").unwrap();
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.train.strides, vec![1, 2]);
        assert_eq!(back.model.variant, Variant::Cnn);
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let err = RunConfig::parse("seed = 3\ntrain.epoch = 5\n").unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("line 2") && msg.contains("train.epoch"), "{msg}");
    }

    #[test]
    fn bad_value_names_the_key() {
        let err = RunConfig::parse("dataset.video_length_range = 10\n").unwrap_err();
        assert!(format!("{err:#}").contains("dataset.video_length_range"));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = RunConfig::parse("# header\n\nseed = 7 # trailing\n").unwrap();
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn graph_count_follows_strides() {
        let mut cfg = RunConfig::default();
        cfg.set("train.strides", "1,2").unwrap();
        let m = cfg.model_for(8);
        assert_eq!((m.input_dim, m.graph_count), (8, 2));
    }
}
