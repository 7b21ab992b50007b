//! Triplet and offset-regression training with two Adam optimizers.
//!
//! The triplet optimizer updates every parameter; the regression optimizer
//! only ever touches the regression head, so the offset loss never moves
//! the shared encoder unless [`TrainConfig::joint_regression`] is set.

mod adam;
mod losses;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::AdamState;
pub use losses::{
    encode_offsets, regression_loss, regression_loss_on_tape, triplet_loss, triplet_loss_on_tape,
    OffsetTarget,
};

use crate::dataset::{best_proposal_features, fmt_real, sample_triplet, Corpus, Split};
use crate::error::{Error, Result};
use crate::graphs::AdjacencySet;
use crate::model::{forward_with, is_regression_param, BnUpdate, Mode, ModelConfig, ModelParams, Weights};
use crate::numeric::{Matrix, Tape, Var};
use crate::proposals::ProposalSettings;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Rows every clip is resampled or padded to.
    pub timesteps: usize,
    /// One adjacency graph per stride.
    pub strides: Vec<usize>,
    pub gamma: f64,
    pub lambda: f64,
    /// Multiplier on the regression loss before its backward pass.
    pub mu: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_triplet: f64,
    pub lr_regression: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Also feed `μ·L_reg` to the triplet optimizer (all parameters).
    pub joint_regression: bool,
    /// Emit an intermediate checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub proposals: ProposalSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            timesteps: 16,
            strides: vec![1, 2, 3],
            gamma: 0.5,
            lambda: 5e-3,
            mu: 1.0,
            batch_size: 32,
            epochs: 200,
            lr_triplet: 1e-4,
            lr_regression: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            joint_regression: false,
            checkpoint_every: 0,
            proposals: ProposalSettings::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, why: &str| Err(Error::param(format!("train.{f}: {why}")));
        if self.timesteps == 0 {
            return bad("timesteps", "must be positive");
        }
        if self.strides.is_empty() || self.strides.contains(&0) {
            return bad("strides", "need at least one positive stride");
        }
        if !(self.gamma > 0.0) {
            return bad("gamma", "must be positive");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda", "must be non-negative");
        }
        if !(self.mu >= 0.0) {
            return bad("mu", "must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if !(self.lr_triplet > 0.0 && self.lr_regression > 0.0) {
            return bad("lr_triplet", "learning rates must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("beta1", "Adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps", "must be positive");
        }
        Ok(())
    }

    pub fn adjacency(&self) -> Result<AdjacencySet> {
        AdjacencySet::build(self.timesteps, &self.strides)
    }
}

/// Resampled clips of one batch of triplets.
#[derive(Clone, Debug, Default)]
pub struct TripletBatch {
    pub queries: Vec<Matrix>,
    pub positives: Vec<Matrix>,
    pub negatives: Vec<Matrix>,
    /// Offsets of each positive proposal against its ground truth.
    pub targets: Vec<OffsetTarget>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Both losses recorded on one tape.
pub struct Objective {
    /// Hinge sum over the batch plus `λ‖θ‖²`.
    pub triplet: Var,
    /// Mean L1 offset error on the positive pairs (without `μ`).
    pub regression: Var,
    pub bn_updates: Vec<BnUpdate>,
}

/// Records both losses for a batch.
///
/// Positive and negative pairs run as one `2B` forward pass (positives
/// first), so in training mode both share the same batch statistics.
pub fn objective(
    tape: &mut Tape,
    weights: Weights<'_>,
    adj: &AdjacencySet,
    batch: &TripletBatch,
    gamma: f64,
    lambda: f64,
    mode: Mode<'_>,
) -> Result<Objective> {
    let b = batch.len();
    if b == 0 || batch.positives.len() != b || batch.negatives.len() != b || batch.targets.len() != b {
        return Err(Error::param(
            "triplet batch members must be non-empty and equally long",
        ));
    }
    let queries: Vec<&Matrix> = batch.queries.iter().chain(&batch.queries).collect();
    let proposals: Vec<&Matrix> = batch.positives.iter().chain(&batch.negatives).collect();
    let out = forward_with(tape, weights, adj, &queries, &proposals, mode)?;
    let s_pos = tape.gather_rows(out.scores, (0..b).collect::<Vec<_>>())?;
    let s_neg = tape.gather_rows(out.scores, (b..2 * b).collect::<Vec<_>>())?;
    let triplet = triplet_loss_on_tape(tape, weights.params, s_pos, s_neg, gamma, lambda)?;
    let pos_offsets = tape.gather_rows(out.offsets, (0..b).collect::<Vec<_>>())?;
    let regression = regression_loss_on_tape(tape, pos_offsets, &batch.targets)?;
    Ok(Objective {
        triplet,
        regression,
        bn_updates: out.bn_updates,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLosses {
    pub epoch: usize,
    pub mean_triplet: f64,
    pub mean_regression: f64,
}

pub struct TrainResult {
    pub model: ModelParams,
    pub history: Vec<EpochLosses>,
}

/// `epoch,mean_triplet_loss,mean_regression_loss`, epochs counted from 1.
pub fn loss_history_csv(history: &[EpochLosses]) -> String {
    let mut out = String::from("epoch,mean_triplet_loss,mean_regression_loss\n");
    for e in history {
        let _ = write!(out, "{},", e.epoch);
        fmt_real(&mut out, e.mean_triplet);
        out.push(',');
        fmt_real(&mut out, e.mean_regression);
        out.push('\n');
    }
    out
}

struct Prepared {
    features: Matrix,
    target: OffsetTarget,
}

/// Trains a freshly initialised model; see [`train_with_checkpoints`].
pub fn train(config: &TrainConfig, model_config: ModelConfig, corpus: &Corpus) -> Result<TrainResult> {
    train_with_checkpoints(config, model_config, corpus, |_, _| Ok(()))
}

/// Runs the epoch loop. `on_checkpoint(epoch, model)` fires every
/// `checkpoint_every` epochs; the final model is returned rather than
/// emitted.
///
/// All randomness (initialisation, triplet sampling, dropout) comes from a
/// single ChaCha stream seeded with `config.seed`.
pub fn train_with_checkpoints(
    config: &TrainConfig,
    model_config: ModelConfig,
    corpus: &Corpus,
    mut on_checkpoint: impl FnMut(usize, &ModelParams) -> Result<()>,
) -> Result<TrainResult> {
    config.validate()?;
    if model_config.graph_count != config.strides.len() {
        return Err(Error::param(format!(
            "model.graph_count is {} but train.strides lists {} graphs",
            model_config.graph_count,
            config.strides.len()
        )));
    }
    if corpus.feature_dim() != Some(model_config.input_dim) {
        return Err(Error::param(format!(
            "model.input_dim is {} but corpus features are {:?}-dimensional",
            model_config.input_dim,
            corpus.feature_dim()
        )));
    }
    let adj = config.adjacency()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = ModelParams::init(model_config, &mut rng)?;
    let mut adam_triplet = AdamState::new(config.lr_triplet, config.beta1, config.beta2, config.adam_eps);
    let mut adam_regression =
        AdamState::new(config.lr_regression, config.beta1, config.beta2, config.adam_eps);

    let train_videos = corpus.video_indices(Split::Train);
    let batches = (train_videos.len() / config.batch_size).max(1);
    let mut cache: BTreeMap<usize, Prepared> = BTreeMap::new();
    let mut prepared = |idx: usize| -> Result<(Matrix, OffsetTarget)> {
        if let Some(p) = cache.get(&idx) {
            return Ok((p.features.clone(), p.target));
        }
        let video = &corpus.videos[idx];
        let (segment, features) = best_proposal_features(video, &config.proposals, config.timesteps)?;
        let target = encode_offsets(segment, video.annotations[0])?;
        cache.insert(
            idx,
            Prepared {
                features: features.clone(),
                target,
            },
        );
        Ok((features, target))
    };

    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let (mut sum_tri, mut sum_reg) = (0.0, 0.0);
        for _ in 0..batches {
            let mut batch = TripletBatch::default();
            for _ in 0..config.batch_size {
                let t = sample_triplet(corpus, config.timesteps, &mut rng)?;
                let (pos, target) = prepared(t.positive)?;
                let (neg, _) = prepared(t.negative)?;
                batch.queries.push(t.query);
                batch.positives.push(pos);
                batch.negatives.push(neg);
                batch.targets.push(target);
            }

            let mut tape = Tape::new();
            let weights = Weights {
                config: &model.config,
                params: &model.params,
                buffers: &model.buffers,
            };
            let obj = objective(
                &mut tape,
                weights,
                &adj,
                &batch,
                config.gamma,
                config.lambda,
                Mode::Train(&mut rng),
            )?;
            let l_tri = tape.value(obj.triplet).item();
            let l_reg = tape.value(obj.regression).item();
            if !l_tri.is_finite() || !l_reg.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("triplet loss {l_tri}, regression loss {l_reg}"),
                });
            }
            sum_tri += l_tri;
            sum_reg += l_reg;

            let seed = Matrix::scalar(1.0);
            let reg_scaled = tape.scale(obj.regression, config.mu);
            model.params.zero_grads();
            if config.joint_regression {
                let total = tape.add(obj.triplet, reg_scaled)?;
                tape.backward(total, &seed, &mut model.params)?;
            } else {
                tape.backward(obj.triplet, &seed, &mut model.params)?;
            }
            adam_triplet.step(&mut model.params, |_| true)?;

            model.params.zero_grads();
            tape.backward(reg_scaled, &seed, &mut model.params)?;
            adam_regression.step(&mut model.params, is_regression_param)?;
            model.apply_bn_updates(&obj.bn_updates)?;
        }
        let losses = EpochLosses {
            epoch,
            mean_triplet: sum_tri / batches as f64,
            mean_regression: sum_reg / batches as f64,
        };
        log::debug!(
            "epoch {epoch}: triplet {:.6} regression {:.6}",
            losses.mean_triplet,
            losses.mean_regression
        );
        history.push(losses);
        if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
            on_checkpoint(epoch, &model)?;
        }
    }
    model.params.zero_grads();
    Ok(TrainResult { model, history })
}
