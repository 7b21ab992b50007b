//! The retrieval network: two LSTM encoders, stacked multi-graph fusion
//! layers, global average pooling and the score / regression heads.

mod checkpoint;
mod fusion;
mod heads;
mod lstm;

use std::collections::BTreeMap;

use rand::{Rng, RngCore};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use fusion::{fusion_forward, fusion_layer, FusionLayerParams, Variant};
pub use heads::{head_forward, BnUpdate, HeadParams, NormMode};
pub use lstm::{lstm_encode, LstmParams};

use crate::error::{Error, Result};
use crate::graphs::AdjacencySet;
use crate::numeric::{Axis, Matrix, ParamStore, Tape, Var};

/// Prefix shared by every regression-head parameter.
pub const REGRESSION_PREFIX: &str = "regression.";

pub fn is_regression_param(name: &str) -> bool {
    name.starts_with(REGRESSION_PREFIX)
}

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub fusion_layers: usize,
    /// Width of every fusion layer's projection, graph and output features.
    pub fusion_width: usize,
    /// Number of adjacency graphs per fusion layer.
    pub graph_count: usize,
    /// Hidden widths of both heads (between the pooled feature and the output).
    pub head_widths: Vec<usize>,
    pub dropout: f64,
    pub variant: Variant,
    /// Use one LSTM for both query and proposal streams.
    pub share_lstm: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl ModelConfig {
    /// Defaults for `d`-dimensional input features: widths stay `d`, heads
    /// narrow to `d/2` and `d/4`, two fusion layers over three graphs.
    pub fn new(input_dim: usize) -> Self {
        ModelConfig {
            input_dim,
            hidden_dim: input_dim,
            fusion_layers: 2,
            fusion_width: input_dim,
            graph_count: 3,
            head_widths: vec![(input_dim / 2).max(1), (input_dim / 4).max(1)],
            dropout: 0.2,
            variant: Variant::Graph,
            share_lstm: false,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, why: &str| Err(Error::param(format!("model.{f}: {why}")));
        if self.input_dim == 0 || self.hidden_dim == 0 || self.fusion_width == 0 {
            return bad("input_dim", "all widths must be positive");
        }
        if self.graph_count == 0 {
            return bad("graph_count", "must be positive");
        }
        if self.head_widths.contains(&0) {
            return bad("head_widths", "widths must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", "must lie in [0, 1)");
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("bn_eps", "bn_eps > 0 and bn_momentum in [0, 1] required");
        }
        Ok(())
    }

    /// Feature width after the last fusion layer.
    pub fn output_width(&self) -> usize {
        if self.fusion_layers == 0 {
            self.hidden_dim
        } else {
            self.fusion_width
        }
    }

    pub fn lstm_q(&self) -> LstmParams {
        LstmParams::new("lstm_q", self.input_dim, self.hidden_dim)
    }

    pub fn lstm_p(&self) -> LstmParams {
        if self.share_lstm {
            self.lstm_q()
        } else {
            LstmParams::new("lstm_p", self.input_dim, self.hidden_dim)
        }
    }

    pub fn fusion(&self) -> Vec<FusionLayerParams> {
        (0..self.fusion_layers)
            .map(|l| FusionLayerParams {
                prefix: format!("fusion.{l}"),
                d_in: if l == 0 {
                    self.hidden_dim
                } else {
                    self.fusion_width
                },
                d_mid: self.fusion_width,
                d_gc: self.fusion_width,
                d_out: self.fusion_width,
                graphs: self.graph_count,
            })
            .collect()
    }

    fn head(&self, prefix: &str, out: usize, squash: bool) -> HeadParams {
        let mut widths = vec![self.output_width()];
        widths.extend(&self.head_widths);
        widths.push(out);
        HeadParams {
            prefix: prefix.to_owned(),
            widths,
            squash_output: squash,
        }
    }

    pub fn score_head(&self) -> HeadParams {
        self.head("score", 1, true)
    }

    pub fn regression_head(&self) -> HeadParams {
        self.head("regression", 2, false)
    }

    /// Every trainable matrix as `(name, shape, fan_in)`.
    fn param_shapes(&self) -> Vec<(String, (usize, usize), usize)> {
        let mut v = self.lstm_q().shapes();
        if !self.share_lstm {
            v.extend(self.lstm_p().shapes());
        }
        for layer in self.fusion() {
            v.extend(layer.shapes());
        }
        v.extend(self.score_head().shapes());
        v.extend(self.regression_head().shapes());
        v
    }

    fn buffer_shapes(&self) -> Vec<(String, usize)> {
        let mut v = self.score_head().buffer_shapes();
        v.extend(self.regression_head().buffer_shapes());
        v
    }

    /// Running means at 0, running variances at 1.
    fn initial_buffers(&self) -> BTreeMap<String, Matrix> {
        self.buffer_shapes()
            .into_iter()
            .map(|(name, w)| {
                let fill = if name.ends_with(".bn_var") { 1.0 } else { 0.0 };
                (name, Matrix::filled(1, w, fill))
            })
            .collect()
    }
}

/// Trainable parameters plus batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// Running means (init 0) and variances (init 1), keyed `<stage>.bn_mean`
    /// / `<stage>.bn_var`. Not trainable.
    pub buffers: BTreeMap<String, Matrix>,
}

impl ModelParams {
    /// Weights uniform in `±1/√fan_in`; batch-norm scale 1, shift 0.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, (r, c), fan_in) in config.param_shapes() {
            let m = if name.ends_with(".bn_scale") {
                Matrix::filled(r, c, 1.0)
            } else if name.ends_with(".bn_shift") {
                Matrix::zeros(r, c)
            } else {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let data = (0..r * c).map(|_| rng.random_range(-bound..=bound)).collect();
                Matrix::from_vec(r, c, data)?
            };
            params.insert(name, m)?;
        }
        let buffers = config.initial_buffers();
        Ok(ModelParams {
            config,
            params,
            buffers,
        })
    }

    /// Same architecture with every parameter zeroed. Running variances stay
    /// at 1 so evaluation-mode batch-norm remains well defined.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, (r, c), _) in config.param_shapes() {
            params.insert(name, Matrix::zeros(r, c))?;
        }
        let buffers = config.initial_buffers();
        Ok(ModelParams {
            config,
            params,
            buffers,
        })
    }

    /// Folds observed batch statistics into the running averages.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) -> Result<()> {
        let m = self.config.bn_momentum;
        for u in updates {
            for (suffix, batch) in [("bn_mean", &u.mean), ("bn_var", &u.var)] {
                let name = format!("{}.{suffix}", u.stage);
                let run = self
                    .buffers
                    .get_mut(&name)
                    .ok_or_else(|| Error::Internal(format!("unknown buffer `{name}`")))?;
                for (r, b) in run.as_mut_slice().iter_mut().zip(batch.as_slice()) {
                    *r = (1.0 - m) * *r + m * b;
                }
            }
        }
        Ok(())
    }

    /// Sum of squares over all trainable parameters.
    pub fn l2_norm_sq(&self) -> f64 {
        self.params.iter().map(|(_, p)| p.value.sum_squares()).sum()
    }
}

/// Training mode turns on dropout and batch statistics.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

impl Mode<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Tape handles produced by one batched forward pass.
pub struct ForwardOutput {
    /// `B×1` similarity scores in `[-1, 1]`.
    pub scores: Var,
    /// `B×2` offsets `(T_c, T_l)`.
    pub offsets: Var,
    /// `B×d_L` pooled pair features.
    pub pooled: Var,
    /// Batch statistics to fold into the running averages (training only).
    pub bn_updates: Vec<BnUpdate>,
}

/// Stacks per-pair query and proposal blocks: pair `b` occupies rows
/// `b·2T .. (b+1)·2T`, query rows first.
pub fn build_h0(tape: &mut Tape, hq: Var, hp: Var, t: usize) -> Result<Var> {
    let (qr, pr) = (tape.value(hq).rows(), tape.value(hp).rows());
    if qr != pr || t == 0 || qr % t != 0 {
        return Err(Error::Shape {
            op: "build_h0",
            left: tape.value(hq).shape(),
            right: tape.value(hp).shape(),
        });
    }
    let both = tape.concat(hq, hp, Axis::Rows)?;
    let pairs = qr / t;
    let order: Vec<usize> = (0..pairs)
        .flat_map(|b| (b * t..(b + 1) * t).chain(qr + b * t..qr + (b + 1) * t))
        .collect();
    tape.gather_rows(both, order)
}

/// Scores `B` (query, proposal) pairs; both inputs are `T×d`.
///
/// In training mode dropout is applied to both LSTM outputs, and the heads
/// normalize with batch statistics when `B >= 2`. A single-pair training
/// batch falls back to the running statistics.
pub fn forward_batch(
    tape: &mut Tape,
    model: &ModelParams,
    adj: &AdjacencySet,
    queries: &[&Matrix],
    proposals: &[&Matrix],
    mode: Mode<'_>,
) -> Result<ForwardOutput> {
    let weights = Weights {
        config: &model.config,
        params: &model.params,
        buffers: &model.buffers,
    };
    forward_with(tape, weights, adj, queries, proposals, mode)
}

/// Borrowed view of a model's parts, so a forward pass can run against a
/// parameter store that is not owned by a [`ModelParams`] (e.g. while
/// finite-differencing).
#[derive(Clone, Copy)]
pub struct Weights<'a> {
    pub config: &'a ModelConfig,
    pub params: &'a ParamStore,
    pub buffers: &'a BTreeMap<String, Matrix>,
}

/// [`forward_batch`] on borrowed parts.
pub fn forward_with(
    tape: &mut Tape,
    weights: Weights<'_>,
    adj: &AdjacencySet,
    queries: &[&Matrix],
    proposals: &[&Matrix],
    mode: Mode<'_>,
) -> Result<ForwardOutput> {
    let cfg = weights.config;
    let t = adj.timesteps();
    if queries.is_empty() || queries.len() != proposals.len() {
        return Err(Error::param(format!(
            "forward_batch needs matching non-empty query/proposal lists ({} vs {})",
            queries.len(),
            proposals.len()
        )));
    }
    if let Some(bad) = queries.iter().chain(proposals).find(|m| m.rows() != t) {
        return Err(Error::Shape {
            op: "forward_batch",
            left: bad.shape(),
            right: (t, cfg.input_dim),
        });
    }
    if adj.len() != cfg.graph_count {
        return Err(Error::param(format!(
            "model expects {} graphs, adjacency set has {}",
            cfg.graph_count,
            adj.len()
        )));
    }
    let store = weights.params;
    let training = mode.is_training();
    let (hq, hp) = match mode {
        Mode::Train(rng) if cfg.dropout > 0.0 => {
            let hq = lstm_encode(
                tape,
                store,
                &cfg.lstm_q(),
                queries,
                Some((cfg.dropout, &mut *rng)),
            )?;
            let hp = lstm_encode(tape, store, &cfg.lstm_p(), proposals, Some((cfg.dropout, rng)))?;
            (hq, hp)
        }
        _ => (
            lstm_encode(tape, store, &cfg.lstm_q(), queries, None)?,
            lstm_encode(tape, store, &cfg.lstm_p(), proposals, None)?,
        ),
    };
    let h0 = build_h0(tape, hq, hp, t)?;
    let fused = fusion_forward(tape, store, h0, adj, &cfg.fusion(), cfg.variant)?;
    let pooled = tape.block_mean_rows(fused, 2 * t)?;

    let norm = if training && queries.len() >= 2 {
        NormMode::Batch
    } else {
        NormMode::Running
    };
    let mut bn_updates = Vec::new();
    let scores = head_forward(
        tape,
        store,
        weights.buffers,
        pooled,
        &cfg.score_head(),
        norm,
        cfg.bn_eps,
        &mut bn_updates,
    )?;
    let offsets = head_forward(
        tape,
        store,
        weights.buffers,
        pooled,
        &cfg.regression_head(),
        norm,
        cfg.bn_eps,
        &mut bn_updates,
    )?;
    Ok(ForwardOutput {
        scores,
        offsets,
        pooled,
        bn_updates,
    })
}

/// Score and offsets `(s, (T_c, T_l))` of a single pair.
pub fn forward_pair(
    q: &Matrix,
    p: &Matrix,
    model: &ModelParams,
    adj: &AdjacencySet,
    mode: Mode<'_>,
) -> Result<(f64, (f64, f64))> {
    let mut tape = Tape::new();
    let out = forward_batch(&mut tape, model, adj, &[q], &[p], mode)?;
    let s = tape.value(out.scores).item();
    let o = tape.value(out.offsets);
    Ok((s, (o.get(0, 0), o.get(0, 1))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> ModelConfig {
        let mut c = ModelConfig::new(4);
        c.graph_count = 2;
        c
    }

    fn random_clip(t: usize, d: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(t, d, (0..t * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn zero_model_scores_zero() {
        let model = ModelParams::zeroed(small_config()).unwrap();
        let adj = AdjacencySet::build(3, &[1, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (q, p) = (random_clip(3, 4, &mut rng), random_clip(3, 4, &mut rng));
        assert_eq!(
            forward_pair(&q, &p, &model, &adj, Mode::Eval).unwrap(),
            (0.0, (0.0, 0.0))
        );
    }

    #[test]
    fn scores_bounded_and_eval_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = ModelParams::init(small_config(), &mut rng).unwrap();
        let adj = AdjacencySet::build(5, &[1, 3]).unwrap();
        for _ in 0..10 {
            let (q, p) = (random_clip(5, 4, &mut rng), random_clip(5, 4, &mut rng));
            let a = forward_pair(&q, &p, &model, &adj, Mode::Eval).unwrap();
            let b = forward_pair(&q, &p, &model, &adj, Mode::Eval).unwrap();
            assert!(a.0.abs() <= 1.0);
            assert_eq!(a.0.to_bits(), b.0.to_bits());
            assert_eq!(a.1 .0.to_bits(), b.1 .0.to_bits());
            assert_eq!(a.1 .1.to_bits(), b.1 .1.to_bits());
        }
    }

    #[test]
    fn training_mode_reports_batch_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = ModelParams::init(small_config(), &mut rng).unwrap();
        let adj = AdjacencySet::build(4, &[1, 2]).unwrap();
        let clips: Vec<Matrix> = (0..6).map(|_| random_clip(4, 4, &mut rng)).collect();
        let (qs, ps): (Vec<&Matrix>, Vec<&Matrix>) =
            (clips[..3].iter().collect(), clips[3..].iter().collect());
        let mut tape = Tape::new();
        let out = forward_batch(&mut tape, &model, &adj, &qs, &ps, Mode::Train(&mut rng)).unwrap();
        // two batch-norm stages per head, two heads
        assert_eq!(out.bn_updates.len(), 4);
        assert_eq!(tape.value(out.scores).shape(), (3, 1));
        assert_eq!(tape.value(out.offsets).shape(), (3, 2));

        let mut tape = Tape::new();
        let single =
            forward_batch(&mut tape, &model, &adj, &qs[..1], &ps[..1], Mode::Train(&mut rng)).unwrap();
        assert!(single.bn_updates.is_empty());
    }

    #[test]
    fn running_statistics_follow_momentum() {
        let mut model = ModelParams::zeroed(small_config()).unwrap();
        let stage = model.config.score_head().bn_stage(0);
        let w = model.config.head_widths[0];
        model
            .apply_bn_updates(&[BnUpdate {
                stage: stage.clone(),
                mean: Matrix::filled(1, w, 2.0),
                var: Matrix::filled(1, w, 3.0),
            }])
            .unwrap();
        assert_eq!(
            model.buffers[&format!("{stage}.bn_mean")],
            Matrix::filled(1, w, 0.2)
        );
        assert!((model.buffers[&format!("{stage}.bn_var")].get(0, 0) - 1.2).abs() < 1e-15);
    }

    #[test]
    fn regression_output_is_linear_in_final_stage() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = ModelParams::init(small_config(), &mut rng).unwrap();
        let adj = AdjacencySet::build(3, &[1, 2]).unwrap();
        let (q, p) = (random_clip(3, 4, &mut rng), random_clip(3, 4, &mut rng));
        let (_, (c0, l0)) = forward_pair(&q, &p, &model, &adj, Mode::Eval).unwrap();
        let head = model.config.regression_head();
        let last = head.stages() - 1;
        for name in [head.weight(last), head.bias(last)] {
            let v = model.params.value(&name).unwrap().map(|x| 3.0 * x);
            model.params.set_value(&name, v).unwrap();
        }
        let (_, (c1, l1)) = forward_pair(&q, &p, &model, &adj, Mode::Eval).unwrap();
        assert!((c1 - 3.0 * c0).abs() < 1e-12 && (l1 - 3.0 * l0).abs() < 1e-12);
    }

    #[test]
    fn h0_interleaves_pairs() {
        let mut tape = Tape::new();
        let hq = tape.constant(Matrix::from_rows(&[[1.0], [2.0], [3.0], [4.0]]));
        let hp = tape.constant(Matrix::from_rows(&[[5.0], [6.0], [7.0], [8.0]]));
        let h0 = build_h0(&mut tape, hq, hp, 2).unwrap();
        let got: Vec<f64> = tape.value(h0).as_slice().to_vec();
        assert_eq!(got, vec![1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
    }

    #[test]
    fn input_shape_and_graph_count_checked() {
        let model = ModelParams::zeroed(small_config()).unwrap();
        let adj = AdjacencySet::build(3, &[1, 2]).unwrap();
        let bad = Matrix::zeros(4, 4);
        let ok = Matrix::zeros(3, 4);
        assert!(matches!(
            forward_pair(&bad, &ok, &model, &adj, Mode::Eval),
            Err(Error::Shape { .. })
        ));
        let three = AdjacencySet::build(3, &[1, 2, 3]).unwrap();
        assert!(forward_pair(&ok, &ok, &model, &three, Mode::Eval).is_err());
    }

    #[test]
    fn separate_encoders_unless_shared() {
        let mut c = small_config();
        let separate = ModelParams::zeroed(c.clone()).unwrap();
        c.share_lstm = true;
        let shared = ModelParams::zeroed(c).unwrap();
        assert!(separate.params.get("lstm_p.w_ih").is_some());
        assert!(shared.params.get("lstm_p.w_ih").is_none());
        assert_eq!(separate.params.len(), shared.params.len() + 3);
    }

    #[test]
    fn invalid_dropout_rejected() {
        let mut c = small_config();
        c.dropout = 1.0;
        assert!(matches!(ModelParams::zeroed(c), Err(Error::Param(m)) if m.contains("dropout")));
    }
}
