use crate::error::{Error, Result};
use crate::graphs::AdjacencySet;
use crate::numeric::{Axis, ParamStore, Tape, Var};

/// How node features move along graph edges inside a fusion layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Variant {
    /// `tanh(Â_k · H̃ · W_k)` per graph.
    #[default]
    Graph,
    /// The adjacency product is dropped, leaving `tanh(H̃ · W_k)`; each branch
    /// degenerates to a 1×1 convolution.
    Cnn,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Graph => "graph",
            Variant::Cnn => "cnn",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "graph" => Ok(Variant::Graph),
            "cnn" => Ok(Variant::Cnn),
            other => Err(Error::param(format!("unknown variant `{other}` (graph|cnn)"))),
        }
    }
}

/// Parameter names and widths of one fusion layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FusionLayerParams {
    pub prefix: String,
    pub d_in: usize,
    pub d_mid: usize,
    pub d_gc: usize,
    pub d_out: usize,
    pub graphs: usize,
}

impl FusionLayerParams {
    /// Leading 1×1 projection, `d_in × d_mid`.
    pub fn w_pre(&self) -> String {
        format!("{}.w_pre", self.prefix)
    }

    /// Graph-convolution weight of graph `k`, `d_mid × d_gc`.
    pub fn w_graph(&self, k: usize) -> String {
        format!("{}.wk.{k}", self.prefix)
    }

    /// Trailing fusion projection, `(K·d_gc) × d_out`.
    pub fn w_post(&self) -> String {
        format!("{}.w_post", self.prefix)
    }

    pub(crate) fn shapes(&self) -> Vec<(String, (usize, usize), usize)> {
        let mut v = vec![(self.w_pre(), (self.d_in, self.d_mid), self.d_in)];
        for k in 0..self.graphs {
            v.push((self.w_graph(k), (self.d_mid, self.d_gc), self.d_mid));
        }
        let cat = self.graphs * self.d_gc;
        v.push((self.w_post(), (cat, self.d_out), cat));
        v
    }
}

/// One multi-graph fusion layer over a stack of `B` pairs (`B·2T` rows).
///
/// `H̃ = H·W_pre`; per graph `tanh(Â_k·H̃·W_k)`; branches concatenated along
/// features and projected by `W_post`. No biases.
pub fn fusion_layer(
    tape: &mut Tape,
    store: &ParamStore,
    h: Var,
    adj: &AdjacencySet,
    params: &FusionLayerParams,
    variant: Variant,
) -> Result<Var> {
    if adj.len() != params.graphs {
        return Err(Error::param(format!(
            "{} expects {} graphs, adjacency set has {}",
            params.prefix,
            params.graphs,
            adj.len()
        )));
    }
    let nodes = 2 * adj.timesteps();
    let rows = tape.value(h).rows();
    if rows == 0 || !rows.is_multiple_of(nodes) {
        return Err(Error::Shape {
            op: "fusion_layer",
            left: tape.value(h).shape(),
            right: (nodes, params.d_in),
        });
    }
    let w_pre = tape.param(store, &params.w_pre())?;
    let projected = tape.matmul(h, w_pre)?;
    let mut fused: Option<Var> = None;
    for (k, a) in adj.matrices().iter().enumerate() {
        let w_k = tape.param(store, &params.w_graph(k))?;
        let spread = match variant {
            Variant::Graph => tape.propagate(a.clone(), projected)?,
            Variant::Cnn => projected,
        };
        let conv = tape.matmul(spread, w_k)?;
        let branch = tape.tanh(conv);
        fused = Some(match fused {
            None => branch,
            Some(f) => tape.concat(f, branch, Axis::Cols)?,
        });
    }
    let w_post = tape.param(store, &params.w_post())?;
    tape.matmul(fused.expect("at least one graph"), w_post)
}

/// Applies the layers in order; an empty list returns `h` unchanged.
pub fn fusion_forward(
    tape: &mut Tape,
    store: &ParamStore,
    h: Var,
    adj: &AdjacencySet,
    layers: &[FusionLayerParams],
    variant: Variant,
) -> Result<Var> {
    layers
        .iter()
        .try_fold(h, |h, layer| fusion_layer(tape, store, h, adj, layer, variant))
}
