use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::numeric::{Axis, Matrix, ParamStore, Tape, Var};

/// Names of one LSTM's parameters. Gate columns are ordered
/// input, forget, candidate, output, each `hidden` wide.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LstmParams {
    pub prefix: String,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn new(prefix: impl Into<String>, input_dim: usize, hidden: usize) -> Self {
        LstmParams {
            prefix: prefix.into(),
            input_dim,
            hidden,
        }
    }

    /// `input_dim × 4·hidden`
    pub fn w_ih(&self) -> String {
        format!("{}.w_ih", self.prefix)
    }

    /// `hidden × 4·hidden`
    pub fn w_hh(&self) -> String {
        format!("{}.w_hh", self.prefix)
    }

    /// `1 × 4·hidden`
    pub fn bias(&self) -> String {
        format!("{}.b", self.prefix)
    }

    pub(crate) fn shapes(&self) -> Vec<(String, (usize, usize), usize)> {
        let g = 4 * self.hidden;
        vec![
            (self.w_ih(), (self.input_dim, g), self.input_dim),
            (self.w_hh(), (self.hidden, g), self.hidden),
            (self.bias(), (1, g), self.input_dim),
        ]
    }
}

/// Inverted dropout mask: kept entries are scaled by `1 / (1 - rate)`.
pub(crate) fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut dyn RngCore) -> Matrix {
    let keep = 1.0 - rate;
    let mut m = Matrix::zeros(rows, cols);
    for v in m.as_mut_slice() {
        if rng.random_bool(keep) {
            *v = 1.0 / keep;
        }
    }
    m
}

/// Runs the recurrence over `B` equally long sequences at once.
///
/// Initial hidden and cell states are zero. The result stacks the hidden
/// states sequence by sequence: rows `b·T .. (b+1)·T` belong to `seqs[b]`.
/// With `dropout = Some((rate, rng))` an inverted-dropout mask is applied to
/// the stacked output.
pub fn lstm_encode(
    tape: &mut Tape,
    store: &ParamStore,
    params: &LstmParams,
    seqs: &[&Matrix],
    dropout: Option<(f64, &mut dyn RngCore)>,
) -> Result<Var> {
    let b = seqs.len();
    let first = seqs
        .first()
        .ok_or_else(|| Error::param("lstm_encode needs at least one sequence"))?;
    let (t_len, d) = first.shape();
    if t_len == 0 {
        return Err(Error::param("lstm_encode needs at least one timestep"));
    }
    for s in seqs {
        if s.shape() != (t_len, d) || d != params.input_dim {
            return Err(Error::Shape {
                op: "lstm_encode",
                left: s.shape(),
                right: (t_len, params.input_dim),
            });
        }
    }
    let h = params.hidden;
    let w_ih = tape.param(store, &params.w_ih())?;
    let w_hh = tape.param(store, &params.w_hh())?;
    let bias = tape.param(store, &params.bias())?;

    let mut hidden: Option<Var> = None;
    let mut cell: Option<Var> = None;
    let mut stacked: Option<Var> = None;
    for t in 0..t_len {
        let mut x_t = Matrix::zeros(b, d);
        for (i, s) in seqs.iter().enumerate() {
            x_t.row_mut(i).copy_from_slice(s.row(t));
        }
        let x_t = tape.constant(x_t);
        let mut gates = tape.matmul(x_t, w_ih)?;
        if let Some(hprev) = hidden {
            let rec = tape.matmul(hprev, w_hh)?;
            gates = tape.add(gates, rec)?;
        }
        let gates = tape.add_row(gates, bias)?;
        let i_pre = tape.slice_cols(gates, 0..h)?;
        let f_pre = tape.slice_cols(gates, h..2 * h)?;
        let g_pre = tape.slice_cols(gates, 2 * h..3 * h)?;
        let o_pre = tape.slice_cols(gates, 3 * h..4 * h)?;
        let i_gate = tape.sigmoid(i_pre);
        let g_cand = tape.tanh(g_pre);
        let o_gate = tape.sigmoid(o_pre);
        let mut c = tape.mul(i_gate, g_cand)?;
        if let Some(cprev) = cell {
            let f_gate = tape.sigmoid(f_pre);
            let kept = tape.mul(f_gate, cprev)?;
            c = tape.add(kept, c)?;
        }
        let c_act = tape.tanh(c);
        let h_t = tape.mul(o_gate, c_act)?;
        stacked = Some(match stacked {
            None => h_t,
            Some(s) => tape.concat(s, h_t, Axis::Rows)?,
        });
        hidden = Some(h_t);
        cell = Some(c);
    }
    // Time-major (t·B + b) to sequence-major (b·T + t).
    let order: Vec<usize> = (0..b)
        .flat_map(|seq| (0..t_len).map(move |t| t * b + seq))
        .collect();
    let mut out = tape.gather_rows(stacked.expect("t_len >= 1"), order)?;
    if let Some((rate, rng)) = dropout {
        if rate > 0.0 {
            let mask = tape.constant(dropout_mask(b * t_len, h, rate, rng));
            out = tape.mul(out, mask)?;
        }
    }
    Ok(out)
}
