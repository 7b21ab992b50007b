use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numeric::{Matrix, ParamStore, Tape, Var};

/// An MLP head: `linear → batch-norm → tanh` for every stage but the last,
/// which is affine (optionally squashed by tanh).
///
/// Only the last stage has a bias: batch-norm subtracts the batch mean, so a
/// bias in front of it would receive an identically zero loss gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub prefix: String,
    /// Input width, hidden widths, output width.
    pub widths: Vec<usize>,
    pub squash_output: bool,
}

/// Batch statistics observed at one batch-norm site during training.
#[derive(Clone, Debug, PartialEq)]
pub struct BnUpdate {
    pub stage: String,
    pub mean: Matrix,
    /// Unbiased batch variance.
    pub var: Matrix,
}

impl HeadParams {
    pub fn stages(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn weight(&self, i: usize) -> String {
        format!("{}.{i}.w", self.prefix)
    }

    pub fn bias(&self, i: usize) -> String {
        format!("{}.{i}.b", self.prefix)
    }

    pub fn bn_scale(&self, i: usize) -> String {
        format!("{}.{i}.bn_scale", self.prefix)
    }

    pub fn bn_shift(&self, i: usize) -> String {
        format!("{}.{i}.bn_shift", self.prefix)
    }

    pub fn bn_stage(&self, i: usize) -> String {
        format!("{}.{i}", self.prefix)
    }

    pub fn bn_mean(&self, i: usize) -> String {
        format!("{}.{i}.bn_mean", self.prefix)
    }

    pub fn bn_var(&self, i: usize) -> String {
        format!("{}.{i}.bn_var", self.prefix)
    }

    /// Trainable matrices as `(name, shape, fan_in)`; batch-norm affine
    /// entries report fan-in 0 (they are initialised to 1 / 0).
    pub(crate) fn shapes(&self) -> Vec<(String, (usize, usize), usize)> {
        let mut v = Vec::new();
        for i in 0..self.stages() {
            let (din, dout) = (self.widths[i], self.widths[i + 1]);
            v.push((self.weight(i), (din, dout), din));
            if i + 1 == self.stages() {
                v.push((self.bias(i), (1, dout), din));
            } else {
                v.push((self.bn_scale(i), (1, dout), 0));
                v.push((self.bn_shift(i), (1, dout), 0));
            }
        }
        v
    }

    pub(crate) fn buffer_shapes(&self) -> Vec<(String, usize)> {
        let mut v = Vec::new();
        for i in 0..self.stages().saturating_sub(1) {
            v.push((self.bn_mean(i), self.widths[i + 1]));
            v.push((self.bn_var(i), self.widths[i + 1]));
        }
        v
    }
}

/// Whether batch-norm normalizes with batch statistics (and reports them).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Batch,
    Running,
}

fn column_mean_var(z: &Matrix) -> (Matrix, Matrix) {
    let n = z.rows() as f64;
    let mean = z.mean_over_rows().expect("non-empty batch");
    let mut var = Matrix::zeros(1, z.cols());
    for r in 0..z.rows() {
        for ((s, x), m) in var.as_mut_slice().iter_mut().zip(z.row(r)).zip(mean.as_slice()) {
            *s += (x - m) * (x - m);
        }
    }
    var.scale_in_place(1.0 / (n - 1.0).max(1.0));
    (mean, var)
}

/// Runs a head on a `B × widths[0]` batch.
///
/// In [`NormMode::Batch`] the observed statistics are appended to `updates`
/// so the caller can fold them into the running averages.
#[allow(clippy::too_many_arguments)]
pub fn head_forward(
    tape: &mut Tape,
    store: &ParamStore,
    buffers: &BTreeMap<String, Matrix>,
    x: Var,
    head: &HeadParams,
    norm: NormMode,
    eps: f64,
    updates: &mut Vec<BnUpdate>,
) -> Result<Var> {
    let width = tape.value(x).cols();
    if width != head.widths[0] {
        return Err(Error::Shape {
            op: "head_forward",
            left: tape.value(x).shape(),
            right: (1, head.widths[0]),
        });
    }
    let mut h = x;
    for i in 0..head.stages() {
        let w = tape.param(store, &head.weight(i))?;
        let z = tape.matmul(h, w)?;
        if i + 1 == head.stages() {
            let b = tape.param(store, &head.bias(i))?;
            let z = tape.add_row(z, b)?;
            h = if head.squash_output { tape.tanh(z) } else { z };
            break;
        }
        let normalized = match norm {
            NormMode::Batch => {
                let (mean, var) = column_mean_var(tape.value(z));
                updates.push(BnUpdate {
                    stage: head.bn_stage(i),
                    mean,
                    var,
                });
                tape.batch_norm(z, eps)?
            }
            NormMode::Running => {
                let buf = |name: String| {
                    buffers
                        .get(&name)
                        .cloned()
                        .ok_or_else(|| Error::Internal(format!("missing buffer `{name}`")))
                };
                let neg_mean = tape.constant(buf(head.bn_mean(i))?.map(|m| -m));
                let inv_std = tape.constant(buf(head.bn_var(i))?.map(|v| 1.0 / (v + eps).sqrt()));
                let centered = tape.add_row(z, neg_mean)?;
                tape.mul_row(centered, inv_std)?
            }
        };
        let scale = tape.param(store, &head.bn_scale(i))?;
        let shift = tape.param(store, &head.bn_shift(i))?;
        let scaled = tape.mul_row(normalized, scale)?;
        let shifted = tape.add_row(scaled, shift)?;
        h = tape.tanh(shifted);
    }
    Ok(h)
}
