//! Binary adjacency matrices over the `2T` nodes of a (query, proposal) pair.
//!
//! Nodes `0..T` are query timesteps and `T..2T` proposal timesteps. For a
//! stride `k` the intra-video blocks connect timesteps at most `k` apart and
//! the inter-video blocks connect query step `i` to every proposal step
//! congruent to `i` modulo `k`.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numeric::Matrix;

fn check(t: usize, k: usize) -> Result<()> {
    if t == 0 {
        return Err(Error::param("graph needs at least one timestep"));
    }
    if k == 0 {
        return Err(Error::param("graph stride k must be positive"));
    }
    Ok(())
}

/// `T×T` band: entry `(i, j)` is 1 iff `|i - j| <= k`.
pub fn build_intra_block(t: usize, k: usize) -> Result<Matrix> {
    check(t, k)?;
    let mut m = Matrix::zeros(t, t);
    for i in 0..t {
        for j in i.saturating_sub(k)..=(i + k).min(t - 1) {
            m.set(i, j, 1.0);
        }
    }
    Ok(m)
}

/// `T×T` stride pattern: entry `(i, j)` is 1 iff `i ≡ j (mod k)`.
pub fn build_inter_block(t: usize, k: usize) -> Result<Matrix> {
    check(t, k)?;
    let mut m = Matrix::zeros(t, t);
    for i in 0..t {
        // Walk down and up from the same timestep in steps of k.
        let mut j = i % k;
        while j < t {
            m.set(i, j, 1.0);
            j += k;
        }
    }
    Ok(m)
}

/// `[[intra, inter], [interᵀ, intra]]`, a `2T×2T` symmetric 0/1 matrix.
pub fn assemble_adjacency(t: usize, k: usize) -> Result<Matrix> {
    let intra = build_intra_block(t, k)?;
    let inter = build_inter_block(t, k)?;
    let inter_t = inter.transpose();
    let mut m = Matrix::zeros(2 * t, 2 * t);
    for i in 0..t {
        for j in 0..t {
            m.set(i, j, intra.get(i, j));
            m.set(t + i, t + j, intra.get(i, j));
            m.set(i, t + j, inter.get(i, j));
            m.set(t + i, j, inter_t.get(i, j));
        }
    }
    Ok(m)
}

/// One adjacency matrix per stride, shared read-only by every forward pass.
#[derive(Clone, Debug)]
pub struct AdjacencySet {
    timesteps: usize,
    strides: Vec<usize>,
    matrices: Vec<Arc<Matrix>>,
}

impl AdjacencySet {
    pub fn build(t: usize, strides: &[usize]) -> Result<Self> {
        if strides.is_empty() {
            return Err(Error::param("at least one graph stride is required"));
        }
        let matrices = strides
            .iter()
            .map(|&k| assemble_adjacency(t, k).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        Ok(AdjacencySet {
            timesteps: t,
            strides: strides.to_vec(),
            matrices,
        })
    }

    /// Wraps arbitrary `2T×2T` matrices, for exercising the fusion layers on
    /// graphs the builders never produce.
    #[cfg(test)]
    pub(crate) fn from_matrices(t: usize, matrices: Vec<Matrix>) -> Self {
        assert!(matrices.iter().all(|m| m.shape() == (2 * t, 2 * t)));
        AdjacencySet {
            timesteps: t,
            strides: (1..=matrices.len()).collect(),
            matrices: matrices.into_iter().map(Arc::new).collect(),
        }
    }

    /// Timesteps per video; each matrix is `2T×2T`.
    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn matrices(&self) -> &[Arc<Matrix>] {
        &self.matrices
    }

    pub fn get(&self, i: usize) -> &Arc<Matrix> {
        &self.matrices[i]
    }
}

/// Same as [`AdjacencySet::build`].
pub fn build_adjacency_set(t: usize, strides: &[usize]) -> Result<AdjacencySet> {
    AdjacencySet::build(t, strides)
}

/// Plain-text 0/1 grid, one row per line.
pub fn dump_adjacency(m: &Matrix) -> String {
    let mut out = String::with_capacity(m.rows() * (2 * m.cols() + 1));
    for r in 0..m.rows() {
        for (c, v) in m.row(r).iter().enumerate() {
            if c > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{}", if *v != 0.0 { 1 } else { 0 });
        }
        out.push('\n');
    }
    out
}
