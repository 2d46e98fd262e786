//! Per-realization, per-node arrays of `d`-vectors.

use crate::error::{Error, Result};

/// Dense `(realization, node, dim)` array.
///
/// An environment field (population mean proxy) has `p + 1` nodes; an
/// intercept field has `p` nodes, one per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    realizations: usize,
    nodes: usize,
    dim: usize,
    data: Vec<f64>,
}

/// Population-mean proxy `m̄[j][k]`, nodes `k = 0..=p`.
pub type EnvironmentField = Field;
/// Intercept proxy `h[j][k]`, held constant on `[t_k, t_{k+1})`, nodes `k = 0..p`.
pub type InterceptField = Field;

impl Field {
    pub fn zeros(realizations: usize, nodes: usize, dim: usize) -> Self {
        Self { realizations, nodes, dim, data: vec![0.0; realizations * nodes * dim] }
    }

    /// Every entry equal to `value` (one `d`-vector broadcast everywhere).
    pub fn filled(realizations: usize, nodes: usize, value: &[f64]) -> Self {
        let dim = value.len();
        let mut data = Vec::with_capacity(realizations * nodes * dim);
        for _ in 0..realizations * nodes {
            data.extend_from_slice(value);
        }
        Self { realizations, nodes, dim, data }
    }

    pub fn from_vec(realizations: usize, nodes: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != realizations * nodes * dim {
            return Err(Error::shape(format!(
                "field data has {} values, expected {realizations}x{nodes}x{dim}",
                data.len()
            )));
        }
        Ok(Self { realizations, nodes, dim, data })
    }

    pub fn realizations(&self) -> usize {
        self.realizations
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, j: usize, k: usize) -> &[f64] {
        let o = (j * self.nodes + k) * self.dim;
        &self.data[o..o + self.dim]
    }

    #[inline]
    pub fn at_mut(&mut self, j: usize, k: usize) -> &mut [f64] {
        let o = (j * self.nodes + k) * self.dim;
        &mut self.data[o..o + self.dim]
    }

    /// All nodes of realization `j`, `nodes * d` values.
    pub fn row(&self, j: usize) -> &[f64] {
        let w = self.nodes * self.dim;
        &self.data[j * w..(j + 1) * w]
    }

    pub fn rows_mut(&mut self) -> std::slice::ChunksExactMut<'_, f64> {
        let w = self.nodes * self.dim;
        self.data.chunks_exact_mut(w)
    }

    /// Values at node `k` across realizations, as one `d`-vector per realization.
    pub fn node_samples(&self, k: usize) -> Vec<&[f64]> {
        (0..self.realizations).map(|j| self.at(j, k)).collect()
    }

    pub fn same_shape(&self, other: &Field) -> bool {
        self.realizations == other.realizations && self.nodes == other.nodes && self.dim == other.dim
    }

    pub fn check_shape(&self, realizations: usize, nodes: usize, dim: usize, what: &str) -> Result<()> {
        if self.realizations != realizations || self.nodes != nodes || self.dim != dim {
            return Err(Error::shape(format!(
                "{what} is {}x{}x{}, expected {realizations}x{nodes}x{dim}",
                self.realizations, self.nodes, self.dim
            )));
        }
        Ok(())
    }

    pub fn sub(&self, other: &Field) -> Field {
        assert!(self.same_shape(other));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Field { data, ..*self }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Root mean square over realizations and nodes of the Euclidean norm.
    pub fn rms(&self) -> f64 {
        let n = (self.realizations * self.nodes).max(1) as f64;
        (self.data.iter().map(|v| v * v).sum::<f64>() / n).sqrt()
    }

    /// First `nodes` nodes of every realization.
    pub fn truncate_nodes(&self, nodes: usize) -> Field {
        assert!(nodes <= self.nodes);
        let mut out = Field::zeros(self.realizations, nodes, self.dim);
        for j in 0..self.realizations {
            let w = nodes * self.dim;
            out.data[j * w..(j + 1) * w].copy_from_slice(&self.row(j)[..w]);
        }
        out
    }
}
