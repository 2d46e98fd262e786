//! Discrete Girsanov densities for a piecewise-constant, adapted drift.
//!
//! For an intercept `h` held constant on each cell and common increments
//! `Δ_{k+1}` (standard normal), the density of the tilted measure over
//! `[t_k, T]` is
//!
//! ```text
//! exp( -(1/eps) sqrt(T/p) Σ_{s>=k} h_s·Δ_{s+1}  -  (T/p)/(2 eps²) Σ_{s>=k} |h_s|² )
//! ```
//!
//! Under the tilted measure the shifted path `W + (1/eps) ∫ h` is a Brownian
//! motion.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::InterceptField;
use crate::grid::TimeGrid;
use crate::noise::NoiseBank;

/// Densities per realization: `full[j]` over `[0, T]`, `tail[j][k]` over
/// `[t_k, T]` for `k = 0..=p` (`tail[j][p] = 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct GirsanovWeights {
    steps: usize,
    full: Vec<f64>,
    tail: Vec<f64>,
}

impl GirsanovWeights {
    /// Identity weights, used when there is no common noise to tilt.
    pub fn unit(realizations: usize, steps: usize) -> Self {
        Self { steps, full: vec![1.0; realizations], tail: vec![1.0; realizations * (steps + 1)] }
    }

    pub fn realizations(&self) -> usize {
        self.full.len()
    }

    pub fn full(&self) -> &[f64] {
        &self.full
    }

    pub fn full_at(&self, j: usize) -> f64 {
        self.full[j]
    }

    /// `(Σ w)² / Σ w²` over realizations.
    pub fn effective_size(&self) -> f64 {
        let s: f64 = self.full.iter().sum();
        let s2: f64 = self.full.iter().map(|w| w * w).sum();
        s * s / s2
    }

    pub fn tail(&self, j: usize, k: usize) -> f64 {
        self.tail[j * (self.steps + 1) + k]
    }

    /// Tail weights at node `k` across realizations.
    pub fn tail_column(&self, k: usize) -> Vec<f64> {
        (0..self.full.len()).map(|j| self.tail(j, k)).collect()
    }
}

/// Full and tail weights for one realization.
pub fn girsanov_weight(h_row: &[f64], common_row: &[f64], epsilon: f64, grid: &TimeGrid) -> Result<(f64, Vec<f64>)> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("Girsanov weights need epsilon > 0, got {epsilon}")));
    }
    if h_row.len() != common_row.len() || !h_row.len().is_multiple_of(grid.steps()) {
        return Err(Error::shape("intercept row and increment row must both hold p d-vectors"));
    }
    if h_row.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("intercept must be finite"));
    }
    let p = grid.steps();
    let dim = h_row.len() / p;
    let dt = grid.dt();
    let lin = dt.sqrt() / epsilon;
    let quad = dt / (2.0 * epsilon * epsilon);
    let mut exponent = vec![0.0; p + 1];
    for k in (0..p).rev() {
        let h = &h_row[k * dim..(k + 1) * dim];
        let dw = &common_row[k * dim..(k + 1) * dim];
        let dot: f64 = h.iter().zip(dw).map(|(a, b)| a * b).sum();
        let sq: f64 = h.iter().map(|a| a * a).sum();
        exponent[k] = exponent[k + 1] - lin * dot - quad * sq;
    }
    let tail: Vec<f64> = exponent.iter().map(|e| e.exp()).collect();
    Ok((tail[0], tail))
}

/// Weights for every realization of an intercept field.
pub fn girsanov_weights(
    h: &InterceptField,
    bank: &NoiseBank,
    epsilon: f64,
    grid: &TimeGrid,
) -> Result<GirsanovWeights> {
    bank.check_grid(grid)?;
    h.check_shape(bank.realizations(), grid.steps(), bank.dim(), "intercept field")?;
    let rows: Vec<(f64, Vec<f64>)> = (0..bank.realizations())
        .into_par_iter()
        .map(|j| girsanov_weight(h.row(j), bank.common(j), epsilon, grid))
        .collect::<Result<_>>()?;
    let mut full = Vec::with_capacity(rows.len());
    let mut tail = Vec::with_capacity(rows.len() * (grid.steps() + 1));
    for (f, t) in rows {
        full.push(f);
        tail.extend(t);
    }
    Ok(GirsanovWeights { steps: grid.steps(), full, tail })
}
