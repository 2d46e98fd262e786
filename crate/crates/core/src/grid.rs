//! Uniform time grid on `[0, T]`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::invalid("step count must be at least 1"));
        }
        Ok(Self { horizon, steps })
    }

    /// Unit horizon grid, the setting of every benchmark.
    pub fn unit(steps: usize) -> Result<Self> {
        Self::new(1.0, steps)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of steps `p`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `t_k = k T / p`; the last node is exactly `T`.
    pub fn node(&self, k: usize) -> f64 {
        assert!(k <= self.steps, "node {k} outside grid of {} steps", self.steps);
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.horizon / self.steps as f64
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |k| self.node(k))
    }

    /// Index `l` with `t_l <= t < t_{l+1}`, clamped to `p - 1` at the horizon.
    pub fn cell(&self, t: f64) -> usize {
        let raw = (t * self.steps as f64 / self.horizon).floor();
        (raw.max(0.0) as usize).min(self.steps - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_are_increasing_and_hit_endpoints() {
        let grid = TimeGrid::new(1.7, 13).unwrap();
        let nodes: Vec<f64> = grid.nodes().collect();
        assert_eq!(nodes.len(), 14);
        assert_eq!(nodes[0], 0.0);
        assert_eq!(nodes[13], 1.7);
        assert!(nodes.windows(2).all(|w| w[1] > w[0]));
        for w in nodes.windows(2) {
            assert!((w[1] - w[0] - grid.dt()).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(TimeGrid::new(1.0, 0).is_err());
        assert!(TimeGrid::new(0.0, 4).is_err());
        assert!(TimeGrid::new(f64::NAN, 4).is_err());
    }

    #[test]
    fn cell_lookup() {
        let grid = TimeGrid::unit(4).unwrap();
        assert_eq!(grid.cell(0.0), 0);
        assert_eq!(grid.cell(0.26), 1);
        assert_eq!(grid.cell(0.75), 3);
        assert_eq!(grid.cell(1.0), 3);
    }
}
