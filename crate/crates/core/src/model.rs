//! Linear-quadratic model data: cost matrices, noise intensities and the
//! mean-field coupling `g`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Terminal (or running) coupling `g: R^d -> R^d` of the population mean.
#[derive(Debug, Clone, PartialEq)]
pub enum Coupling {
    /// `g ≡ 0`.
    Zero { dim: usize },
    /// `g ≡ γ`.
    Constant(Vec<f64>),
    /// `cos(κx)` for `d = 1`; `(cos κx₁ cos κx₂, sin κx₁ sin κx₂)` for `d = 2`.
    CosKappa { kappa: f64, dim: usize },
    /// `cos(κ(x - x₀)) - 2x₀`, scalar. With `x₀` a root of `cos(κx) = 2x`,
    /// `x = 0` solves `2x + g(x) = 0`.
    CosShifted { kappa: f64, shift: f64 },
    /// Scalar piecewise-linear interpolation of `(xs, ys)`, constant outside.
    Table { xs: Vec<f64>, ys: Vec<f64> },
}

impl Coupling {
    pub fn cos_kappa(kappa: f64, dim: usize) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(Error::invalid(format!("cos coupling is defined for d = 1 or 2, got {dim}")));
        }
        if !kappa.is_finite() {
            return Err(Error::invalid("kappa must be finite"));
        }
        Ok(Coupling::CosKappa { kappa, dim })
    }

    pub fn table(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() < 2 || xs.len() != ys.len() {
            return Err(Error::invalid("coupling table needs at least two (x, y) pairs"));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) || xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::invalid("coupling table abscissae must be finite and strictly increasing"));
        }
        Ok(Coupling::Table { xs, ys })
    }

    pub fn dim(&self) -> usize {
        match self {
            Coupling::Zero { dim } | Coupling::CosKappa { dim, .. } => *dim,
            Coupling::Constant(v) => v.len(),
            Coupling::CosShifted { .. } | Coupling::Table { .. } => 1,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Coupling::Zero { .. } => true,
            Coupling::Constant(v) => v.iter().all(|x| *x == 0.0),
            _ => false,
        }
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim());
        match self {
            Coupling::Zero { .. } => out.fill(0.0),
            Coupling::Constant(v) => out.copy_from_slice(v),
            Coupling::CosKappa { kappa, dim: 1 } => out[0] = (kappa * x[0]).cos(),
            Coupling::CosKappa { kappa, .. } => {
                let (s1, c1) = (kappa * x[0]).sin_cos();
                let (s2, c2) = (kappa * x[1]).sin_cos();
                out[0] = c1 * c2;
                out[1] = s1 * s2;
            }
            Coupling::CosShifted { kappa, shift } => out[0] = (kappa * (x[0] - shift)).cos() - 2.0 * shift,
            Coupling::Table { xs, ys } => out[0] = table_lookup(xs, ys, x[0]),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out);
        out
    }

    /// Scalar evaluation for `d = 1`.
    pub fn eval1(&self, x: f64) -> f64 {
        let mut out = [0.0];
        self.eval_into(&[x], &mut out);
        out[0]
    }

    /// Primitive `G` with `G(0) = 0`, for scalar couplings.
    pub fn primitive(&self, x: f64) -> Option<f64> {
        match self {
            Coupling::Zero { dim: 1 } => Some(0.0),
            Coupling::Constant(v) if v.len() == 1 => Some(v[0] * x),
            Coupling::CosKappa { kappa, dim: 1 } => Some(if *kappa == 0.0 { x } else { (kappa * x).sin() / kappa }),
            Coupling::CosShifted { kappa, shift } => {
                let osc =
                    if *kappa == 0.0 { x } else { ((kappa * (x - shift)).sin() - (-kappa * shift).sin()) / kappa };
                Some(osc - 2.0 * shift * x)
            }
            Coupling::Table { xs, ys } => Some(table_primitive(xs, ys, x)),
            _ => None,
        }
    }

    /// Upper bound on `sup |g_i|`, if bounded.
    pub fn sup_norm(&self) -> f64 {
        match self {
            Coupling::Zero { .. } => 0.0,
            Coupling::Constant(v) => v.iter().fold(0.0, |m, x| m.max(x.abs())),
            Coupling::CosKappa { .. } => 1.0,
            Coupling::CosShifted { shift, .. } => 1.0 + 2.0 * shift.abs(),
            Coupling::Table { ys, .. } => ys.iter().fold(0.0, |m, y| m.max(y.abs())),
        }
    }
}

fn table_lookup(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let i = xs.partition_point(|v| *v <= x) - 1;
    let w = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + w * (ys[i + 1] - ys[i])
}

// Exact integral of the piecewise-linear table from 0 to x.
fn table_primitive(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let integral_to = |x: f64| -> f64 {
        let n = xs.len();
        let mut acc = 0.0;
        let lo = xs[0];
        if x < lo {
            return (x - lo) * ys[0];
        }
        for i in 0..n - 1 {
            if x <= xs[i] {
                break;
            }
            let b = x.min(xs[i + 1]);
            acc += 0.5 * (b - xs[i]) * (ys[i] + table_lookup(xs, ys, b));
        }
        if x > xs[n - 1] {
            acc += (x - xs[n - 1]) * ys[n - 1];
        }
        acc
    };
    integral_to(x) - integral_to(0.0)
}

/// Anchor `x₀` of the shifted coupling: the root of `cos(κx) = 2x` in `[lo, hi]`.
pub fn shifted_anchor(kappa: f64, lo: f64, hi: f64) -> Result<f64> {
    crate::analysis::bisect(|x| (kappa * x).cos() - 2.0 * x, lo, hi, 1e-15)
        .ok_or_else(|| Error::invalid(format!("cos({kappa}x) - 2x has no sign change in [{lo}, {hi}]")))
}

/// State dynamics `dX = α dt + σ dB + ε dW` with cost
/// `½|R X_T + g(m_T)|² + ½∫ (|Q X + f(m)|² + |α|²) dt`.
#[derive(Debug, Clone)]
pub struct LqModel {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub terminal: Coupling,
    pub running: Coupling,
    pub x0: Vec<f64>,
    pub sigma: f64,
    pub epsilon: f64,
}

impl LqModel {
    /// `Q = 0`, `R = I`, `f = 0`, `X₀ = 0`.
    pub fn benchmark(terminal: Coupling, sigma: f64, epsilon: f64) -> Self {
        let d = terminal.dim();
        Self {
            q: DMatrix::zeros(d, d),
            r: DMatrix::identity(d, d),
            running: Coupling::Zero { dim: d },
            terminal,
            x0: vec![0.0; d],
            sigma,
            epsilon,
        }
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::invalid("state dimension must be at least 1"));
        }
        for (name, m) in [("Q", &self.q), ("R", &self.r)] {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::shape(format!("{name} must be {d}x{d}")));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite")));
            }
        }
        if self.terminal.dim() != d || self.running.dim() != d {
            return Err(Error::shape("couplings must map R^d to R^d"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite() && self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("noise intensities must be finite and non-negative"));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("initial state must be finite"));
        }
        Ok(())
    }

    pub fn has_running_cost(&self) -> bool {
        self.q.iter().any(|v| *v != 0.0) || !self.running.is_zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cos_couplings() {
        let g = Coupling::cos_kappa(2.0, 2).unwrap();
        let v = g.eval(&[0.3, -0.4]);
        assert!((v[0] - (0.6f64).cos() * (0.8f64).cos()).abs() < 1e-15);
        assert!((v[1] - (0.6f64).sin() * (-0.8f64).sin()).abs() < 1e-15);
        assert!(Coupling::cos_kappa(1.0, 3).is_err());
        assert_eq!(Coupling::cos_kappa(0.0, 1).unwrap().eval1(3.0), 1.0);
    }

    #[test]
    fn shifted_anchor_makes_zero_an_equilibrium() {
        let x0 = shifted_anchor(10.0, -0.45, -0.3).unwrap();
        assert!((x0 + 0.383_746_710_649_905).abs() < 1e-12);
        let g = Coupling::CosShifted { kappa: 10.0, shift: x0 };
        assert!(g.eval1(0.0).abs() < 1e-14);
    }

    #[test]
    fn primitives_differentiate_back() {
        let cases = [
            Coupling::cos_kappa(3.0, 1).unwrap(),
            Coupling::CosShifted { kappa: 10.0, shift: -0.38 },
            Coupling::Constant(vec![0.7]),
            Coupling::table(vec![-1.0, 0.0, 2.0], vec![1.0, -1.0, 0.5]).unwrap(),
        ];
        for g in &cases {
            assert_eq!(g.primitive(0.0).unwrap(), 0.0);
            for x in [-1.7, -0.3, 0.41, 1.2, 2.5] {
                let h = 1e-6;
                let fd = (g.primitive(x + h).unwrap() - g.primitive(x - h).unwrap()) / (2.0 * h);
                assert!((fd - g.eval1(x)).abs() < 1e-6, "{g:?} at {x}");
            }
        }
    }

    #[test]
    fn table_interpolates_and_clamps() {
        let g = Coupling::table(vec![0.0, 1.0], vec![0.0, 2.0]).unwrap();
        assert_eq!(g.eval1(0.25), 0.5);
        assert_eq!(g.eval1(-3.0), 0.0);
        assert_eq!(g.eval1(9.0), 2.0);
        assert!(Coupling::table(vec![1.0, 0.0], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn model_validation() {
        let m = LqModel::benchmark(Coupling::cos_kappa(1.0, 1).unwrap(), 0.0, 1.0);
        m.validate().unwrap();
        assert!(!m.has_running_cost());
        let mut bad = m.clone();
        bad.epsilon = -1.0;
        assert!(bad.validate().is_err());
    }
}
