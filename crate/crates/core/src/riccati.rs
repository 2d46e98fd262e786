//! Riccati gains for the linear part of the optimal feedback.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiccatiKind {
    Continuous,
    Discrete,
}

/// `η` sampled at the grid nodes `k = 0..=p`, with `η_p = RᵀR`.
#[derive(Debug, Clone)]
pub struct RiccatiTable {
    kind: RiccatiKind,
    eta: Vec<DMatrix<f64>>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl RiccatiTable {
    pub fn kind(&self) -> RiccatiKind {
        self.kind
    }

    pub fn steps(&self) -> usize {
        self.eta.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn eta(&self, k: usize) -> &DMatrix<f64> {
        &self.eta[k]
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    /// Scalar gain when every `η_k` is a multiple of the identity.
    pub fn scalar(&self, k: usize) -> Option<f64> {
        let e = &self.eta[k];
        let s = e[(0, 0)];
        let d = e.nrows();
        for a in 0..d {
            for b in 0..d {
                let want = if a == b { s } else { 0.0 };
                if (e[(a, b)] - want).abs() > 1e-14 * s.abs().max(1.0) {
                    return None;
                }
            }
        }
        Some(s)
    }

    /// Scalar gains at all nodes, failing on a non-isotropic table.
    pub fn scalars(&self) -> Result<Vec<f64>> {
        (0..self.eta.len())
            .map(|k| {
                self.scalar(k).ok_or_else(|| Error::invalid(format!("Riccati gain at node {k} is not a multiple of I")))
            })
            .collect()
    }

    pub fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        if self.steps() != grid.steps() {
            return Err(Error::shape(format!("Riccati table has {} steps, grid has {}", self.steps(), grid.steps())));
        }
        Ok(())
    }
}

fn check_inputs(q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<()> {
    let d = q.nrows();
    if d == 0 || q.ncols() != d || r.nrows() != d || r.ncols() != d {
        return Err(Error::shape("Q and R must be square of the same dimension"));
    }
    if q.iter().chain(r.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("Q and R must be finite"));
    }
    Ok(())
}

pub const DEFAULT_ESCAPE_BOUND: f64 = 1e6;
const SUBSTEPS: usize = 10;

pub fn continuous_riccati(q: &DMatrix<f64>, r: &DMatrix<f64>, grid: &TimeGrid) -> Result<RiccatiTable> {
    continuous_riccati_bounded(q, r, grid, DEFAULT_ESCAPE_BOUND)
}

/// Solves `η' = η² - QᵀQ` backward from `η_T = RᵀR` with RK4.
///
/// `Q = 0, R = I, T = 1` takes the closed form `η_t = I / (2 - t)`.
pub fn continuous_riccati_bounded(
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    grid: &TimeGrid,
    bound: f64,
) -> Result<RiccatiTable> {
    check_inputs(q, r)?;
    let d = q.nrows();
    let p = grid.steps();
    let id = DMatrix::<f64>::identity(d, d);
    let is_benchmark = grid.horizon() == 1.0 && q.iter().all(|v| *v == 0.0) && *r == id;
    let mut eta = vec![DMatrix::zeros(d, d); p + 1];
    if is_benchmark {
        for (k, e) in eta.iter_mut().enumerate() {
            *e = &id / (2.0 - grid.node(k));
        }
    } else {
        let qq = q.transpose() * q;
        // Backward time τ = T - t: dη/dτ = QᵀQ - η².
        let rhs = |e: &DMatrix<f64>| &qq - e * e;
        let h = grid.dt() / SUBSTEPS as f64;
        let mut e = r.transpose() * r;
        if e.amax() > bound {
            return Err(Error::FiniteEscape { node: p, value: e.amax() });
        }
        eta[p] = e.clone();
        for k in (0..p).rev() {
            for _ in 0..SUBSTEPS {
                let k1 = rhs(&e);
                let k2 = rhs(&(&e + &k1 * (h / 2.0)));
                let k3 = rhs(&(&e + &k2 * (h / 2.0)));
                let k4 = rhs(&(&e + &k3 * h));
                e += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
                e = (&e + e.transpose()) * 0.5;
            }
            let worst = e.iter().fold(0.0f64, |m, v| if v.is_finite() { m.max(v.abs()) } else { f64::INFINITY });
            if worst > bound {
                return Err(Error::FiniteEscape { node: k, value: worst });
            }
            eta[k] = e.clone();
        }
    }
    Ok(RiccatiTable { kind: RiccatiKind::Continuous, eta, q: q.clone(), r: r.clone() })
}

/// Auxiliary recursion `P_ℓ = P_{ℓ+1} - (T/p)[P_{ℓ+1}(I + (T/p)P_{ℓ+1})⁻¹P_{ℓ+1} - QᵀQ]`
/// from `P_p = RᵀR`, with `η_ℓ = (I + (T/p)P_{ℓ+1})⁻¹ P_{ℓ+1}`.
pub fn discrete_riccati(q: &DMatrix<f64>, r: &DMatrix<f64>, grid: &TimeGrid) -> Result<RiccatiTable> {
    check_inputs(q, r)?;
    let d = q.nrows();
    let p = grid.steps();
    let dt = grid.dt();
    let id = DMatrix::<f64>::identity(d, d);
    let qq = q.transpose() * q;
    let mut eta = vec![DMatrix::zeros(d, d); p + 1];
    let mut big_p = r.transpose() * r;
    eta[p] = big_p.clone();
    for l in (0..p).rev() {
        let inv = (&id + &big_p * dt).try_inverse().expect("I + (T/p)P is invertible for positive semidefinite P");
        let e = &inv * &big_p;
        eta[l] = (&e + e.transpose()) * 0.5;
        let next = &big_p - (&big_p * &e - &qq) * dt;
        big_p = (&next + next.transpose()) * 0.5;
    }
    Ok(RiccatiTable { kind: RiccatiKind::Discrete, eta, q: q.clone(), r: r.clone() })
}

/// Auxiliary matrices `P_ℓ`, `ℓ = 0..=p`, exposed for diagnostics.
pub fn discrete_auxiliary(q: &DMatrix<f64>, r: &DMatrix<f64>, grid: &TimeGrid) -> Result<Vec<DMatrix<f64>>> {
    check_inputs(q, r)?;
    let d = q.nrows();
    let dt = grid.dt();
    let id = DMatrix::<f64>::identity(d, d);
    let qq = q.transpose() * q;
    let mut out = vec![r.transpose() * r];
    for _ in 0..grid.steps() {
        let big_p = out.last().unwrap();
        let inv = (&id + big_p * dt).try_inverse().expect("invertible");
        out.push(big_p - (big_p * &inv * big_p - &qq) * dt);
    }
    out.reverse();
    Ok(out)
}
