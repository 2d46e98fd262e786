//! Affine feedback policies, their Euler rollout, the discrete cost with its
//! adjoint gradient, ADAM, and the exact linear-quadratic best response.
//!
//! A policy acts as
//!
//! ```text
//! α_k = a_{k-1} x_{k-1} + C_{k-1}(m̄_{k-1}) + τ_{k-1} + ε sqrt(p/T) Δ_k w
//! x_k = x_{k-1} + (T/p) α_k + σ sqrt(T/p) Δ_k b
//! ```
//!
//! where `C_k` is a Hermite expansion of the environment and `τ` is the tilt
//! (the intercept guess, minus the annealing baseline if any).

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{EnvironmentField, InterceptField};
use crate::girsanov::GirsanovWeights;
use crate::grid::TimeGrid;
use crate::hermite::{
    design_matrix, fit_standardizer, weighted_least_squares, FeatureStandardizer, MultiIndexSet, ScaleMode,
};
use crate::model::LqModel;
use crate::noise::NoiseBank;
use crate::reference::mean_and_stderr;
use crate::riccati::{discrete_auxiliary, RiccatiTable};

/// Gain `a_k` (scalar, shared across coordinates) and Hermite block `c_k`
/// (`L x d`) for `k = 0..p`, with the standardizers frozen at fit time.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackPolicy {
    set: MultiIndexSet,
    steps: usize,
    pub a: Vec<f64>,
    /// Flat `(k, ℓ, dim)` layout.
    pub c: Vec<f64>,
    standardizers: Vec<FeatureStandardizer>,
}

/// One standardizer per node `k = 0..p` of the environment.
pub fn fit_policy_standardizers(
    env: &EnvironmentField,
    steps: usize,
    mode: ScaleMode,
) -> Result<Vec<FeatureStandardizer>> {
    (0..steps)
        .map(|k| {
            let samples = env.node_samples(k);
            if samples.len() < 2 {
                Ok(FeatureStandardizer::degenerate(samples[0].to_vec()))
            } else {
                fit_standardizer(&samples, mode)
            }
        })
        .collect()
}

impl FeedbackPolicy {
    pub fn zeros(set: MultiIndexSet, standardizers: Vec<FeatureStandardizer>) -> Self {
        let steps = standardizers.len();
        let width = set.len() * set.dim();
        Self { steps, a: vec![0.0; steps], c: vec![0.0; steps * width], set, standardizers }
    }

    pub fn set(&self) -> &MultiIndexSet {
        &self.set
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    pub fn standardizers(&self) -> &[FeatureStandardizer] {
        &self.standardizers
    }

    pub fn replace_standardizers(&mut self, standardizers: Vec<FeatureStandardizer>) {
        assert_eq!(standardizers.len(), self.steps);
        self.standardizers = standardizers;
    }

    pub fn block_width(&self) -> usize {
        self.set.len() * self.set.dim()
    }

    pub fn c_block(&self, k: usize) -> &[f64] {
        let w = self.block_width();
        &self.c[k * w..(k + 1) * w]
    }

    pub fn param_count(&self) -> usize {
        self.a.len() + self.c.len()
    }

    /// Parameters as one vector, gains first.
    pub fn params(&self) -> Vec<f64> {
        let mut v = self.a.clone();
        v.extend_from_slice(&self.c);
        v
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count());
        let (a, c) = params.split_at(self.steps);
        self.a.copy_from_slice(a);
        self.c.copy_from_slice(c);
    }

    pub fn features(&self, env: &EnvironmentField) -> PolicyFeatures {
        let (n, l) = (env.realizations(), self.set.len());
        let mut data = vec![0.0; n * self.steps * l];
        data.par_chunks_mut(self.steps * l).enumerate().for_each(|(j, row)| {
            for k in 0..self.steps {
                self.standardizers[k].features_into(&self.set, env.at(j, k), &mut row[k * l..(k + 1) * l]);
            }
        });
        PolicyFeatures { steps: self.steps, len: l, data }
    }

    /// Intercepts `C_k(m̄[j][k])` for every realization, `N x p x d`.
    pub fn intercept_field(&self, env: &EnvironmentField) -> InterceptField {
        let feats = self.features(env);
        let d = self.dim();
        let mut out = InterceptField::zeros(env.realizations(), self.steps, d);
        for j in 0..env.realizations() {
            for k in 0..self.steps {
                self.intercept_into(&feats, j, k, out.at_mut(j, k));
            }
        }
        out
    }

    fn intercept_into(&self, feats: &PolicyFeatures, j: usize, k: usize, out: &mut [f64]) {
        intercept_from(feats.at(j, k), self.c_block(k), self.dim(), out);
    }
}

#[inline]
fn intercept_from(feat: &[f64], block: &[f64], d: usize, out: &mut [f64]) {
    out.fill(0.0);
    for (l, f) in feat.iter().enumerate() {
        for (o, c) in out.iter_mut().zip(&block[l * d..(l + 1) * d]) {
            *o += f * c;
        }
    }
}

/// Hermite features of the environment, `(j, k, ℓ)` layout.
#[derive(Debug, Clone)]
pub struct PolicyFeatures {
    steps: usize,
    len: usize,
    data: Vec<f64>,
}

impl PolicyFeatures {
    pub fn at(&self, j: usize, k: usize) -> &[f64] {
        let o = (j * self.steps + k) * self.len;
        &self.data[o..o + self.len]
    }
}

/// The control problem faced by one player given the environment `m̄`,
/// the tilt `τ` and the matching Girsanov weights.
#[derive(Clone, Copy)]
pub struct ResponseProblem<'a> {
    pub model: &'a LqModel,
    pub grid: &'a TimeGrid,
    pub bank: &'a NoiseBank,
    pub env: &'a EnvironmentField,
    pub tilt: &'a InterceptField,
    pub weights: &'a GirsanovWeights,
}

impl ResponseProblem<'_> {
    pub fn check(&self) -> Result<()> {
        self.model.validate()?;
        self.bank.check_grid(self.grid)?;
        let (n, p, d) = (self.bank.realizations(), self.grid.steps(), self.bank.dim());
        if self.model.dim() != d {
            return Err(Error::shape("model and noise bank disagree on the dimension"));
        }
        self.env.check_shape(n, p + 1, d, "environment field")?;
        self.tilt.check_shape(n, p, d, "tilt field")?;
        if self.weights.realizations() != n {
            return Err(Error::shape("weights and noise bank disagree on the realization count"));
        }
        Ok(())
    }

    fn check_policy(&self, policy: &FeedbackPolicy) -> Result<()> {
        self.check()?;
        if policy.steps() != self.grid.steps() || policy.dim() != self.bank.dim() {
            return Err(Error::shape("policy does not match the grid or the dimension"));
        }
        Ok(())
    }

    /// `g(m̄_T)` per realization, flat `(j, dim)`.
    fn terminal_targets(&self) -> Vec<f64> {
        let (n, p, d) = (self.bank.realizations(), self.grid.steps(), self.bank.dim());
        let mut out = vec![0.0; n * d];
        for j in 0..n {
            self.model.terminal.eval_into(self.env.at(j, p), &mut out[j * d..(j + 1) * d]);
        }
        out
    }

    /// `f(m̄_k)` per realization and node `k = 0..p`, or `None` when `f = 0`.
    fn running_targets(&self) -> Option<Vec<f64>> {
        if self.model.running.is_zero() {
            return None;
        }
        let (n, p, d) = (self.bank.realizations(), self.grid.steps(), self.bank.dim());
        let mut out = vec![0.0; n * p * d];
        for j in 0..n {
            for k in 0..p {
                self.model.running.eval_into(self.env.at(j, k), &mut out[(j * p + k) * d..(j * p + k + 1) * d]);
            }
        }
        Some(out)
    }

    /// `½ ε² d p`, the expected exploration energy in the raw cost.
    pub fn renormalization(&self) -> f64 {
        0.5 * self.model.epsilon.powi(2) * (self.bank.dim() * self.grid.steps()) as f64
    }
}

/// Simulated paths of every `(i, j)` pair.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub particles: usize,
    pub realizations: usize,
    pub steps: usize,
    pub dim: usize,
    /// `(j, i, k, dim)` with `k = 0..=p`.
    pub x: Vec<f64>,
    /// `(j, i, k, dim)` with `k = 1..=p` stored at slot `k - 1`.
    pub alpha: Vec<f64>,
}

impl RolloutBatch {
    pub fn x(&self, i: usize, j: usize, k: usize) -> &[f64] {
        let o = ((j * self.particles + i) * (self.steps + 1) + k) * self.dim;
        &self.x[o..o + self.dim]
    }

    /// Control applied over `[t_{k-1}, t_k]`, `k = 1..=p`.
    pub fn alpha(&self, i: usize, j: usize, k: usize) -> &[f64] {
        let o = ((j * self.particles + i) * self.steps + k - 1) * self.dim;
        &self.alpha[o..o + self.dim]
    }

    /// Particle average `m[j][k] = (1/M) Σ_i x[i][j][k]`.
    pub fn mean_field(&self) -> EnvironmentField {
        let (m, p, d) = (self.particles, self.steps, self.dim);
        let mut out = EnvironmentField::zeros(self.realizations, p + 1, d);
        for j in 0..self.realizations {
            for i in 0..m {
                for k in 0..=p {
                    let x = self.x(i, j, k);
                    for (o, v) in out.at_mut(j, k).iter_mut().zip(x) {
                        *o += v;
                    }
                }
            }
            for v in &mut out.as_mut_slice()[j * (p + 1) * d..(j + 1) * (p + 1) * d] {
                *v /= m as f64;
            }
        }
        out
    }
}

pub fn rollout(policy: &FeedbackPolicy, problem: &ResponseProblem) -> Result<RolloutBatch> {
    problem.check_policy(policy)?;
    let (grid, bank, model) = (problem.grid, problem.bank, problem.model);
    let (m, n, p, d) = (bank.particles(), bank.realizations(), grid.steps(), bank.dim());
    let dt = grid.dt();
    let sv = model.sigma * dt.sqrt();
    let ev = model.epsilon / dt.sqrt();
    let feats = policy.features(problem.env);
    let mut x = vec![0.0; n * m * (p + 1) * d];
    let mut alpha = vec![0.0; n * m * p * d];
    x.par_chunks_mut(m * (p + 1) * d).zip(alpha.par_chunks_mut(m * p * d)).enumerate().for_each(|(j, (xs, als))| {
        let common = bank.common(j);
        let tilt = problem.tilt.row(j);
        let mut c = vec![0.0; p * d];
        for k in 0..p {
            policy.intercept_into(&feats, j, k, &mut c[k * d..(k + 1) * d]);
        }
        for i in 0..m {
            let idio = bank.idio(i, j);
            let xr = &mut xs[i * (p + 1) * d..(i + 1) * (p + 1) * d];
            let ar = &mut als[i * p * d..(i + 1) * p * d];
            xr[..d].copy_from_slice(&model.x0);
            for k in 0..p {
                for a in 0..d {
                    let o = k * d + a;
                    let prev = xr[o];
                    let al = policy.a[k] * prev + c[o] + tilt[o] + ev * common[o];
                    ar[o] = al;
                    xr[o + d] = prev + dt * al + sv * idio[o];
                }
            }
        }
    });
    Ok(RolloutBatch { particles: m, realizations: n, steps: p, dim: d, x, alpha })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostReport {
    /// Weighted Monte Carlo average of the discrete cost.
    pub raw: f64,
    /// `raw - ½ ε² d p`.
    pub renormalized: f64,
    /// Standard error over realizations.
    pub stderr: f64,
    /// Weighted sample mean of the exploration energy `(T/2p) Σ_k |τ_k + ε sqrt(p/T) Δ_k w|²`,
    /// whose expectation under the tilted measure is `½ ε² d p`.
    pub exploration: f64,
}

impl CostReport {
    /// `raw - exploration`: the renormalized cost with the realized rather
    /// than the expected exploration energy removed.
    pub fn centered(&self) -> f64 {
        self.raw - self.exploration
    }
}

/// `(1/(MN)) Σ_j w_j Σ_i [(T/2p) Σ_k |α_k|² + ½|R x_T + g(m̄_T)|² + (T/2p) Σ_{k<p} |Q x_k + f(m̄_k)|²]`.
pub fn empirical_cost(batch: &RolloutBatch, problem: &ResponseProblem) -> Result<CostReport> {
    let per_j = realization_costs(batch, problem)?;
    let (raw, stderr) = mean_and_stderr(&per_j);
    let dt = problem.grid.dt();
    let n = per_j.len();
    let ev = problem.model.epsilon / dt.sqrt();
    let exploration = (0..n)
        .map(|j| {
            let tilt = problem.tilt.row(j);
            let e: f64 = problem.bank.common(j).iter().zip(tilt).map(|(w, t)| (t + ev * w).powi(2)).sum();
            problem.weights.full_at(j) * 0.5 * dt * e
        })
        .sum::<f64>()
        / n as f64;
    Ok(CostReport { raw, renormalized: raw - problem.renormalization(), stderr, exploration })
}

/// Weighted particle-averaged cost of each realization; `empirical_cost` is their mean.
pub fn realization_costs(batch: &RolloutBatch, problem: &ResponseProblem) -> Result<Vec<f64>> {
    problem.check()?;
    let (m, n, p, d) = (batch.particles, batch.realizations, batch.steps, batch.dim);
    if n != problem.bank.realizations() || p != problem.grid.steps() {
        return Err(Error::shape("rollout batch does not match the problem"));
    }
    let dt = problem.grid.dt();
    let model = problem.model;
    let terminal = problem.terminal_targets();
    let running = problem.running_targets();
    let has_running = model.has_running_cost();
    let per_j: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut tmp = vec![0.0; d];
            let mut total = 0.0;
            for i in 0..m {
                let mut cost = 0.0;
                for k in 1..=p {
                    cost += 0.5 * dt * batch.alpha(i, j, k).iter().map(|v| v * v).sum::<f64>();
                }
                if has_running {
                    for k in 0..p {
                        let x = batch.x(i, j, k);
                        for a in 0..d {
                            let f = running.as_ref().map_or(0.0, |r| r[(j * p + k) * d + a]);
                            tmp[a] = (0..d).map(|b| model.q[(a, b)] * x[b]).sum::<f64>() + f;
                        }
                        cost += 0.5 * dt * tmp.iter().map(|v| v * v).sum::<f64>();
                    }
                }
                let x = batch.x(i, j, p);
                for a in 0..d {
                    tmp[a] = (0..d).map(|b| model.r[(a, b)] * x[b]).sum::<f64>() + terminal[j * d + a];
                }
                cost += 0.5 * tmp.iter().map(|v| v * v).sum::<f64>();
                total += cost;
            }
            problem.weights.full_at(j) * total / m as f64
        })
        .collect();
    Ok(per_j)
}

/// Differentiable scalar objective.
pub trait Objective {
    fn len(&self) -> usize;
    /// Value at `params`, writing the gradient into `grad`.
    fn evaluate(&self, params: &[f64], grad: &mut [f64]) -> Result<f64>;
}

const BLOCK: usize = 32;

/// The discrete cost as a function of the policy parameters, with the
/// environment, tilt, weights and standardizers held fixed.
pub struct PolicyObjective<'a> {
    problem: ResponseProblem<'a>,
    template: FeedbackPolicy,
    features: PolicyFeatures,
    terminal: Vec<f64>,
    running: Option<Vec<f64>>,
    freeze_gain: bool,
}

impl<'a> PolicyObjective<'a> {
    pub fn new(problem: ResponseProblem<'a>, template: &FeedbackPolicy, freeze_gain: bool) -> Result<Self> {
        problem.check_policy(template)?;
        Ok(Self {
            features: template.features(problem.env),
            terminal: problem.terminal_targets(),
            running: problem.running_targets(),
            template: template.clone(),
            problem,
            freeze_gain,
        })
    }

    pub fn problem(&self) -> &ResponseProblem<'a> {
        &self.problem
    }

    fn block(&self, params: &[f64], js: std::ops::Range<usize>, want_grad: bool) -> (f64, Vec<f64>) {
        let pr = &self.problem;
        let (grid, bank, model) = (pr.grid, pr.bank, pr.model);
        let (m, n, p, d) = (bank.particles(), bank.realizations(), grid.steps(), bank.dim());
        let l = self.template.set().len();
        let width = l * d;
        let (a, c) = params.split_at(p);
        let dt = grid.dt();
        let sv = model.sigma * dt.sqrt();
        let ev = model.epsilon / dt.sqrt();
        let has_running = model.has_running_cost();
        let scale = 1.0 / (m * n) as f64;

        let mut grad = if want_grad { vec![0.0; params.len()] } else { Vec::new() };
        let mut value = 0.0;
        let mut cj = vec![0.0; p * d];
        let mut gc = vec![0.0; p * d];
        let mut x = vec![0.0; (p + 1) * d];
        let mut al = vec![0.0; p * d];
        let mut lam = vec![0.0; d];
        let mut tmp = vec![0.0; d];
        for j in js {
            let w = pr.weights.full_at(j) * scale;
            let common = bank.common(j);
            let tilt = pr.tilt.row(j);
            for k in 0..p {
                intercept_from(self.features.at(j, k), &c[k * width..(k + 1) * width], d, &mut cj[k * d..(k + 1) * d]);
            }
            gc.fill(0.0);
            let mut total = 0.0;
            for i in 0..m {
                let idio = bank.idio(i, j);
                x[..d].copy_from_slice(&model.x0);
                let mut cost = 0.0;
                for k in 0..p {
                    for q in 0..d {
                        let o = k * d + q;
                        let v = a[k] * x[o] + cj[o] + tilt[o] + ev * common[o];
                        al[o] = v;
                        cost += 0.5 * dt * v * v;
                        x[o + d] = x[o] + dt * v + sv * idio[o];
                    }
                }
                if has_running {
                    for k in 0..p {
                        self.running_residual(j, k, &x[k * d..(k + 1) * d], &mut tmp);
                        cost += 0.5 * dt * tmp.iter().map(|v| v * v).sum::<f64>();
                    }
                }
                for q in 0..d {
                    tmp[q] = (0..d).map(|b| model.r[(q, b)] * x[p * d + b]).sum::<f64>() + self.terminal[j * d + q];
                }
                cost += 0.5 * tmp.iter().map(|v| v * v).sum::<f64>();
                total += cost;
                if !want_grad {
                    continue;
                }
                // λ_p = Rᵀ(R x_p + g)
                for q in 0..d {
                    lam[q] = (0..d).map(|b| model.r[(b, q)] * tmp[b]).sum();
                }
                for k in (0..p).rev() {
                    // ∂cost/∂α_{k+1} = (T/p)(α + λ_{k+1})
                    let mut ga_dot_x = 0.0;
                    for q in 0..d {
                        let o = k * d + q;
                        let ga = dt * (al[o] + lam[q]);
                        ga_dot_x += ga * x[o];
                        gc[o] += ga;
                        lam[q] += a[k] * ga;
                    }
                    grad[k] += w * ga_dot_x;
                    if has_running {
                        self.running_residual(j, k, &x[k * d..(k + 1) * d], &mut tmp);
                        for q in 0..d {
                            lam[q] += dt * (0..d).map(|b| model.q[(b, q)] * tmp[b]).sum::<f64>();
                        }
                    }
                }
            }
            value += w * total;
            if want_grad {
                for k in 0..p {
                    let feat = self.features.at(j, k);
                    let g = &mut grad[p + k * width..p + (k + 1) * width];
                    for (ll, f) in feat.iter().enumerate() {
                        if *f == 0.0 {
                            continue;
                        }
                        for q in 0..d {
                            g[ll * d + q] += w * f * gc[k * d + q];
                        }
                    }
                }
            }
        }
        (value, grad)
    }

    fn running_residual(&self, j: usize, k: usize, x: &[f64], out: &mut [f64]) {
        let (p, d) = (self.problem.grid.steps(), out.len());
        for a in 0..d {
            let f = self.running.as_ref().map_or(0.0, |r| r[(j * p + k) * d + a]);
            out[a] = (0..d).map(|b| self.problem.model.q[(a, b)] * x[b]).sum::<f64>() + f;
        }
    }

    fn run(&self, params: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let n = self.problem.bank.realizations();
        let want = grad.is_some();
        let parts: Vec<(f64, Vec<f64>)> = (0..n.div_ceil(BLOCK))
            .into_par_iter()
            .map(|b| self.block(params, b * BLOCK..((b + 1) * BLOCK).min(n), want))
            .collect();
        let mut value = 0.0;
        if let Some(g) = grad {
            g.fill(0.0);
            for (v, pg) in &parts {
                value += v;
                for (a, b) in g.iter_mut().zip(pg) {
                    *a += b;
                }
            }
            if self.freeze_gain {
                g[..self.problem.grid.steps()].fill(0.0);
            }
        } else {
            value = parts.iter().map(|(v, _)| v).sum();
        }
        value
    }

    /// Raw cost without the gradient.
    pub fn value(&self, params: &[f64]) -> f64 {
        self.run(params, None)
    }
}

impl Objective for PolicyObjective<'_> {
    fn len(&self) -> usize {
        self.template.param_count()
    }

    fn evaluate(&self, params: &[f64], grad: &mut [f64]) -> Result<f64> {
        if params.len() != self.len() || grad.len() != self.len() {
            return Err(Error::shape("parameter vector has the wrong length"));
        }
        Ok(self.run(params, Some(grad)))
    }
}

/// Exact gradient of [`empirical_cost`] with respect to `(a, c)`, in the
/// layout of [`FeedbackPolicy::params`].
pub fn cost_gradient(policy: &FeedbackPolicy, problem: &ResponseProblem) -> Result<Vec<f64>> {
    let obj = PolicyObjective::new(*problem, policy, false)?;
    let mut g = vec![0.0; obj.len()];
    obj.evaluate(&policy.params(), &mut g)?;
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Abort when the cost exceeds this value.
    pub divergence: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.01, epochs: 15, beta1: 0.9, beta2: 0.999, eps: 1e-8, divergence: 1e6 }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0, config }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        let c = self.config;
        self.t += 1;
        let b1t = 1.0 - c.beta1.powi(self.t as i32);
        let b2t = 1.0 - c.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let mh = *m / b1t;
            let vh = *v / b2t;
            *p -= c.lr * mh / (vh.sqrt() + c.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamOutcome {
    pub params: Vec<f64>,
    /// Cost before each update, then the cost of the returned iterate.
    pub costs: Vec<f64>,
}

/// Full-batch ADAM; returns the final iterate.
pub fn adam_optimize<O: Objective + ?Sized>(objective: &O, start: &[f64], config: AdamConfig) -> Result<AdamOutcome> {
    if config.epochs == 0 {
        return Err(Error::invalid("ADAM needs at least one epoch"));
    }
    if !(config.lr > 0.0) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    let mut params = start.to_vec();
    let mut grad = vec![0.0; params.len()];
    let mut state = AdamState::new(params.len(), config);
    let mut costs = Vec::with_capacity(config.epochs + 1);
    let guard = |epoch: usize, cost: f64| {
        if !cost.is_finite() || cost > config.divergence {
            Err(Error::Divergence { epoch, cost })
        } else {
            Ok(())
        }
    };
    for epoch in 0..config.epochs {
        let cost = objective.evaluate(&params, &mut grad)?;
        guard(epoch, cost)?;
        costs.push(cost);
        state.step(&mut params, &grad);
    }
    let last = objective.evaluate(&params, &mut grad)?;
    guard(config.epochs, last)?;
    costs.push(last);
    Ok(AdamOutcome { params, costs })
}

/// Result of the exact best response.
#[derive(Debug, Clone)]
pub struct AnalyticResponse {
    pub policy: FeedbackPolicy,
    /// `h̃[j][k]`, the intercept of the optimal feedback `-(η x + h̃)`.
    pub intercept: InterceptField,
}

/// Optimal affine feedback of the discrete problem, with the conditional
/// expectations of the backward recursion replaced by tail-weighted Hermite
/// regressions on `m̄_k`:
///
/// ```text
/// h̃_p = Rᵀ g(m̄_p)
/// h̃_k = (I + (T/p) P_{k+1})⁻¹ E^τ[h̃_{k+1} + (T/p) Qᵀ f(m̄_{k+1}) 1_{k+1<p} | F_k]
/// ```
///
/// The gains are `a_k = -η_k`, the intercept blocks `c_k = -coef_k`.
pub fn analytic_best_response(
    problem: &ResponseProblem,
    eta: &RiccatiTable,
    template: &FeedbackPolicy,
) -> Result<AnalyticResponse> {
    problem.check_policy(template)?;
    eta.check_grid(problem.grid)?;
    let gains = eta.scalars()?;
    let (grid, model) = (problem.grid, problem.model);
    let (n, p, d) = (problem.bank.realizations(), grid.steps(), problem.bank.dim());
    let dt = grid.dt();
    let aux = discrete_auxiliary(&model.q, &model.r, grid)?;
    let set = template.set();
    let l = set.len();
    let running = problem.running_targets();

    let mut policy = template.clone();
    for k in 0..p {
        policy.a[k] = -gains[k];
    }
    let mut h = InterceptField::zeros(n, p, d);
    // Current h̃_{k+1} per realization, starting from Rᵀ g(m̄_p).
    let terminal = problem.terminal_targets();
    let mut next = DMatrix::<f64>::zeros(n, d);
    for j in 0..n {
        for a in 0..d {
            next[(j, a)] = (0..d).map(|b| model.r[(b, a)] * terminal[j * d + b]).sum();
        }
    }
    for k in (0..p).rev() {
        let mut target = next.clone();
        if k + 1 < p {
            if let Some(f) = &running {
                for j in 0..n {
                    for a in 0..d {
                        let qf: f64 = (0..d).map(|b| model.q[(b, a)] * f[(j * p + k + 1) * d + b]).sum();
                        target[(j, a)] += dt * qf;
                    }
                }
            }
        }
        let samples = problem.env.node_samples(k);
        let x = design_matrix(set, &template.standardizers()[k], &samples);
        let w = problem.weights.tail_column(k);
        let coef = weighted_least_squares(&x, &target, &w).map_err(|e| Error::Regression(format!("node {k}: {e}")))?;
        let shrink = (DMatrix::<f64>::identity(d, d) + &aux[k + 1] * dt)
            .try_inverse()
            .ok_or_else(|| Error::Regression("singular backward factor".into()))?;
        let coef = coef * shrink.transpose();
        let fitted = &x * &coef;
        for j in 0..n {
            for a in 0..d {
                h.at_mut(j, k)[a] = fitted[(j, a)];
            }
        }
        next = fitted;
        let block = &mut policy.c[k * l * d..(k + 1) * l * d];
        for ll in 0..l {
            for a in 0..d {
                block[ll * d + a] = -coef[(ll, a)];
            }
        }
    }
    Ok(AnalyticResponse { policy, intercept: h })
}
