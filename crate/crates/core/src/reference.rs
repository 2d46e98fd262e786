//! Picard / least-squares Monte Carlo solver for the decoupled FBSDE that
//! characterizes the equilibrium, used as the reference the learner is
//! measured against.
//!
//! Under the simulation measure the forward component is the
//! Ornstein-Uhlenbeck process `dm = -η m dt + ε dW`; the backward component
//! solves `h_t = E^h[exp(-∫_t^T η) Rᵀ g(m_T) | F_t]`, where `E^h` is the
//! expectation tilted by the Girsanov density of `h` itself. Each Picard step
//! re-weights with the previous iterate and regresses on Hermite features of
//! `m_t`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{EnvironmentField, InterceptField};
use crate::fingerprint::Fingerprinter;
use crate::girsanov::{girsanov_weights, GirsanovWeights};
use crate::grid::TimeGrid;
use crate::hermite::{fit_regression, FeatureStandardizer, MultiIndexSet, RegressionCoefficients, Scale, ScaleMode};
use crate::model::LqModel;
use crate::noise::{NoiseBank, WordReader};
use crate::riccati::RiccatiTable;

#[derive(Debug, Clone)]
pub struct ReferenceConfig {
    pub picard_iters: usize,
    pub degree: usize,
    /// Per-coordinate bound applied to every iterate.
    pub clamp: f64,
    /// L² gap between the last two iterates above which a warning is logged.
    pub tolerance: f64,
    pub scale: ScaleMode,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self { picard_iters: 10, degree: 4, clamp: 1.0, tolerance: 1e-2, scale: ScaleMode::Diag }
    }
}

/// Everything the solver needs besides its own settings.
#[derive(Clone, Copy)]
pub struct FbsdeProblem<'a> {
    pub model: &'a LqModel,
    pub grid: &'a TimeGrid,
    pub bank: &'a NoiseBank,
    pub eta: &'a RiccatiTable,
}

impl FbsdeProblem<'_> {
    fn check(&self) -> Result<Vec<f64>> {
        self.model.validate()?;
        self.bank.check_grid(self.grid)?;
        self.eta.check_grid(self.grid)?;
        if self.bank.dim() != self.model.dim() || self.eta.dim() != self.model.dim() {
            return Err(Error::shape("model, noise bank and Riccati table disagree on the dimension"));
        }
        if !self.model.running.is_zero() {
            return Err(Error::invalid("the reference solver supports f = 0 only"));
        }
        self.eta.scalars()
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub env: EnvironmentField,
    pub intercept: InterceptField,
    /// Regression at node `k`, `k = 0..p`, producing `intercept[·][k]` before clamping.
    pub coefficients: Vec<RegressionCoefficients>,
    pub degree: usize,
    pub clamp: f64,
    pub equilibrium_cost: f64,
    pub cost_stderr: f64,
    /// L² gap between the last two Picard iterates.
    pub last_change: f64,
    pub iterations: usize,
    pub fingerprint: u64,
    pub bank_fingerprint: u64,
}

impl ReferenceSolution {
    /// Recomputes `h[j][k]` from the stored regression.
    pub fn predict(&self, j: usize, k: usize) -> Vec<f64> {
        let set = MultiIndexSet::new(self.env.dim(), self.degree).expect("stored degree is valid");
        let mut v = self.coefficients[k].predict(&set, self.env.at(j, k));
        clamp_in_place(&mut v, self.clamp);
        v
    }
}

fn clamp_in_place(v: &mut [f64], bound: f64) {
    for x in v {
        *x = x.clamp(-bound, bound);
    }
}

/// Euler scheme `m_{k+1} = m_k - (T/p) η_k m_k + ε sqrt(T/p) Δ_{k+1}w` from `m_0 = 0`.
pub fn simulate_ou_forward(
    eta: &RiccatiTable,
    bank: &NoiseBank,
    grid: &TimeGrid,
    epsilon: f64,
) -> Result<EnvironmentField> {
    simulate_ou_forward_from(&vec![0.0; bank.dim()], eta, bank, grid, epsilon)
}

pub fn simulate_ou_forward_from(
    start: &[f64],
    eta: &RiccatiTable,
    bank: &NoiseBank,
    grid: &TimeGrid,
    epsilon: f64,
) -> Result<EnvironmentField> {
    bank.check_grid(grid)?;
    eta.check_grid(grid)?;
    let (n, p, d) = (bank.realizations(), grid.steps(), bank.dim());
    if start.len() != d || eta.dim() != d {
        return Err(Error::shape("initial mean and Riccati table must match the bank dimension"));
    }
    let dt = grid.dt();
    let vol = epsilon * dt.sqrt();
    let mut field = EnvironmentField::zeros(n, p + 1, d);
    field.as_mut_slice().par_chunks_mut((p + 1) * d).enumerate().for_each(|(j, row)| {
        let inc = bank.common(j);
        row[..d].copy_from_slice(start);
        for k in 0..p {
            let e = eta.eta(k);
            let (head, tail) = row.split_at_mut((k + 1) * d);
            let cur = &head[k * d..];
            for a in 0..d {
                let drift: f64 = (0..d).map(|b| e[(a, b)] * cur[b]).sum();
                tail[a] = cur[a] - dt * drift + vol * inc[k * d + a];
            }
        }
    });
    Ok(field)
}

/// One Picard iteration: re-weight with `h_prev`, regress the discounted
/// terminal target on Hermite features of `m` at each node, clamp.
pub fn picard_step(
    h_prev: &InterceptField,
    env: &EnvironmentField,
    problem: &FbsdeProblem,
    config: &ReferenceConfig,
) -> Result<(InterceptField, Vec<RegressionCoefficients>)> {
    let eta = problem.check()?;
    let (grid, bank, model) = (problem.grid, problem.bank, problem.model);
    let (n, p, d) = (bank.realizations(), grid.steps(), bank.dim());
    env.check_shape(n, p + 1, d, "environment field")?;
    h_prev.check_shape(n, p, d, "intercept field")?;
    let weights = if model.epsilon > 0.0 {
        girsanov_weights(h_prev, bank, model.epsilon, grid)?
    } else {
        GirsanovWeights::unit(n, p)
    };
    let set = MultiIndexSet::new(d, config.degree)?;
    let dt = grid.dt();

    // Rᵀ g(m_T) per realization.
    let mut terminal = DMatrix::<f64>::zeros(n, d);
    let mut g = vec![0.0; d];
    for j in 0..n {
        model.terminal.eval_into(env.at(j, p), &mut g);
        for a in 0..d {
            terminal[(j, a)] = (0..d).map(|b| model.r[(b, a)] * g[b]).sum();
        }
    }

    let coefs: Vec<RegressionCoefficients> = (0..p)
        .into_par_iter()
        .map(|k| {
            let discount = (-dt * eta[k..p].iter().sum::<f64>()).exp();
            let targets = &terminal * discount;
            let samples = env.node_samples(k);
            let w = weights.tail_column(k);
            fit_regression(&set, &samples, &targets, &w, config.scale)
                .map_err(|e| Error::Regression(format!("node {k}: {e}")))
        })
        .collect::<Result<_>>()?;

    let mut next = InterceptField::zeros(n, p, d);
    let mut feat = vec![0.0; set.len()];
    for j in 0..n {
        for (k, c) in coefs.iter().enumerate() {
            let out = next.at_mut(j, k);
            c.predict_into(&set, env.at(j, k), &mut feat, out);
            clamp_in_place(out, config.clamp);
        }
    }
    Ok((next, coefs))
}

/// L² gap `sqrt(mean_{j,k} |a - b|²)` between two intercept fields.
pub fn field_gap(a: &InterceptField, b: &InterceptField) -> f64 {
    a.sub(b).rms()
}

/// Runs the Picard scheme from `h⁰ = 0` and evaluates the equilibrium cost.
pub fn solve_reference(problem: &FbsdeProblem, config: &ReferenceConfig) -> Result<ReferenceSolution> {
    problem.check()?;
    if config.picard_iters == 0 {
        return Err(Error::invalid("at least one Picard iteration is required"));
    }
    let (grid, bank, model) = (problem.grid, problem.bank, problem.model);
    let (n, p, d) = (bank.realizations(), grid.steps(), bank.dim());
    let env = simulate_ou_forward_from(&model.x0, problem.eta, bank, grid, model.epsilon)?;
    let mut h = InterceptField::zeros(n, p, d);
    let mut coefficients = Vec::new();
    let mut last_change = f64::INFINITY;
    for it in 0..config.picard_iters {
        let (next, coefs) = picard_step(&h, &env, problem, config).map_err(|e| e.at_stage("picard step", it + 1))?;
        last_change = field_gap(&next, &h);
        log::debug!("picard iteration {}: change {last_change:.3e}", it + 1);
        h = next;
        coefficients = coefs;
    }
    if last_change > config.tolerance {
        log::warn!(
            "Picard scheme not converged after {} iterations: last change {last_change:.3e} > {:.3e}",
            config.picard_iters,
            config.tolerance
        );
    }
    let mut solution = ReferenceSolution {
        env,
        intercept: h,
        coefficients,
        degree: config.degree,
        clamp: config.clamp,
        equilibrium_cost: f64::NAN,
        cost_stderr: f64::NAN,
        last_change,
        iterations: config.picard_iters,
        fingerprint: 0,
        bank_fingerprint: bank.fingerprint(),
    };
    let (cost, se) = reference_cost(&solution, problem)?;
    solution.equilibrium_cost = cost;
    solution.cost_stderr = se;
    solution.fingerprint = reference_fingerprint(problem, config);
    Ok(solution)
}

/// Cache key of a reference run.
pub fn reference_fingerprint(problem: &FbsdeProblem, config: &ReferenceConfig) -> u64 {
    let mut fp = Fingerprinter::new("reference-solution");
    let m = problem.model;
    fp.u64(problem.bank.fingerprint())
        .f64(problem.grid.horizon())
        .u64(problem.grid.steps() as u64)
        .f64s(m.q.as_slice())
        .f64s(m.r.as_slice())
        .str(&format!("{:?}", m.terminal))
        .f64s(&m.x0)
        .f64(m.sigma)
        .f64(m.epsilon)
        .u64(config.picard_iters as u64)
        .u64(config.degree as u64)
        .f64(config.clamp)
        .u64(matches!(config.scale, ScaleMode::Cholesky) as u64);
    for k in 0..=problem.eta.steps() {
        fp.f64s(problem.eta.eta(k).as_slice());
    }
    fp.finish()
}

/// Monte Carlo estimate of the equilibrium cost `E^h[cost]` under the
/// feedback `α* = -(η x + h)`, with its standard error.
///
/// Under the simulation measure the tilt cancels `h` in the state dynamics,
/// so paths follow `dx = -η x dt + σ dB + ε dW` and realizations are
/// re-weighted by the Girsanov density of `h`.
pub fn reference_cost(solution: &ReferenceSolution, problem: &FbsdeProblem) -> Result<(f64, f64)> {
    let eta = problem.check()?;
    let (grid, bank, model) = (problem.grid, problem.bank, problem.model);
    let (m, n, p, d) = (bank.particles(), bank.realizations(), grid.steps(), bank.dim());
    solution.intercept.check_shape(n, p, d, "reference intercept")?;
    if solution.bank_fingerprint != bank.fingerprint() {
        return Err(Error::BankMismatch("reference solution was computed on a different noise bank".into()));
    }
    let weights = if model.epsilon > 0.0 {
        girsanov_weights(&solution.intercept, bank, model.epsilon, grid)?
    } else {
        GirsanovWeights::unit(n, p)
    };
    let dt = grid.dt();
    let (sv, ev) = (model.sigma * dt.sqrt(), model.epsilon * dt.sqrt());
    let has_q = model.q.iter().any(|v| *v != 0.0);
    let per_j: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut g = vec![0.0; d];
            model.terminal.eval_into(solution.env.at(j, p), &mut g);
            let common = bank.common(j);
            let mut total = 0.0;
            let mut x = vec![0.0; d];
            let mut tmp = vec![0.0; d];
            for i in 0..m {
                let idio = bank.idio(i, j);
                x.copy_from_slice(&model.x0);
                let mut cost = 0.0;
                for k in 0..p {
                    let h = solution.intercept.at(j, k);
                    if has_q {
                        for a in 0..d {
                            tmp[a] = (0..d).map(|b| model.q[(a, b)] * x[b]).sum();
                        }
                        cost += 0.5 * dt * tmp.iter().map(|v| v * v).sum::<f64>();
                    }
                    for a in 0..d {
                        let alpha = -(eta[k] * x[a] + h[a]);
                        cost += 0.5 * dt * alpha * alpha;
                    }
                    for a in 0..d {
                        x[a] += -dt * eta[k] * x[a] + sv * idio[k * d + a] + ev * common[k * d + a];
                    }
                }
                for a in 0..d {
                    tmp[a] = (0..d).map(|b| model.r[(a, b)] * x[b]).sum::<f64>() + g[a];
                }
                cost += 0.5 * tmp.iter().map(|v| v * v).sum::<f64>();
                total += cost;
            }
            weights.full_at(j) * total / m as f64
        })
        .collect();
    Ok(mean_and_stderr(&per_j))
}

pub(crate) fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub const REFERENCE_MAGIC: u64 = u64::from_le_bytes(*b"TFPREFSL");
pub const REFERENCE_VERSION: u64 = 1;

impl ReferenceSolution {
    /// Binary cache layout: little-endian u64 header
    /// `(magic, version, fingerprint, bank fingerprint, N, p, d, D, iterations)`,
    /// then f64 scalars `(clamp, cost, stderr, last change)`, the environment
    /// and intercept fields, and per node the standardizer and coefficients.
    pub fn encode(&self) -> Vec<u8> {
        let mut words: Vec<u64> = vec![
            REFERENCE_MAGIC,
            REFERENCE_VERSION,
            self.fingerprint,
            self.bank_fingerprint,
            self.env.realizations() as u64,
            self.intercept.nodes() as u64,
            self.env.dim() as u64,
            self.degree as u64,
            self.iterations as u64,
        ];
        let mut push = |v: f64| words.push(v.to_bits());
        for v in [self.clamp, self.equilibrium_cost, self.cost_stderr, self.last_change] {
            push(v);
        }
        for v in self.env.as_slice().iter().chain(self.intercept.as_slice()) {
            push(*v);
        }
        for c in &self.coefficients {
            let st = &c.standardizer;
            let (kind, scale): (u64, Vec<f64>) = match st.scale() {
                Scale::Diag(s) => (0, s.clone()),
                Scale::Cholesky(u) => (1, u.as_slice().to_vec()),
            };
            words.push(kind | (st.is_degenerate() as u64) << 1 | (st.fell_back() as u64) << 2);
            let mut push = |v: f64| words.push(v.to_bits());
            st.mean().iter().for_each(|v| push(*v));
            scale.iter().for_each(|v| push(*v));
            c.coef.as_slice().iter().for_each(|v| push(*v));
        }
        words.iter().flat_map(|w| w.to_le_bytes()).collect()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let corrupt = |msg: &str| Error::CorruptCache(msg.to_string());
        let mut r = WordReader::new(bytes);
        if r.u64()? != REFERENCE_MAGIC {
            return Err(corrupt("bad reference solution magic"));
        }
        if r.u64()? != REFERENCE_VERSION {
            return Err(corrupt("unsupported reference solution version"));
        }
        let fingerprint = r.u64()?;
        let bank_fingerprint = r.u64()?;
        let mut dims = [0usize; 5];
        for slot in &mut dims {
            *slot = usize::try_from(r.u64()?).map_err(|_| corrupt("dimension overflows usize"))?;
        }
        let [n, p, d, degree, iterations] = dims;
        if n == 0 || p == 0 || d == 0 || d > 16 || degree > 64 {
            return Err(corrupt("implausible reference dimensions"));
        }
        let set_len = binomial(degree + d, d).ok_or_else(|| corrupt("basis size overflows"))?;
        let scale_len = d * d;
        // Upper bound of the payload, checked before any allocation.
        let env_len = n.checked_mul(p + 1).and_then(|v| v.checked_mul(d)).ok_or_else(|| corrupt("size overflow"))?;
        let h_len = n.checked_mul(p).and_then(|v| v.checked_mul(d)).ok_or_else(|| corrupt("size overflow"))?;
        let per_node = 1 + d + scale_len + set_len * d;
        let max_words = per_node
            .checked_mul(p)
            .and_then(|v| v.checked_add(4 + env_len + h_len))
            .ok_or_else(|| corrupt("size overflow"))?;
        if r.remaining() / 8 > max_words || !r.remaining().is_multiple_of(8) {
            return Err(corrupt("payload length does not match header"));
        }
        let clamp = r.f64()?;
        let equilibrium_cost = r.f64()?;
        let cost_stderr = r.f64()?;
        let last_change = r.f64()?;
        let env = EnvironmentField::from_vec(n, p + 1, d, r.f64s(env_len)?)?;
        let intercept = InterceptField::from_vec(n, p, d, r.f64s(h_len)?)?;
        if env.as_slice().iter().chain(intercept.as_slice()).any(|v| !v.is_finite()) || !(clamp > 0.0) {
            return Err(corrupt("non-finite field values"));
        }
        let mut coefficients = Vec::with_capacity(p);
        for _ in 0..p {
            let flags = r.u64()?;
            if flags > 7 {
                return Err(corrupt("unknown standardizer flags"));
            }
            let mean = r.f64s(d)?;
            let scale = if flags & 1 == 0 {
                let s = r.f64s(d)?;
                if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(corrupt("non-positive diagonal scale"));
                }
                Scale::Diag(s)
            } else {
                let u = DMatrix::from_column_slice(d, d, &r.f64s(scale_len)?);
                if (0..d).any(|c| !(u[(c, c)].is_finite() && u[(c, c)] > 0.0)) || u.iter().any(|v| !v.is_finite()) {
                    return Err(corrupt("invalid Cholesky factor"));
                }
                Scale::Cholesky(u)
            };
            let coef = DMatrix::from_column_slice(set_len, d, &r.f64s(set_len * d)?);
            if mean.iter().chain(coef.iter()).any(|v| !v.is_finite()) {
                return Err(corrupt("non-finite coefficients"));
            }
            let standardizer = FeatureStandardizer::from_parts(mean, scale, flags & 2 != 0, flags & 4 != 0);
            coefficients.push(RegressionCoefficients { coef, standardizer });
        }
        if r.remaining() != 0 {
            return Err(corrupt("trailing bytes after reference payload"));
        }
        Ok(Self {
            env,
            intercept,
            coefficients,
            degree,
            clamp,
            equilibrium_cost,
            cost_stderr,
            last_change,
            iterations,
            fingerprint,
            bank_fingerprint,
        })
    }
}

fn binomial(n: usize, k: usize) -> Option<usize> {
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    Some(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Coupling;
    use crate::noise::sample_noise_bank;
    use crate::riccati::{continuous_riccati, discrete_riccati};

    fn one() -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }

    fn zero() -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }

    #[test]
    fn ou_forward_examples() {
        let grid = TimeGrid::unit(4).unwrap();
        let eta = continuous_riccati(&zero(), &one(), &grid).unwrap();
        let bank =
            NoiseBank::from_parts(0, crate::noise::BankShape::new(1, 2, 4, 1).unwrap(), vec![0.0; 8], vec![0.0; 8])
                .unwrap();
        let m = simulate_ou_forward(&eta, &bank, &grid, 1.0).unwrap();
        assert_eq!(m.max_abs(), 0.0);
        let bank = sample_noise_bank(1, 1, 5, 4, 1).unwrap();
        let m = simulate_ou_forward(&eta, &bank, &grid, 0.0).unwrap();
        assert_eq!(m.max_abs(), 0.0);
    }

    #[test]
    fn ou_terminal_variance_matches_quadrature() {
        let (n, p) = (100_000, 50);
        let grid = TimeGrid::unit(p).unwrap();
        let eta = continuous_riccati(&zero(), &one(), &grid).unwrap();
        let bank = sample_noise_bank(11, 1, n, p, 1).unwrap();
        let m = simulate_ou_forward(&eta, &bank, &grid, 1.0).unwrap();
        let samples: Vec<f64> = (0..n).map(|j| m.at(j, p)[0]).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        // ∫_0^1 exp(-2∫_s^1 du/(2-u)) ds = ∫_0^1 (1/(2-s))² ds = 1/2.
        assert!((var - 0.5).abs() < 0.03 * 0.5, "variance {var}");
    }

    fn constant_problem_solution(gamma: f64, n: usize) -> (ReferenceSolution, TimeGrid, RiccatiTable) {
        let p = 5;
        let grid = TimeGrid::unit(p).unwrap();
        let eta = discrete_riccati(&zero(), &one(), &grid).unwrap();
        let bank = sample_noise_bank(3, 1, n, p, 1).unwrap();
        let model = LqModel::benchmark(Coupling::Constant(vec![gamma]), 0.0, 1.0);
        let problem = FbsdeProblem { model: &model, grid: &grid, bank: &bank, eta: &eta };
        let sol = solve_reference(&problem, &ReferenceConfig { picard_iters: 3, ..Default::default() }).unwrap();
        (sol, grid, eta)
    }

    #[test]
    fn constant_target_has_closed_form() {
        let (sol, grid, eta) = constant_problem_solution(0.8, 200);
        let p = grid.steps();
        for k in 0..p {
            let s: f64 = (k..p).map(|s| eta.eta(s)[(0, 0)]).sum();
            let want = (-grid.dt() * s).exp() * 0.8;
            for j in 0..200 {
                assert!((sol.intercept.at(j, k)[0] - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn zero_coupling_gives_zero_intercept() {
        let (sol, _, _) = constant_problem_solution(0.0, 50);
        assert_eq!(sol.intercept.max_abs(), 0.0);
    }

    #[test]
    fn deterministic_cost_matches_hand_rollout() {
        // σ = ε = 0, g ≡ γ: x stays 0 and α = -h, so the cost is
        // (T/p)/2 Σ h_k² + γ²/2.
        let gamma = 0.6;
        let p = 4;
        let grid = TimeGrid::unit(p).unwrap();
        let eta = discrete_riccati(&zero(), &one(), &grid).unwrap();
        let bank = sample_noise_bank(3, 2, 3, p, 1).unwrap();
        let model = LqModel::benchmark(Coupling::Constant(vec![gamma]), 0.0, 0.0);
        let problem = FbsdeProblem { model: &model, grid: &grid, bank: &bank, eta: &eta };
        let sol = solve_reference(&problem, &ReferenceConfig { picard_iters: 2, ..Default::default() }).unwrap();
        let hs: Vec<f64> = (0..p).map(|k| sol.intercept.at(0, k)[0]).collect();
        let want = 0.5 * grid.dt() * hs.iter().map(|h| h * h).sum::<f64>() + 0.5 * gamma * gamma;
        assert!((sol.equilibrium_cost - want).abs() < 1e-14);
        assert_eq!(sol.cost_stderr, 0.0);
    }

    #[test]
    fn cache_round_trip() {
        let (sol, _, _) = constant_problem_solution(0.3, 20);
        let bytes = sol.encode();
        let back = ReferenceSolution::decode(&bytes).unwrap();
        assert_eq!(back.intercept, sol.intercept);
        assert_eq!(back.env, sol.env);
        assert_eq!(back.coefficients, sol.coefficients);
        assert_eq!(back.equilibrium_cost.to_bits(), sol.equilibrium_cost.to_bits());
        assert!(ReferenceSolution::decode(&bytes[..bytes.len() - 8]).is_err());
        let mut bad = bytes.clone();
        bad[0] ^= 1;
        assert!(ReferenceSolution::decode(&bad).is_err());
        let mut extra = bytes;
        extra.extend_from_slice(&[0u8; 8]);
        assert!(ReferenceSolution::decode(&extra).is_err());
    }

    #[test]
    fn rejects_running_coupling() {
        let grid = TimeGrid::unit(2).unwrap();
        let eta = discrete_riccati(&zero(), &one(), &grid).unwrap();
        let bank = sample_noise_bank(3, 1, 4, 2, 1).unwrap();
        let mut model = LqModel::benchmark(Coupling::Constant(vec![0.1]), 0.0, 1.0);
        model.running = Coupling::Constant(vec![1.0]);
        let problem = FbsdeProblem { model: &model, grid: &grid, bank: &bank, eta: &eta };
        assert!(solve_reference(&problem, &ReferenceConfig::default()).is_err());
    }
}
