//! Equilibrium analysis, error metrics and diagnostics.

use crate::error::{Error, Result};
use crate::field::{EnvironmentField, InterceptField};
use crate::grid::TimeGrid;
use crate::model::Coupling;
use crate::noise::NoiseBank;
use crate::play::{
    current_tilt, initial_state, prepare, replay, tilt_weights, Backend, PlayConfig, PlayContext, PlayState,
};
use crate::policy::{
    adam_optimize, analytic_best_response, fit_policy_standardizers, realization_costs, rollout, FeedbackPolicy,
    PolicyObjective, ResponseProblem,
};
use crate::reference::{mean_and_stderr, solve_reference, FbsdeProblem, ReferenceConfig, ReferenceSolution};

/// Bisection on a sign change of `f` in `[lo, hi]`, to absolute tolerance `tol`.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> Option<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() || !flo.is_finite() || !fhi.is_finite() {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol || mid == lo || mid == hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// All sign changes of `f` on a uniform scan of `[lo, hi]`, each refined by bisection.
fn scan_roots(f: impl Fn(f64) -> f64, lo: f64, hi: f64, cells: usize, tol: f64) -> Vec<f64> {
    let at = |i: usize| if i == cells { hi } else { lo + (hi - lo) * i as f64 / cells as f64 };
    let mut roots: Vec<f64> = Vec::new();
    let mut prev = f(lo);
    for i in 0..cells {
        let (a, b) = (at(i), at(i + 1));
        let fb = f(b);
        if prev == 0.0 {
            roots.push(a);
        } else if fb != 0.0 && prev.signum() != fb.signum() {
            if let Some(r) = bisect(&f, a, b, tol) {
                roots.push(r);
            }
        }
        prev = fb;
    }
    if prev == 0.0 {
        roots.push(hi);
    }
    roots.dedup_by(|a, b| (*a - *b).abs() < 10.0 * tol);
    roots
}

pub const DEFAULT_BRACKET: (f64, f64) = (-2.0, 2.0);
const SCAN_CELLS: usize = 10_000;
const ROOT_TOL: f64 = 1e-12;

/// One deterministic equilibrium of the benchmark `Q = 0, R = I, T = 1`.
#[derive(Debug, Clone)]
pub struct EquilibriumRoot {
    /// Terminal mean `m₁`, a root of `2x + g(x) = 0`.
    pub terminal_mean: f64,
    pub residual: f64,
    /// `𝒥(m₁) = m₁² + G(m₁)`, when `g` has a primitive.
    pub potential: Option<f64>,
    /// `m_t = -g(m₁) t / 2` at the grid nodes.
    pub mean_path: Vec<f64>,
    /// `h_t = g(m₁) / (2 - t)` at the grid nodes.
    pub intercept_path: Vec<f64>,
}

impl EquilibriumRoot {
    /// Largest residual of `m' = -m/(2-t) - h`, `h' = h/(2-t)` at the nodes,
    /// with the derivatives of the reconstruction taken in closed form.
    pub fn ode_residual(&self, g: &Coupling, grid: &TimeGrid) -> f64 {
        let gv = g.eval1(self.terminal_mean);
        let mut worst: f64 = 0.0;
        for (k, t) in grid.nodes().enumerate() {
            let (m, h) = (self.mean_path[k], self.intercept_path[k]);
            let eta = 1.0 / (2.0 - t);
            let dm = -0.5 * gv;
            let dh = gv * eta * eta;
            worst = worst.max((dm + eta * m + h).abs()).max((dh - eta * h).abs());
        }
        worst
    }
}

#[derive(Debug, Clone, Default)]
pub struct EquilibriumSet {
    /// Sorted by terminal mean.
    pub roots: Vec<EquilibriumRoot>,
}

impl EquilibriumSet {
    /// Root with the smallest potential value.
    pub fn global_minimizer(&self) -> Option<&EquilibriumRoot> {
        self.roots
            .iter()
            .filter(|r| r.potential.is_some())
            .min_by(|a, b| a.potential.partial_cmp(&b.potential).unwrap())
    }

    pub fn nearest(&self, x: f64) -> Option<&EquilibriumRoot> {
        self.roots.iter().min_by(|a, b| (a.terminal_mean - x).abs().total_cmp(&(b.terminal_mean - x).abs()))
    }
}

/// Roots of `2x + g(x) = 0` in `bracket` and the equilibrium each one
/// generates on `grid`. Only scalar couplings are supported.
pub fn deterministic_equilibria(g: &Coupling, bracket: (f64, f64), grid: &TimeGrid) -> Result<EquilibriumSet> {
    let (lo, hi) = bracket;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::invalid(format!("bracket [{lo}, {hi}] must be finite and non-empty")));
    }
    if g.dim() != 1 {
        return Err(Error::invalid("deterministic equilibria need a scalar coupling"));
    }
    if grid.horizon() != 1.0 {
        return Err(Error::invalid("the closed-form reconstruction assumes T = 1"));
    }
    let f = |x: f64| 2.0 * x + g.eval1(x);
    let xs = scan_roots(f, lo, hi, SCAN_CELLS, ROOT_TOL);
    if xs.is_empty() {
        log::warn!("2x + g(x) has no sign change in [{lo}, {hi}]");
    }
    let roots = xs
        .into_iter()
        .map(|x| {
            let gv = g.eval1(x);
            EquilibriumRoot {
                terminal_mean: x,
                residual: f(x).abs(),
                potential: g.primitive(x).map(|big_g| x * x + big_g),
                mean_path: grid.nodes().map(|t| (2.0 - t) * (-gv * (1.0 / (2.0 - t) - 0.5))).collect(),
                intercept_path: grid.nodes().map(|t| gv / (2.0 - t)).collect(),
            }
        })
        .collect();
    Ok(EquilibriumSet { roots })
}

/// `𝒥(β) = β² + G(β)` tabulated on a uniform grid.
#[derive(Debug, Clone)]
pub struct PotentialCurve {
    pub beta: Vec<f64>,
    pub value: Vec<f64>,
    /// `𝒥'(β) = 2β + g(β)`.
    pub slope: Vec<f64>,
    /// Local minimizers, refined, ascending.
    pub minimizers: Vec<f64>,
    /// Zeros of the slope, ascending.
    pub stationary: Vec<f64>,
}

impl PotentialCurve {
    pub fn global_minimizer(&self, g: &Coupling) -> Option<f64> {
        let j = |b: f64| b * b + g.primitive(b).unwrap_or(f64::NAN);
        self.minimizers.iter().copied().min_by(|a, b| j(*a).total_cmp(&j(*b)))
    }
}

pub fn potential_scan(g: &Coupling, lo: f64, hi: f64, samples: usize) -> Result<PotentialCurve> {
    if samples < 2 || !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::invalid("potential scan needs a finite interval and at least two samples"));
    }
    if g.dim() != 1 || g.primitive(0.0).is_none() {
        return Err(Error::invalid("potential scan needs a scalar coupling with a known primitive"));
    }
    let potential = |b: f64| b * b + g.primitive(b).unwrap();
    let slope = |b: f64| 2.0 * b + g.eval1(b);
    let beta: Vec<f64> = (0..samples)
        .map(|i| if i + 1 == samples { hi } else { lo + (hi - lo) * i as f64 / (samples - 1) as f64 })
        .collect();
    let value: Vec<f64> = beta.iter().map(|b| potential(*b)).collect();
    let slopes: Vec<f64> = beta.iter().map(|b| slope(*b)).collect();

    let mut stationary = Vec::new();
    for i in 0..samples - 1 {
        let (sa, sb) = (slopes[i], slopes[i + 1]);
        if sa == 0.0 {
            stationary.push(beta[i]);
        } else if sb != 0.0 && sa.signum() != sb.signum() {
            stationary.extend(bisect(slope, beta[i], beta[i + 1], ROOT_TOL));
        }
    }
    if slopes[samples - 1] == 0.0 {
        stationary.push(hi);
    }

    // A grid minimum brackets a minimizer; refine on the neighbouring cells.
    let mut minimizers = Vec::new();
    for i in 0..samples {
        let left = i == 0 || value[i] <= value[i - 1];
        let right = i + 1 == samples || value[i] < value[i + 1];
        if !(left && right) {
            continue;
        }
        let a = beta[i.saturating_sub(1)];
        let b = beta[(i + 1).min(samples - 1)];
        let refined = match bisect(slope, a, b, ROOT_TOL) {
            Some(x) if slope(a) < 0.0 || slope(b) > 0.0 => x,
            _ => golden_section(potential, a, b),
        };
        minimizers.push(refined);
    }
    minimizers.dedup_by(|a, b| (*a - *b).abs() < 1e-10);
    Ok(PotentialCurve { beta, value, slope: slopes, minimizers, stationary })
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        if b - a < 1e-12 {
            break;
        }
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if f(c) <= f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

/// `[(1/(Np)) Σ_j Σ_{k<p} (|m̄_a − m̄_b|² + |h_a − h_b|²)]^{1/2}`.
pub fn field_distance(
    env_a: &EnvironmentField,
    h_a: &InterceptField,
    env_b: &EnvironmentField,
    h_b: &InterceptField,
) -> Result<f64> {
    let (n, p, d) = (h_a.realizations(), h_a.nodes(), h_a.dim());
    h_b.check_shape(n, p, d, "intercept field")?;
    env_a.check_shape(n, p + 1, d, "environment field")?;
    env_b.check_shape(n, p + 1, d, "environment field")?;
    if n == 0 || p == 0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for j in 0..n {
        for k in 0..p {
            for (a, b) in env_a.at(j, k).iter().zip(env_b.at(j, k)) {
                acc += (a - b).powi(2);
            }
            for (a, b) in h_a.at(j, k).iter().zip(h_b.at(j, k)) {
                acc += (a - b).powi(2);
            }
        }
    }
    Ok((acc / (n * p) as f64).sqrt())
}

/// Distance between a learned `(m̄, h)` and a reference computed on `bank`.
pub fn l2_error(
    env: &EnvironmentField,
    intercept: &InterceptField,
    bank: &NoiseBank,
    reference: &ReferenceSolution,
) -> Result<f64> {
    if reference.bank_fingerprint != bank.fingerprint() {
        return Err(Error::BankMismatch(format!(
            "reference was solved on bank {:016x}, fields come from bank {:016x}",
            reference.bank_fingerprint,
            bank.fingerprint()
        )));
    }
    field_distance(env, intercept, &reference.env, &reference.intercept)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exploitability {
    pub value: f64,
    /// Standard error of the paired per-realization difference.
    pub stderr: f64,
    pub policy_cost: f64,
    pub response_cost: f64,
}

/// Cost of the state's policy minus the cost of a fresh best response
/// against the frozen `m̄ⁿ`, both under the weights of the current tilt.
pub fn exploitability(state: &PlayState, ctx: &PlayContext) -> Result<Exploitability> {
    let c = ctx.config;
    let tilt = if c.model.epsilon > 0.0 {
        current_tilt(state)
    } else {
        InterceptField::zeros(c.realizations, c.steps, c.model.dim())
    };
    let weights = tilt_weights(&tilt, ctx.bank, c.model.epsilon, ctx.grid)?;
    let problem = ResponseProblem {
        model: &c.model,
        grid: ctx.grid,
        bank: ctx.bank,
        env: &state.env_bar,
        tilt: &tilt,
        weights: &weights,
    };
    let response = match c.backend {
        Backend::Analytic => {
            let mut template = state.policy.clone();
            template.replace_standardizers(fit_policy_standardizers(&state.env_bar, c.steps, c.scale)?);
            analytic_best_response(&problem, ctx.eta, &template)?.policy
        }
        Backend::Adam => {
            // Warm start from the policy under test so the response is never
            // worse than standing pat by more than the optimizer noise.
            let objective = PolicyObjective::new(problem, &state.policy, c.freeze_gain)?;
            let out = adam_optimize(&objective, &state.policy.params(), c.adam)?;
            let mut policy = state.policy.clone();
            policy.set_params(&out.params);
            policy
        }
    };
    let own = realization_costs(&rollout(&state.policy, &problem)?, &problem)?;
    let best = realization_costs(&rollout(&response, &problem)?, &problem)?;
    let diff: Vec<f64> = own.iter().zip(&best).map(|(a, b)| a - b).collect();
    let (value, stderr) = mean_and_stderr(&diff);
    Ok(Exploitability { value, stderr, policy_cost: mean_and_stderr(&own).0, response_cost: mean_and_stderr(&best).0 })
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub error: f64,
    /// Error after each replayed iteration.
    pub per_iteration: Vec<f64>,
    pub bank_fingerprint: u64,
    pub reference: ReferenceSolution,
    pub state: PlayState,
}

/// Carries the learned coefficients to a bank drawn from `fresh_seed`,
/// solves the reference there and measures the distance.
pub fn validation_error(
    policies: &[FeedbackPolicy],
    config: &PlayConfig,
    reference_config: &ReferenceConfig,
    fresh_seed: u64,
) -> Result<ValidationReport> {
    if fresh_seed == config.seed {
        return Err(Error::invalid("validation seed must differ from the training seed"));
    }
    let mut fresh = config.clone();
    fresh.seed = fresh_seed;
    let (grid, bank, eta) = prepare(&fresh)?;
    let problem = FbsdeProblem { model: &fresh.model, grid: &grid, bank: &bank, eta: &eta };
    let reference = solve_reference(&problem, reference_config)?;
    let ctx = PlayContext {
        config: &fresh,
        grid: &grid,
        bank: &bank,
        eta: &eta,
        reference: Some(&reference),
        keep_means: false,
    };
    let state = if policies.is_empty() { initial_state(&ctx)? } else { replay(&ctx, policies)? };
    let error = l2_error(&state.env_bar, &state.intercept, &bank, &reference)?;
    let per_iteration = state.history.iter().filter_map(|r| r.l2_error).collect();
    Ok(ValidationReport { error, per_iteration, bank_fingerprint: bank.fingerprint(), reference, state })
}

/// Equal-width histogram with `bins + 1` edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn center(&self, b: usize) -> f64 {
        0.5 * (self.edges[b] + self.edges[b + 1])
    }

    /// Center of the fullest bin (first one on ties).
    pub fn modal_center(&self) -> f64 {
        let mut best = 0;
        for (b, c) in self.counts.iter().enumerate() {
            if *c > self.counts[best] {
                best = b;
            }
        }
        self.center(best)
    }
}

/// Histogram spanning the sample range. A constant sample gets a unit-width
/// range centred on its value.
pub fn terminal_histogram(samples: &[f64], bins: usize) -> Result<Histogram> {
    if samples.is_empty() {
        return Err(Error::invalid("histogram of an empty sample"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("histogram samples must be finite"));
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return histogram_in(samples, bins, lo - 0.5, hi + 0.5);
    }
    histogram_in(samples, bins, lo, hi)
}

/// Histogram on `[lo, hi]`; samples outside land in the end bins.
pub fn histogram_in(samples: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::invalid("histogram range must be finite and non-empty"));
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|b| if b == bins { hi } else { lo + width * b as f64 }).collect();
    let mut counts = vec![0u64; bins];
    for v in samples {
        let b = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(Histogram { edges, counts })
}

pub fn median(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Share of samples with `|x - center| < radius`.
pub fn fraction_within(samples: &[f64], center: f64, radius: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().filter(|x| (*x - center).abs() < radius).count() as f64 / samples.len() as f64
}

/// Mean and sample standard deviation of the last `k` entries.
pub fn tail_dispersion(series: &[f64], k: usize) -> Option<(f64, f64)> {
    if k == 0 || series.len() < k {
        return None;
    }
    let tail = &series[series.len() - k..];
    let mean = tail.iter().sum::<f64>() / k as f64;
    if k == 1 {
        return Some((mean, 0.0));
    }
    let var = tail.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    Some((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::shifted_anchor;

    #[test]
    fn cos_root_matches_bisection_oracle() {
        let grid = TimeGrid::unit(10).unwrap();
        let g = Coupling::cos_kappa(1.0, 1).unwrap();
        let set = deterministic_equilibria(&g, (-1.0, 1.0), &grid).unwrap();
        assert_eq!(set.roots.len(), 1);
        let r = &set.roots[0];
        assert!((r.terminal_mean + 0.450_183_611_294_873_9).abs() < 1e-10, "{}", r.terminal_mean);
        assert!(r.residual <= 1e-10);
        assert!(r.ode_residual(&g, &grid) <= 1e-8);
        assert!((r.mean_path[10] - r.terminal_mean).abs() < 1e-11);
        assert_eq!(r.mean_path[0], 0.0);
    }

    #[test]
    fn shifted_coupling_has_zero_and_a_lower_root() {
        let grid = TimeGrid::unit(10).unwrap();
        let x0 = shifted_anchor(10.0, -0.45, -0.3).unwrap();
        let g = Coupling::CosShifted { kappa: 10.0, shift: x0 };
        let set = deterministic_equilibria(&g, DEFAULT_BRACKET, &grid).unwrap();
        let zero = set.nearest(0.0).unwrap();
        assert!(zero.terminal_mean.abs() < 1e-12);
        let best = set.global_minimizer().unwrap();
        assert!((best.terminal_mean + 0.5).abs() < 0.05, "{}", best.terminal_mean);
        assert!(best.potential.unwrap() < zero.potential.unwrap());
        assert!(set.roots.windows(2).all(|w| w[0].terminal_mean < w[1].terminal_mean));
    }

    #[test]
    fn no_sign_change_gives_empty_set() {
        let grid = TimeGrid::unit(4).unwrap();
        let g = Coupling::Constant(vec![1.0]);
        assert!(deterministic_equilibria(&g, (0.0, 1.0), &grid).unwrap().roots.is_empty());
    }

    #[test]
    fn potential_of_zero_coupling() {
        let curve = potential_scan(&Coupling::Zero { dim: 1 }, -1.0, 1.0, 101).unwrap();
        assert_eq!(curve.minimizers.len(), 1);
        assert!(curve.minimizers[0].abs() < 1e-12);
        assert_eq!(curve.global_minimizer(&Coupling::Zero { dim: 1 }), Some(curve.minimizers[0]));
    }

    #[test]
    fn stationary_points_agree_with_roots() {
        let grid = TimeGrid::unit(4).unwrap();
        for kappa in [1.0, 7.0, 10.0] {
            let g = Coupling::cos_kappa(kappa, 1).unwrap();
            let set = deterministic_equilibria(&g, DEFAULT_BRACKET, &grid).unwrap();
            let curve = potential_scan(&g, -2.0, 2.0, 4001).unwrap();
            assert_eq!(curve.stationary.len(), set.roots.len(), "kappa {kappa}");
            for (s, r) in curve.stationary.iter().zip(&set.roots) {
                assert!((s - r.terminal_mean).abs() < 1e-9);
            }
            if kappa > 2.0 {
                assert!(curve.stationary.len() > 1);
            }
        }
    }

    #[test]
    fn histogram_basics() {
        let h = terminal_histogram(&[0.3; 7], 5).unwrap();
        assert_eq!(h.counts.iter().filter(|c| **c > 0).count(), 1);
        assert_eq!(h.total(), 7);
        let b = h.counts.iter().position(|c| *c > 0).unwrap();
        assert!(h.edges[b] <= 0.3 && 0.3 < h.edges[b + 1]);
        let h = terminal_histogram(&[-1.0, -0.4, 0.1, 1.0], 4).unwrap();
        assert_eq!(h.counts, vec![1, 1, 1, 1]);
        assert!(terminal_histogram(&[], 3).is_err());
        assert!(terminal_histogram(&[1.0], 0).is_err());
        assert_eq!(histogram_in(&[-5.0, 5.0], 2, 0.0, 1.0).unwrap().counts, vec![1, 1]);
    }

    #[test]
    fn summary_statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(fraction_within(&[0.0, 0.05, 0.2, -0.09], 0.0, 0.1), 0.75);
        let (m, s) = tail_dispersion(&[9.0, 1.0, 2.0, 3.0], 3).unwrap();
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
        assert!(tail_dispersion(&[1.0], 2).is_none());
    }

    #[test]
    fn distance_of_offset_mean() {
        let env_a = EnvironmentField::zeros(3, 5, 2);
        let mut env_b = env_a.clone();
        for j in 0..3 {
            for k in 0..5 {
                env_b.at_mut(j, k)[1] = 0.25;
            }
        }
        let h = InterceptField::zeros(3, 4, 2);
        assert_eq!(field_distance(&env_a, &h, &env_a, &h).unwrap(), 0.0);
        assert_eq!(field_distance(&env_a, &h, &env_b, &h).unwrap(), 0.25);
    }
}
