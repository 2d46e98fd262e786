//! Tilted fictitious play: the two-noise, common-only and idiosyncratic-only
//! loops, the averaged-guess variant and the vanishing-viscosity schedule.

use std::time::Instant;

use crate::analysis::l2_error;
use crate::error::{Error, Result};
use crate::field::{EnvironmentField, InterceptField};
use crate::girsanov::{girsanov_weights, GirsanovWeights};
use crate::grid::TimeGrid;
use crate::hermite::{MultiIndexSet, ScaleMode};
use crate::model::LqModel;
use crate::noise::{sample_noise_bank, NoiseBank};
use crate::policy::{
    adam_optimize, analytic_best_response, empirical_cost, fit_policy_standardizers, rollout, AdamConfig,
    FeedbackPolicy, PolicyObjective, ResponseProblem,
};
use crate::reference::ReferenceSolution;
use crate::riccati::{discrete_riccati, RiccatiTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    TwoNoise,
    CommonOnly,
    IdioOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Adam,
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Standard,
    AveragedGuess,
}

#[derive(Debug, Clone)]
pub struct PlayConfig {
    pub scheme: Scheme,
    pub model: LqModel,
    pub horizon: f64,
    pub steps: usize,
    pub particles: usize,
    pub realizations: usize,
    pub degree: usize,
    pub iterations: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub backend: Backend,
    pub variant: Variant,
    /// Hold the gain at `-η` (the Riccati solution is known).
    pub freeze_gain: bool,
    pub scale: ScaleMode,
    /// Per-coordinate bound on the learned intercept, as in the reference solver.
    pub clamp: Option<f64>,
}

impl PlayConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let mut bad = Vec::new();
        if self.steps == 0 || self.particles == 0 || self.realizations == 0 {
            bad.push("steps, particles and realizations must be at least 1".to_string());
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            bad.push("horizon must be positive".to_string());
        }
        match self.scheme {
            Scheme::CommonOnly => {
                if self.particles != 1 || self.model.sigma != 0.0 {
                    bad.push("common_only needs M = 1 and sigma = 0".to_string());
                }
            }
            Scheme::IdioOnly => {
                if self.realizations != 1 || self.degree != 0 || self.model.epsilon != 0.0 {
                    bad.push("idio_only needs N = 1, D = 0 and epsilon = 0".to_string());
                }
            }
            Scheme::TwoNoise => {}
        }
        if self.scheme != Scheme::IdioOnly && !(self.model.epsilon > 0.0) {
            bad.push("epsilon must be positive unless the scheme is idio_only".to_string());
        }
        if self.clamp.is_some_and(|c| !(c > 0.0)) {
            bad.push("intercept clamp must be positive".to_string());
        }
        if self.backend == Backend::Adam && self.adam.epochs == 0 {
            bad.push("ADAM needs at least one epoch".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.steps)
    }

    pub fn sample_bank(&self) -> Result<NoiseBank> {
        sample_noise_bank(self.seed, self.particles, self.realizations, self.steps, self.model.dim())
    }
}

/// One row of the learning history.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    pub raw_cost: f64,
    pub renormalized_cost: f64,
    /// Raw cost minus the realized exploration energy.
    pub centered_cost: f64,
    pub cost_stderr: f64,
    pub l2_error: Option<f64>,
    /// `max |hⁿ⁺¹ - hⁿ|`.
    pub intercept_change: f64,
    /// Effective sample size `(Σ w)² / Σ w²` of the tilt weights.
    pub effective_samples: f64,
    pub policy: FeedbackPolicy,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct PlayState {
    pub iteration: usize,
    pub env_bar: EnvironmentField,
    pub intercept: InterceptField,
    /// Previous stage's limit intercept, subtracted from the tilt.
    pub baseline: Option<InterceptField>,
    /// Running average `h̄ⁿ` of past intercepts (averaged-guess variant).
    pub intercept_bar: Option<InterceptField>,
    /// `h̃ⁿ` used as tilt by the averaged-guess variant.
    pub guess: Option<InterceptField>,
    pub policy: FeedbackPolicy,
    /// Per-iteration particle means `mⁿ`, kept only when requested.
    pub means: Vec<EnvironmentField>,
    pub history: Vec<IterationRecord>,
}

/// Read-only inputs shared by every iteration of a run.
pub struct PlayContext<'a> {
    pub config: &'a PlayConfig,
    pub grid: &'a TimeGrid,
    pub bank: &'a NoiseBank,
    pub eta: &'a RiccatiTable,
    pub reference: Option<&'a ReferenceSolution>,
    pub keep_means: bool,
}

impl PlayContext<'_> {
    fn check(&self) -> Result<()> {
        self.config.validate()?;
        self.bank.check_grid(self.grid)?;
        self.eta.check_grid(self.grid)?;
        let c = self.config;
        if self.bank.particles() != c.particles
            || self.bank.realizations() != c.realizations
            || self.bank.dim() != c.model.dim()
        {
            return Err(Error::BankMismatch("noise bank shape differs from the configuration".into()));
        }
        Ok(())
    }
}

/// `m̄⁰ = x₀`, `h⁰ = 0`, zero intercept blocks and gain `-η` when frozen.
pub fn initial_state(ctx: &PlayContext) -> Result<PlayState> {
    ctx.check()?;
    let c = ctx.config;
    let (n, p, d) = (c.realizations, c.steps, c.model.dim());
    let env_bar = EnvironmentField::filled(n, p + 1, &c.model.x0);
    let set = MultiIndexSet::new(d, c.degree)?;
    let standardizers = fit_policy_standardizers(&env_bar, p, c.scale)?;
    let mut policy = FeedbackPolicy::zeros(set, standardizers);
    if c.freeze_gain {
        let eta = ctx.eta.scalars()?;
        for k in 0..p {
            policy.a[k] = -eta[k];
        }
    }
    let variant = c.variant == Variant::AveragedGuess;
    Ok(PlayState {
        iteration: 0,
        intercept: InterceptField::zeros(n, p, d),
        intercept_bar: variant.then(|| InterceptField::zeros(n, p, d)),
        guess: variant.then(|| InterceptField::zeros(n, p, d)),
        baseline: None,
        env_bar,
        policy,
        means: Vec::new(),
        history: Vec::new(),
    })
}

/// `h̃ⁿ⁺¹ = (1 + 1/(n+1)) hⁿ⁺¹ - (1/(n+1)) h̄ⁿ`.
pub fn averaged_guess_update(next: &InterceptField, bar: &InterceptField, n: usize) -> InterceptField {
    let s = 1.0 / (n + 1) as f64;
    let mut out = next.clone();
    for (o, b) in out.as_mut_slice().iter_mut().zip(bar.as_slice()) {
        *o = (1.0 + s) * *o - s * b;
    }
    out
}

/// `(n x̄ + x) / (n + 1)` in place.
fn running_average(bar: &mut [f64], next: &[f64], n: usize) {
    let w = n as f64 / (n + 1) as f64;
    let s = 1.0 / (n + 1) as f64;
    for (b, x) in bar.iter_mut().zip(next) {
        *b = x * s + w * *b;
    }
}

/// The tilt `τ = guess - baseline` of the next best response.
pub fn current_tilt(state: &PlayState) -> InterceptField {
    let guess = state.guess.as_ref().unwrap_or(&state.intercept);
    match &state.baseline {
        Some(b) => guess.sub(b),
        None => guess.clone(),
    }
}

/// Girsanov weights of the tilt, or unit weights without common noise.
pub fn tilt_weights(tilt: &InterceptField, bank: &NoiseBank, epsilon: f64, grid: &TimeGrid) -> Result<GirsanovWeights> {
    if epsilon > 0.0 {
        girsanov_weights(tilt, bank, epsilon, grid)
    } else {
        Ok(GirsanovWeights::unit(bank.realizations(), grid.steps()))
    }
}

/// One fictitious-play iteration: weights, best response against `m̄ⁿ`,
/// particle means, averaging and intercept update.
pub fn play_step(state: PlayState, ctx: &PlayContext) -> Result<PlayState> {
    let c = ctx.config;
    advance(state, ctx, |problem, template| match c.backend {
        Backend::Adam => {
            let objective = PolicyObjective::new(*problem, template, c.freeze_gain)?;
            let out = adam_optimize(&objective, &template.params(), c.adam)?;
            let mut policy = template.clone();
            policy.set_params(&out.params);
            Ok(policy)
        }
        Backend::Analytic => Ok(analytic_best_response(problem, ctx.eta, template)?.policy),
    })
}

/// Re-runs the loop with the best responses replaced by stored policies,
/// one per iteration. Used to carry learned coefficients to another bank.
pub fn replay(ctx: &PlayContext, policies: &[FeedbackPolicy]) -> Result<PlayState> {
    let mut state = initial_state(ctx)?;
    for (n, stored) in policies.iter().enumerate() {
        if stored.steps() != ctx.config.steps || stored.dim() != ctx.config.model.dim() {
            return Err(Error::shape("stored policy does not match the configuration"));
        }
        // Stored coefficients keep the standardizers they were trained with.
        state = advance(state, ctx, |_, _| Ok(stored.clone())).map_err(|e| e.at_stage("replay", n + 1))?;
    }
    Ok(state)
}

fn advance(
    mut state: PlayState,
    ctx: &PlayContext,
    respond: impl FnOnce(&ResponseProblem, &FeedbackPolicy) -> Result<FeedbackPolicy>,
) -> Result<PlayState> {
    let started = Instant::now();
    let c = ctx.config;
    let n = state.iteration;
    // Without common noise there is no measure change to pair the tilt with.
    let tilt = if c.model.epsilon > 0.0 {
        current_tilt(&state)
    } else {
        InterceptField::zeros(c.realizations, c.steps, c.model.dim())
    };
    let weights = tilt_weights(&tilt, ctx.bank, c.model.epsilon, ctx.grid)?;
    let standardizers = fit_policy_standardizers(&state.env_bar, c.steps, c.scale)?;
    state.policy.replace_standardizers(standardizers);
    let problem = ResponseProblem {
        model: &c.model,
        grid: ctx.grid,
        bank: ctx.bank,
        env: &state.env_bar,
        tilt: &tilt,
        weights: &weights,
    };
    state.policy = respond(&problem, &state.policy)?;
    let batch = rollout(&state.policy, &problem)?;
    let cost = empirical_cost(&batch, &problem)?;
    let mean = batch.mean_field();

    let mut next = state.policy.intercept_field(&state.env_bar);
    let bound = c.clamp.unwrap_or(f64::INFINITY);
    for v in next.as_mut_slice() {
        *v = (-*v).clamp(-bound, bound);
    }
    let change = next.sub(&state.intercept).max_abs();
    if let (Some(bar), Some(guess)) = (state.intercept_bar.as_mut(), state.guess.as_mut()) {
        *guess = averaged_guess_update(&next, bar, n);
        running_average(bar.as_mut_slice(), next.as_slice(), n);
    }
    running_average(state.env_bar.as_mut_slice(), mean.as_slice(), n);
    state.intercept = next;
    if ctx.keep_means {
        state.means.push(mean);
    }
    state.iteration = n + 1;
    let l2 = match ctx.reference {
        Some(r) => Some(l2_error(&state.env_bar, &state.intercept, ctx.bank, r)?),
        None => None,
    };
    log::debug!("iteration {}: cost {:.6} l2 {:?}", n + 1, cost.renormalized, l2);
    state.history.push(IterationRecord {
        iteration: n + 1,
        raw_cost: cost.raw,
        renormalized_cost: cost.renormalized,
        centered_cost: cost.centered(),
        cost_stderr: cost.stderr,
        l2_error: l2,
        intercept_change: change,
        effective_samples: weights.effective_size(),
        policy: state.policy.clone(),
        seconds: started.elapsed().as_secs_f64(),
    });
    Ok(state)
}

/// `iterations` steps from `state`, tagging failures with the iteration.
pub fn run_from(mut state: PlayState, ctx: &PlayContext, iterations: usize) -> Result<PlayState> {
    ctx.check()?;
    for _ in 0..iterations {
        let it = state.iteration + 1;
        state = play_step(state, ctx).map_err(|e| e.at_stage("fictitious play", it))?;
    }
    Ok(state)
}

pub fn run(ctx: &PlayContext) -> Result<PlayState> {
    run_from(initial_state(ctx)?, ctx, ctx.config.iterations)
}

/// Discrete Riccati gains and the noise bank for a configuration.
pub fn prepare(config: &PlayConfig) -> Result<(TimeGrid, NoiseBank, RiccatiTable)> {
    config.validate()?;
    let grid = config.grid()?;
    let bank = config.sample_bank()?;
    let eta = discrete_riccati(&config.model.q, &config.model.r, &grid)?;
    Ok((grid, bank, eta))
}

#[derive(Debug, Clone)]
pub struct StageResult {
    pub epsilon: f64,
    pub state: PlayState,
    /// `m̄[j][p]`, flat `(j, dim)`.
    pub terminal_means: Vec<f64>,
}

#[derive(Debug)]
pub struct AnnealOutcome {
    pub stages: Vec<StageResult>,
    /// Error that stopped the schedule early, if any.
    pub failure: Option<Error>,
}

/// Runs the template once per `ε` of a strictly decreasing schedule on one
/// shared bank. Stage `q` tilts with `hⁿ - h^{∞,q-1}` and starts from the
/// previous stage's environment, intercept and (optionally) policy.
pub fn vanishing_viscosity(
    schedule: &[f64],
    template: &PlayConfig,
    bank: &NoiseBank,
    warm_start_policy: bool,
) -> Result<AnnealOutcome> {
    if schedule.is_empty() || schedule.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::Config("annealing schedule must be non-empty and positive".into()));
    }
    if schedule.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Config("annealing schedule must be strictly decreasing".into()));
    }
    let grid = template.grid()?;
    let eta = discrete_riccati(&template.model.q, &template.model.r, &grid)?;
    let mut stages: Vec<StageResult> = Vec::new();
    for (q, eps) in schedule.iter().enumerate() {
        let mut config = template.clone();
        config.model.epsilon = *eps;
        let ctx = PlayContext { config: &config, grid: &grid, bank, eta: &eta, reference: None, keep_means: false };
        let attempt = (|| {
            let mut state = initial_state(&ctx)?;
            if let Some(prev) = stages.last() {
                state.env_bar = prev.state.env_bar.clone();
                state.intercept = prev.state.intercept.clone();
                state.baseline = Some(prev.state.intercept.clone());
                if let Some(g) = state.guess.as_mut() {
                    *g = prev.state.intercept.clone();
                }
                if warm_start_policy {
                    state.policy = prev.state.policy.clone();
                }
            }
            run_from(state, &ctx, config.iterations)
        })();
        match attempt {
            Ok(state) => {
                let p = config.steps;
                let terminal_means =
                    (0..state.env_bar.realizations()).flat_map(|j| state.env_bar.at(j, p).to_vec()).collect();
                log::info!("annealing stage {} (epsilon {eps}) done", q + 1);
                stages.push(StageResult { epsilon: *eps, state, terminal_means });
            }
            Err(e) => {
                return Ok(AnnealOutcome {
                    stages,
                    failure: Some(e.at_stage(format!("annealing epsilon {eps}"), q + 1)),
                });
            }
        }
    }
    Ok(AnnealOutcome { stages, failure: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{shifted_anchor, Coupling};
    use crate::reference::{solve_reference, FbsdeProblem, ReferenceConfig};

    fn config(
        scheme: Scheme,
        coupling: Coupling,
        sigma: f64,
        epsilon: f64,
        m: usize,
        n: usize,
        degree: usize,
    ) -> PlayConfig {
        PlayConfig {
            scheme,
            model: LqModel::benchmark(coupling, sigma, epsilon),
            horizon: 1.0,
            steps: 5,
            particles: m,
            realizations: n,
            degree,
            iterations: 3,
            seed: 17,
            adam: AdamConfig { lr: 0.05, epochs: 10, ..Default::default() },
            backend: Backend::Analytic,
            variant: Variant::Standard,
            freeze_gain: true,
            scale: ScaleMode::Diag,
            clamp: None,
        }
    }

    fn play(config: &PlayConfig, reference: Option<&ReferenceSolution>, keep: bool) -> PlayState {
        let (grid, bank, eta) = prepare(config).unwrap();
        let ctx = PlayContext { config, grid: &grid, bank: &bank, eta: &eta, reference, keep_means: keep };
        run(&ctx).unwrap()
    }

    #[test]
    fn config_constraints() {
        let ok = config(Scheme::CommonOnly, Coupling::cos_kappa(1.0, 1).unwrap(), 0.0, 1.0, 1, 10, 2);
        ok.validate().unwrap();
        let mut bad = ok.clone();
        bad.particles = 3;
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.model.epsilon = 0.0;
        assert!(bad.validate().is_err());
        let idio = config(Scheme::IdioOnly, Coupling::cos_kappa(1.0, 1).unwrap(), 1.0, 0.0, 10, 1, 0);
        idio.validate().unwrap();
    }

    #[test]
    fn zero_iterations_return_the_initialization() {
        let mut c = config(Scheme::CommonOnly, Coupling::cos_kappa(1.0, 1).unwrap(), 0.0, 1.0, 1, 10, 2);
        c.iterations = 0;
        let s = play(&c, None, false);
        assert_eq!(s.iteration, 0);
        assert_eq!(s.intercept.max_abs(), 0.0);
        assert!(s.history.is_empty());
    }

    #[test]
    fn zero_coupling_without_noise_is_a_fixed_point() {
        let c = config(Scheme::IdioOnly, Coupling::Zero { dim: 1 }, 0.0, 0.0, 2, 1, 0);
        let s = play(&c, None, false);
        assert_eq!(s.env_bar.max_abs(), 0.0);
        assert_eq!(s.intercept.max_abs(), 0.0);
    }

    #[test]
    fn spurious_equilibrium_is_stationary_without_noise() {
        let x0 = shifted_anchor(10.0, -0.45, -0.3).unwrap();
        let c = config(Scheme::IdioOnly, Coupling::CosShifted { kappa: 10.0, shift: x0 }, 0.0, 0.0, 1, 1, 0);
        let s = play(&c, None, false);
        assert!(s.env_bar.max_abs() < 1e-12);
        assert!(s.intercept.max_abs() < 1e-12);
    }

    #[test]
    fn averaging_identity() {
        let mut c = config(Scheme::CommonOnly, Coupling::cos_kappa(2.0, 1).unwrap(), 0.0, 1.0, 1, 40, 2);
        c.iterations = 6;
        let s = play(&c, None, true);
        let mut direct = s.means[0].clone();
        for m in &s.means[1..] {
            for (a, b) in direct.as_mut_slice().iter_mut().zip(m.as_slice()) {
                *a += b;
            }
        }
        for v in direct.as_mut_slice() {
            *v /= s.means.len() as f64;
        }
        assert!(direct.sub(&s.env_bar).max_abs() < 1e-12);
    }

    #[test]
    fn averaged_guess_by_hand() {
        let h1 = InterceptField::filled(1, 1, &[2.0]);
        let h2 = InterceptField::filled(1, 1, &[4.0]);
        assert_eq!(averaged_guess_update(&h2, &h1, 1).as_slice(), &[5.0]);
        let v = InterceptField::filled(2, 3, &[0.3, -1.1]);
        assert!(averaged_guess_update(&v, &v, 4).sub(&v).max_abs() < 1e-15);
    }

    #[test]
    fn scheme_reductions_agree_bitwise() {
        let g = Coupling::cos_kappa(1.0, 1).unwrap();
        let mut common = config(Scheme::CommonOnly, g.clone(), 0.0, 1.0, 1, 12, 2);
        common.backend = Backend::Adam;
        let mut two = common.clone();
        two.scheme = Scheme::TwoNoise;
        let a = play(&common, None, false);
        let b = play(&two, None, false);
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x.raw_cost.to_bits(), y.raw_cost.to_bits());
        }
        assert_eq!(a.intercept, b.intercept);
    }

    #[test]
    fn idio_only_intercept_is_deterministic() {
        let c = config(Scheme::IdioOnly, Coupling::cos_kappa(1.0, 1).unwrap(), 1.0, 0.0, 50, 1, 0);
        let s = play(&c, None, false);
        assert_eq!(s.intercept.realizations(), 1);
        assert!(s.intercept.max_abs() > 0.0);
    }

    #[test]
    fn error_decreases_on_the_unique_benchmark() {
        let mut c = config(Scheme::CommonOnly, Coupling::cos_kappa(1.0, 1).unwrap(), 0.0, 1.0, 1, 400, 3);
        c.steps = 10;
        c.iterations = 5;
        let (grid, bank, eta) = prepare(&c).unwrap();
        let problem = FbsdeProblem { model: &c.model, grid: &grid, bank: &bank, eta: &eta };
        let reference = solve_reference(&problem, &ReferenceConfig { degree: 3, ..Default::default() }).unwrap();
        let ctx = PlayContext {
            config: &c,
            grid: &grid,
            bank: &bank,
            eta: &eta,
            reference: Some(&reference),
            keep_means: false,
        };
        let s = run(&ctx).unwrap();
        let e: Vec<f64> = s.history.iter().map(|r| r.l2_error.unwrap()).collect();
        assert!(e[4] < e[0], "{e:?}");
    }

    #[test]
    fn single_stage_schedule_matches_a_plain_run() {
        let c = config(Scheme::CommonOnly, Coupling::cos_kappa(1.0, 1).unwrap(), 0.0, 1.0, 1, 20, 2);
        let plain = play(&c, None, false);
        let bank = c.sample_bank().unwrap();
        let out = vanishing_viscosity(&[1.0], &c, &bank, true).unwrap();
        assert!(out.failure.is_none());
        assert_eq!(out.stages[0].state.intercept, plain.intercept);
        assert_eq!(out.stages[0].state.env_bar, plain.env_bar);
        assert!(vanishing_viscosity(&[0.5, 1.0], &c, &bank, true).is_err());
    }
}
