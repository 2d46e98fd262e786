use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use tfp_core::analysis::{deterministic_equilibria, field_distance};
use tfp_core::field::Field;
use tfp_core::grid::TimeGrid;
use tfp_core::hermite::{
    design_matrix, fit_standardizer, hermite_1d, weighted_least_squares, weighted_residual, MultiIndexSet, ScaleMode,
};
use tfp_core::model::{Coupling, LqModel};
use tfp_core::noise::{sample_noise_bank, shift_path, BankShape, DrivingPath, NoiseBank};
use tfp_core::play::{prepare, run, Backend, PlayConfig, PlayContext, Scheme, Variant};
use tfp_core::policy::AdamConfig;
use tfp_core::reference::{solve_reference, FbsdeProblem, ReferenceConfig};
use tfp_core::riccati::{continuous_riccati, discrete_riccati};

fn matrix(d: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(d, d, &v[..d * d])
}

fn explicit_hermite(n: usize, x: f64) -> f64 {
    let fact = |k: usize| (1..=k).map(|i| i as f64).product::<f64>();
    let mut s = 0.0;
    for m in 0..=n / 2 {
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        s += sign * (2.0 * x).powi((n - 2 * m) as i32) / (fact(m) * fact(n - 2 * m));
    }
    fact(n) * s / (2f64.powi(n as i32) * fact(n)).sqrt()
}

fn random_field(rng: &mut ChaCha8Rng, n: usize, nodes: usize, d: usize) -> Field {
    let normal = Normal::new(0.0, 1.0).unwrap();
    Field::from_vec(n, nodes, d, (0..n * nodes * d).map(|_| normal.sample(rng)).collect()).unwrap()
}

/// A bank whose realization 1 repeats the first `prefix` common increments of realization 0.
fn bank_with_shared_prefix(seed: u64, n: usize, p: usize, prefix: usize) -> NoiseBank {
    let base = sample_noise_bank(seed, 1, n, p, 1).unwrap();
    let mut common = base.all_common().to_vec();
    common.copy_within(0..prefix, p);
    NoiseBank::from_parts(seed, BankShape::new(1, n, p, 1).unwrap(), base.all_idio().to_vec(), common).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn riccati_tables_are_symmetric_and_psd(
        d in 1usize..=3,
        a in prop::collection::vec(-1.0f64..1.0, 9),
        b in prop::collection::vec(-1.0f64..1.0, 9),
        p in 1usize..40,
    ) {
        let a = matrix(d, &a);
        let q = &a * a.transpose();
        let r = matrix(d, &b) + DMatrix::identity(d, d) * 0.5;
        let grid = TimeGrid::unit(p).unwrap();
        for table in [continuous_riccati(&q, &r, &grid).unwrap(), discrete_riccati(&q, &r, &grid).unwrap()] {
            for k in 0..=p {
                let eta = table.eta(k);
                let scale = eta.amax().max(1.0);
                prop_assert!((eta - eta.transpose()).amax() <= 1e-12 * scale);
                let sym = (eta + eta.transpose()) * 0.5;
                let min = sym.symmetric_eigenvalues().min();
                prop_assert!(min >= -1e-10 * scale, "node {k} eigenvalue {min}");
                // (I + dt η)⁻¹ and η commute, so either side of the gain is the same matrix.
                let inv = (DMatrix::identity(d, d) + eta * grid.dt()).try_inverse().unwrap();
                prop_assert!((&inv * eta - eta * &inv).amax() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn hermite_recurrence_matches_explicit_formula(n in 0usize..=8, x in -3.0f64..3.0) {
        let a = hermite_1d(n, x);
        let b = explicit_hermite(n, x);
        prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "degree {n} at {x}: {a} vs {b}");
    }

    #[test]
    fn nested_bases_do_not_increase_the_residual(seed in any::<u64>(), d in 1usize..=2, n in 30usize..120) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| normal.sample(&mut rng)).collect()).collect();
        let samples: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let y = DMatrix::from_fn(n, 1, |i, _| (2.0 * xs[i][0]).sin() + normal.sample(&mut rng) * 0.1);
        let w: Vec<f64> = (0..n).map(|i| 0.5 + (i % 3) as f64).collect();
        let st = fit_standardizer(&samples, ScaleMode::Diag).unwrap();
        let mut last = f64::INFINITY;
        for degree in 0..=4 {
            let set = MultiIndexSet::new(d, degree).unwrap();
            if set.len() >= n {
                break;
            }
            let x = design_matrix(&set, &st, &samples);
            let coef = weighted_least_squares(&x, &y, &w).unwrap();
            let res = weighted_residual(&x, &y, &w, &coef);
            prop_assert!(res <= last * (1.0 + 1e-8) + 1e-12, "degree {degree}: {res} > {last}");
            last = res;
        }
    }

    #[test]
    fn shifting_there_and_back_restores_the_path(
        seed in any::<u64>(),
        p in 1usize..20,
        d in 1usize..=2,
        eps in 0.05f64..3.0,
    ) {
        let grid = TimeGrid::unit(p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut values: Vec<f64> = (0..(p + 1) * d).map(|_| normal.sample(&mut rng)).collect();
        values[..d].fill(0.0);
        let path = DrivingPath::from_values(d, values).unwrap();
        let h: Vec<f64> = (0..p * d).map(|_| normal.sample(&mut rng)).collect();
        let neg: Vec<f64> = h.iter().map(|v| -v).collect();
        let there = shift_path(&path, &h, eps, &grid).unwrap();
        let back = shift_path(&there, &neg, eps, &grid).unwrap();
        for (a, b) in back.values().iter().zip(path.values()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
        for c in 0..d {
            let total: f64 = (0..p).map(|k| h[k * d + c]).sum::<f64>() * grid.dt() / eps;
            let moved = there.at(p)[c] - path.at(p)[c];
            prop_assert!((moved - total).abs() <= 1e-10 * (1.0 + total.abs()));
        }
    }

    #[test]
    fn field_distance_is_a_metric(seed in any::<u64>(), n in 1usize..6, p in 1usize..6, d in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut env = || random_field(&mut rng, n, p + 1, d);
        let (ea, eb, ec) = (env(), env(), env());
        let mut rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a);
        let mut h = || random_field(&mut rng2, n, p, d);
        let (ha, hb, hc) = (h(), h(), h());
        let dist = |e1: &Field, h1: &Field, e2: &Field, h2: &Field| field_distance(e1, h1, e2, h2).unwrap();
        prop_assert_eq!(dist(&ea, &ha, &ea, &ha), 0.0);
        let ab = dist(&ea, &ha, &eb, &hb);
        prop_assert_eq!(ab, dist(&eb, &hb, &ea, &ha));
        prop_assert!(ab >= 0.0);
        prop_assert!(dist(&ea, &ha, &ec, &hc) <= ab + dist(&eb, &hb, &ec, &hc) + 1e-12);
    }

    #[test]
    fn small_kappa_has_a_single_equilibrium(kappa in 0.0f64..1.99) {
        let grid = TimeGrid::unit(4).unwrap();
        let g = Coupling::cos_kappa(kappa, 1).unwrap();
        let set = deterministic_equilibria(&g, (-2.0, 2.0), &grid).unwrap();
        prop_assert_eq!(set.roots.len(), 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn reference_intercept_is_adapted(seed in any::<u64>(), prefix in 0usize..8) {
        let (n, p) = (60, 8);
        let grid = TimeGrid::unit(p).unwrap();
        let bank = bank_with_shared_prefix(seed, n, p, prefix);
        let model = LqModel::benchmark(Coupling::cos_kappa(3.0, 1).unwrap(), 0.0, 1.0);
        let eta = discrete_riccati(&model.q, &model.r, &grid).unwrap();
        let problem = FbsdeProblem { model: &model, grid: &grid, bank: &bank, eta: &eta };
        let sol = solve_reference(&problem, &ReferenceConfig { picard_iters: 3, degree: 3, ..Default::default() }).unwrap();
        for l in 0..=prefix {
            prop_assert_eq!(sol.env.at(0, l), sol.env.at(1, l));
            if l < p {
                prop_assert_eq!(sol.intercept.at(0, l), sol.intercept.at(1, l), "node {}", l);
            }
        }
    }

    #[test]
    fn reference_respects_the_clamp(seed in any::<u64>(), clamp in 0.05f64..1.5, kappa in 0.5f64..12.0) {
        let p = 6;
        let grid = TimeGrid::unit(p).unwrap();
        let bank = sample_noise_bank(seed, 1, 80, p, 2).unwrap();
        let model = LqModel::benchmark(Coupling::cos_kappa(kappa, 2).unwrap(), 0.0, 1.0);
        let eta = discrete_riccati(&model.q, &model.r, &grid).unwrap();
        let problem = FbsdeProblem { model: &model, grid: &grid, bank: &bank, eta: &eta };
        let sol = solve_reference(&problem, &ReferenceConfig { picard_iters: 4, degree: 2, clamp, ..Default::default() }).unwrap();
        prop_assert!(sol.intercept.max_abs() <= clamp);
        for j in [0, 41, 79] {
            for k in 0..p {
                prop_assert_eq!(sol.predict(j, k), sol.intercept.at(j, k).to_vec());
            }
        }
    }
}

#[test]
fn reference_reaches_a_fixed_point_for_a_contraction() {
    let p = 10;
    let grid = TimeGrid::unit(p).unwrap();
    let bank = sample_noise_bank(3, 1, 2000, p, 1).unwrap();
    let model = LqModel::benchmark(Coupling::cos_kappa(1.0, 1).unwrap(), 0.0, 1.0);
    let eta = discrete_riccati(&model.q, &model.r, &grid).unwrap();
    let problem = FbsdeProblem { model: &model, grid: &grid, bank: &bank, eta: &eta };
    let sol = solve_reference(&problem, &ReferenceConfig { picard_iters: 25, ..Default::default() }).unwrap();
    assert!(sol.last_change < 1e-6, "{}", sol.last_change);
}

#[test]
fn hermite_orthonormal_under_gaussian_weight() {
    // Trapezoid rule against e^{-x²}/√π; the integrands decay fast enough
    // that the truncated rule is accurate to rounding.
    let (deg, cells, half) = (8, 4000, 10.0);
    let dx = 2.0 * half / cells as f64;
    let mut gram = DMatrix::<f64>::zeros(deg + 1, deg + 1);
    for i in 0..=cells {
        let x = -half + i as f64 * dx;
        let w = dx * (-x * x).exp() / std::f64::consts::PI.sqrt() * if i == 0 || i == cells { 0.5 } else { 1.0 };
        let h: Vec<f64> = (0..=deg).map(|l| hermite_1d(l, x)).collect();
        for a in 0..=deg {
            for b in 0..=deg {
                gram[(a, b)] += w * h[a] * h[b];
            }
        }
    }
    let err = (gram - DMatrix::identity(deg + 1, deg + 1)).amax();
    assert!(err < 1e-10, "{err}");
}

#[test]
fn play_stabilizes() {
    let c = PlayConfig {
        scheme: Scheme::CommonOnly,
        model: LqModel::benchmark(Coupling::cos_kappa(1.0, 1).unwrap(), 0.0, 1.0),
        horizon: 1.0,
        steps: 10,
        particles: 1,
        realizations: 1000,
        degree: 3,
        iterations: 10,
        seed: 4,
        adam: AdamConfig::default(),
        backend: Backend::Analytic,
        variant: Variant::Standard,
        freeze_gain: true,
        scale: ScaleMode::Diag,
        clamp: None,
    };
    let (grid, bank, eta) = prepare(&c).unwrap();
    let ctx = PlayContext { config: &c, grid: &grid, bank: &bank, eta: &eta, reference: None, keep_means: false };
    let s = run(&ctx).unwrap();
    let change = |n: usize| s.history.iter().find(|r| r.iteration == n).unwrap().intercept_change;
    assert!(change(10) < change(2), "{} vs {}", change(10), change(2));
}
