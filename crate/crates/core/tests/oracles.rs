//! Frozen numbers. A change here means the numerics changed.

use nalgebra::DMatrix;
use tfp_core::analysis::{deterministic_equilibria, potential_scan};
use tfp_core::grid::TimeGrid;
use tfp_core::hermite::hermite_1d;
use tfp_core::model::{shifted_anchor, Coupling};
use tfp_core::riccati::{continuous_riccati, discrete_riccati};

const COS_ROOT: f64 = -0.450_183_611_294_873_9;
const SHIFT: f64 = -0.383_746_710_649_904_84;

#[test]
fn riccati_initial_value() {
    let id = DMatrix::identity(2, 2);
    let zero = DMatrix::zeros(2, 2);
    for p in [1usize, 10, 100] {
        let grid = TimeGrid::unit(p).unwrap();
        let c = continuous_riccati(&zero, &id, &grid).unwrap();
        assert!((c.eta(0)[(0, 0)] - 0.5).abs() < 1e-12);
        assert!(c.eta(0)[(0, 1)].abs() < 1e-15);
        let d = discrete_riccati(&zero, &id, &grid).unwrap();
        assert!((d.eta(0)[(1, 1)] - 0.5).abs() < 1e-14);
    }
    let d = discrete_riccati(&zero, &id, &TimeGrid::unit(1).unwrap()).unwrap();
    assert_eq!(d.eta(0)[(0, 0)], 0.5);
}

#[test]
fn cos_root() {
    let grid = TimeGrid::unit(10).unwrap();
    let g = Coupling::cos_kappa(1.0, 1).unwrap();
    let set = deterministic_equilibria(&g, (-2.0, 2.0), &grid).unwrap();
    assert_eq!(set.roots.len(), 1);
    assert!((set.roots[0].terminal_mean - COS_ROOT).abs() < 1e-12);
    assert!((2.0 * COS_ROOT + COS_ROOT.cos()).abs() < 1e-15);
}

#[test]
fn shifted_coupling_anchor_and_roots() {
    let x0 = shifted_anchor(10.0, -0.45, -0.3).unwrap();
    assert!((x0 - SHIFT).abs() < 1e-15);
    let g = Coupling::CosShifted { kappa: 10.0, shift: SHIFT };
    assert!((g.sup_norm() - 1.767_493_421_299_809_7).abs() < 1e-15);

    let grid = TimeGrid::unit(10).unwrap();
    let set = deterministic_equilibria(&g, (-2.0, 2.0), &grid).unwrap();
    let found: Vec<(f64, f64)> = set.roots.iter().map(|r| (r.terminal_mean, r.potential.unwrap())).collect();
    let expected =
        [(-0.514_390_711_486_712, -0.162_614_089_550_927), (-0.186_008_407_716_826, 0.047_792_185_640_532), (0.0, 0.0)];
    assert_eq!(found.len(), expected.len(), "{found:?}");
    for ((x, v), (ex, ev)) in found.iter().zip(expected) {
        assert!((x - ex).abs() < 1e-11, "{x} vs {ex}");
        assert!((v - ev).abs() < 1e-11, "{v} vs {ev}");
    }
    assert!((set.global_minimizer().unwrap().terminal_mean - expected[0].0).abs() < 1e-11);

    // The unshifted coupling at the same κ has -x₀ as its largest root.
    let plain = deterministic_equilibria(&Coupling::cos_kappa(10.0, 1).unwrap(), (-2.0, 2.0), &grid).unwrap();
    assert!((plain.roots.last().unwrap().terminal_mean + SHIFT).abs() < 1e-11);
}

#[test]
fn potential_minimizer_is_the_lower_root() {
    let g = Coupling::CosShifted { kappa: 10.0, shift: SHIFT };
    let curve = potential_scan(&g, -2.0, 2.0, 4001).unwrap();
    let best = curve.global_minimizer(&g).unwrap();
    assert!((best + 0.514_390_711_486_712).abs() < 1e-9, "{best}");
}

#[test]
fn hermite_values() {
    let expected = [
        1.0,
        0.989_949_493_661_166_6,
        -0.014_142_135_623_731,
        -0.816_373_280_634_131,
        -0.391_836_709_187_216,
        0.556_712_954_139_444,
    ];
    for (n, e) in expected.iter().enumerate() {
        assert!((hermite_1d(n, 0.7) - e).abs() < 1e-14, "degree {n}");
    }
}
