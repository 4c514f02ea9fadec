use proptest::prelude::*;
use relwealth_core::agent::base_agents;
use relwealth_core::analytic::merton_benchmark_each;
use relwealth_core::fbsde::*;
use relwealth_core::PriorBelief;
use ndarray::{Array2, Array3};

#[test]
fn condition_passes_for_base_weights_and_fails_near_one() {
    let a = competition_matrix(&[0.2, 0.5, 0.2]);
    let c = check_small_competition(&a);
    assert!(c.passed());
    let big = competition_matrix(&[0.99; 3]);
    assert!(!check_small_competition(&big).passed());
    for (i, row) in a.entries.iter().enumerate() {
        assert_eq!(row[i], 0.0);
        assert!(row.iter().all(|v| (0.0..1.0).contains(v)));
    }
}

#[test]
fn norm_of_two_by_two_is_larger_weight() {
    // [[0, a], [b, 0]] has singular values a and b
    let a = competition_matrix(&[0.6736, 0.67357]);
    assert!((a.norm - 0.6736 / (2.0 - 0.6736)).abs() < 1e-12);
    let z = competition_matrix(&[0.0; 4]);
    assert_eq!(z.norm, 0.0);
}

#[test]
fn norm_matches_power_iteration() {
    let a = competition_matrix(&[0.2, 0.5, 0.2]);
    let mut v = vec![1.0, -0.3, 0.7];
    let mut est = 0.0;
    for _ in 0..2000 {
        let w = a.apply_transpose(&a.apply(&v));
        est = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.iter().map(|x| x / est).collect();
    }
    assert!((a.norm - est.sqrt()).abs() < 1e-10);
}

#[test]
fn decoupled_backward_riemann_sum() {
    let (k, t) = (200, 0.5);
    let dt = t / k as f64;
    let eff = [2.0, 3.0, 5.0];
    let b = [0.05 / 0.15; 3];
    // walk backward from Y_T = 0 with Z = 0: Y_k = Y_{k+1} − f dt
    let mut y = vec![0.0; 3];
    for _ in 0..k {
        let f = generator_f(&b, &[0.0; 3], &eff);
        y = y.iter().zip(&f).map(|(y, f)| y - f * dt).collect();
    }
    for i in 0..3 {
        let exact = -0.5 * eff[i] * b[i] * b[i] * t;
        assert!((y[i] - exact).abs() < 1e-12);
    }
    // forward stepping from the computed Y₀ hits zero again
    let mut state = FbsdeState { x: vec![10.0; 3], y: y.clone(), z: vec![0.0; 3], b: b.to_vec(), t: 0.0 };
    for _ in 0..k {
        state.y = backward_step(&state, &[0.0; 3], dt, &eff);
    }
    assert!(state.y.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn fully_competitive_gap_example() {
    let a = competition_matrix(&[0.2, 0.5, 0.2]);
    let x = [9.0, 11.0, 10.5];
    let y = [1.0, 2.0, 0.5];
    let ax: [f64; 3] = [0.2 / 2.8 * 21.5, 0.5 / 2.5 * 19.5, 0.2 / 2.8 * 20.0];
    let want: f64 = (0..3).map(|i| (y[i] - ax[i] as f64).powi(2)).sum();
    assert!((terminal_gap(&x, &y, &a) - want).abs() < 1e-12);
}

#[test]
fn deterministic_strategy_matches_merton() {
    let agents = base_agents(false, PriorBelief::point(0.05));
    let eff: Vec<f64> = agents.iter().map(|a| a.effective_risk(3)).collect();
    let b = vec![0.05 / 0.15; 3];
    let pi = strategy_from_z(&[0.0; 3], &b, 0.15, &eff);
    let m = merton_benchmark_each(&[0.05; 3], &agents, 0.15).unwrap();
    for (a, b) in pi.iter().zip(&m) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn wealth_paths_accumulate_dollar_returns() {
    let pi = Array3::from_shape_fn((2, 4, 2), |(p, k, i)| (p + k + i) as f64);
    let r = Array2::from_shape_fn((2, 3), |(p, k)| 0.01 * (p as f64 + 1.0) - 0.005 * k as f64);
    let w = wealth_paths(&pi, &r, 10.0);
    for p in 0..2 {
        for i in 0..2 {
            let mut x = 10.0;
            for k in 0..3 {
                x += pi[[p, k, i]] * r[[p, k]];
                assert!((w[[p, k + 1, i]] - x).abs() < 1e-14);
            }
        }
    }
}

proptest! {
    #[test]
    fn norm_bounded_by_row_weights(theta in prop::collection::vec(0.0f64..1.0, 2..6)) {
        let a = competition_matrix(&theta);
        let n = theta.len() as f64;
        // ‖A‖₂ ≤ ‖A‖_F
        let frob: f64 = theta.iter().map(|t| (n - 1.0) * (t / (n - t)).powi(2)).sum::<f64>().sqrt();
        prop_assert!(a.norm <= frob + 1e-9);
        let max_row = theta.iter().map(|t| t / (n - t)).fold(0.0, f64::max);
        prop_assert!(a.norm + 1e-9 >= max_row * (n - 1.0).sqrt());
    }

    #[test]
    fn wealth_identity_per_step(
        z in prop::collection::vec(-5.0f64..5.0, 3),
        h in prop::collection::vec(-0.3f64..0.3, 3),
        dzeta in prop::collection::vec(-0.2f64..0.2, 3),
        eff in prop::collection::vec(0.5f64..8.0, 3),
    ) {
        let sigma = 0.15;
        let dt = 0.01;
        let b: Vec<f64> = h.iter().map(|h| h / sigma).collect();
        let state = FbsdeState { x: vec![10.0; 3], y: vec![0.0; 3], z: z.clone(), b: b.clone(), t: 0.0 };
        let next = forward_step(&state, &dzeta, dt, &eff);
        let pi = strategy_from_z(&z, &b, sigma, &eff);
        for i in 0..3 {
            let want = pi[i] * (h[i] * dt + sigma * dzeta[i]);
            prop_assert!((next[i] - 10.0 - want).abs() < 1e-12);
        }
        // bit-reproducible
        prop_assert_eq!(next, forward_step(&state, &dzeta, dt, &eff));
    }

    #[test]
    fn generator_affine_in_z(b in -2.0f64..2.0, z1 in -3.0f64..3.0, z2 in -3.0f64..3.0, d in 0.5f64..5.0) {
        let f = |z: f64| generator_f(&[b], &[z], &[d])[0];
        prop_assert!(((f(z1 + z2) - f(z2)) - (f(z1) - f(0.0))).abs() < 1e-12);
    }
}
