use proptest::prelude::*;
use relwealth_core::market::*;
use relwealth_core::rng::{brownian_increments, RngKey};

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn bounded_paths_stay_in_support() {
    let spec = MarketSpec::nonlinear_base(0.05, 0.02);
    let b = simulate_bundle(&spec, 64, RngKey::new(1));
    let lo = b.hidden.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = b.hidden.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(lo >= -0.3 && hi <= 0.3, "{lo} {hi}");
}

#[test]
fn cir_paths_nonnegative() {
    let mut spec = MarketSpec::linear_base(0.01, 0.01);
    spec.dynamics = HiddenDynamics::cir(2.0, 0.01, 0.6);
    let b = simulate_bundle(&spec, 256, RngKey::new(2));
    assert!(b.hidden.iter().all(|&a| a >= 0.0));
}

#[test]
fn uncorrelated_residuals_when_rho_zero() {
    let mut spec = MarketSpec::linear_base(0.05, 0.02);
    spec.correlation = 0.0;
    let b = simulate_bundle(&spec, 10_000, RngKey::new(3));
    let dt = spec.dt();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for p in 0..b.n_paths() {
        x.push(b.returns[[p, 10]] - b.hidden[[p, 10]] * dt);
        y.push(b.db[[p, 10]]);
    }
    let (mx, vx) = mean_var(&x);
    let (my, vy) = mean_var(&y);
    let cov = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (x.len() as f64 - 1.0);
    let corr = cov / (vx * vy).sqrt();
    assert!(corr.abs() < 3.0 / (x.len() as f64).sqrt(), "{corr}");
}

#[test]
fn per_step_return_std() {
    let spec = MarketSpec::linear_base(0.05, 0.02);
    let b = simulate_bundle(&spec, 10_000, RngKey::new(4));
    let (_, v) = mean_var(&b.returns.column(25).to_vec());
    let target = spec.stock_vol * spec.dt().sqrt();
    assert!((v.sqrt() / target - 1.0).abs() < 0.05);
}

#[test]
fn ou_terminal_moments() {
    let spec = MarketSpec::linear_base(0.05, 0.02);
    let b = simulate_bundle(&spec, 100_000, RngKey::new(5));
    let at: Vec<f64> = b.hidden.column(spec.steps).to_vec();
    let (m, v) = mean_var(&at);
    // exact moments of the Euler recursion
    let phi = 1.0 - 8.0 * spec.dt();
    let k = spec.steps as i32;
    let mean = 0.02 + (0.05 - 0.02) * phi.powi(k);
    let var = 0.09 * spec.dt() * (1.0 - phi.powi(2 * k)) / (1.0 - phi * phi);
    let n = at.len() as f64;
    assert!((m - mean).abs() < 3.0 * (v / n).sqrt(), "{m} {mean}");
    // s.e. of the sample variance of Gaussian data is var·√(2/(n−1))
    assert!((v - var).abs() < 3.0 * var * (2.0 / (n - 1.0)).sqrt(), "{v} {var}");
    // and the continuous-time moments to O(Δt)
    let t = spec.horizon;
    let cont_var = 0.09 / 16.0 * (1.0 - (-16.0 * t).exp());
    assert!((var - cont_var).abs() / cont_var < 0.1);
}

#[test]
fn euler_strong_convergence_slope() {
    let spec = MarketSpec::linear_base(0.05, 0.02);
    let fine = 1 << 13;
    let levels = [32usize, 64, 128, 256, 512, 1024];
    let mut err = vec![0.0; levels.len()];
    let paths = 200;
    for p in 0..paths {
        let dt_f = spec.horizon / fine as f64;
        let db = brownian_increments(&mut RngKey::new(6).child(p).rng(), fine, dt_f);
        let reference = *spec.dynamics.path(spec.a0, dt_f, &db).last().unwrap();
        for (l, &k) in levels.iter().enumerate() {
            let agg: Vec<f64> = db.chunks(fine / k).map(|c| c.iter().sum()).collect();
            let end = *spec.dynamics.path(spec.a0, spec.horizon / k as f64, &agg).last().unwrap();
            err[l] += (end - reference).abs() / paths as f64;
        }
    }
    let xs: Vec<f64> = levels.iter().map(|&k| (1.0 / k as f64).ln()).collect();
    let ys: Vec<f64> = err.iter().map(|e| e.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 6.0, ys.iter().sum::<f64>() / 6.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((0.4..=1.1).contains(&slope), "slope {slope}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn support_and_positivity(seed in 0u64..1_000, vol in 0.0f64..1.5, lam in 0.1f64..10.0, sigma_s in 0.05f64..2.0) {
        let mut spec = MarketSpec::nonlinear_base(0.05, 0.0);
        spec.dynamics.vol = vol;
        spec.dynamics.mean_reversion = lam;
        spec.stock_vol = sigma_s;
        let b = simulate_bundle(&spec, 8, RngKey::new(seed));
        prop_assert!(b.hidden.iter().all(|&a| (-0.3..=0.3).contains(&a)));
        prop_assert!(b.prices.iter().all(|&s| s > 0.0));

        spec.dynamics = HiddenDynamics::cir(lam, 0.02, vol);
        spec.a0 = 0.02;
        let b = simulate_bundle(&spec, 8, RngKey::new(seed));
        prop_assert!(b.hidden.iter().all(|&a| a >= 0.0));
        prop_assert!(b.prices.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn signed_sqrt_is_odd(a in -1.0f64..1.0, c in 0.01f64..2.0) {
        let m = ReturnMap::SignedSqrt { scale: c };
        prop_assert_eq!(h_of(m, -a), -h_of(m, a));
        prop_assert!((m.invert(h_of(m, a)) - a).abs() < 1e-12);
    }
}
