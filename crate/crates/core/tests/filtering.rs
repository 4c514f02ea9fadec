use proptest::prelude::*;
use relwealth_core::filtering::*;
use relwealth_core::market::{simulate_bundle, MarketSpec};
use relwealth_core::rng::RngKey;

fn base() -> MarketSpec {
    MarketSpec::linear_base(0.05, 0.02)
}

#[test]
fn closed_form_matches_rk4() {
    for s0 in [0.0, 0.05, 0.1] {
        let p = RiccatiParams::new(&base(), s0).unwrap();
        let steps = 10_000;
        let ode = riccati_ode_oracle(&p, 0.5, steps);
        let dev = ode
            .iter()
            .enumerate()
            .map(|(j, v)| (v - riccati_sigma(0.5 * j as f64 / steps as f64, &p).unwrap()).abs())
            .fold(0.0, f64::max);
        assert!(dev < 1e-6, "Σ₀ = {s0}: {dev}");
    }
}

#[test]
fn zero_is_fixed_point_without_hidden_noise() {
    for rho in [-0.8, 0.0, 0.5] {
        let mut spec = base();
        spec.dynamics.vol = 0.0;
        spec.correlation = rho;
        let p = RiccatiParams::new(&spec, 0.0).unwrap();
        assert!(riccati_ode_oracle(&p, 0.5, 1000).iter().all(|&v| v == 0.0));
        assert!(variance_curve(&p, &spec.grid()).unwrap().iter().all(|v| v.abs() < 1e-15));
    }
}

struct FilterRun {
    err_t: Vec<f64>,
    bias: Vec<Vec<f64>>,
    innovations: Vec<Vec<f64>>,
}

fn run_filter(paths: usize, sigma0: f64) -> FilterRun {
    let spec = base();
    let b = simulate_bundle(&spec, paths, RngKey::new(21));
    let prior = PriorBelief { mean: spec.a0, variance: sigma0, support_width: 0.0 };
    let mut run = FilterRun { err_t: Vec::new(), bias: vec![Vec::new(); spec.steps + 1], innovations: Vec::new() };
    for p in 0..paths {
        let out = kalman_estimate(&spec, &b.returns.row(p).to_vec(), &prior).unwrap();
        for k in 0..=spec.steps {
            run.bias[k].push(out.estimate[k] - b.hidden[[p, k]]);
        }
        run.err_t.push((out.estimate[spec.steps] - b.hidden[[p, spec.steps]]).powi(2));
        run.innovations.push(out.innovations);
    }
    run
}

#[test]
fn filter_error_matches_conditional_variance() {
    let spec = base();
    let run = run_filter(10_000, 0.0);
    let n = run.err_t.len() as f64;
    let mse = run.err_t.iter().sum::<f64>() / n;
    let se = (run.err_t.iter().map(|e| (e - mse).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    let target = riccati_sigma(spec.horizon, &RiccatiParams::new(&spec, 0.0).unwrap()).unwrap();
    assert!(mse <= target + 3.0 * se, "{mse} vs {target} ± {se}");

    // unbiased at every grid time when the prior is centred on the truth
    for errs in &run.bias[1..] {
        let m = errs.iter().sum::<f64>() / n;
        let sd = (errs.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(m.abs() < 3.0 * sd / n.sqrt() + 1e-15);
    }

    let dt = spec.dt();
    let pooled: Vec<f64> = run.innovations.iter().flatten().copied().collect();
    let var = pooled.iter().map(|z| z * z).sum::<f64>() / pooled.len() as f64;
    assert!((var / dt - 1.0).abs() < 0.05, "{}", var / dt);

    let lag: Vec<f64> = run.innovations.iter().flat_map(|z| z.windows(2).map(|w| w[0] * w[1])).collect();
    let l = lag.len() as f64;
    let c = lag.iter().sum::<f64>() / l;
    let se = (lag.iter().map(|x| (x - c).powi(2)).sum::<f64>() / (l - 1.0) / l).sqrt();
    assert!(c.abs() < 3.0 * se, "lag-1 {c} ± {se}");
}

#[test]
fn gaussian_prior_moments() {
    let dyn_ = base().dynamics;
    let prior = PriorBelief::gaussian(0.05, 0.1);
    let mut rng = RngKey::new(31).rng();
    let draws: Vec<f64> = (0..100_000).map(|_| sample_prior(&prior, &dyn_, &mut rng).unwrap()).collect();
    let n = draws.len() as f64;
    let m = draws.iter().sum::<f64>() / n;
    let sd = (draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((m - 0.05).abs() < 3.0 * 0.1 / n.sqrt());
    // s.e. of the sample std ≈ σ/√(2n)
    assert!((sd - 0.1).abs() < 3.0 * 0.1 / (2.0 * n).sqrt());
}

#[test]
fn bounded_subjective_paths_respect_support() {
    let spec = MarketSpec::nonlinear_base(0.05, 0.02);
    let b = simulate_bundle(&spec, 32, RngKey::new(8));
    for p in 0..32 {
        let path = subjective_hidden_path(&spec, 0.29, &b.db.row(p).to_vec());
        assert!(path.iter().all(|a| (-0.3..=0.3).contains(a)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn variance_monotone_in_prior(a in 0.0f64..0.2, gap in 1e-4f64..0.2, t in 0.0f64..2.0) {
        let lo = RiccatiParams::new(&base(), a).unwrap();
        let hi = RiccatiParams::new(&base(), a + gap).unwrap();
        prop_assert!(riccati_sigma(t, &lo).unwrap() <= riccati_sigma(t, &hi).unwrap() + 1e-15);
    }

    #[test]
    fn zero_variance_prior_is_deterministic(m in -0.2f64..0.2, seed in 0u64..100) {
        let mut rng = RngKey::new(seed).rng();
        prop_assert_eq!(sample_prior(&PriorBelief::point(m), &base().dynamics, &mut rng).unwrap(), m);
    }
}
