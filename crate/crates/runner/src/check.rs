//! Fast invariant suite behind the `check` verb.

use ndarray::Array2;
use rand::Rng;
use relwealth_core::agent::base_agents;
use relwealth_core::analytic::{build_kernels, equilibrium_at, CoefKernels};
use relwealth_core::fbsde::{check_small_competition, competition_matrix};
use relwealth_core::filtering::{riccati_ode_oracle, riccati_sigma, RiccatiParams};
use relwealth_core::learn::{Mlp, Rnn};
use relwealth_core::market::simulate_bundle;
use relwealth_core::{MarketSpec, RngKey};

#[derive(Debug, Clone)]
pub struct CheckLine {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn line(name: &'static str, passed: bool, detail: String) -> CheckLine {
    CheckLine { name, passed, detail }
}

fn riccati() -> CheckLine {
    let spec = MarketSpec::linear_base(0.05, 0.02);
    let mut worst: f64 = 0.0;
    for s0 in [0.0, 0.05, 0.1] {
        let p = match RiccatiParams::new(&spec, s0) {
            Ok(p) => p,
            Err(e) => return line("riccati", false, e.to_string()),
        };
        let steps = 5000;
        let ode = riccati_ode_oracle(&p, spec.horizon, steps);
        for (j, v) in ode.iter().enumerate() {
            match riccati_sigma(spec.horizon * j as f64 / steps as f64, &p) {
                Ok(s) => worst = worst.max((s - v).abs()),
                Err(e) => return line("riccati", false, e.to_string()),
            }
        }
    }
    line("riccati", worst < 1e-6, format!("max |closed form - rk4| = {worst:.2e}"))
}

fn competition() -> CheckLine {
    let base = check_small_competition(&competition_matrix(&[0.2, 0.5, 0.2]));
    let high = check_small_competition(&competition_matrix(&[0.99; 3]));
    line("competition", base.passed() && !high.passed(), format!("base {base:?}, θ=0.99 {high:?}"))
}

fn nash() -> CheckLine {
    let agents = base_agents(true, relwealth_core::PriorBelief::point(0.0));
    let mut iters = 0;
    let mut gap: f64 = 0.0;
    for (h0, mean) in [(0.02, 0.0), (0.05, 0.02), (0.1, 0.02)] {
        let spec = MarketSpec::linear_base(h0, mean);
        let k = match build_kernels(&spec, 0.0, 10) {
            Ok(k) => k,
            Err(e) => return line("nash", false, e.to_string()),
        };
        let refs: Vec<&CoefKernels> = vec![&k; agents.len()];
        for j in 0..=spec.steps {
            let etas = vec![h0 + 0.01 * (j as f64 / 10.0).sin(); agents.len()];
            match equilibrium_at(spec.time(j), &etas, &agents, &refs) {
                Ok(s) => {
                    iters = iters.max(s.iterations_used);
                    gap = gap.max(s.direct_gap);
                }
                Err(e) => return line("nash", false, e.to_string()),
            }
        }
    }
    line("nash", iters <= 5 && gap < 1e-9, format!("max iterations {iters}, max direct gap {gap:.2e}"))
}

fn support() -> CheckLine {
    let spec = MarketSpec::nonlinear_base(0.05, 0.02);
    let b = simulate_bundle(&spec, 64, RngKey::new(7));
    let (lo, hi) = spec.dynamics.support();
    let (min, max) = b.hidden.iter().fold((f64::MAX, f64::MIN), |(a, c), &v| (a.min(v), c.max(v)));
    let pos = b.prices.iter().all(|&s| s > 0.0);
    line("support", lo <= min && max <= hi && pos, format!("hidden in [{min:.4}, {max:.4}], prices positive: {pos}"))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn gradients() -> CheckLine {
    let key = RngKey::new(11);
    let mut rng = key.rng();
    let h = 1e-5;

    let net = Mlp::new(5, 16, 3, 3).init(&mut rng);
    let x = Array2::from_shape_fn((8, 5), |_| rng.gen_range(-1.0..1.0));
    let loss = |n: &Mlp| n.forward(&x.view()).map(|o| o.sum()).unwrap_or(f64::NAN);
    let mut mlp_worst: f64 = 0.0;
    if let Ok((out, tape)) = net.forward_tape(&x.view()) {
        let mut grad = vec![0.0; net.params.len()];
        net.backward(&tape, Array2::ones(out.dim()), &mut grad);
        for _ in 0..100 {
            let c = rng.gen_range(0..net.params.len());
            let (mut up, mut dn) = (net.clone(), net.clone());
            up.params.data[c] += h;
            dn.params.data[c] -= h;
            mlp_worst = mlp_worst.max(rel_err(grad[c], (loss(&up) - loss(&dn)) / (2.0 * h)));
        }
    }

    let rnn = Rnn::new(2, 12).init(&mut rng);
    let xs: Vec<Array2<f64>> = (0..10).map(|_| Array2::from_shape_fn((4, 2), |_| rng.gen_range(-1.0..1.0))).collect();
    let target = Array2::from_shape_fn((4, 10), |_| rng.gen_range(-0.5..0.5));
    let loss = |n: &Rnn| n.forward(&xs).map(|o| (o - &target).mapv(|v| v * v).sum()).unwrap_or(f64::NAN);
    let mut rnn_worst: f64 = 0.0;
    if let Ok((out, tape)) = rnn.forward_tape(&xs) {
        let d = (&out - &target) * 2.0;
        let mut grad = vec![0.0; rnn.params.len()];
        rnn.backward(&tape, &d.view(), &mut grad);
        for _ in 0..100 {
            let c = rng.gen_range(0..rnn.params.len());
            let (mut up, mut dn) = (rnn.clone(), rnn.clone());
            up.params.data[c] += h;
            dn.params.data[c] -= h;
            rnn_worst = rnn_worst.max(rel_err(grad[c], (loss(&up) - loss(&dn)) / (2.0 * h)));
        }
    }
    line("gradients", mlp_worst < 1e-4 && rnn_worst < 1e-3, format!("mlp {mlp_worst:.2e}, rnn {rnn_worst:.2e}"))
}

/// Runs every check; callers print the lines.
pub fn run_checks() -> Vec<CheckLine> {
    vec![riccati(), competition(), nash(), support(), gradients()]
}
