//! Closed-form equilibrium for the linear-Gaussian market.
//!
//! The value function of agent i is
//! `V = −exp(−((1 − θ/N)x − θy)/δ) · exp(g(t, η))` with
//! `g(t, η) = ∫_t^T A(t,s)η² + B(t,s)η + C(t,s) ds`. The kernels depend on
//! the opponents' average position only through `a = w₂·ᾱ`, `w₂ = θ/δ`, so
//! `B` and `C` are stored split by powers of `a`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::AgentProfile;
use crate::filtering::{variance_curve, FilterError, RiccatiParams};
use crate::market::MarketSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("fixed point did not converge and the linear system is singular")]
    NoContraction,
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("analytic equilibrium needs a linear-Gaussian market")]
    WrongModel,
}

/// Kernel integrals `∫_t^T … ds` at one time, with the gain `c(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KernelIntegrals {
    pub gain: f64,
    pub p: f64,
    pub q_mu: f64,
    pub q_w: f64,
    pub r0: f64,
    pub r1: f64,
    pub r2: f64,
}

impl KernelIntegrals {
    /// `g(t, η)` for the coupling level `a = w₂·ᾱ`.
    pub fn g(&self, eta: f64, a: f64) -> f64 {
        self.p * eta * eta + (self.q_mu + a * self.q_w) * eta + self.r0 + a * self.r1 + a * a * self.r2
    }
}

/// Coefficient kernels on a uniform lattice over `[0, T]`. Two-argument
/// arrays are indexed `[t, s]` and only `s ≥ t` is populated.
#[derive(Debug, Clone)]
pub struct CoefKernels {
    pub grid: Vec<f64>,
    pub sigma: Vec<f64>,
    /// `c = Σ̂ + σ_Sσ_μρ`
    pub gain: Vec<f64>,
    pub stock_vol: f64,
    pub a: Array2<f64>,
    pub l_mu: Array2<f64>,
    pub l_w: Array2<f64>,
    pub b_mu: Array2<f64>,
    pub b_w: Array2<f64>,
    pub c0: Array2<f64>,
    pub c1: Array2<f64>,
    pub c2: Array2<f64>,
    integrals: Vec<KernelIntegrals>,
}

fn cumulative_trapezoid(f: &[f64], h: f64) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    for j in 1..f.len() {
        out[j] = out[j - 1] + 0.5 * h * (f[j - 1] + f[j]);
    }
    out
}

/// Builds kernels for prior variance `sigma0` on a lattice with `refine`
/// sub-intervals per simulation step.
pub fn build_kernels(spec: &MarketSpec, sigma0: f64, refine: usize) -> Result<CoefKernels, AnalyticError> {
    if !spec.is_linear_gaussian() {
        return Err(AnalyticError::WrongModel);
    }
    let m = spec.steps * refine.max(1);
    let grid: Vec<f64> = (0..=m).map(|j| spec.horizon * j as f64 / m as f64).collect();
    let params = RiccatiParams::new(spec, sigma0)?;
    let sigma = variance_curve(&params, &grid)?;
    Ok(kernels_from_curve(spec, grid, sigma))
}

/// Kernels from a variance curve sampled on a uniform `grid`.
pub fn kernels_from_curve(spec: &MarketSpec, grid: Vec<f64>, sigma: Vec<f64>) -> CoefKernels {
    let n = grid.len();
    let h = grid[1] - grid[0];
    let s = spec.stock_vol;
    let s2 = s * s;
    let lam = spec.dynamics.mean_reversion;
    let lm = lam * spec.dynamics.long_run_mean;
    let cross = s * spec.dynamics.vol * spec.correlation;
    let gain: Vec<f64> = sigma.iter().map(|v| v + cross).collect();

    let rate = |f: &dyn Fn(f64) -> f64| cumulative_trapezoid(&gain.iter().map(|&c| f(c)).collect::<Vec<_>>(), h);
    let e_a = rate(&|c| lam + c / s);
    let e_b = rate(&|c| lam + c / s2);
    let e_l = rate(&|c| lam + 2.0 * c / s - c / s2);

    let mut a = Array2::zeros((n, n));
    let mut l_mu = Array2::zeros((n, n));
    let mut l_w = Array2::zeros((n, n));
    let mut b_mu = Array2::zeros((n, n));
    let mut b_w = Array2::zeros((n, n));
    let mut c0 = Array2::zeros((n, n));
    let mut c1 = Array2::zeros((n, n));
    let mut c2 = Array2::zeros((n, n));

    for j in 0..n {
        for k in j..n {
            a[[j, k]] = -0.5 / s2 * (-2.0 * (e_a[k] - e_a[j])).exp();
        }
    }
    for k in 0..n {
        let wmu = |u: usize| lm * (e_l[u] - e_l[k]).exp();
        let ww = |u: usize| gain[u] * (e_l[u] - e_l[k]).exp();
        for j in (0..k).rev() {
            l_mu[[j, k]] = l_mu[[j + 1, k]] - 0.5 * h / s2 * (wmu(j) + wmu(j + 1));
            l_w[[j, k]] = l_w[[j + 1, k]] - 0.5 * h / s2 * (ww(j) + ww(j + 1));
        }
        for j in 0..=k {
            let d = (-(e_b[k] - e_b[j])).exp();
            b_mu[[j, k]] = l_mu[[j, k]] * d;
            b_w[[j, k]] = l_w[[j, k]] * d;
        }
        let f0 = |u: usize| gain[u] * gain[u] / s2 * a[[u, k]] + lm * b_mu[[u, k]];
        let f1 = |u: usize| lm * b_w[[u, k]] + gain[u] * b_mu[[u, k]];
        let f2 = |u: usize| gain[u] * b_w[[u, k]];
        for j in (0..k).rev() {
            c0[[j, k]] = c0[[j + 1, k]] + 0.5 * h * (f0(j) + f0(j + 1));
            c1[[j, k]] = c1[[j + 1, k]] + 0.5 * h * (f1(j) + f1(j + 1));
            c2[[j, k]] = c2[[j + 1, k]] + 0.5 * h * (f2(j) + f2(j + 1));
        }
    }

    let tail = |arr: &Array2<f64>, j: usize| {
        let mut acc = 0.0;
        for k in j..n - 1 {
            acc += 0.5 * h * (arr[[j, k]] + arr[[j, k + 1]]);
        }
        acc
    };
    let integrals = (0..n)
        .map(|j| KernelIntegrals {
            gain: gain[j],
            p: tail(&a, j),
            q_mu: tail(&b_mu, j),
            q_w: tail(&b_w, j),
            r0: tail(&c0, j),
            r1: tail(&c1, j),
            r2: tail(&c2, j),
        })
        .collect();

    CoefKernels { grid, sigma, gain, stock_vol: s, a, l_mu, l_w, b_mu, b_w, c0, c1, c2, integrals }
}

impl CoefKernels {
    pub fn horizon(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    /// `B(t_j, t_k)` at coupling level `a`.
    pub fn b(&self, j: usize, k: usize, a: f64) -> f64 {
        self.b_mu[[j, k]] + a * self.b_w[[j, k]]
    }

    pub fn l(&self, j: usize, k: usize, a: f64) -> f64 {
        self.l_mu[[j, k]] + a * self.l_w[[j, k]]
    }

    pub fn c(&self, j: usize, k: usize, a: f64) -> f64 {
        self.c0[[j, k]] + a * self.c1[[j, k]] + a * a * self.c2[[j, k]]
    }

    /// Kernel integrals at lattice index `j`.
    pub fn integrals_at(&self, j: usize) -> KernelIntegrals {
        self.integrals[j]
    }

    /// Kernel integrals at time `t`, linearly interpolated between lattice
    /// points.
    pub fn integrals(&self, t: f64) -> KernelIntegrals {
        let n = self.grid.len() - 1;
        let x = (t / self.horizon() * n as f64).clamp(0.0, n as f64);
        let j = (x.floor() as usize).min(n);
        let w = x - j as f64;
        if w == 0.0 || j == n {
            return self.integrals[j];
        }
        let (u, v) = (self.integrals[j], self.integrals[j + 1]);
        let mix = |p: f64, q: f64| (1.0 - w) * p + w * q;
        KernelIntegrals {
            gain: mix(u.gain, v.gain),
            p: mix(u.p, v.p),
            q_mu: mix(u.q_mu, v.q_mu),
            q_w: mix(u.q_w, v.q_w),
            r0: mix(u.r0, v.r0),
            r1: mix(u.r1, v.r1),
            r2: mix(u.r2, v.r2),
        }
    }
}

/// Self term βⁱ of the best response at `(t, η)`.
pub fn beta_i(t: f64, eta: f64, agent: &AgentProfile, n: usize, kernels: &CoefKernels) -> f64 {
    let k = kernels.integrals(t);
    let s2 = kernels.stock_vol.powi(2);
    agent.effective_risk(n) / s2 * (eta + k.gain * (2.0 * k.p * eta + k.q_mu))
}

/// Coupling coefficient 𝔪ⁱ multiplying the opponents' average position.
pub fn coupling_m_i(t: f64, agent: &AgentProfile, n: usize, kernels: &CoefKernels) -> f64 {
    if agent.competition == 0.0 {
        return 0.0;
    }
    let k = kernels.integrals(t);
    let s2 = kernels.stock_vol.powi(2);
    let w2 = agent.competition / agent.risk_tolerance;
    agent.effective_risk(n) / s2 * k.gain * w2 * k.q_w + agent.effective_competition(n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashLinearSolve {
    pub coupling: Vec<f64>,
    pub beta: Vec<f64>,
    pub positions: Vec<f64>,
    pub iterations_used: usize,
    /// Max componentwise gap to the direct solve (0 when only one method ran).
    pub direct_gap: f64,
}

impl NashLinearSolve {
    /// `max_i |πⁱ − βⁱ − 𝔪ⁱ·ᾱ^{−i}|`
    pub fn residual(&self) -> f64 {
        best_response_residual(&self.positions, &self.beta, &self.coupling)
    }

    /// Opponents' average position ᾱ^{−i} = (1/N)Σ_{j≠i} πʲ.
    pub fn opponents_average(&self) -> Vec<f64> {
        opponents_average(&self.positions)
    }
}

pub fn opponents_average(pi: &[f64]) -> Vec<f64> {
    let n = pi.len() as f64;
    let total: f64 = pi.iter().sum();
    pi.iter().map(|p| (total - p) / n).collect()
}

pub fn best_response_residual(pi: &[f64], beta: &[f64], m: &[f64]) -> f64 {
    opponents_average(pi)
        .iter()
        .enumerate()
        .map(|(i, avg)| (pi[i] - beta[i] - m[i] * avg).abs())
        .fold(0.0, f64::max)
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Solves `(I − diag(𝔪)/N · OffDiag) π = β` directly.
pub fn nash_direct(beta: &[f64], m: &[f64]) -> Option<Vec<f64>> {
    let n = beta.len();
    let a = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { -m[i] / n as f64 }).collect())
        .collect();
    solve_dense(a, beta.to_vec())
}

/// Nash positions by fixed-point iteration on the aggregate position.
///
/// Given a total `S`, each agent's best response including its own
/// contribution is `πⁱ = (βⁱ + 𝔪ⁱS/N)/(1 + 𝔪ⁱ/N)`; the aggregate map is
/// iterated with Steffensen extrapolation. The result is cross-checked
/// against [`nash_direct`].
pub fn nash_fixed_point(beta: &[f64], m: &[f64], tol: f64, max_iter: usize) -> Result<NashLinearSolve, AnalyticError> {
    let n = beta.len();
    let nf = n as f64;
    let respond = |total: f64| -> Vec<f64> {
        (0..n).map(|i| (beta[i] + m[i] * total / nf) / (1.0 + m[i] / nf)).collect()
    };
    let aggregate = |total: f64| -> f64 { respond(total).iter().sum() };
    let contracting = m.iter().all(|&mi| mi.abs() * (nf - 1.0) / nf < 1.0);
    let direct = nash_direct(beta, m);

    let mut iterated = None;
    let mut iterations = 0;
    if contracting {
        let mut s0 = 0.0;
        for it in 1..=max_iter {
            let pi = respond(s0);
            if best_response_residual(&pi, beta, m) < tol {
                iterated = Some(pi);
                iterations = it;
                break;
            }
            let s1 = aggregate(s0);
            let s2 = aggregate(s1);
            let den = s2 - 2.0 * s1 + s0;
            s0 = if den.abs() > f64::EPSILON * s0.abs().max(1.0) { s0 - (s1 - s0).powi(2) / den } else { s2 };
        }
    }

    let (positions, iterations_used, direct_gap) = match (iterated, direct) {
        (Some(p), Some(d)) => {
            let gap = p.iter().zip(&d).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            (p, iterations, gap)
        }
        (Some(p), None) => (p, iterations, 0.0),
        (None, Some(d)) => (d, 0, 0.0),
        (None, None) => return Err(AnalyticError::NoContraction),
    };
    Ok(NashLinearSolve { coupling: m.to_vec(), beta: beta.to_vec(), positions, iterations_used, direct_gap })
}

pub const NASH_TOL: f64 = 1e-10;
pub const NASH_MAX_ITER: usize = 50;

/// Equilibrium positions at time `t` given each agent's return estimate and
/// kernels (one kernel set per agent, as the prior variance may differ).
pub fn equilibrium_at(
    t: f64,
    etas: &[f64],
    agents: &[AgentProfile],
    kernels: &[&CoefKernels],
) -> Result<NashLinearSolve, AnalyticError> {
    let n = agents.len();
    let beta: Vec<f64> = (0..n).map(|i| beta_i(t, etas[i], &agents[i], n, kernels[i])).collect();
    let m: Vec<f64> = (0..n).map(|i| coupling_m_i(t, &agents[i], n, kernels[i])).collect();
    nash_fixed_point(&beta, &m, NASH_TOL, NASH_MAX_ITER)
}

/// Value function of agent `i` at `(t, x, y, η)`, where `y` is the
/// opponents' average wealth and `opponents_avg` their average position.
#[allow(clippy::too_many_arguments)]
pub fn value_function(
    t: f64,
    x: f64,
    y: f64,
    eta: f64,
    agent: &AgentProfile,
    n: usize,
    kernels: &CoefKernels,
    opponents_avg: f64,
) -> f64 {
    let w2 = if agent.risk_tolerance > 0.0 { agent.competition / agent.risk_tolerance } else { 0.0 };
    let g = kernels.integrals(t).g(eta, w2 * opponents_avg);
    let wealth = agent.discount(n) * x - agent.competition * y;
    -(-wealth / agent.risk_tolerance + g).exp()
}

/// `g(t, η)` alone.
pub fn exponent_g(t: f64, eta: f64, agent: &AgentProfile, kernels: &CoefKernels, opponents_avg: f64) -> f64 {
    let w2 = if agent.risk_tolerance > 0.0 { agent.competition / agent.risk_tolerance } else { 0.0 };
    kernels.integrals(t).g(eta, w2 * opponents_avg)
}

/// Nash positions with the hedging terms removed (deterministic-return
/// Merton strategy under competition).
pub fn merton_benchmark(eta: f64, agents: &[AgentProfile], stock_vol: f64) -> Result<Vec<f64>, AnalyticError> {
    merton_benchmark_each(&vec![eta; agents.len()], agents, stock_vol)
}

/// Merton benchmark with agent-specific return estimates.
pub fn merton_benchmark_each(etas: &[f64], agents: &[AgentProfile], stock_vol: f64) -> Result<Vec<f64>, AnalyticError> {
    let n = agents.len();
    let s2 = stock_vol * stock_vol;
    let beta: Vec<f64> = agents.iter().zip(etas).map(|(a, e)| a.effective_risk(n) * e / s2).collect();
    let m: Vec<f64> = agents.iter().map(|a| a.effective_competition(n)).collect();
    Ok(nash_fixed_point(&beta, &m, NASH_TOL, NASH_MAX_ITER)?.positions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::base_agents;
    use crate::filtering::PriorBelief;

    fn panel(eta: f64, mu: f64) -> (MarketSpec, Vec<AgentProfile>, CoefKernels) {
        let spec = MarketSpec::linear_base(eta, mu);
        let agents = base_agents(true, PriorBelief::point(eta));
        let k = build_kernels(&spec, 0.0, 10).unwrap();
        (spec, agents, k)
    }

    #[test]
    fn kernel_boundary_values() {
        let (spec, _, k) = panel(0.05, 0.02);
        let s2 = spec.stock_vol.powi(2);
        for j in 0..k.grid.len() {
            assert!((k.a[[j, j]] + 0.5 / s2).abs() < 1e-12);
            assert_eq!(k.b(j, j, 0.3), 0.0);
            assert_eq!(k.c(j, j, 0.3), 0.0);
            for s in j..k.grid.len() {
                assert!(k.a[[j, s]] < 0.0);
            }
        }
        let last = k.integrals_at(k.grid.len() - 1);
        assert_eq!((last.p, last.q_mu, last.q_w, last.r0), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn flat_kernel_when_exponent_vanishes() {
        let mut spec = MarketSpec::linear_base(0.05, 0.0);
        spec.dynamics.mean_reversion = 1e-300;
        let grid: Vec<f64> = (0..=50).map(|j| j as f64 * 0.01).collect();
        let cross = spec.stock_vol * spec.dynamics.vol * spec.correlation;
        let k = kernels_from_curve(&spec, grid, vec![-cross; 51]);
        for s in 0..=50 {
            assert!((k.a[[0, s]] + 0.5 / spec.stock_vol.powi(2)).abs() < 1e-12);
        }
        for j in 0..=50 {
            for s in j..=50 {
                assert_eq!(k.b(j, s, 0.0), 0.0);
            }
        }
    }

    #[test]
    fn refinement_is_stable() {
        let spec = MarketSpec::linear_base(0.05, 0.02);
        let k1 = build_kernels(&spec, 0.0, 10).unwrap();
        let k2 = build_kernels(&spec, 0.0, 20).unwrap();
        let (a1, a2) = (k1.a[[0, k1.grid.len() - 1]], k2.a[[0, k2.grid.len() - 1]]);
        assert!(((a1 - a2) / a2).abs() < 1e-4);
    }

    #[test]
    fn reduced_beta() {
        let (spec, _, _) = panel(0.05, 0.0);
        let grid: Vec<f64> = (0..=50).map(|j| j as f64 * 0.01).collect();
        let cross = spec.stock_vol * spec.dynamics.vol * spec.correlation;
        let k = kernels_from_curve(&spec, grid, vec![-cross; 51]);
        let agent = AgentProfile::new(2.0, 0.0, PriorBelief::point(0.05));
        assert!((beta_i(0.0, 0.05, &agent, 3, &k) - 2.0 * 0.05 / 0.0225).abs() < 1e-12);
        assert!((beta_i(0.0, 0.05, &agent, 3, &k) - 4.4444).abs() < 1e-4);
    }

    #[test]
    fn beta_zero_without_sources() {
        let (spec, agents, _) = panel(0.05, 0.0);
        let k = build_kernels(&spec, 0.0, 4).unwrap();
        assert_eq!(beta_i(0.1, 0.0, &agents[0], 3, &k), 0.0);
    }

    #[test]
    fn coupling_zero_without_competition() {
        let (_, _, k) = panel(0.05, 0.02);
        let agent = AgentProfile::new(3.0, 0.0, PriorBelief::point(0.05));
        assert_eq!(coupling_m_i(0.0, &agent, 3, &k), 0.0);
    }

    #[test]
    fn coupling_reduces_to_competition_weight_without_hedging() {
        let spec = MarketSpec::linear_base(0.05, 0.0);
        let grid: Vec<f64> = (0..=50).map(|j| j as f64 * 0.01).collect();
        let cross = spec.stock_vol * spec.dynamics.vol * spec.correlation;
        let k = kernels_from_curve(&spec, grid, vec![-cross; 51]);
        let agent = AgentProfile::new(3.0, 0.5, PriorBelief::point(0.05));
        assert!((coupling_m_i(0.0, &agent, 3, &k) - 0.5 / (1.0 - 0.5 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn decoupled_nash() {
        let r = nash_fixed_point(&[1.0, 2.0, 3.0], &[0.0; 3], 1e-10, 50).unwrap();
        assert_eq!(r.positions, vec![1.0, 2.0, 3.0]);
        assert_eq!(r.iterations_used, 1);
    }

    #[test]
    fn symmetric_two_player_nash() {
        let (b, m) = (1.3, 0.7);
        let r = nash_fixed_point(&[b, b], &[m, m], 1e-12, 50).unwrap();
        for p in r.positions {
            assert!((p - b / (1.0 - m / 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn direct_solve_fallback() {
        let r = nash_fixed_point(&[1.0, 1.0], &[3.0, 0.1], 1e-10, 50).unwrap();
        assert_eq!(r.iterations_used, 0);
        assert!(r.residual() < 1e-12);
        assert_eq!(nash_fixed_point(&[1.0, 1.0], &[2.0, 2.0], 1e-10, 50), Err(AnalyticError::NoContraction));
    }

    #[test]
    fn merton_without_competition() {
        let agents = base_agents(false, PriorBelief::point(0.05));
        let pi = merton_benchmark(0.05, &agents, 0.15).unwrap();
        for (p, want) in pi.iter().zip([4.444, 6.667, 11.111]) {
            assert!((p - want).abs() < 1e-3);
        }
    }

    #[test]
    fn hedging_vanishes_at_horizon() {
        let (spec, agents, k) = panel(0.05, 0.02);
        for eta in [-0.1, 0.02, 0.3] {
            let pi = equilibrium_at(spec.horizon, &[eta; 3], &agents, &[&k, &k, &k]).unwrap().positions;
            let mer = merton_benchmark(eta, &agents, spec.stock_vol).unwrap();
            for (a, b) in pi.iter().zip(&mer) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn terminal_value() {
        let (spec, agents, k) = panel(0.05, 0.02);
        let v = value_function(spec.horizon, 10.0, 5.0, 0.05, &agents[1], 3, &k, 7.0);
        assert_eq!(v, -(-((1.0 - 0.5 / 3.0) * 10.0 - 0.5 * 5.0) / 3.0f64).exp());
    }
}
