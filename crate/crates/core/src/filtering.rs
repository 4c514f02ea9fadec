//! Conditional estimates of the hidden return rate.
//!
//! Linear-Gaussian markets get the exact Kalman–Bucy filter, with the
//! conditional variance from the closed-form Riccati solution. Heterogeneous
//! beliefs are modelled by sampling each agent's initial estimate and running
//! the hidden dynamics from it under the agent's own measure.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{HiddenDynamics, HiddenKind, MarketSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("Riccati denominator vanishes at t = {t}")]
    DegenerateDenominator { t: f64 },
    #[error("Riccati constant k = {k} is not positive")]
    NonPositiveK { k: f64 },
    #[error("exact Kalman filter needs a linear-Gaussian market")]
    WrongModel,
    #[error("prior interval [{lo}, {hi}] misses the state support")]
    EmptySupport { lo: f64, hi: f64 },
}

/// An agent's belief about the initial hidden state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorBelief {
    pub mean: f64,
    pub variance: f64,
    /// Width of the uniform prior used for non-Gaussian dynamics.
    pub support_width: f64,
}

impl PriorBelief {
    pub fn point(mean: f64) -> Self {
        Self { mean, variance: 0.0, support_width: 0.0 }
    }

    pub fn gaussian(mean: f64, std: f64) -> Self {
        Self { mean, variance: std * std, support_width: 0.0 }
    }

    pub fn uniform(mean: f64, width: f64) -> Self {
        Self { mean, variance: width * width / 12.0, support_width: width }
    }

    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Constants of the closed-form conditional variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiccatiParams {
    pub k: f64,
    pub k1: f64,
    pub k2: f64,
    pub sigma0: f64,
    pub mean_reversion: f64,
    pub stock_vol: f64,
    pub hidden_vol: f64,
    pub correlation: f64,
}

impl RiccatiParams {
    pub fn new(spec: &MarketSpec, sigma0: f64) -> Result<Self, FilterError> {
        let (l, s, m, r) = (spec.dynamics.mean_reversion, spec.stock_vol, spec.dynamics.vol, spec.correlation);
        let k = l * l * s * s + 2.0 * s * m * l * r + m * m;
        if !(k > 0.0) {
            return Err(FilterError::NonPositiveK { k });
        }
        let rk = k.sqrt();
        let shift = l * s * s + s * m * r + sigma0;
        Ok(Self {
            k,
            k1: rk * s + shift,
            k2: -rk * s + shift,
            sigma0,
            mean_reversion: l,
            stock_vol: s,
            hidden_vol: m,
            correlation: r,
        })
    }

    /// `σ_S σ_μ ρ`, the noise covariance term of the filter gain.
    pub fn cross(&self) -> f64 {
        self.stock_vol * self.hidden_vol * self.correlation
    }

    /// Stationary root `√k σ_S − λσ_S² − σ_Sσ_μρ`.
    pub fn stationary(&self) -> f64 {
        self.k.sqrt() * self.stock_vol - self.mean_reversion * self.stock_vol.powi(2) - self.cross()
    }

    /// Right-hand side of the variance ODE.
    pub fn rhs(&self, sigma: f64) -> f64 {
        let s = self.stock_vol;
        -2.0 * self.mean_reversion * sigma + self.hidden_vol.powi(2) - (sigma + self.cross()).powi(2) / (s * s)
    }
}

/// Closed-form conditional variance `Σ̂(t)`.
pub fn riccati_sigma(t: f64, p: &RiccatiParams) -> Result<f64, FilterError> {
    if t == 0.0 {
        return Ok(p.sigma0);
    }
    let s = p.stock_vol;
    let rk = p.k.sqrt();
    let x = 2.0 * rk * t / s;
    // divide through by e^x so large t stays finite
    let decay = (-x).exp();
    let den = p.k1 - p.k2 * decay;
    if (den / decay).abs() < 1e-12 {
        return Err(FilterError::DegenerateDenominator { t });
    }
    let ratio = (p.k1 + p.k2 * decay) / den;
    Ok(rk * s * ratio - (p.mean_reversion + p.hidden_vol * p.correlation / s) * s * s)
}

/// `Σ̂` on every point of `grid`.
pub fn variance_curve(p: &RiccatiParams, grid: &[f64]) -> Result<Vec<f64>, FilterError> {
    grid.iter().map(|&t| riccati_sigma(t, p)).collect()
}

/// Classical RK4 integration of the variance ODE on `[0, horizon]`.
pub fn riccati_ode_oracle(p: &RiccatiParams, horizon: f64, steps: usize) -> Vec<f64> {
    let h = horizon / steps as f64;
    let mut out = Vec::with_capacity(steps + 1);
    let mut y = p.sigma0;
    out.push(y);
    for _ in 0..steps {
        let k1 = p.rhs(y);
        let k2 = p.rhs(y + 0.5 * h * k1);
        let k3 = p.rhs(y + 0.5 * h * k2);
        let k4 = p.rhs(y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        out.push(y);
    }
    out
}

/// Filtered estimate path (K+1 values) and innovation increments (K values).
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanOutput {
    pub estimate: Vec<f64>,
    pub innovations: Vec<f64>,
}

/// Discrete Kalman–Bucy filter with a precomputed variance curve on the
/// simulation grid.
pub fn kalman_with_curve(spec: &MarketSpec, curve: &[f64], returns: &[f64], a_hat0: f64) -> KalmanOutput {
    let dt = spec.dt();
    let s = spec.stock_vol;
    let cross = s * spec.dynamics.vol * spec.correlation;
    let (lam, mu) = (spec.dynamics.mean_reversion, spec.dynamics.long_run_mean);
    let mut estimate = Vec::with_capacity(returns.len() + 1);
    let mut innovations = Vec::with_capacity(returns.len());
    let mut a = a_hat0;
    estimate.push(a);
    for (k, &r) in returns.iter().enumerate() {
        let dz = (r - a * dt) / s;
        innovations.push(dz);
        a += -lam * (a - mu) * dt + (curve[k] + cross) / s * dz;
        estimate.push(a);
    }
    KalmanOutput { estimate, innovations }
}

/// Kalman–Bucy estimate started at the prior mean with `Σ̂(0)` equal to the
/// prior variance.
pub fn kalman_estimate(spec: &MarketSpec, returns: &[f64], prior: &PriorBelief) -> Result<KalmanOutput, FilterError> {
    if !spec.is_linear_gaussian() {
        return Err(FilterError::WrongModel);
    }
    let p = RiccatiParams::new(spec, prior.variance)?;
    let curve = variance_curve(&p, &spec.grid())?;
    Ok(kalman_with_curve(spec, &curve, returns, prior.mean))
}

/// Draws an initial hidden-state estimate from the prior.
pub fn sample_prior<R: Rng + ?Sized>(prior: &PriorBelief, dynamics: &HiddenDynamics, rng: &mut R) -> Result<f64, FilterError> {
    match dynamics.kind {
        HiddenKind::LinearOu => {
            if prior.variance == 0.0 {
                return Ok(prior.mean);
            }
            let z: f64 = StandardNormal.sample(rng);
            Ok(prior.mean + prior.variance.sqrt() * z)
        }
        _ => {
            let (lo_s, hi_s) = dynamics.support();
            let half = 0.5 * prior.support_width;
            let lo = (prior.mean - half).max(lo_s);
            let hi = (prior.mean + half).min(hi_s);
            if lo > hi {
                return Err(FilterError::EmptySupport { lo: prior.mean - half, hi: prior.mean + half });
            }
            if lo == hi {
                return Ok(lo);
            }
            Ok(rng.gen_range(lo..=hi))
        }
    }
}

/// Hidden path under an agent's subjective measure: the objective dynamics
/// and noise, started from the agent's own initial estimate.
pub fn subjective_hidden_path(spec: &MarketSpec, a_hat0: f64, db: &[f64]) -> Vec<f64> {
    spec.dynamics.path(a_hat0, spec.dt(), db)
}
