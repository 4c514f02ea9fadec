//! Hidden-return market: the unobserved drift state, the observed stock, and
//! their Euler discretization on a uniform grid.

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{brownian_increments, RngKey};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("invalid market parameter `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> MarketError {
    MarketError::Invalid { field, reason: reason.into() }
}

/// Shape of the hidden drift process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum HiddenKind {
    /// `dA = -λ(A - μ̄)dt + σ dB`
    LinearOu,
    /// `dA = -λ(A - μ̄)dt + σ √((A - lower)(upper - A)) dB`
    BoundedNl { lower: f64, upper: f64 },
    /// `dA = -λ(A - μ̄)dt + σ √A dB`
    Cir,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HiddenDynamics {
    pub kind: HiddenKind,
    /// λ, per year.
    pub mean_reversion: f64,
    /// μ̄
    pub long_run_mean: f64,
    /// σ_μ for the OU case, σ_a otherwise.
    pub vol: f64,
}

impl HiddenDynamics {
    pub fn linear_ou(mean_reversion: f64, long_run_mean: f64, vol: f64) -> Self {
        Self { kind: HiddenKind::LinearOu, mean_reversion, long_run_mean, vol }
    }

    pub fn bounded(mean_reversion: f64, long_run_mean: f64, vol: f64, lower: f64, upper: f64) -> Self {
        Self { kind: HiddenKind::BoundedNl { lower, upper }, mean_reversion, long_run_mean, vol }
    }

    pub fn cir(mean_reversion: f64, long_run_mean: f64, vol: f64) -> Self {
        Self { kind: HiddenKind::Cir, mean_reversion, long_run_mean, vol }
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        if !(self.mean_reversion > 0.0) {
            return Err(invalid("mean_reversion", "must be > 0"));
        }
        if !(self.vol >= 0.0) {
            return Err(invalid("hidden_vol", "must be >= 0"));
        }
        match self.kind {
            HiddenKind::LinearOu => {}
            HiddenKind::BoundedNl { lower, upper } => {
                if !(lower < self.long_run_mean && self.long_run_mean < upper) {
                    return Err(invalid("long_run_mean", "bounded dynamics need lower < long_run_mean < upper"));
                }
            }
            HiddenKind::Cir => {
                if !(self.long_run_mean >= 0.0) {
                    return Err(invalid("long_run_mean", "CIR dynamics need long_run_mean >= 0"));
                }
            }
        }
        Ok(())
    }

    /// Closed support of the state, `(lower, upper)`.
    pub fn support(&self) -> (f64, f64) {
        match self.kind {
            HiddenKind::LinearOu => (f64::NEG_INFINITY, f64::INFINITY),
            HiddenKind::BoundedNl { lower, upper } => (lower, upper),
            HiddenKind::Cir => (0.0, f64::INFINITY),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.kind, HiddenKind::LinearOu)
    }

    fn diffusion(&self, a: f64) -> f64 {
        match self.kind {
            HiddenKind::LinearOu => self.vol,
            HiddenKind::BoundedNl { lower, upper } => self.vol * ((a - lower) * (upper - a)).max(0.0).sqrt(),
            // full truncation
            HiddenKind::Cir => self.vol * a.max(0.0).sqrt(),
        }
    }

    /// One Euler step followed by projection onto the support.
    pub fn step(&self, a: f64, dt: f64, db: f64) -> f64 {
        let next = a - self.mean_reversion * (a - self.long_run_mean) * dt + self.diffusion(a) * db;
        let (lo, hi) = self.support();
        next.clamp(lo, hi)
    }

    /// Euler path of length `db.len() + 1` started at `a0`.
    pub fn path(&self, a0: f64, dt: f64, db: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(db.len() + 1);
        let mut a = a0;
        out.push(a);
        for &inc in db {
            a = self.step(a, dt, inc);
            out.push(a);
        }
        out
    }
}

/// Map from hidden state to instantaneous expected stock return.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "map", rename_all = "snake_case")]
pub enum ReturnMap {
    Identity,
    /// `c · sign(a) · √|a|`
    SignedSqrt { scale: f64 },
}

impl ReturnMap {
    pub fn apply(&self, a: f64) -> f64 {
        match *self {
            ReturnMap::Identity => a,
            ReturnMap::SignedSqrt { scale } => scale * a.signum() * a.abs().sqrt(),
        }
    }

    /// Hidden state producing return `h` (inverse of [`apply`](Self::apply)).
    pub fn invert(&self, h: f64) -> f64 {
        match *self {
            ReturnMap::Identity => h,
            ReturnMap::SignedSqrt { scale } => {
                let r = h / scale;
                r.signum() * r * r
            }
        }
    }
}

/// `h(a)` for the given return map.
pub fn h_of(map: ReturnMap, a: f64) -> f64 {
    map.apply(a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSpec {
    pub dynamics: HiddenDynamics,
    pub return_map: ReturnMap,
    /// σ_S
    pub stock_vol: f64,
    /// ρ between the stock noise and the hidden-state noise.
    pub correlation: f64,
    /// T in years.
    pub horizon: f64,
    /// K, the number of Euler steps.
    pub steps: usize,
    pub s0: f64,
    /// True initial hidden state A₀.
    pub a0: f64,
    /// Optional almost-sure bound on |h| used by the Novikov diagnostic for
    /// unbounded dynamics.
    pub return_bound: Option<f64>,
}

impl MarketSpec {
    /// Linear-Gaussian market with the base parameters λ = 8, σ_S = 0.15,
    /// σ_μ = 0.3, ρ = -0.8, T = 0.5 and K = 50.
    pub fn linear_base(h0: f64, long_run_mean: f64) -> Self {
        Self {
            dynamics: HiddenDynamics::linear_ou(8.0, long_run_mean, 0.3),
            return_map: ReturnMap::Identity,
            stock_vol: 0.15,
            correlation: -0.8,
            horizon: 0.5,
            steps: 50,
            s0: 1.0,
            a0: h0,
            return_bound: None,
        }
    }

    /// Bounded nonlinear market: c = 0.25, ρ = -0.8, σ_S = 0.15, λ = 1,
    /// σ_a = 0.4, a ∈ [-0.3, 0.3]. `h0` is the initial *return*; the hidden
    /// state starts at its preimage under the return map.
    pub fn nonlinear_base(h0: f64, long_run_mean: f64) -> Self {
        let return_map = ReturnMap::SignedSqrt { scale: 0.25 };
        Self {
            dynamics: HiddenDynamics::bounded(1.0, long_run_mean, 0.4, -0.3, 0.3),
            return_map,
            stock_vol: 0.15,
            correlation: -0.8,
            horizon: 0.5,
            steps: 50,
            s0: 1.0,
            a0: return_map.invert(h0),
            return_bound: None,
        }
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        self.dynamics.validate()?;
        if !(self.stock_vol > 0.0) {
            return Err(invalid("stock_vol", "must be > 0"));
        }
        if !(self.correlation.abs() <= 1.0) {
            return Err(invalid("correlation", "must lie in [-1, 1]"));
        }
        if !(self.horizon > 0.0) {
            return Err(invalid("horizon", "must be > 0"));
        }
        if self.steps < 2 {
            return Err(invalid("steps", "must be >= 2"));
        }
        if !(self.s0 > 0.0) {
            return Err(invalid("s0", "must be > 0"));
        }
        let (lo, hi) = self.dynamics.support();
        if !(lo <= self.a0 && self.a0 <= hi) {
            return Err(invalid("a0", "initial hidden state outside the support"));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.horizon * k as f64 / self.steps as f64
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    /// Linear-Gaussian case: identity return map over OU dynamics.
    pub fn is_linear_gaussian(&self) -> bool {
        self.dynamics.is_linear() && self.return_map == ReturnMap::Identity
    }

    pub fn h(&self, a: f64) -> f64 {
        self.return_map.apply(a)
    }
}

/// Hidden Euler path from the spec's true initial state.
pub fn simulate_hidden(spec: &MarketSpec, db: &[f64]) -> Vec<f64> {
    spec.dynamics.path(spec.a0, spec.dt(), db)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StockPath {
    pub returns: Vec<f64>,
    pub prices: Vec<f64>,
    /// Number of steps where the price hit the positivity floor.
    pub floor_hits: usize,
}

/// Relative floor applied to prices, as a fraction of `S₀`.
pub const PRICE_FLOOR: f64 = 1e-8;

/// Stock returns and prices driven by the hidden path and both noises.
pub fn simulate_stock(spec: &MarketSpec, hidden: &[f64], dw: &[f64], db: &[f64]) -> StockPath {
    let dt = spec.dt();
    let idio = (1.0 - spec.correlation * spec.correlation).max(0.0).sqrt();
    let floor = PRICE_FLOOR * spec.s0;
    let mut prices = Vec::with_capacity(dw.len() + 1);
    let mut returns = Vec::with_capacity(dw.len());
    let mut floor_hits = 0;
    let mut s = spec.s0;
    prices.push(s);
    for k in 0..dw.len() {
        let r = spec.h(hidden[k]) * dt + spec.stock_vol * (idio * dw[k] + spec.correlation * db[k]);
        returns.push(r);
        s *= 1.0 + r;
        if s < floor {
            s = floor;
            floor_hits += 1;
        }
        prices.push(s);
    }
    StockPath { returns, prices, floor_hits }
}

/// Discretized sample paths on the shared grid. Rows are paths.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub grid: Vec<f64>,
    /// (paths, K+1)
    pub hidden: Array2<f64>,
    /// (paths, K)
    pub returns: Array2<f64>,
    /// (paths, K+1)
    pub prices: Array2<f64>,
    /// (paths, K)
    pub dw: Array2<f64>,
    /// (paths, K)
    pub db: Array2<f64>,
    pub floor_hits: usize,
}

impl PathBundle {
    pub fn n_paths(&self) -> usize {
        self.hidden.nrows()
    }

    pub fn steps(&self) -> usize {
        self.returns.ncols()
    }

    pub fn db_row(&self, p: usize) -> ArrayView1<'_, f64> {
        self.db.row(p)
    }
}

/// Simulates `n_paths` independent paths; path `p` uses stream `key.child(p)`,
/// so the bundle does not depend on thread scheduling.
pub fn simulate_bundle(spec: &MarketSpec, n_paths: usize, key: RngKey) -> PathBundle {
    let k = spec.steps;
    let dt = spec.dt();
    let rows: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, StockPath)> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = key.child(p as u64).rng();
            let db = brownian_increments(&mut rng, k, dt);
            let dw = brownian_increments(&mut rng, k, dt);
            let hidden = simulate_hidden(spec, &db);
            let stock = simulate_stock(spec, &hidden, &dw, &db);
            (db, dw, hidden, stock)
        })
        .collect();

    let mut bundle = PathBundle {
        grid: spec.grid(),
        hidden: Array2::zeros((n_paths, k + 1)),
        returns: Array2::zeros((n_paths, k)),
        prices: Array2::zeros((n_paths, k + 1)),
        dw: Array2::zeros((n_paths, k)),
        db: Array2::zeros((n_paths, k)),
        floor_hits: 0,
    };
    for (p, (db, dw, hidden, stock)) in rows.into_iter().enumerate() {
        for j in 0..k {
            bundle.db[[p, j]] = db[j];
            bundle.dw[[p, j]] = dw[j];
            bundle.returns[[p, j]] = stock.returns[j];
        }
        for j in 0..=k {
            bundle.hidden[[p, j]] = hidden[j];
            bundle.prices[[p, j]] = stock.prices[j];
        }
        bundle.floor_hits += stock.floor_hits;
    }
    bundle
}

/// Outcome of the parameter-level Novikov check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NovikovBound {
    /// `|h_t| / σ_S` is bounded by the contained value.
    Bounded(f64),
    /// No bound available; the uniqueness hypothesis is unverified.
    Unbounded,
}

pub fn novikov_diagnostic(spec: &MarketSpec) -> NovikovBound {
    match spec.dynamics.kind {
        HiddenKind::BoundedNl { lower, upper } => {
            let b = spec.h(lower).abs().max(spec.h(upper).abs());
            NovikovBound::Bounded(b / spec.stock_vol)
        }
        _ => match spec.return_bound {
            Some(bound) => NovikovBound::Bounded(bound / spec.stock_vol),
            None => NovikovBound::Unbounded,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn return_map_values() {
        assert_eq!(h_of(ReturnMap::Identity, 0.05), 0.05);
        let m = ReturnMap::SignedSqrt { scale: 0.25 };
        assert!((h_of(m, 0.04) - 0.05).abs() < 1e-15);
        assert!((h_of(m, -0.04) + 0.05).abs() < 1e-15);
        assert!((m.invert(0.05) - 0.04).abs() < 1e-15);
    }

    #[test]
    fn ou_fixed_point_is_constant() {
        let mut spec = MarketSpec::linear_base(0.02, 0.02);
        spec.dynamics.vol = 0.0;
        let db = vec![0.3; spec.steps];
        assert!(simulate_hidden(&spec, &db).iter().all(|&a| a == 0.02));
    }

    #[test]
    fn ou_noise_free_tracks_exact_decay() {
        let mut spec = MarketSpec::linear_base(0.05, 0.02);
        spec.dynamics.vol = 0.0;
        spec.steps = 2000;
        let path = simulate_hidden(&spec, &vec![0.0; spec.steps]);
        let dt = spec.dt();
        let max_err = path
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let t = k as f64 * dt;
                let exact = 0.05 * (-8.0 * t).exp() + 0.02 * (1.0 - (-8.0 * t).exp());
                (a - exact).abs()
            })
            .fold(0.0, f64::max);
        // first-order Euler: error ~ C·Δt with C = O(λ²·|A₀-μ̄|·T)
        assert!(max_err < 0.03 * 8.0 * dt, "max_err {max_err}");
    }

    #[test]
    fn zero_vol_stock_returns_are_drift() {
        let mut spec = MarketSpec::linear_base(0.05, 0.05);
        spec.dynamics.vol = 0.0;
        spec.stock_vol = 1e-300;
        spec.horizon = 0.5;
        spec.steps = 50;
        let hidden = vec![0.05; 51];
        let path = simulate_stock(&spec, &hidden, &vec![0.7; 50], &vec![-0.2; 50]);
        assert!(path.returns.iter().all(|r| (r - 0.0005).abs() < 1e-15));
    }

    #[test]
    fn price_floor_is_counted() {
        let mut spec = MarketSpec::linear_base(0.0, 0.0);
        spec.stock_vol = 1.0;
        let hidden = vec![0.0; 51];
        let dw = vec![-5.0; 50];
        let path = simulate_stock(&spec, &hidden, &dw, &vec![0.0; 50]);
        assert!(path.prices.iter().all(|&s| s > 0.0));
        assert!(path.floor_hits > 0);
    }

    #[test]
    fn novikov_cases() {
        let nl = MarketSpec::nonlinear_base(0.05, 0.02);
        match novikov_diagnostic(&nl) {
            NovikovBound::Bounded(b) => assert!((b - 0.25 * 0.3f64.sqrt() / 0.15).abs() < 1e-12 && (b - 0.9129).abs() < 1e-4),
            other => panic!("{other:?}"),
        }
        let mut cir = MarketSpec::linear_base(0.05, 0.02);
        cir.dynamics = HiddenDynamics::cir(1.0, 0.02, 0.2);
        assert_eq!(novikov_diagnostic(&cir), NovikovBound::Unbounded);
        let mut lin = MarketSpec::linear_base(0.05, 0.02);
        lin.return_bound = Some(0.5);
        assert_eq!(novikov_diagnostic(&lin), NovikovBound::Bounded(0.5 / 0.15));
    }

    #[test]
    fn validation_rejects_bad_params() {
        let mut s = MarketSpec::linear_base(0.05, 0.02);
        s.stock_vol = 0.0;
        assert!(s.validate().is_err());
        let mut s = MarketSpec::nonlinear_base(0.05, 0.02);
        s.dynamics.long_run_mean = 0.4;
        assert!(s.validate().is_err());
        let mut s = MarketSpec::linear_base(0.05, 0.02);
        s.correlation = 1.5;
        assert!(s.validate().is_err());
        s.correlation = 0.0;
        s.steps = 1;
        assert!(s.validate().is_err());
        assert!(MarketSpec::nonlinear_base(0.1, 0.02).validate().is_ok());
    }

    #[test]
    fn bundle_is_deterministic() {
        let spec = MarketSpec::linear_base(0.05, 0.02);
        let a = simulate_bundle(&spec, 8, RngKey::new(11));
        let b = simulate_bundle(&spec, 8, RngKey::new(11));
        assert_eq!(a, b);
    }
}
