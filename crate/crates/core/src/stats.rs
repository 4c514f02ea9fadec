//! Evaluation statistics over strategy and wealth path ensembles.

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("return series of {who} has zero variance")]
    ZeroVariance { who: String },
}

/// Time-series statistics of `|π|`, averaged over paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyStats {
    pub mean_abs: Vec<f64>,
    pub std_abs: Vec<f64>,
    pub cv: Vec<f64>,
    pub mean_cv: f64,
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `pi` is (paths, K+1, N). Standard deviations use the population
/// convention.
pub fn strategy_stats(pi: &Array3<f64>) -> StrategyStats {
    let (paths, _, n) = pi.dim();
    let mut mean_abs = vec![0.0; n];
    let mut std_abs = vec![0.0; n];
    for p in 0..paths {
        for i in 0..n {
            let series = pi.slice(ndarray::s![p, .., i]);
            let (m, s) = mean_std(series.iter().map(|v| v.abs()));
            mean_abs[i] += m / paths as f64;
            std_abs[i] += s / paths as f64;
        }
    }
    let cv: Vec<f64> = mean_abs.iter().zip(&std_abs).map(|(m, s)| if *m > 0.0 { s / m } else { 0.0 }).collect();
    let mean_cv = cv.iter().sum::<f64>() / n as f64;
    StrategyStats { mean_abs, std_abs, cv, mean_cv }
}

/// Per-agent ratio of mean `|π|`, e.g. competition over no competition.
pub fn mean_ratios(num: &StrategyStats, den: &StrategyStats) -> Vec<Option<f64>> {
    num.mean_abs.iter().zip(&den.mean_abs).map(|(a, b)| (*b > 0.0).then(|| a / b)).collect()
}

/// Ratio of mean CVs.
pub fn cv_ratio(num: &StrategyStats, den: &StrategyStats) -> Option<f64> {
    (den.mean_cv > 0.0).then(|| num.mean_cv / den.mean_cv)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnBasis {
    /// Per-step wealth increments pooled over time and paths.
    Increments,
    /// Terminal minus initial wealth, one sample per path.
    Terminal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceStats {
    pub sharpe: Vec<f64>,
    pub vrr: Vec<f64>,
    pub social_sharpe: f64,
    pub social_vrr: f64,
}

fn sample(w: &Array2<f64>, basis: ReturnBasis) -> Vec<f64> {
    let k1 = w.ncols();
    match basis {
        ReturnBasis::Increments => w.rows().into_iter().flat_map(|r| (1..k1).map(move |k| r[k] - r[k - 1])).collect(),
        ReturnBasis::Terminal => w.rows().into_iter().map(|r| r[k1 - 1] - r[0]).collect(),
    }
}

fn sharpe_vrr(xs: &[f64], who: String) -> Result<(f64, f64), StatsError> {
    let (mean, std) = mean_std(xs.iter().copied());
    let scale = xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if !(std > 1e-12 * scale) {
        return Err(StatsError::ZeroVariance { who });
    }
    Ok((mean / std, mean / (std * std)))
}

/// Sharpe ratio and mean-over-variance (VRR) per agent and for the summed
/// (social) portfolio. `wealth` is (paths, K+1, N).
pub fn performance_stats(wealth: &Array3<f64>, basis: ReturnBasis) -> Result<PerformanceStats, StatsError> {
    let n = wealth.dim().2;
    let mut sharpe = Vec::with_capacity(n);
    let mut vrr = Vec::with_capacity(n);
    for i in 0..n {
        let w = wealth.index_axis(Axis(2), i).to_owned();
        let (s, v) = sharpe_vrr(&sample(&w, basis), format!("agent {}", i + 1))?;
        sharpe.push(s);
        vrr.push(v);
    }
    let (social_sharpe, social_vrr) = sharpe_vrr(&sample(&social_wealth(wealth), basis), "social portfolio".into())?;
    Ok(PerformanceStats { sharpe, vrr, social_sharpe, social_vrr })
}

/// Sum of agent wealths, (paths, K+1).
pub fn social_wealth(wealth: &Array3<f64>) -> Array2<f64> {
    wealth.sum_axis(Axis(2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HedgingReport {
    /// (paths, K+1, N) difference between strategy and Merton benchmark.
    pub demand: Array3<f64>,
    /// `max_{path, i} |demand at t_K|`
    pub terminal_max: f64,
    /// Per-agent mean `|demand|` at t₀.
    pub initial_mean_abs: Vec<f64>,
    /// Per-agent mean `|demand|` at t_K.
    pub terminal_mean_abs: Vec<f64>,
}

impl HedgingReport {
    /// Largest per-agent ratio of terminal to initial mean magnitude.
    pub fn terminal_ratio(&self) -> f64 {
        self.terminal_mean_abs
            .iter()
            .zip(&self.initial_mean_abs)
            .map(|(t, i)| if *i > 0.0 { t / i } else if *t > 0.0 { f64::INFINITY } else { 0.0 })
            .fold(0.0, f64::max)
    }
}

pub fn hedging_demand(pi: &Array3<f64>, merton: &Array3<f64>) -> HedgingReport {
    let demand = pi - merton;
    let (paths, k1, n) = demand.dim();
    let at = |k: usize| -> Vec<f64> {
        (0..n).map(|i| (0..paths).map(|p| demand[[p, k, i]].abs()).sum::<f64>() / paths as f64).collect()
    };
    let terminal_max = demand.index_axis(Axis(1), k1 - 1).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    HedgingReport { initial_mean_abs: at(0), terminal_mean_abs: at(k1 - 1), terminal_max, demand }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_strategy() {
        let pi = Array3::from_elem((4, 11, 2), 2.5);
        let s = strategy_stats(&pi);
        assert_eq!(s.mean_abs, vec![2.5, 2.5]);
        assert_eq!(s.std_abs, vec![0.0, 0.0]);
        assert_eq!(s.mean_cv, 0.0);
    }

    #[test]
    fn two_point_path() {
        let pi = Array3::from_shape_vec((1, 2, 1), vec![1.0, -3.0]).unwrap();
        let s = strategy_stats(&pi);
        assert_eq!((s.mean_abs[0], s.std_abs[0], s.cv[0]), (2.0, 1.0, 0.5));
    }

    #[test]
    fn deterministic_growth_has_zero_variance() {
        let w = Array3::from_shape_fn((3, 20, 2), |(_, k, _)| 10.0 + 0.01 * k as f64);
        assert!(matches!(performance_stats(&w, ReturnBasis::Increments), Err(StatsError::ZeroVariance { .. })));
    }

    #[test]
    fn identical_merton_gives_zero_demand() {
        let pi = Array3::from_shape_fn((2, 5, 3), |(p, k, i)| (p + k * i) as f64);
        let h = hedging_demand(&pi, &pi.clone());
        assert!(h.demand.iter().all(|&v| v == 0.0));
        assert_eq!(h.terminal_max, 0.0);
        assert_eq!(h.terminal_ratio(), 0.0);
    }
}
