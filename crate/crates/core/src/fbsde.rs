//! The coupled forward-backward system characterizing the equilibrium.
//!
//! Forward wealth: `dX = (Z∘b + δ̃|b|²)dt + (Z + δ̃b)∘dζ`.
//! Backward value: `dY = Z∘dζ + f(b, Z)dt` with `Y_T = A·X_T`.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

/// Off-diagonal competition matrix `A_ij = θᵢ/(N − θᵢ)` and its 2-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetitionMatrix {
    pub entries: Vec<Vec<f64>>,
    pub norm: f64,
}

impl CompetitionMatrix {
    pub fn n(&self) -> usize {
        self.entries.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.entries.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        (0..n).map(|j| (0..n).map(|i| self.entries[i][j] * x[i]).sum()).collect()
    }
}

pub fn competition_matrix(theta: &[f64]) -> CompetitionMatrix {
    let n = theta.len();
    let entries: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 0.0 } else { theta[i] / (n as f64 - theta[i]) }).collect())
        .collect();
    let mut m = CompetitionMatrix { entries, norm: 0.0 };
    m.norm = spectral_norm(&m);
    m
}

/// Largest singular value: cyclic Jacobi on the symmetric `AᵀA`.
fn spectral_norm(m: &CompetitionMatrix) -> f64 {
    let n = m.n();
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            g[i][j] = (0..n).map(|k| m.entries[k][i] * m.entries[k][j]).sum();
        }
    }
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| g[i][j] * g[i][j]).sum();
        let diag: f64 = (0..n).map(|i| g[i][i] * g[i][i]).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if g[p][q] == 0.0 {
                    continue;
                }
                let th = 0.5 * (2.0 * g[p][q]).atan2(g[q][q] - g[p][p]);
                let (c, s) = (th.cos(), th.sin());
                for k in 0..n {
                    let (a, b) = (g[k][p], g[k][q]);
                    g[k][p] = c * a - s * b;
                    g[k][q] = s * a + c * b;
                }
                for k in 0..n {
                    let (a, b) = (g[p][k], g[q][k]);
                    g[p][k] = c * a - s * b;
                    g[q][k] = s * a + c * b;
                }
            }
        }
    }
    (0..n).map(|i| g[i][i]).fold(0.0, f64::max).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CompetitionCheck {
    /// `L_a²·e < 1`, with margin `1 − L_a²·e`.
    Pass(f64),
    Fail(f64),
}

impl CompetitionCheck {
    pub fn passed(&self) -> bool {
        matches!(self, CompetitionCheck::Pass(_))
    }
}

pub fn check_small_competition(a: &CompetitionMatrix) -> CompetitionCheck {
    let margin = 1.0 - a.norm * a.norm * std::f64::consts::E;
    if margin > 0.0 {
        CompetitionCheck::Pass(margin)
    } else {
        CompetitionCheck::Fail(margin)
    }
}

/// `fⁱ = zⁱbⁱ + (δ̃ⁱ/2)(bⁱ)²`
pub fn generator_f(b: &[f64], z: &[f64], eff_risk: &[f64]) -> Vec<f64> {
    b.iter().zip(z).zip(eff_risk).map(|((b, z), d)| z * b + 0.5 * d * b * b).collect()
}

/// Dollar positions `πⁱ = (zⁱ + δ̃ⁱbⁱ)/σ_S`.
pub fn strategy_from_z(z: &[f64], b: &[f64], stock_vol: f64, eff_risk: &[f64]) -> Vec<f64> {
    z.iter().zip(b).zip(eff_risk).map(|((z, b), d)| (z + d * b) / stock_vol).collect()
}

/// Per-agent state at one grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct FbsdeState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    /// Market price of risk `ĥⁱ/σ_S` seen by each agent.
    pub b: Vec<f64>,
    pub t: f64,
}

pub fn forward_step(state: &FbsdeState, dzeta: &[f64], dt: f64, eff_risk: &[f64]) -> Vec<f64> {
    (0..state.x.len())
        .map(|i| {
            let (z, b, d) = (state.z[i], state.b[i], eff_risk[i]);
            state.x[i] + (z * b + d * b * b) * dt + (z + d * b) * dzeta[i]
        })
        .collect()
}

pub fn backward_step(state: &FbsdeState, dzeta: &[f64], dt: f64, eff_risk: &[f64]) -> Vec<f64> {
    let f = generator_f(&state.b, &state.z, eff_risk);
    (0..state.y.len()).map(|i| state.y[i] + state.z[i] * dzeta[i] + f[i] * dt).collect()
}

/// `‖Y_T − A·X_T‖²`
pub fn terminal_gap(x_t: &[f64], y_t: &[f64], a: &CompetitionMatrix) -> f64 {
    a.apply(x_t).iter().zip(y_t).map(|(ax, y)| (y - ax).powi(2)).sum()
}

/// Strategy and wealth paths of an equilibrium over a batch of paths.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSolution {
    /// (paths, K+1, N) dollar positions.
    pub pi: Array3<f64>,
    /// (paths, K+1, N) wealth.
    pub wealth: Array3<f64>,
    /// Time-0 positions.
    pub initial_positions: Vec<f64>,
    /// Time-0 certainty-equivalent values, when available.
    pub y0: Option<Vec<f64>>,
}

/// Wealth from dollar positions: `X_{k+1} = X_k + π_k·ret_k`.
pub fn wealth_paths(pi: &Array3<f64>, returns: &Array2<f64>, x0: f64) -> Array3<f64> {
    let (p, k1, n) = pi.dim();
    let mut w = Array3::zeros((p, k1, n));
    for path in 0..p {
        for i in 0..n {
            w[[path, 0, i]] = x0;
            for k in 0..k1 - 1 {
                w[[path, k + 1, i]] = w[[path, k, i]] + pi[[path, k, i]] * returns[[path, k]];
            }
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_competition() {
        let a = competition_matrix(&[0.0; 3]);
        assert_eq!(a.norm, 0.0);
        assert_eq!(check_small_competition(&a), CompetitionCheck::Pass(1.0));
    }

    #[test]
    fn base_matrix() {
        let a = competition_matrix(&[0.2, 0.5, 0.2]);
        let want = [[0.0, 1.0 / 14.0, 1.0 / 14.0], [0.2, 0.0, 0.2], [1.0 / 14.0, 1.0 / 14.0, 0.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((a.entries[i][j] - want[i][j]).abs() < 1e-15);
            }
        }
        assert!(check_small_competition(&a).passed());
        assert!(!check_small_competition(&competition_matrix(&[0.99; 3])).passed());
    }

    #[test]
    fn generator_values() {
        assert_eq!(generator_f(&[0.0; 2], &[1.0, 2.0], &[2.0, 2.0]), vec![0.0, 0.0]);
        assert!((generator_f(&[1.0 / 3.0], &[0.0], &[2.0])[0] - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn merton_strategy() {
        let pi = strategy_from_z(&[0.0], &[0.05 / 0.15], 0.15, &[2.0]);
        assert!((pi[0] - 4.4444).abs() < 1e-4);
        assert_eq!(strategy_from_z(&[0.0], &[0.0], 0.15, &[2.0]), vec![0.0]);
    }

    #[test]
    fn steps() {
        let s = FbsdeState { x: vec![1.0], y: vec![2.0], z: vec![0.0], b: vec![1.0 / 3.0], t: 0.0 };
        let x = forward_step(&s, &[0.0], 0.01, &[2.0]);
        assert!((x[0] - 1.0 - 0.0022222222222).abs() < 1e-12);
        let s = FbsdeState { x: vec![1.0], y: vec![2.0], z: vec![1.0], b: vec![0.0], t: 0.0 };
        assert!((backward_step(&s, &[0.1], 0.01, &[2.0])[0] - 2.1).abs() < 1e-15);
        let s = FbsdeState { x: vec![1.0], y: vec![2.0], z: vec![0.0], b: vec![0.0], t: 0.0 };
        assert_eq!(forward_step(&s, &[0.7], 0.01, &[2.0]), vec![1.0]);
        assert_eq!(backward_step(&s, &[0.7], 0.01, &[2.0]), vec![2.0]);
    }

    #[test]
    fn gap() {
        let a = competition_matrix(&[0.2, 0.5, 0.2]);
        let x = [1.0, 2.0, 3.0];
        let y = a.apply(&x);
        assert_eq!(terminal_gap(&x, &y, &a), 0.0);
        let z = competition_matrix(&[0.0; 3]);
        assert_eq!(terminal_gap(&x, &[1.0, 2.0, 2.0], &z), 9.0);
        let got = terminal_gap(&x, &[0.5, 0.1, -0.2], &a);
        let ax = [5.0 / 14.0, 0.8, 3.0 / 14.0];
        let want: f64 = [0.5, 0.1, -0.2].iter().zip(ax).map(|(y, a)| (y - a) * (y - a)).sum();
        assert!((got - want).abs() < 1e-14);
    }
}
