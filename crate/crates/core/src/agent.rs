use serde::{Deserialize, Serialize};

use crate::filtering::PriorBelief;

/// Risk preferences and initial belief of one investor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    /// Absolute risk tolerance δ.
    pub risk_tolerance: f64,
    /// Competition weight θ ∈ [0, 1].
    pub competition: f64,
    pub prior: PriorBelief,
}

impl AgentProfile {
    pub fn new(risk_tolerance: f64, competition: f64, prior: PriorBelief) -> Self {
        Self { risk_tolerance, competition, prior }
    }

    /// `1 − θ/N`
    pub fn discount(&self, n: usize) -> f64 {
        1.0 - self.competition / n as f64
    }

    /// δ̃ = δ / (1 − θ/N)
    pub fn effective_risk(&self, n: usize) -> f64 {
        self.risk_tolerance / self.discount(n)
    }

    /// θ̃ = θ / (1 − θ/N)
    pub fn effective_competition(&self, n: usize) -> f64 {
        self.competition / self.discount(n)
    }
}

/// The three investors used throughout the numerical study: δ = (2, 3, 5),
/// θ = (0.2, 0.5, 0.2) with competition and θ ≡ 0 without.
pub fn base_agents(competition: bool, prior: PriorBelief) -> Vec<AgentProfile> {
    let theta = if competition { [0.2, 0.5, 0.2] } else { [0.0; 3] };
    [2.0, 3.0, 5.0]
        .iter()
        .zip(theta)
        .map(|(&d, t)| AgentProfile::new(d, t, prior))
        .collect()
}

pub fn effective_risks(agents: &[AgentProfile]) -> Vec<f64> {
    let n = agents.len();
    agents.iter().map(|a| a.effective_risk(n)).collect()
}

pub fn competition_weights(agents: &[AgentProfile]) -> Vec<f64> {
    agents.iter().map(|a| a.competition).collect()
}
