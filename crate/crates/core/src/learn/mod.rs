//! Trainable approximators and the two training stages.
//!
//! Gradients are exact reverse-mode derivatives written out by hand for the
//! two architectures in use.

pub mod adam;
pub mod mlp;
pub mod params;
pub mod rnn;
pub mod stage1;
pub mod stage2;

use thiserror::Error;

pub use adam::Adam;
pub use mlp::Mlp;
pub use params::NetParams;
pub use rnn::Rnn;
pub use stage1::{ensemble_estimate, stage1_batch, train_stage1, Ensemble, InputEncoding, Stage1Config};
pub use stage2::{train_stage2, BatchSource, Estimator, MarketBatches, PooledBatches, Stage2Batch, Stage2Config, Stage2Model, Stage2Result};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("malformed parameter file: {0}")]
    Format(String),
    #[error("{0}")]
    Setup(String),
}

/// Runs a loss-and-gradient closure and rejects non-finite results.
pub fn gradient<F>(loss: F, params: &NetParams) -> Result<(f64, Vec<f64>), LearnError>
where
    F: FnOnce(&NetParams) -> (f64, Vec<f64>),
{
    let (l, g) = loss(params);
    if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(LearnError::NonFiniteLoss);
    }
    Ok((l, g))
}

/// One epoch's record in a training log.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub y0: Vec<f64>,
}

/// Mean of `losses[from..to]`.
pub fn window_mean(log: &[EpochLog], from: usize, to: usize) -> f64 {
    let w = &log[from.min(log.len())..to.min(log.len())];
    w.iter().map(|e| e.loss).sum::<f64>() / w.len().max(1) as f64
}
