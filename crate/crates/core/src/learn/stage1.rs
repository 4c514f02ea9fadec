//! Stage I: recurrent estimators of the return rate from observed prices and
//! the investor's initial prior, trained under the investor's subjective
//! measure and averaged over an ensemble.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{gradient, Adam, EpochLog, LearnError, Rnn};
use crate::filtering::{sample_prior, subjective_hidden_path, PriorBelief};
use crate::market::{simulate_bundle, MarketSpec};
use crate::rng::RngKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputEncoding {
    /// `ln(S_k / S₀)`
    LogPrice,
    /// `S_k`
    RawPrice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Config {
    pub epochs: usize,
    pub batch: usize,
    pub ensemble: usize,
    pub hidden: usize,
    pub lr: f64,
    pub decay_every: usize,
    pub decay_factor: f64,
    pub encoding: InputEncoding,
    /// Train ensemble members on the rayon pool.
    pub parallel: bool,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            epochs: 5000,
            batch: 64,
            ensemble: 3,
            hidden: 64,
            lr: 1e-3,
            decay_every: 400,
            decay_factor: 0.5,
            encoding: InputEncoding::LogPrice,
            parallel: true,
        }
    }
}

/// Independently trained estimators whose outputs are averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<Rnn>,
    pub encoding: InputEncoding,
    pub s0: f64,
}

/// Per-step network inputs `(price feature, prior)` for a batch of paths.
pub fn encode_inputs(prices: &ArrayView2<f64>, priors: &[f64], encoding: InputEncoding, s0: f64) -> Vec<Array2<f64>> {
    let (b, k1) = prices.dim();
    (0..k1)
        .map(|k| {
            Array2::from_shape_fn((b, 2), |(p, c)| {
                if c == 1 {
                    priors[p]
                } else {
                    match encoding {
                        InputEncoding::LogPrice => (prices[[p, k]] / s0).ln(),
                        InputEncoding::RawPrice => prices[[p, k]],
                    }
                }
            })
        })
        .collect()
}

impl Ensemble {
    /// Averaged estimates, (paths × K+1). `priors` are initial estimates on
    /// the return scale.
    pub fn estimate_batch(&self, prices: &ArrayView2<f64>, priors: &[f64]) -> Result<Array2<f64>, LearnError> {
        let inputs = encode_inputs(prices, priors, self.encoding, self.s0);
        let mut acc = Array2::zeros(prices.dim());
        for m in &self.members {
            acc += &m.forward(&inputs)?;
        }
        Ok(acc / self.members.len() as f64)
    }

    /// Each member's outputs, (paths × K+1) per member.
    pub fn member_outputs(&self, prices: &ArrayView2<f64>, priors: &[f64]) -> Result<Vec<Array2<f64>>, LearnError> {
        let inputs = encode_inputs(prices, priors, self.encoding, self.s0);
        self.members.iter().map(|m| m.forward(&inputs)).collect()
    }
}

/// `ĥ_k = (1/E) Σ_e G_k^{(e)}(S, prior)` on one price path.
pub fn ensemble_estimate(ensemble: &Ensemble, prices: &[f64], prior: f64) -> Result<Vec<f64>, LearnError> {
    let view = ArrayView2::from_shape((1, prices.len()), prices).unwrap();
    Ok(ensemble.estimate_batch(&view, &[prior])?.row(0).to_vec())
}

/// A training batch: price paths, return-scale priors and subjective targets.
pub struct Stage1Batch {
    pub prices: Array2<f64>,
    pub priors: Vec<f64>,
    pub targets: Array2<f64>,
}

pub fn stage1_batch(spec: &MarketSpec, prior: &PriorBelief, size: usize, key: RngKey) -> Result<Stage1Batch, LearnError> {
    let bundle = simulate_bundle(spec, size, key.named("paths"));
    let mut targets = Array2::zeros((size, spec.steps + 1));
    let mut priors = Vec::with_capacity(size);
    for p in 0..size {
        let mut rng = key.named("prior").child(p as u64).rng();
        let a0 = sample_prior(prior, &spec.dynamics, &mut rng).map_err(|e| LearnError::Setup(e.to_string()))?;
        let db = bundle.db.row(p).to_vec();
        let path = subjective_hidden_path(spec, a0, &db);
        for (k, a) in path.iter().enumerate() {
            targets[[p, k]] = spec.h(*a);
        }
        priors.push(spec.h(a0));
    }
    Ok(Stage1Batch { prices: bundle.prices, priors, targets })
}

/// Mean squared error of `net` on `batch` and its gradient.
pub fn stage1_loss_grad(net: &Rnn, batch: &Stage1Batch, encoding: InputEncoding, s0: f64) -> Result<(f64, Vec<f64>), LearnError> {
    let inputs = encode_inputs(&batch.prices.view(), &batch.priors, encoding, s0);
    let (out, tape) = net.forward_tape(&inputs)?;
    let diff = &out - &batch.targets;
    let n = diff.len() as f64;
    gradient(
        |p| {
            let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
            let d_out = diff.mapv(|d| 2.0 * d / n);
            let mut g = p.zeros_like();
            net.backward(&tape, &d_out.view(), &mut g);
            (loss, g)
        },
        &net.params,
    )
}

fn train_member(spec: &MarketSpec, prior: &PriorBelief, cfg: &Stage1Config, key: RngKey) -> Result<(Rnn, Vec<EpochLog>), LearnError> {
    let mut net = Rnn::new(2, cfg.hidden).init(&mut key.named("init").rng());
    let mut adam = Adam::new(net.params.len(), cfg.lr).with_decay(cfg.decay_every, cfg.decay_factor);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batch = stage1_batch(spec, prior, cfg.batch, key.named("batch").child(epoch as u64))?;
        let lr = adam.lr;
        let (loss, grad) = stage1_loss_grad(&net, &batch, cfg.encoding, spec.s0).map_err(|e| match e {
            LearnError::NonFiniteLoss => LearnError::Divergence { epoch },
            other => other,
        })?;
        adam.update(&mut net.params.data, &grad);
        if !net.params.is_finite() {
            return Err(LearnError::Divergence { epoch });
        }
        log.push(EpochLog { epoch, loss, lr, y0: Vec::new() });
    }
    Ok((net, log))
}

/// Trains `cfg.ensemble` independently initialised estimators for one agent.
/// Returns the ensemble and one loss log per member.
pub fn train_stage1(
    spec: &MarketSpec,
    prior: &PriorBelief,
    cfg: &Stage1Config,
    key: RngKey,
) -> Result<(Ensemble, Vec<Vec<EpochLog>>), LearnError> {
    let run = |e: usize| train_member(spec, prior, cfg, key.child(e as u64));
    let results: Vec<_> = if cfg.parallel {
        (0..cfg.ensemble).into_par_iter().map(run).collect()
    } else {
        (0..cfg.ensemble).map(run).collect()
    };
    let mut members = Vec::new();
    let mut logs = Vec::new();
    for r in results {
        let (m, l) = r?;
        members.push(m);
        logs.push(l);
    }
    Ok((Ensemble { members, encoding: cfg.encoding, s0: spec.s0 }, logs))
}
