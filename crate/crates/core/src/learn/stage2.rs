//! Stage II: deep solver for the coupled FBSDE. A single network maps
//! `(ĥ¹…ĥᴺ, S_k, t_k)` to `Z_k ∈ ℝᴺ`; `Y₀` is a learnable vector; the loss
//! is the terminal mismatch `‖Y_K − A·X_K‖²` averaged over the batch.

use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, EpochLog, Ensemble, LearnError, Mlp};
use crate::agent::AgentProfile;
use crate::fbsde::{competition_matrix, CompetitionMatrix};
use crate::filtering::{kalman_with_curve, sample_prior, variance_curve, PriorBelief, RiccatiParams};
use crate::market::{simulate_bundle, MarketSpec};
use crate::rng::RngKey;

/// Observed prices, returns and each agent's return estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Batch {
    /// (B, K+1)
    pub prices: Array2<f64>,
    /// (B, K)
    pub returns: Array2<f64>,
    /// (B, K+1, N) return estimates `ĥⁱ_k`.
    pub estimates: Array3<f64>,
    /// (B, K+1) true return `h(A_k)`.
    pub truth: Array2<f64>,
    /// (B, K+1) hidden state `A_k`.
    pub hidden: Array2<f64>,
}

impl Stage2Batch {
    pub fn n_paths(&self) -> usize {
        self.prices.nrows()
    }

    pub fn select(&self, rows: &[usize]) -> Stage2Batch {
        Stage2Batch {
            prices: self.prices.select(Axis(0), rows),
            returns: self.returns.select(Axis(0), rows),
            estimates: self.estimates.select(Axis(0), rows),
            truth: self.truth.select(Axis(0), rows),
            hidden: self.hidden.select(Axis(0), rows),
        }
    }
}

pub trait BatchSource: Sync {
    fn n_agents(&self) -> usize;
    fn batch(&self, size: usize, key: RngKey) -> Result<Stage2Batch, LearnError>;
}

/// How agents form their return estimates.
#[derive(Debug, Clone)]
pub enum Estimator {
    /// Agents observe `h(A_t)`.
    FullInfo { agents: usize },
    /// Exact Kalman–Bucy filter; initial estimates sampled from each prior.
    Kalman { priors: Vec<PriorBelief> },
    /// Stage I ensembles, one per agent.
    Networks { priors: Vec<PriorBelief>, ensembles: Vec<Ensemble> },
}

/// Freshly simulated batches from the market model.
pub struct MarketBatches {
    spec: MarketSpec,
    estimator: Estimator,
    curves: Vec<Vec<f64>>,
}

impl MarketBatches {
    pub fn new(spec: MarketSpec, estimator: Estimator) -> Result<Self, LearnError> {
        let mut curves = Vec::new();
        if let Estimator::Kalman { priors } = &estimator {
            if !spec.is_linear_gaussian() {
                return Err(LearnError::Setup("Kalman estimates need a linear-Gaussian market".into()));
            }
            for p in priors {
                let params = RiccatiParams::new(&spec, p.variance).map_err(|e| LearnError::Setup(e.to_string()))?;
                curves.push(variance_curve(&params, &spec.grid()).map_err(|e| LearnError::Setup(e.to_string()))?);
            }
        }
        Ok(Self { spec, estimator, curves })
    }

    pub fn spec(&self) -> &MarketSpec {
        &self.spec
    }

    /// Pre-simulates `size` paths into a reusable pool.
    pub fn pool(&self, size: usize, key: RngKey) -> Result<PooledBatches, LearnError> {
        Ok(PooledBatches { pool: self.batch(size, key)? })
    }
}

impl BatchSource for MarketBatches {
    fn n_agents(&self) -> usize {
        match &self.estimator {
            Estimator::FullInfo { agents } => *agents,
            Estimator::Kalman { priors } | Estimator::Networks { priors, .. } => priors.len(),
        }
    }

    fn batch(&self, size: usize, key: RngKey) -> Result<Stage2Batch, LearnError> {
        let spec = &self.spec;
        let n = self.n_agents();
        let k1 = spec.steps + 1;
        let bundle = simulate_bundle(spec, size, key.named("paths"));
        let truth = bundle.hidden.mapv(|a| spec.h(a));
        let mut estimates = Array3::zeros((size, k1, n));
        let sample = |i: usize, prior: &PriorBelief| -> Result<Vec<f64>, LearnError> {
            (0..size)
                .map(|p| {
                    let mut rng = key.named("prior").child(i as u64).child(p as u64).rng();
                    sample_prior(prior, &spec.dynamics, &mut rng).map_err(|e| LearnError::Setup(e.to_string()))
                })
                .collect()
        };
        match &self.estimator {
            Estimator::FullInfo { .. } => {
                for i in 0..n {
                    estimates.index_axis_mut(Axis(2), i).assign(&truth);
                }
            }
            Estimator::Kalman { priors } => {
                for (i, prior) in priors.iter().enumerate() {
                    let a0 = sample(i, prior)?;
                    for p in 0..size {
                        let r = bundle.returns.row(p).to_vec();
                        let out = kalman_with_curve(spec, &self.curves[i], &r, a0[p]);
                        for (k, e) in out.estimate.iter().enumerate() {
                            estimates[[p, k, i]] = *e;
                        }
                    }
                }
            }
            Estimator::Networks { priors, ensembles } => {
                for (i, (prior, ens)) in priors.iter().zip(ensembles).enumerate() {
                    let a0: Vec<f64> = sample(i, prior)?.into_iter().map(|a| spec.h(a)).collect();
                    let est = ens.estimate_batch(&bundle.prices.view(), &a0)?;
                    estimates.index_axis_mut(Axis(2), i).assign(&est);
                }
            }
        }
        Ok(Stage2Batch { prices: bundle.prices, returns: bundle.returns, estimates, truth, hidden: bundle.hidden })
    }
}

/// Mini-batches drawn with replacement from a fixed pre-simulated pool.
pub struct PooledBatches {
    pub pool: Stage2Batch,
}

impl BatchSource for PooledBatches {
    fn n_agents(&self) -> usize {
        self.pool.estimates.dim().2
    }

    fn batch(&self, size: usize, key: RngKey) -> Result<Stage2Batch, LearnError> {
        let mut rng = key.rng();
        let n = self.pool.n_paths();
        let rows: Vec<usize> = (0..size).map(|_| rng.gen_range(0..n)).collect();
        Ok(self.pool.select(&rows))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Config {
    pub epochs: usize,
    pub batch: usize,
    pub hidden: usize,
    pub layers: usize,
    pub lr: f64,
    /// Learning-rate halving period; 0 keeps it constant.
    pub decay_every: usize,
    pub decay_factor: f64,
    /// Initial wealth of every agent.
    pub x0: f64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self { epochs: 5000, batch: 64, hidden: 64, layers: 3, lr: 3e-3, decay_every: 0, decay_factor: 0.5, x0: 10.0 }
    }
}

/// Trained Z-network together with the learnable initial values.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Model {
    pub net: Mlp,
    pub y0: Vec<f64>,
    pub eff_risk: Vec<f64>,
    pub matrix: CompetitionMatrix,
    pub stock_vol: f64,
    pub horizon: f64,
    pub steps: usize,
    pub x0: f64,
}

/// Full forward simulation of a batch under the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// (B, K+1, N)
    pub z: Array3<f64>,
    pub pi: Array3<f64>,
    pub x: Array3<f64>,
    pub y: Array3<f64>,
}

impl Stage2Model {
    pub fn new(agents: &[AgentProfile], spec: &MarketSpec, cfg: &Stage2Config, key: RngKey) -> Self {
        let n = agents.len();
        let theta: Vec<f64> = agents.iter().map(|a| a.competition).collect();
        let matrix = competition_matrix(&theta);
        let y0 = matrix.apply(&vec![cfg.x0; n]);
        let net = Mlp::new(n + 2, cfg.hidden, n, cfg.layers).init(&mut key.named("init").rng());
        Self {
            net,
            y0,
            eff_risk: agents.iter().map(|a| a.effective_risk(n)).collect(),
            matrix,
            stock_vol: spec.stock_vol,
            horizon: spec.horizon,
            steps: spec.steps,
            x0: cfg.x0,
        }
    }

    pub fn n(&self) -> usize {
        self.y0.len()
    }

    fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Network inputs for steps `0..steps_used`, rows ordered (path, k).
    fn inputs(&self, batch: &Stage2Batch, steps_used: usize) -> Array2<f64> {
        let b = batch.n_paths();
        let n = self.n();
        let dt = self.dt();
        let mut x = Array2::zeros((b * steps_used, n + 2));
        for p in 0..b {
            for k in 0..steps_used {
                let row = p * steps_used + k;
                for i in 0..n {
                    x[[row, i]] = batch.estimates[[p, k, i]];
                }
                x[[row, n]] = batch.prices[[p, k]];
                x[[row, n + 1]] = k as f64 * dt;
            }
        }
        x
    }

    /// `Z` at time 0 for estimates `h0` and price `s0`.
    pub fn z0(&self, h0: &[f64], s0: f64) -> Vec<f64> {
        let mut x = h0.to_vec();
        x.push(s0);
        x.push(0.0);
        self.net.forward_one(&x).expect("input width matches")
    }

    /// Time-0 dollar positions.
    pub fn initial_positions(&self, h0: &[f64], s0: f64) -> Vec<f64> {
        let z = self.z0(h0, s0);
        (0..self.n()).map(|i| (z[i] + self.eff_risk[i] * h0[i] / self.stock_vol) / self.stock_vol).collect()
    }

    /// Values implied by `Y₀`: `V = −exp(−(x₀ − Y₀)/δ̃)`.
    pub fn values(&self) -> Vec<f64> {
        (0..self.n()).map(|i| -(-(self.x0 - self.y0[i]) / self.eff_risk[i]).exp()).collect()
    }

    /// Loss and gradients with respect to network parameters and `Y₀`.
    pub fn loss_grad(&self, batch: &Stage2Batch) -> Result<(f64, Vec<f64>, Vec<f64>), LearnError> {
        let (b, n, k) = (batch.n_paths(), self.n(), self.steps);
        let dt = self.dt();
        let s = self.stock_vol;
        let (z, tape) = self.net.forward_tape(&self.inputs(batch, k).view())?;
        let mut resid = Array2::zeros((b, n));
        let mut loss = 0.0;
        for p in 0..b {
            let mut x = vec![self.x0; n];
            let mut y = self.y0.clone();
            for kk in 0..k {
                let row = p * k + kk;
                for i in 0..n {
                    let bi = batch.estimates[[p, kk, i]] / s;
                    let dz = (batch.returns[[p, kk]] - batch.estimates[[p, kk, i]] * dt) / s;
                    let zi = z[[row, i]];
                    let d = self.eff_risk[i];
                    x[i] += (zi * bi + d * bi * bi) * dt + (zi + d * bi) * dz;
                    y[i] += zi * dz + (zi * bi + 0.5 * d * bi * bi) * dt;
                }
            }
            let ax = self.matrix.apply(&x);
            for i in 0..n {
                resid[[p, i]] = y[i] - ax[i];
                loss += resid[[p, i]].powi(2);
            }
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(LearnError::NonFiniteLoss);
        }
        let mut g_y0 = vec![0.0; n];
        let mut d_z = Array2::zeros(z.dim());
        for p in 0..b {
            let r: Vec<f64> = resid.row(p).to_vec();
            let at_r = self.matrix.apply_transpose(&r);
            for i in 0..n {
                let gy = 2.0 * r[i] / b as f64;
                g_y0[i] += gy;
                let g = gy - 2.0 * at_r[i] / b as f64;
                for kk in 0..k {
                    let bi = batch.estimates[[p, kk, i]] / s;
                    let dz = (batch.returns[[p, kk]] - batch.estimates[[p, kk, i]] * dt) / s;
                    d_z[[p * k + kk, i]] = g * (bi * dt + dz);
                }
            }
        }
        let mut g_net = self.net.params.zeros_like();
        self.net.backward(&tape, d_z, &mut g_net);
        Ok((loss, g_net, g_y0))
    }

    /// Simulates `(Z, π, X, Y)` on every grid point of the batch.
    pub fn rollout(&self, batch: &Stage2Batch) -> Result<Rollout, LearnError> {
        let (b, n, k) = (batch.n_paths(), self.n(), self.steps);
        let dt = self.dt();
        let s = self.stock_vol;
        let zflat = self.net.forward(&self.inputs(batch, k + 1).view())?;
        let mut z = Array3::zeros((b, k + 1, n));
        let mut pi = Array3::zeros((b, k + 1, n));
        let mut x = Array3::zeros((b, k + 1, n));
        let mut y = Array3::zeros((b, k + 1, n));
        for p in 0..b {
            for i in 0..n {
                x[[p, 0, i]] = self.x0;
                y[[p, 0, i]] = self.y0[i];
            }
            for kk in 0..=k {
                for i in 0..n {
                    let zi = zflat[[p * (k + 1) + kk, i]];
                    let bi = batch.estimates[[p, kk, i]] / s;
                    let d = self.eff_risk[i];
                    z[[p, kk, i]] = zi;
                    pi[[p, kk, i]] = (zi + d * bi) / s;
                    if kk < k {
                        let dz = (batch.returns[[p, kk]] - batch.estimates[[p, kk, i]] * dt) / s;
                        x[[p, kk + 1, i]] = x[[p, kk, i]] + (zi * bi + d * bi * bi) * dt + (zi + d * bi) * dz;
                        y[[p, kk + 1, i]] = y[[p, kk, i]] + zi * dz + (zi * bi + 0.5 * d * bi * bi) * dt;
                    }
                }
            }
        }
        Ok(Rollout { z, pi, x, y })
    }

    /// Batch-mean terminal mismatch and batch-mean `‖A·X_K‖²`.
    pub fn terminal_stats(&self, batch: &Stage2Batch) -> Result<(f64, f64), LearnError> {
        let r = self.rollout(batch)?;
        let (b, k1, n) = r.x.dim();
        let (mut gap, mut scale) = (0.0, 0.0);
        for p in 0..b {
            let xk: Vec<f64> = (0..n).map(|i| r.x[[p, k1 - 1, i]]).collect();
            let ax = self.matrix.apply(&xk);
            for i in 0..n {
                gap += (r.y[[p, k1 - 1, i]] - ax[i]).powi(2);
                scale += ax[i] * ax[i];
            }
        }
        Ok((gap / b as f64, scale / b as f64))
    }
}

#[derive(Debug, Clone)]
pub struct Stage2Result {
    pub model: Stage2Model,
    pub log: Vec<EpochLog>,
    pub final_loss: f64,
}

/// Training stops with a divergence error once the loss exceeds the first
/// epoch's loss by this factor.
pub const BLOWUP_FACTOR: f64 = 1e8;

pub fn train_stage2(
    agents: &[AgentProfile],
    spec: &MarketSpec,
    source: &dyn BatchSource,
    cfg: &Stage2Config,
    key: RngKey,
) -> Result<Stage2Result, LearnError> {
    if source.n_agents() != agents.len() {
        return Err(LearnError::ShapeMismatch { expected: agents.len(), got: source.n_agents() });
    }
    let mut model = Stage2Model::new(agents, spec, cfg, key);
    let mut opt_net = Adam::new(model.net.params.len(), cfg.lr).with_decay(cfg.decay_every, cfg.decay_factor);
    let mut opt_y0 = Adam::new(model.n(), cfg.lr).with_decay(cfg.decay_every, cfg.decay_factor);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batch = source.batch(cfg.batch, key.named("batch").child(epoch as u64))?;
        let lr = opt_net.lr;
        let (loss, g_net, g_y0) = model.loss_grad(&batch).map_err(|e| match e {
            LearnError::NonFiniteLoss => LearnError::Divergence { epoch },
            other => other,
        })?;
        opt_net.update(&mut model.net.params.data, &g_net);
        opt_y0.update(&mut model.y0, &g_y0);
        if !model.net.params.is_finite() || model.y0.iter().any(|v| !v.is_finite()) {
            return Err(LearnError::Divergence { epoch });
        }
        if log.first().is_some_and(|first: &EpochLog| loss > BLOWUP_FACTOR * first.loss) {
            return Err(LearnError::Divergence { epoch });
        }
        log.push(EpochLog { epoch, loss, lr, y0: model.y0.clone() });
    }
    let final_loss = log.last().map_or(f64::NAN, |e| e.loss);
    Ok(Stage2Result { model, log, final_loss })
}
