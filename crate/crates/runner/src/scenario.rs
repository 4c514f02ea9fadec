//! Runs one configured scenario end to end and writes its artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::Array3;
use relwealth_core::analytic::{
    build_kernels, equilibrium_at, exponent_g, kernels_from_curve, merton_benchmark_each, value_function, CoefKernels,
};
use relwealth_core::fbsde::{check_small_competition, competition_matrix, wealth_paths, CompetitionCheck};
use relwealth_core::learn::{
    train_stage1, train_stage2, window_mean, BatchSource, Ensemble, EpochLog, Estimator, MarketBatches, Stage2Batch,
};
use relwealth_core::market::{novikov_diagnostic, NovikovBound};
use relwealth_core::stats::{hedging_demand, performance_stats, strategy_stats, PerformanceStats, StrategyStats};
use relwealth_core::{AgentProfile, PriorBelief, RngKey};
use serde::Serialize;

use crate::config::{EstimatorKind, Info, ScenarioConfig};
use crate::output;
use crate::RunError;

/// Stage II training summary.
#[derive(Debug, Clone, Serialize)]
pub struct TrainingSummary {
    pub y0: Vec<f64>,
    pub final_loss: f64,
    /// Mean loss over the first and last training windows.
    pub head_loss: f64,
    pub tail_loss: f64,
    pub window: usize,
    /// Batch-mean `‖Y_K − A·X_K‖²` and `‖A·X_K‖²` on the evaluation paths.
    pub terminal_gap: f64,
    pub terminal_scale: f64,
    /// Per-agent mean `|Z|` and mean `δ̃|b|` on the evaluation paths.
    pub mean_abs_z: Vec<f64>,
    pub mean_abs_myopic: Vec<f64>,
    #[serde(skip)]
    pub log: Vec<EpochLog>,
}

/// Strategies and statistics from one solver.
#[derive(Debug, Clone, Serialize)]
pub struct SolverOutcome {
    pub solver: String,
    pub initial_positions: Vec<f64>,
    pub values: Vec<f64>,
    #[serde(skip)]
    pub pi: Array3<f64>,
    #[serde(skip)]
    pub merton: Array3<f64>,
    #[serde(skip)]
    pub wealth: Array3<f64>,
    pub strategy: StrategyStats,
    pub performance: Option<PerformanceStats>,
    pub hedging_terminal_ratio: f64,
    pub hedging_terminal_max: f64,
    /// Largest fixed-point iteration count and fixed-point/direct gap over
    /// every analytic solve.
    pub nash_max_iterations: Option<usize>,
    pub nash_max_direct_gap: Option<f64>,
    pub training: Option<TrainingSummary>,
}

#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub label: String,
    pub config: ScenarioConfig,
    pub eval: Stage2Batch,
    pub analytic: Option<SolverOutcome>,
    pub fbsde: Option<SolverOutcome>,
    /// Per agent, per member.
    pub stage1_logs: Vec<Vec<Vec<EpochLog>>>,
    pub competition_check: CompetitionCheck,
    pub novikov: NovikovBound,
    pub warnings: Vec<String>,
    pub wall_clock_secs: f64,
}

impl ScenarioReport {
    pub fn outcomes(&self) -> impl Iterator<Item = &SolverOutcome> {
        self.analytic.iter().chain(self.fbsde.iter())
    }

    /// The learned solver if it ran, otherwise the analytic one.
    pub fn primary(&self) -> &SolverOutcome {
        self.fbsde.as_ref().or(self.analytic.as_ref()).expect("at least one solver runs")
    }
}

fn root_key(cfg: &ScenarioConfig) -> RngKey {
    RngKey::new(cfg.seed)
}

/// Initial return estimate of each agent: `h` of the prior mean.
fn initial_estimates(cfg: &ScenarioConfig, agents: &[AgentProfile]) -> Vec<f64> {
    match cfg.info {
        Info::Full => vec![cfg.h0; agents.len()],
        Info::Partial => agents.iter().map(|a| cfg.market.h(a.prior.mean)).collect(),
    }
}

/// One Stage I ensemble per distinct prior, shared by agents with equal
/// priors.
fn train_estimators(cfg: &ScenarioConfig, agents: &[AgentProfile]) -> Result<(Vec<Ensemble>, Vec<Vec<Vec<EpochLog>>>), RunError> {
    let key = root_key(cfg).named("stage1");
    let mut stage1 = cfg.stage1.clone();
    if cfg.serial {
        stage1.parallel = false;
    }
    let mut trained: Vec<(PriorBelief, Ensemble, Vec<Vec<EpochLog>>)> = Vec::new();
    let mut ensembles = Vec::new();
    let mut logs = Vec::new();
    for (i, a) in agents.iter().enumerate() {
        if let Some((_, e, l)) = trained.iter().find(|(p, _, _)| *p == a.prior) {
            ensembles.push(e.clone());
            logs.push(l.clone());
            continue;
        }
        log::info!("stage I: agent {} prior {:?}", i + 1, a.prior);
        let (e, l) = train_stage1(&cfg.market, &a.prior, &stage1, key.child(i as u64))?;
        trained.push((a.prior, e.clone(), l.clone()));
        ensembles.push(e);
        logs.push(l);
    }
    Ok((ensembles, logs))
}

fn estimator(cfg: &ScenarioConfig, agents: &[AgentProfile], ensembles: Option<Vec<Ensemble>>) -> Estimator {
    let priors: Vec<PriorBelief> = agents.iter().map(|a| a.prior).collect();
    match (cfg.info, ensembles) {
        (Info::Full, _) => Estimator::FullInfo { agents: agents.len() },
        (Info::Partial, Some(ensembles)) => Estimator::Networks { priors, ensembles },
        (Info::Partial, None) => Estimator::Kalman { priors },
    }
}

fn merton_paths(eval: &Stage2Batch, agents: &[AgentProfile], stock_vol: f64) -> Result<Array3<f64>, RunError> {
    let (b, k1, n) = eval.estimates.dim();
    let mut m = Array3::zeros((b, k1, n));
    for p in 0..b {
        for k in 0..k1 {
            let etas: Vec<f64> = (0..n).map(|i| eval.estimates[[p, k, i]]).collect();
            let row = merton_benchmark_each(&etas, agents, stock_vol)?;
            for i in 0..n {
                m[[p, k, i]] = row[i];
            }
        }
    }
    Ok(m)
}

fn finish(
    cfg: &ScenarioConfig,
    solver: &str,
    initial_positions: Vec<f64>,
    values: Vec<f64>,
    pi: Array3<f64>,
    merton: Array3<f64>,
    eval: &Stage2Batch,
    warnings: &mut Vec<String>,
) -> SolverOutcome {
    let wealth = wealth_paths(&pi, &eval.returns, cfg.stage2.x0);
    let performance = match performance_stats(&wealth, cfg.eval.basis) {
        Ok(p) => Some(p),
        Err(e) => {
            warnings.push(format!("{solver}: {e}"));
            None
        }
    };
    let hedging = hedging_demand(&pi, &merton);
    SolverOutcome {
        solver: solver.to_string(),
        initial_positions,
        values,
        strategy: strategy_stats(&pi),
        performance,
        hedging_terminal_ratio: hedging.terminal_ratio(),
        hedging_terminal_max: hedging.terminal_max,
        pi,
        merton,
        wealth,
        nash_max_iterations: None,
        nash_max_direct_gap: None,
        training: None,
    }
}

/// Distinct kernel sets and the index of each agent's set. Full
/// information uses a zero filter variance throughout.
fn agent_kernels(cfg: &ScenarioConfig, agents: &[AgentProfile]) -> Result<(Vec<CoefKernels>, Vec<usize>), RunError> {
    let spec = &cfg.market;
    let mut vars: Vec<u64> = Vec::new();
    let mut sets = Vec::new();
    let mut idx = Vec::with_capacity(agents.len());
    for a in agents {
        let var = if cfg.info == Info::Full { 0.0 } else { a.prior.variance };
        let pos = match vars.iter().position(|v| *v == var.to_bits()) {
            Some(p) => p,
            None => {
                let k = if cfg.info == Info::Full {
                    let m = spec.steps * cfg.eval.refine;
                    let grid: Vec<f64> = (0..=m).map(|j| spec.horizon * j as f64 / m as f64).collect();
                    let zeros = vec![0.0; grid.len()];
                    kernels_from_curve(spec, grid, zeros)
                } else {
                    build_kernels(spec, var, cfg.eval.refine)?
                };
                vars.push(var.to_bits());
                sets.push(k);
                sets.len() - 1
            }
        };
        idx.push(pos);
    }
    Ok((sets, idx))
}

/// Closed-form equilibrium along the evaluation paths.
pub fn solve_analytic(cfg: &ScenarioConfig, agents: &[AgentProfile], eval: &Stage2Batch, warnings: &mut Vec<String>) -> Result<SolverOutcome, RunError> {
    let spec = &cfg.market;
    let n = agents.len();
    let (cache, idx) = agent_kernels(cfg, agents)?;
    let kernels: Vec<&CoefKernels> = idx.iter().map(|&i| &cache[i]).collect();

    let (b, k1, _) = eval.estimates.dim();
    let mut pi = Array3::zeros((b, k1, n));
    let mut max_iter = 0;
    let mut max_gap: f64 = 0.0;
    for p in 0..b {
        for k in 0..k1 {
            let etas: Vec<f64> = (0..n).map(|i| eval.estimates[[p, k, i]]).collect();
            let sol = equilibrium_at(spec.time(k), &etas, agents, &kernels)?;
            max_iter = max_iter.max(sol.iterations_used);
            max_gap = max_gap.max(sol.direct_gap);
            for i in 0..n {
                pi[[p, k, i]] = sol.positions[i];
            }
        }
    }
    let h0 = initial_estimates(cfg, agents);
    let sol0 = equilibrium_at(0.0, &h0, agents, &kernels)?;
    let avg = sol0.opponents_average();
    let x0 = cfg.stage2.x0;
    let y = (n as f64 - 1.0) / n as f64 * x0;
    let values = (0..n).map(|i| value_function(0.0, x0, y, h0[i], &agents[i], n, kernels[i], avg[i])).collect();
    let merton = merton_paths(eval, agents, spec.stock_vol)?;
    let mut out = finish(cfg, "analytic", sol0.positions.clone(), values, pi, merton, eval, warnings);
    out.nash_max_iterations = Some(max_iter);
    out.nash_max_direct_gap = Some(max_gap);
    Ok(out)
}

/// `(t, agent, g, f)` along the grid at the initial estimates.
pub fn value_curve(cfg: &ScenarioConfig, agents: &[AgentProfile]) -> Result<Vec<(f64, usize, f64, f64)>, RunError> {
    let spec = &cfg.market;
    let n = agents.len();
    let (sets, idx) = agent_kernels(cfg, agents)?;
    let refs: Vec<&CoefKernels> = idx.iter().map(|&i| &sets[i]).collect();
    let h0 = initial_estimates(cfg, agents);
    let mut rows = Vec::new();
    for k in 0..=spec.steps {
        let t = spec.time(k);
        let avg = equilibrium_at(t, &h0, agents, &refs)?.opponents_average();
        for i in 0..n {
            let g = exponent_g(t, h0[i], &agents[i], refs[i], avg[i]);
            rows.push((t, i + 1, g, g.exp()));
        }
    }
    Ok(rows)
}

fn solve_fbsde(
    cfg: &ScenarioConfig,
    agents: &[AgentProfile],
    batches: &MarketBatches,
    eval: &Stage2Batch,
    warnings: &mut Vec<String>,
) -> Result<SolverOutcome, RunError> {
    let key = root_key(cfg).named("stage2");
    let result = if cfg.estimator == EstimatorKind::Networks && cfg.info == Info::Partial {
        let pool = batches.pool(cfg.eval.pool, root_key(cfg).named("pool"))?;
        train_stage2(agents, &cfg.market, &pool, &cfg.stage2, key)?
    } else {
        train_stage2(agents, &cfg.market, batches, &cfg.stage2, key)?
    };
    let model = &result.model;
    let roll = model.rollout(eval)?;
    let (gap, scale) = model.terminal_stats(eval)?;
    let n = agents.len();
    let (b, k1, _) = roll.z.dim();
    let cnt = (b * k1) as f64;
    let mean_abs_z = (0..n).map(|i| (0..b).flat_map(|p| (0..k1).map(move |k| (p, k))).map(|(p, k)| roll.z[[p, k, i]].abs()).sum::<f64>() / cnt).collect();
    let mean_abs_myopic = (0..n)
        .map(|i| {
            let d = model.eff_risk[i];
            eval.estimates.index_axis(ndarray::Axis(2), i).iter().map(|h| (d * h / model.stock_vol).abs()).sum::<f64>() / cnt
        })
        .collect();
    let e = result.log.len();
    let window = (e / 2).clamp(1, 500);
    let training = TrainingSummary {
        y0: model.y0.clone(),
        final_loss: result.final_loss,
        head_loss: window_mean(&result.log, 0, window),
        tail_loss: window_mean(&result.log, e - window, e),
        window,
        terminal_gap: gap,
        terminal_scale: scale,
        mean_abs_z,
        mean_abs_myopic,
        log: result.log.clone(),
    };
    let h0 = initial_estimates(cfg, agents);
    let initial = model.initial_positions(&h0, cfg.market.s0);
    let values = model.values();
    if initial.iter().chain(&values).any(|v| !v.is_finite()) {
        return Err(RunError::Numeric(format!("stage II diverged: initial positions {initial:?}, values {values:?}")));
    }
    let merton = merton_paths(eval, agents, cfg.market.stock_vol)?;
    let mut out = finish(cfg, "fbsde", initial, values, roll.pi, merton, eval, warnings);
    out.training = Some(training);
    Ok(out)
}

/// Computes every requested solver without touching the filesystem.
pub fn compute_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport, RunError> {
    let start = Instant::now();
    let agents = cfg.solve_agents();
    let mut warnings = Vec::new();
    let novikov = novikov_diagnostic(&cfg.market);
    if novikov == NovikovBound::Unbounded {
        warnings.push("returns are unbounded; the uniqueness condition is unverified".into());
    }
    let theta: Vec<f64> = agents.iter().map(|a| a.competition).collect();
    let competition_check = check_small_competition(&competition_matrix(&theta));
    if !competition_check.passed() {
        warnings.push(format!("competition weights fail the small-competition condition: {competition_check:?}"));
    }

    let (ensembles, stage1_logs) = if cfg.info == Info::Partial && cfg.estimator == EstimatorKind::Networks {
        let (e, l) = train_estimators(cfg, &agents)?;
        (Some(e), l)
    } else {
        (None, Vec::new())
    };
    let batches = MarketBatches::new(cfg.market.clone(), estimator(cfg, &agents, ensembles))?;
    let eval = batches.batch(cfg.eval.paths, root_key(cfg).named("eval"))?;

    let analytic = if cfg.solver.analytic() { Some(solve_analytic(cfg, &agents, &eval, &mut warnings)?) } else { None };
    let fbsde = if cfg.solver.fbsde() { Some(solve_fbsde(cfg, &agents, &batches, &eval, &mut warnings)?) } else { None };
    for w in &warnings {
        log::warn!("{}: {w}", cfg.label());
    }
    Ok(ScenarioReport {
        label: cfg.label(),
        config: cfg.clone(),
        eval,
        analytic,
        fbsde,
        stage1_logs,
        competition_check,
        novikov,
        warnings,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

/// Runs in a single-threaded pool when `serial` is set.
pub fn with_threads<T: Send>(serial: bool, f: impl FnOnce() -> T + Send) -> Result<T, RunError> {
    if serial {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| RunError::Numeric(e.to_string()))?;
        Ok(pool.install(f))
    } else {
        Ok(f())
    }
}

/// Computes the scenario and writes path, strategy, statistics, training
/// and manifest files into `cfg.out`.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport, RunError> {
    crate::config::recheck(cfg)?;
    let report = with_threads(cfg.serial, || compute_scenario(cfg))??;
    write_artifacts(&report, &cfg.out)?;
    Ok(report)
}

#[derive(Serialize)]
struct Manifest<'a> {
    label: &'a str,
    version: &'static str,
    seed: u64,
    wall_clock_secs: f64,
    config: &'a ScenarioConfig,
    config_toml: String,
    competition_matrix: Vec<Vec<f64>>,
    competition_norm: f64,
    competition_check: CompetitionCheck,
    novikov: NovikovBound,
    solvers: BTreeMap<String, &'a SolverOutcome>,
    warnings: &'a [String],
    files: Vec<String>,
}

pub fn write_artifacts(report: &ScenarioReport, dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir)?;
    let cfg = &report.config;
    let mut files = vec!["paths.csv".to_string()];
    output::write_paths(&dir.join("paths.csv"), &report.eval, &cfg.market)?;
    for o in report.outcomes() {
        let name = format!("strategies_{}.csv", o.solver);
        output::write_strategies(&dir.join(&name), &report.eval, o, &cfg.market)?;
        files.push(name);
        let name = format!("stats_{}.csv", o.solver);
        output::write_stats(&dir.join(&name), &report.label, o)?;
        files.push(name);
        if let Some(t) = &o.training {
            output::write_stage2_log(&dir.join("stage2_log.csv"), &t.log)?;
            files.push("stage2_log.csv".into());
        }
    }
    if !report.stage1_logs.is_empty() {
        output::write_stage1_log(&dir.join("stage1_log.csv"), &report.stage1_logs)?;
        files.push("stage1_log.csv".into());
    }
    if report.analytic.is_some() {
        let rows = value_curve(cfg, &cfg.solve_agents())?;
        output::write_value_curve(&dir.join("value_curve.csv"), &rows)?;
        files.push("value_curve.csv".into());
    }
    let agents = cfg.solve_agents();
    let matrix = competition_matrix(&agents.iter().map(|a| a.competition).collect::<Vec<_>>());
    let solvers = report.outcomes().map(|o| (o.solver.clone(), o)).collect();
    let manifest = Manifest {
        label: &report.label,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        wall_clock_secs: report.wall_clock_secs,
        config: cfg,
        config_toml: cfg.to_toml(),
        competition_norm: matrix.norm,
        competition_matrix: matrix.entries,
        competition_check: report.competition_check,
        novikov: report.novikov,
        solvers,
        warnings: &report.warnings,
        files,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| RunError::Io(e.to_string()))?;
    fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}
