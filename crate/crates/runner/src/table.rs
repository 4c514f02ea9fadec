//! Named scenario grids assembled into combined CSV tables.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use relwealth_core::stats::mean_ratios;

use crate::config::{Beliefs, Competition, EstimatorKind, Filter, Info, ScenarioConfig, Solver};
use crate::output::{self, stats_rows, STATS_HEADER};
use crate::scenario::{compute_scenario, with_threads, write_artifacts, ScenarioReport};
use crate::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    /// Closed-form vs learned initial positions and values per panel.
    PdeVsFbsde,
    /// NC-FI, NC-PI and C-PI statistics per panel, linear market.
    LinStats,
    /// Same for the nonlinear market.
    NlStats,
    /// L/NL × HT/HM × NC/C strategy statistics and C/NC ratios.
    Hetero,
    /// Stage II loss curves for constant learning rates.
    LrSweep,
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pde_vs_fbsde" => Ok(Suite::PdeVsFbsde),
            "lin_stats" => Ok(Suite::LinStats),
            "nl_stats" => Ok(Suite::NlStats),
            "hetero" => Ok(Suite::Hetero),
            "lr_sweep" => Ok(Suite::LrSweep),
            other => Err(format!("unknown table {other:?}; expected pde_vs_fbsde, lin_stats, nl_stats, hetero or lr_sweep")),
        }
    }
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::PdeVsFbsde => "pde_vs_fbsde",
            Suite::LinStats => "lin_stats",
            Suite::NlStats => "nl_stats",
            Suite::Hetero => "hetero",
            Suite::LrSweep => "lr_sweep",
        }
    }

    pub fn header(self, n: usize) -> Vec<String> {
        match self {
            Suite::PdeVsFbsde => {
                let mut h = vec!["h0".to_string(), "mean".into(), "method".into()];
                h.extend((1..=n).map(|i| format!("pi_{i}")));
                h.extend((1..=n).map(|i| format!("v_{i}")));
                h
            }
            Suite::LinStats | Suite::NlStats => {
                let mut h = vec!["h0".to_string(), "mean".into()];
                h.extend(STATS_HEADER.iter().map(|s| s.to_string()));
                h
            }
            Suite::Hetero => ["filter", "beliefs", "case", "agent", "mean_abs_pi", "std_abs_pi", "c_nc_ratio"].map(String::from).to_vec(),
            Suite::LrSweep => ["lr", "epoch", "loss"].map(String::from).to_vec(),
        }
    }
}

/// One grid cell: a label and its scenario.
#[derive(Debug, Clone)]
pub struct Cell {
    pub label: String,
    pub config: ScenarioConfig,
}

fn with_panel(base: &ScenarioConfig, filter: Filter, (h0, mean): (f64, f64)) -> ScenarioConfig {
    let mut c = base.clone();
    c.filter = filter;
    c.h0 = h0;
    c.market = match filter {
        Filter::Linear => relwealth_core::MarketSpec::linear_base(h0, mean),
        Filter::Nonlinear => relwealth_core::MarketSpec::nonlinear_base(h0, mean),
    };
    c.market.steps = base.market.steps;
    c.market.horizon = base.market.horizon;
    c.estimator = match (filter, base.estimator) {
        (Filter::Nonlinear, _) => EstimatorKind::Networks,
        (Filter::Linear, e) => e,
    };
    if filter == Filter::Nonlinear && c.solver.analytic() {
        c.solver = Solver::Fbsde;
    }
    c.refresh_priors();
    c
}

fn with_modes(base: &ScenarioConfig, beliefs: Beliefs, competition: Competition, info: Info) -> ScenarioConfig {
    let mut c = base.clone();
    c.beliefs = beliefs;
    c.competition = competition;
    c.info = info;
    c.refresh_priors();
    c
}

fn cell(c: ScenarioConfig, prefix: &str) -> Cell {
    Cell { label: format!("{prefix}{}", c.label()), config: c }
}

pub fn cells(suite: Suite, base: &ScenarioConfig) -> Vec<Cell> {
    let grid = &base.table;
    match suite {
        Suite::PdeVsFbsde => grid
            .panels
            .iter()
            .map(|&p| {
                let mut c = with_modes(&with_panel(base, Filter::Linear, p), Beliefs::Homogeneous, Competition::On, Info::Partial);
                c.solver = Solver::Both;
                cell(c, &format!("h{}_m{}_", p.0, p.1))
            })
            .collect(),
        Suite::LinStats | Suite::NlStats => {
            let filter = if suite == Suite::LinStats { Filter::Linear } else { Filter::Nonlinear };
            let mut out = Vec::new();
            for &p in &grid.panels {
                for (comp, info) in [(Competition::Off, Info::Full), (Competition::Off, Info::Partial), (Competition::On, Info::Partial)] {
                    let mut c = with_modes(&with_panel(base, filter, p), Beliefs::Homogeneous, comp, info);
                    c.solver = Solver::Fbsde;
                    out.push(cell(c, &format!("h{}_m{}_", p.0, p.1)));
                }
            }
            out
        }
        Suite::Hetero => {
            let mut out = Vec::new();
            for filter in [Filter::Linear, Filter::Nonlinear] {
                for beliefs in [Beliefs::Heterogeneous, Beliefs::Homogeneous] {
                    for comp in [Competition::Off, Competition::On] {
                        let mut c = with_modes(&with_panel(base, filter, grid.hetero_panel), beliefs, comp, Info::Partial);
                        c.solver = Solver::Fbsde;
                        out.push(cell(c, ""));
                    }
                }
            }
            out
        }
        Suite::LrSweep => grid
            .lrs
            .iter()
            .map(|&lr| {
                let mut c = base.clone();
                c.solver = Solver::Fbsde;
                c.stage2.lr = lr;
                c.stage2.decay_every = 0;
                cell(c, &format!("lr{lr}_"))
            })
            .collect(),
    }
}

/// Runs cells in parallel unless `serial`; each cell is reproducible on its
/// own either way.
pub fn run_cells(cells: &[Cell], serial: bool) -> Vec<Result<ScenarioReport, RunError>> {
    let run = |c: &Cell| {
        let mut cfg = c.config.clone();
        cfg.serial |= serial;
        with_threads(cfg.serial, || compute_scenario(&cfg)).and_then(|r| r)
    };
    if serial {
        cells.iter().map(run).collect()
    } else {
        cells.par_iter().map(run).collect()
    }
}

#[derive(Debug)]
pub struct TableReport {
    pub suite: Suite,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub failures: Vec<(String, String)>,
    pub path: PathBuf,
}

fn panel_of(c: &ScenarioConfig) -> (String, String) {
    (c.h0.to_string(), c.market.dynamics.long_run_mean.to_string())
}

/// Builds table rows from finished cells.
pub fn rows(suite: Suite, done: &[(&Cell, &ScenarioReport)]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    match suite {
        Suite::PdeVsFbsde => {
            for (c, r) in done {
                let (h, m) = panel_of(&c.config);
                for (name, o) in [("PDE", r.analytic.as_ref()), ("FBSDE", r.fbsde.as_ref())] {
                    if let Some(o) = o {
                        let mut row = vec![h.clone(), m.clone(), name.to_string()];
                        row.extend(o.initial_positions.iter().map(|v| v.to_string()));
                        row.extend(o.values.iter().map(|v| v.to_string()));
                        rows.push(row);
                    }
                }
            }
        }
        Suite::LinStats | Suite::NlStats => {
            for (c, r) in done {
                let (h, m) = panel_of(&c.config);
                for s in stats_rows(&r.label, r.primary()) {
                    let mut row = vec![h.clone(), m.clone()];
                    row.extend(s);
                    rows.push(row);
                }
            }
        }
        Suite::Hetero => {
            let find = |f: Filter, b: Beliefs, comp: Competition| {
                done.iter().find(|(c, _)| c.config.filter == f && c.config.beliefs == b && c.config.competition == comp).map(|(_, r)| *r)
            };
            let name = |f: Filter| if f == Filter::Linear { "L" } else { "NL" };
            let bname = |b: Beliefs| if b == Beliefs::Heterogeneous { "HT" } else { "HM" };
            for f in [Filter::Linear, Filter::Nonlinear] {
                for b in [Beliefs::Heterogeneous, Beliefs::Homogeneous] {
                    let (nc, c) = (find(f, b, Competition::Off), find(f, b, Competition::On));
                    let ratio = match (nc, c) {
                        (Some(nc), Some(c)) => mean_ratios(&c.primary().strategy, &nc.primary().strategy),
                        _ => Vec::new(),
                    };
                    for (case, r) in [("NC-PI", nc), ("C-PI", c)] {
                        let Some(r) = r else { continue };
                        let s = &r.primary().strategy;
                        for i in 0..s.mean_abs.len() {
                            let q = if case == "C-PI" { ratio.get(i).copied().flatten().map(|x| x.to_string()).unwrap_or_default() } else { String::new() };
                            rows.push(vec![name(f).into(), bname(b).into(), case.into(), (i + 1).to_string(), s.mean_abs[i].to_string(), s.std_abs[i].to_string(), q]);
                        }
                    }
                }
            }
            for b in [Beliefs::Heterogeneous, Beliefs::Homogeneous] {
                for d in hetero_diff(&find, b) {
                    let mut row = vec!["Diff".to_string(), bname(b).into()];
                    row.extend(d);
                    rows.push(row);
                }
            }
        }
        Suite::LrSweep => {
            for (c, r) in done {
                if let Some(t) = r.fbsde.as_ref().and_then(|o| o.training.as_ref()) {
                    for e in &t.log {
                        rows.push(vec![c.config.stage2.lr.to_string(), e.epoch.to_string(), e.loss.to_string()]);
                    }
                }
            }
        }
    }
    rows
}

/// L minus NL rows (case, agent, mean, std, ratio) for one belief setting.
fn hetero_diff<'a>(find: &dyn Fn(Filter, Beliefs, Competition) -> Option<&'a ScenarioReport>, b: Beliefs) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let ratio = |f: Filter| -> Option<Vec<Option<f64>>> {
        Some(mean_ratios(&find(f, b, Competition::On)?.primary().strategy, &find(f, b, Competition::Off)?.primary().strategy))
    };
    let (rl, rn) = (ratio(Filter::Linear), ratio(Filter::Nonlinear));
    for (case, comp) in [("NC-PI", Competition::Off), ("C-PI", Competition::On)] {
        let (Some(l), Some(nl)) = (find(Filter::Linear, b, comp), find(Filter::Nonlinear, b, comp)) else { continue };
        let (sl, sn) = (&l.primary().strategy, &nl.primary().strategy);
        for i in 0..sl.mean_abs.len() {
            let q = match (comp, &rl, &rn) {
                (Competition::On, Some(a), Some(c)) => match (a[i], c[i]) {
                    (Some(x), Some(y)) => (x - y).to_string(),
                    _ => String::new(),
                },
                _ => String::new(),
            };
            out.push(vec![case.into(), (i + 1).to_string(), (sl.mean_abs[i] - sn.mean_abs[i]).to_string(), (sl.std_abs[i] - sn.std_abs[i]).to_string(), q]);
        }
    }
    out
}

/// Runs the suite, writes each cell's artifacts under `<out>/<suite>/` and
/// the combined table to `<out>/<suite>.csv`.
pub fn run_table(suite: Suite, base: &ScenarioConfig) -> Result<TableReport, RunError> {
    crate::config::recheck(base)?;
    let cells = cells(suite, base);
    let results = run_cells(&cells, base.serial);
    write_table(suite, base, &cells, results, &base.out)
}

pub fn write_table(
    suite: Suite,
    base: &ScenarioConfig,
    cells: &[Cell],
    results: Vec<Result<ScenarioReport, RunError>>,
    out: &Path,
) -> Result<TableReport, RunError> {
    std::fs::create_dir_all(out)?;
    let mut done = Vec::new();
    let mut failures = Vec::new();
    for (c, r) in cells.iter().zip(results) {
        match r {
            Ok(rep) => {
                write_artifacts(&rep, &out.join(suite.name()).join(&c.label))?;
                done.push((c, rep));
            }
            Err(e) => {
                log::error!("cell {} failed: {e}", c.label);
                failures.push((c.label.clone(), e.to_string()));
            }
        }
    }
    let refs: Vec<(&Cell, &ScenarioReport)> = done.iter().map(|(c, r)| (*c, r)).collect();
    let header = suite.header(base.n());
    let rows = rows(suite, &refs);
    let path = out.join(format!("{}.csv", suite.name()));
    output::write_table(&path, &header, &rows)?;
    Ok(TableReport { suite, header, rows, failures, path })
}
