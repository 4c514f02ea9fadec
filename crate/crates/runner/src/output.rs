//! CSV writers for scenario artifacts.

use std::path::Path;

use relwealth_core::learn::{EpochLog, Stage2Batch};
use relwealth_core::MarketSpec;

use crate::scenario::SolverOutcome;
use crate::RunError;

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, RunError> {
    Ok(csv::Writer::from_path(path)?)
}

pub fn write_paths(path: &Path, eval: &Stage2Batch, spec: &MarketSpec) -> Result<(), RunError> {
    let mut w = writer(path)?;
    w.write_record(["path", "k", "t", "price", "hidden", "h", "return"])?;
    let (b, k1) = eval.prices.dim();
    for p in 0..b {
        for k in 0..k1 {
            let ret = if k + 1 < k1 { eval.returns[[p, k]].to_string() } else { String::new() };
            w.write_record([
                p.to_string(),
                k.to_string(),
                spec.time(k).to_string(),
                eval.prices[[p, k]].to_string(),
                eval.hidden[[p, k]].to_string(),
                eval.truth[[p, k]].to_string(),
                ret,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_strategies(path: &Path, eval: &Stage2Batch, o: &SolverOutcome, spec: &MarketSpec) -> Result<(), RunError> {
    let mut w = writer(path)?;
    w.write_record(["path", "k", "t", "agent", "estimate", "pi", "merton", "hedging", "wealth"])?;
    let (b, k1, n) = o.pi.dim();
    for p in 0..b {
        for k in 0..k1 {
            for i in 0..n {
                let (pi, m) = (o.pi[[p, k, i]], o.merton[[p, k, i]]);
                w.write_record([
                    p.to_string(),
                    k.to_string(),
                    spec.time(k).to_string(),
                    (i + 1).to_string(),
                    eval.estimates[[p, k, i]].to_string(),
                    pi.to_string(),
                    m.to_string(),
                    (pi - m).to_string(),
                    o.wealth[[p, k, i]].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub const STATS_HEADER: [&str; 8] = ["scenario", "solver", "agent", "mean_abs_pi", "std_abs_pi", "cv", "sharpe", "vrr"];

/// Per-agent rows, a social row and a mean-CV row.
pub fn stats_rows(label: &str, o: &SolverOutcome) -> Vec<Vec<String>> {
    let s = &o.strategy;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut rows = Vec::new();
    for i in 0..s.mean_abs.len() {
        rows.push(vec![
            label.to_string(),
            o.solver.clone(),
            (i + 1).to_string(),
            s.mean_abs[i].to_string(),
            s.std_abs[i].to_string(),
            s.cv[i].to_string(),
            opt(o.performance.as_ref().map(|p| p.sharpe[i])),
            opt(o.performance.as_ref().map(|p| p.vrr[i])),
        ]);
    }
    rows.push(vec![
        label.to_string(),
        o.solver.clone(),
        "social".into(),
        String::new(),
        String::new(),
        String::new(),
        opt(o.performance.as_ref().map(|p| p.social_sharpe)),
        opt(o.performance.as_ref().map(|p| p.social_vrr)),
    ]);
    rows.push(vec![
        label.to_string(),
        o.solver.clone(),
        "mean_cv".into(),
        String::new(),
        String::new(),
        s.mean_cv.to_string(),
        String::new(),
        String::new(),
    ]);
    rows
}

pub fn write_stats(path: &Path, label: &str, o: &SolverOutcome) -> Result<(), RunError> {
    write_table(path, &STATS_HEADER.map(String::from), &stats_rows(label, o))
}

pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), RunError> {
    let mut w = writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_stage1_log(path: &Path, logs: &[Vec<Vec<EpochLog>>]) -> Result<(), RunError> {
    let mut w = writer(path)?;
    w.write_record(["agent", "member", "epoch", "loss", "lr"])?;
    for (i, members) in logs.iter().enumerate() {
        for (m, log) in members.iter().enumerate() {
            for e in log {
                w.write_record([(i + 1).to_string(), (m + 1).to_string(), e.epoch.to_string(), e.loss.to_string(), e.lr.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_stage2_log(path: &Path, log: &[EpochLog]) -> Result<(), RunError> {
    let mut w = writer(path)?;
    let n = log.first().map_or(0, |e| e.y0.len());
    let mut header = vec!["epoch".to_string(), "loss".into(), "lr".into()];
    header.extend((1..=n).map(|i| format!("y0_{i}")));
    w.write_record(&header)?;
    for e in log {
        let mut row = vec![e.epoch.to_string(), e.loss.to_string(), e.lr.to_string()];
        row.extend(e.y0.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_value_curve(path: &Path, rows: &[(f64, usize, f64, f64)]) -> Result<(), RunError> {
    let mut w = writer(path)?;
    w.write_record(["t", "agent", "g", "f"])?;
    for (t, i, g, f) in rows {
        w.write_record([t.to_string(), i.to_string(), g.to_string(), f.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
