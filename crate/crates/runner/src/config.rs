//! Scenario configuration: a sectioned TOML file with named presets.
//!
//! ```toml
//! seed = 7
//! out = "runs/base"
//!
//! [market]
//! preset = "lin_base"      # or "nl_base"
//! h0 = 0.05
//! mean = 0.02
//!
//! [agents]
//! preset = "risk_base"
//!
//! [mode]
//! info = "PI"
//! beliefs = "HT"
//! competition = "C"
//! filter = "L"
//! solver = "both"
//! ```
//!
//! Every key is optional. Unknown keys and sections are rejected, and all
//! violations are reported together with their dotted path.

use std::fmt;
use std::path::PathBuf;

use relwealth_core::learn::{InputEncoding, Stage1Config, Stage2Config};
use relwealth_core::stats::ReturnBasis;
use relwealth_core::{AgentProfile, HiddenKind, MarketSpec, PriorBelief, ReturnMap};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Info {
    #[serde(rename = "PI")]
    Partial,
    #[serde(rename = "FI")]
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Beliefs {
    #[serde(rename = "HM")]
    Homogeneous,
    #[serde(rename = "HT")]
    Heterogeneous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Competition {
    #[serde(rename = "C")]
    On,
    #[serde(rename = "NC")]
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Filter {
    #[serde(rename = "L")]
    Linear,
    #[serde(rename = "NL")]
    Nonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Analytic,
    Fbsde,
    Both,
}

impl Solver {
    pub fn analytic(self) -> bool {
        matches!(self, Solver::Analytic | Solver::Both)
    }

    pub fn fbsde(self) -> bool {
        matches!(self, Solver::Fbsde | Solver::Both)
    }
}

/// Source of the partial-information return estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Kalman,
    Networks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Evaluation paths for strategy statistics.
    pub paths: usize,
    pub basis: ReturnBasis,
    /// Pre-simulated pool size for Stage II with network estimates.
    pub pool: usize,
    /// Analytic lattice points per simulation step.
    pub refine: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { paths: 64, basis: ReturnBasis::Increments, pool: 4096, refine: 10 }
    }
}

/// Grids used by the table verbs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableGrid {
    /// `(h0, mean)` market panels.
    pub panels: Vec<(f64, f64)>,
    pub hetero_panel: (f64, f64),
    pub lrs: Vec<f64>,
}

impl Default for TableGrid {
    fn default() -> Self {
        Self { panels: vec![(0.02, 0.0), (0.05, 0.02), (0.1, 0.02)], hetero_panel: (0.05, 0.02), lrs: vec![1e-3, 3e-3, 1e-2] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub market: MarketSpec,
    /// Initial return `h(A₀)`.
    pub h0: f64,
    /// Configured agents. Competition weights are kept for labelling even
    /// when competition is switched off.
    pub agents: Vec<AgentProfile>,
    /// Prior spreads (std for L, interval width for NL) in HT mode.
    pub spreads: Vec<f64>,
    pub info: Info,
    pub beliefs: Beliefs,
    pub competition: Competition,
    pub filter: Filter,
    pub solver: Solver,
    pub estimator: EstimatorKind,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub eval: EvalConfig,
    pub table: TableGrid,
    pub seed: u64,
    pub out: PathBuf,
    pub serial: bool,
}

pub const RISK_BASE: [f64; 3] = [2.0, 3.0, 5.0];
pub const COMPETITION_BASE: [f64; 3] = [0.2, 0.5, 0.2];
pub const PRIORS_HT: [f64; 3] = [0.05, 0.1, 0.0];

impl ScenarioConfig {
    pub fn n(&self) -> usize {
        self.agents.len()
    }

    /// E.g. `L-HT-C-PI`.
    pub fn label(&self) -> String {
        let f = match self.filter {
            Filter::Linear => "L",
            Filter::Nonlinear => "NL",
        };
        let b = match self.beliefs {
            Beliefs::Homogeneous => "HM",
            Beliefs::Heterogeneous => "HT",
        };
        let c = match self.competition {
            Competition::On => "C",
            Competition::Off => "NC",
        };
        let i = match self.info {
            Info::Partial => "PI",
            Info::Full => "FI",
        };
        format!("{f}-{b}-{c}-{i}")
    }

    /// Agents as they enter the solve: NC zeroes every competition weight.
    pub fn solve_agents(&self) -> Vec<AgentProfile> {
        let mut a = self.agents.clone();
        if self.competition == Competition::Off {
            for x in &mut a {
                x.competition = 0.0;
            }
        }
        a
    }

    /// Rebuilds the agents' priors after the market, beliefs or spreads
    /// changed.
    pub fn refresh_priors(&mut self) {
        let a0 = self.market.return_map.invert(self.h0);
        self.market.a0 = a0;
        for (i, agent) in self.agents.iter_mut().enumerate() {
            let spread = self.spreads.get(i).copied().unwrap_or(0.0);
            agent.prior = match (self.beliefs, self.filter) {
                (Beliefs::Homogeneous, _) => PriorBelief::point(a0),
                (Beliefs::Heterogeneous, Filter::Linear) => PriorBelief::gaussian(a0, spread),
                (Beliefs::Heterogeneous, Filter::Nonlinear) => PriorBelief::uniform(a0, spread),
            };
        }
    }

    /// Fully explicit TOML that parses back to this configuration.
    pub fn to_toml(&self) -> String {
        let m = &self.market;
        let mut market = Table::new();
        market.insert("preset".into(), preset_name(self.filter).into());
        market.insert("h0".into(), self.h0.into());
        market.insert("mean".into(), m.dynamics.long_run_mean.into());
        market.insert("mean_reversion".into(), m.dynamics.mean_reversion.into());
        market.insert("vol".into(), m.dynamics.vol.into());
        market.insert("stock_vol".into(), m.stock_vol.into());
        market.insert("correlation".into(), m.correlation.into());
        market.insert("horizon".into(), m.horizon.into());
        market.insert("steps".into(), (m.steps as i64).into());
        market.insert("s0".into(), m.s0.into());
        if let ReturnMap::SignedSqrt { scale } = m.return_map {
            market.insert("scale".into(), scale.into());
        }
        if let HiddenKind::BoundedNl { lower, upper } = m.dynamics.kind {
            market.insert("lower".into(), lower.into());
            market.insert("upper".into(), upper.into());
        }
        if let Some(b) = m.return_bound {
            market.insert("return_bound".into(), b.into());
        }

        let mut agents = Table::new();
        agents.insert("risk_tolerance".into(), floats(self.agents.iter().map(|a| a.risk_tolerance)));
        agents.insert("competition".into(), floats(self.agents.iter().map(|a| a.competition)));

        let mut beliefs = Table::new();
        beliefs.insert("spread".into(), floats(self.spreads.iter().copied()));

        let mut mode = Table::new();
        mode.insert("info".into(), enum_str(&self.info).into());
        mode.insert("beliefs".into(), enum_str(&self.beliefs).into());
        mode.insert("competition".into(), enum_str(&self.competition).into());
        mode.insert("filter".into(), enum_str(&self.filter).into());
        mode.insert("solver".into(), enum_str(&self.solver).into());
        mode.insert("estimator".into(), enum_str(&self.estimator).into());

        let s1 = &self.stage1;
        let mut stage1 = Table::new();
        stage1.insert("epochs".into(), (s1.epochs as i64).into());
        stage1.insert("batch".into(), (s1.batch as i64).into());
        stage1.insert("ensemble".into(), (s1.ensemble as i64).into());
        stage1.insert("hidden".into(), (s1.hidden as i64).into());
        stage1.insert("lr".into(), s1.lr.into());
        stage1.insert("decay_every".into(), (s1.decay_every as i64).into());
        stage1.insert("decay_factor".into(), s1.decay_factor.into());
        stage1.insert("encoding".into(), enum_str(&s1.encoding).into());

        let s2 = &self.stage2;
        let mut stage2 = Table::new();
        stage2.insert("epochs".into(), (s2.epochs as i64).into());
        stage2.insert("batch".into(), (s2.batch as i64).into());
        stage2.insert("hidden".into(), (s2.hidden as i64).into());
        stage2.insert("layers".into(), (s2.layers as i64).into());
        stage2.insert("lr".into(), s2.lr.into());
        stage2.insert("decay_every".into(), (s2.decay_every as i64).into());
        stage2.insert("decay_factor".into(), s2.decay_factor.into());
        stage2.insert("x0".into(), s2.x0.into());

        let mut eval = Table::new();
        eval.insert("paths".into(), (self.eval.paths as i64).into());
        eval.insert("basis".into(), enum_str(&self.eval.basis).into());
        eval.insert("pool".into(), (self.eval.pool as i64).into());
        eval.insert("refine".into(), (self.eval.refine as i64).into());

        let mut table = Table::new();
        table.insert(
            "panels".into(),
            Value::Array(self.table.panels.iter().map(|&(h, m)| floats([h, m].into_iter())).collect()),
        );
        table.insert("hetero_panel".into(), floats([self.table.hetero_panel.0, self.table.hetero_panel.1].into_iter()));
        table.insert("lrs".into(), floats(self.table.lrs.iter().copied()));

        let mut root = Table::new();
        root.insert("seed".into(), Value::Integer(self.seed as i64));
        root.insert("out".into(), self.out.display().to_string().into());
        root.insert("serial".into(), self.serial.into());
        for (k, v) in [
            ("market", market),
            ("agents", agents),
            ("beliefs", beliefs),
            ("mode", mode),
            ("stage1", stage1),
            ("stage2", stage2),
            ("eval", eval),
            ("table", table),
        ] {
            root.insert(k.into(), Value::Table(v));
        }
        toml::to_string(&root).expect("plain table serializes")
    }
}

fn preset_name(filter: Filter) -> &'static str {
    match filter {
        Filter::Linear => "lin_base",
        Filter::Nonlinear => "nl_base",
    }
}

fn floats(xs: impl Iterator<Item = f64>) -> Value {
    Value::Array(xs.map(Value::Float).collect())
}

fn enum_str<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => panic!("not a unit enum: {other:?}"),
    }
}

/// One violation: dotted key path and reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub path: String,
    pub reason: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.reason)
        } else {
            write!(f, "{}: {}", self.path, self.reason)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ConfigError {
    pub errors: Vec<FieldError>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration ({} problem(s)):", self.errors.len())?;
        for e in &self.errors {
            writeln!(f, "  {e}")?;
        }
        Ok(())
    }
}

impl ConfigError {
    pub fn single(path: &str, reason: impl Into<String>) -> Self {
        Self { errors: vec![FieldError { path: path.into(), reason: reason.into() }] }
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.errors.iter().any(|e| e.to_string().contains(needle))
    }
}

const SCHEMA: &[(&str, &[&str])] = &[
    ("", &["seed", "out", "serial"]),
    (
        "market",
        &[
            "preset",
            "h0",
            "mean",
            "mean_reversion",
            "vol",
            "stock_vol",
            "correlation",
            "horizon",
            "steps",
            "s0",
            "scale",
            "lower",
            "upper",
            "return_bound",
        ],
    ),
    ("agents", &["preset", "risk_tolerance", "competition"]),
    ("beliefs", &["preset", "spread"]),
    ("mode", &["info", "beliefs", "competition", "filter", "solver", "estimator"]),
    ("stage1", &["epochs", "batch", "ensemble", "hidden", "lr", "decay_every", "decay_factor", "encoding"]),
    ("stage2", &["epochs", "batch", "hidden", "layers", "lr", "decay_every", "decay_factor", "x0"]),
    ("eval", &["paths", "basis", "pool", "refine"]),
    ("table", &["panels", "hetero_panel", "lrs"]),
];

struct Reader<'a> {
    root: &'a Table,
    errors: Vec<FieldError>,
}

impl<'a> Reader<'a> {
    fn err(&mut self, path: &str, reason: impl Into<String>) {
        self.errors.push(FieldError { path: path.into(), reason: reason.into() });
    }

    fn value(&self, section: &str, key: &str) -> Option<&'a Value> {
        if section.is_empty() {
            self.root.get(key)
        } else {
            self.root.get(section)?.as_table()?.get(key)
        }
    }

    fn path(section: &str, key: &str) -> String {
        if section.is_empty() {
            key.to_string()
        } else {
            format!("{section}.{key}")
        }
    }

    fn f64(&mut self, section: &str, key: &str) -> Option<f64> {
        let v = self.value(section, key)?;
        match v {
            Value::Float(x) => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            _ => {
                self.err(&Self::path(section, key), format!("expected a number, got {}", v.type_str()));
                None
            }
        }
    }

    fn usize(&mut self, section: &str, key: &str) -> Option<usize> {
        let v = self.value(section, key)?;
        match v {
            Value::Integer(i) if *i >= 0 => Some(*i as usize),
            _ => {
                self.err(&Self::path(section, key), "expected a non-negative integer");
                None
            }
        }
    }

    fn bool(&mut self, section: &str, key: &str) -> Option<bool> {
        let v = self.value(section, key)?;
        match v {
            Value::Boolean(b) => Some(*b),
            _ => {
                self.err(&Self::path(section, key), "expected true or false");
                None
            }
        }
    }

    fn str(&mut self, section: &str, key: &str) -> Option<&'a str> {
        let v = self.value(section, key)?;
        match v.as_str() {
            Some(s) => Some(s),
            None => {
                self.err(&Self::path(section, key), "expected a string");
                None
            }
        }
    }

    fn floats(&mut self, section: &str, key: &str) -> Option<Vec<f64>> {
        let v = self.value(section, key)?;
        let path = Self::path(section, key);
        let Some(arr) = v.as_array() else {
            self.err(&path, "expected an array of numbers");
            return None;
        };
        let mut out = Vec::with_capacity(arr.len());
        for (i, x) in arr.iter().enumerate() {
            match x {
                Value::Float(f) => out.push(*f),
                Value::Integer(n) => out.push(*n as f64),
                _ => {
                    self.err(&format!("{path}[{i}]"), "expected a number");
                    return None;
                }
            }
        }
        Some(out)
    }

    fn pair(&mut self, path: &str, v: &Value) -> Option<(f64, f64)> {
        let xs: Option<Vec<f64>> = v.as_array().and_then(|a| a.iter().map(|x| x.as_float().or(x.as_integer().map(|i| i as f64))).collect());
        match xs.as_deref() {
            Some([a, b]) => Some((*a, *b)),
            _ => {
                self.err(path, "expected [h0, mean]");
                None
            }
        }
    }

    fn choice<T: for<'de> Deserialize<'de>>(&mut self, section: &str, key: &str, allowed: &str) -> Option<T> {
        let s = self.str(section, key)?;
        match serde_json::from_value(serde_json::Value::String(s.to_string())) {
            Ok(v) => Some(v),
            Err(_) => {
                self.err(&Self::path(section, key), format!("unknown value {s:?}, expected one of {allowed}"));
                None
            }
        }
    }
}

/// Parses and validates configuration text. Missing keys take defaults.
pub fn validate_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let root: Table = toml::from_str(text).map_err(|e| ConfigError::single("", format!("malformed TOML: {}", e.message())))?;
    let mut r = Reader { root: &root, errors: Vec::new() };

    for (key, value) in &root {
        match SCHEMA.iter().find(|(s, _)| s == key) {
            Some(_) => match value.as_table() {
                Some(t) => {
                    let known = SCHEMA.iter().find(|(s, _)| s == key).unwrap().1;
                    for k in t.keys() {
                        if !known.contains(&k.as_str()) {
                            r.err(&format!("{key}.{k}"), "unknown key");
                        }
                    }
                }
                None => r.err(key, "expected a section"),
            },
            None if SCHEMA[0].1.contains(&key.as_str()) => {}
            None => r.err(key, "unknown key"),
        }
    }

    // mode
    let info = r.choice("mode", "info", "PI, FI").unwrap_or(Info::Partial);
    let beliefs = r.choice("mode", "beliefs", "HM, HT").unwrap_or(Beliefs::Homogeneous);
    let competition = r.choice("mode", "competition", "C, NC").unwrap_or(Competition::On);
    let filter = r.choice("mode", "filter", "L, NL").unwrap_or(Filter::Linear);
    let solver_default = if filter == Filter::Linear { Solver::Both } else { Solver::Fbsde };
    let solver = r.choice("mode", "solver", "analytic, fbsde, both").unwrap_or(solver_default);
    let estimator_default = if filter == Filter::Linear { EstimatorKind::Kalman } else { EstimatorKind::Networks };
    let estimator = r.choice("mode", "estimator", "kalman, networks").unwrap_or(estimator_default);

    // market
    let preset = r.str("market", "preset").unwrap_or(preset_name(filter));
    let h0 = r.f64("market", "h0").unwrap_or(0.05);
    let mean = r.f64("market", "mean").unwrap_or(0.02);
    let mut market = match preset {
        "lin_base" => MarketSpec::linear_base(h0, mean),
        "nl_base" => MarketSpec::nonlinear_base(h0, mean),
        other => {
            r.err("market.preset", format!("unknown preset {other:?}, expected lin_base or nl_base"));
            MarketSpec::linear_base(h0, mean)
        }
    };
    if preset != preset_name(filter) && matches!(preset, "lin_base" | "nl_base") {
        let want = if filter == Filter::Linear { "linear filter needs a linear-Gaussian market" } else { "nonlinear filter needs the bounded nonlinear market" };
        r.err("market.preset", want);
    }
    if let Some(v) = r.f64("market", "mean_reversion") {
        market.dynamics.mean_reversion = v;
    }
    if let Some(v) = r.f64("market", "vol") {
        market.dynamics.vol = v;
    }
    if let Some(v) = r.f64("market", "stock_vol") {
        market.stock_vol = v;
    }
    if let Some(v) = r.f64("market", "correlation") {
        market.correlation = v;
    }
    if let Some(v) = r.f64("market", "horizon") {
        market.horizon = v;
    }
    if let Some(v) = r.usize("market", "steps") {
        market.steps = v;
    }
    if let Some(v) = r.f64("market", "s0") {
        market.s0 = v;
    }
    if let Some(v) = r.f64("market", "return_bound") {
        market.return_bound = Some(v);
    }
    let scale = r.f64("market", "scale");
    let lower = r.f64("market", "lower");
    let upper = r.f64("market", "upper");
    match (&mut market.return_map, &mut market.dynamics.kind) {
        (ReturnMap::SignedSqrt { scale: c }, HiddenKind::BoundedNl { lower: lo, upper: hi }) => {
            if let Some(v) = scale {
                *c = v;
            }
            if let Some(v) = lower {
                *lo = v;
            }
            if let Some(v) = upper {
                *hi = v;
            }
        }
        _ => {
            for (k, v) in [("scale", scale), ("lower", lower), ("upper", upper)] {
                if v.is_some() {
                    r.err(&format!("market.{k}"), "only applies to the nl_base market");
                }
            }
        }
    }
    if let Err(e) = market.validate() {
        r.err("market", e.to_string());
    }
    if let HiddenKind::BoundedNl { lower, upper } = market.dynamics.kind {
        let a0 = market.return_map.invert(h0);
        if !(lower..=upper).contains(&a0) {
            r.err("market.h0", format!("initial hidden state {a0} lies outside [{lower}, {upper}]"));
        }
    }

    // agents
    if let Some(p) = r.str("agents", "preset") {
        if p != "risk_base" {
            r.err("agents.preset", format!("unknown preset {p:?}, expected risk_base"));
        }
    }
    let risk = r.floats("agents", "risk_tolerance").unwrap_or_else(|| RISK_BASE.to_vec());
    let theta = r.floats("agents", "competition").unwrap_or_else(|| {
        if risk.len() == 3 {
            COMPETITION_BASE.to_vec()
        } else {
            vec![0.0; risk.len()]
        }
    });
    if risk.is_empty() {
        r.err("agents.risk_tolerance", "at least one agent is required");
    }
    if theta.len() != risk.len() {
        r.err("agents.competition", format!("expected {} weights, got {}", risk.len(), theta.len()));
    }
    for (i, d) in risk.iter().enumerate() {
        if !(d.is_finite() && *d > 0.0) {
            r.err(&format!("agents.risk_tolerance[{i}]"), "risk tolerance must be positive");
        }
    }
    for (i, t) in theta.iter().enumerate() {
        if !(0.0..=1.0).contains(t) {
            r.err(&format!("agents.competition[{i}]"), "competition weight out of [0,1]");
        }
    }

    // beliefs
    if let Some(p) = r.str("beliefs", "preset") {
        if p != "priors_ht" {
            r.err("beliefs.preset", format!("unknown preset {p:?}, expected priors_ht"));
        }
    }
    let spreads = r.floats("beliefs", "spread").unwrap_or_else(|| {
        if risk.len() == 3 {
            PRIORS_HT.to_vec()
        } else {
            vec![0.0; risk.len()]
        }
    });
    if spreads.len() != risk.len() {
        r.err("beliefs.spread", format!("expected {} spreads, got {}", risk.len(), spreads.len()));
    }
    for (i, s) in spreads.iter().enumerate() {
        if !(s.is_finite() && *s >= 0.0) {
            r.err(&format!("beliefs.spread[{i}]"), "spread must be non-negative");
        }
    }

    if solver.analytic() && filter == Filter::Nonlinear {
        r.err("mode.solver", "analytic requires linear filter");
    }
    if estimator == EstimatorKind::Kalman && filter == Filter::Nonlinear && info == Info::Partial {
        r.err("mode.estimator", "kalman estimates require linear filter");
    }

    // training
    let mut stage1 = Stage1Config::default();
    let mut stage2 = Stage2Config::default();
    macro_rules! read_into {
        ($cfg:expr, $sec:literal, usize: [$($u:ident),*], f64: [$($f:ident),*]) => {
            $(if let Some(v) = r.usize($sec, stringify!($u)) { $cfg.$u = v; })*
            $(if let Some(v) = r.f64($sec, stringify!($f)) { $cfg.$f = v; })*
        };
    }
    read_into!(stage1, "stage1", usize: [epochs, batch, ensemble, hidden, decay_every], f64: [lr, decay_factor]);
    read_into!(stage2, "stage2", usize: [epochs, batch, hidden, layers, decay_every], f64: [lr, decay_factor, x0]);
    if let Some(e) = r.choice::<InputEncoding>("stage1", "encoding", "log_price, raw_price") {
        stage1.encoding = e;
    }
    for (path, v) in [
        ("stage1.epochs", stage1.epochs),
        ("stage1.batch", stage1.batch),
        ("stage1.ensemble", stage1.ensemble),
        ("stage1.hidden", stage1.hidden),
        ("stage2.epochs", stage2.epochs),
        ("stage2.batch", stage2.batch),
        ("stage2.hidden", stage2.hidden),
        ("stage2.layers", stage2.layers),
    ] {
        if v == 0 {
            r.err(path, "must be at least 1");
        }
    }
    for (path, v) in [("stage1.lr", stage1.lr), ("stage2.lr", stage2.lr)] {
        if !(v.is_finite() && v > 0.0) {
            r.err(path, "learning rate must be positive");
        }
    }
    for (path, v) in [("stage1.decay_factor", stage1.decay_factor), ("stage2.decay_factor", stage2.decay_factor)] {
        if !(v > 0.0 && v <= 1.0) {
            r.err(path, "decay factor must lie in (0, 1]");
        }
    }

    // eval
    let mut eval = EvalConfig::default();
    if let Some(v) = r.usize("eval", "paths") {
        eval.paths = v;
    }
    if let Some(v) = r.usize("eval", "pool") {
        eval.pool = v;
    }
    if let Some(v) = r.usize("eval", "refine") {
        eval.refine = v;
    }
    if let Some(b) = r.choice("eval", "basis", "increments, terminal") {
        eval.basis = b;
    }
    for (path, v) in [("eval.paths", eval.paths), ("eval.pool", eval.pool), ("eval.refine", eval.refine)] {
        if v == 0 {
            r.err(path, "must be at least 1");
        }
    }

    // table
    let mut table = TableGrid::default();
    if let Some(v) = r.value("table", "panels") {
        match v.as_array() {
            Some(arr) => {
                table.panels = arr.iter().enumerate().filter_map(|(i, p)| r.pair(&format!("table.panels[{i}]"), p)).collect();
            }
            None => r.err("table.panels", "expected an array of [h0, mean] pairs"),
        }
    }
    if let Some(v) = r.value("table", "hetero_panel") {
        if let Some(p) = r.pair("table.hetero_panel", v) {
            table.hetero_panel = p;
        }
    }
    if let Some(v) = r.floats("table", "lrs") {
        if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            r.err("table.lrs", "learning rates must be positive");
        }
        table.lrs = v;
    }

    let seed = match r.value("", "seed") {
        Some(Value::Integer(i)) => *i as u64,
        Some(_) => {
            r.err("seed", "expected an integer");
            0
        }
        None => 0,
    };
    let out = r.str("", "out").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs/default"));
    let serial = r.bool("", "serial").unwrap_or(false);

    if !r.errors.is_empty() {
        return Err(ConfigError { errors: r.errors });
    }
    let agents = risk.iter().zip(&theta).map(|(&d, &t)| AgentProfile::new(d, t, PriorBelief::point(0.0))).collect();
    let mut cfg = ScenarioConfig {
        market,
        h0,
        agents,
        spreads,
        info,
        beliefs,
        competition,
        filter,
        solver,
        estimator,
        stage1,
        stage2,
        eval,
        table,
        seed,
        out,
        serial,
    };
    cfg.refresh_priors();
    Ok(cfg)
}

/// Re-checks invariants after programmatic edits (CLI overrides, table
/// cells).
pub fn recheck(cfg: &ScenarioConfig) -> Result<(), ConfigError> {
    validate_config(&cfg.to_toml()).map(|_| ())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let c = validate_config("").unwrap();
        assert_eq!(c.label(), "L-HM-C-PI");
        assert_eq!(c.market, MarketSpec::linear_base(0.05, 0.02));
        assert_eq!(c.agents.len(), 3);
        assert_eq!(c.solver, Solver::Both);
    }

    #[test]
    fn round_trips_through_toml() {
        let c = validate_config("[mode]\nfilter = \"NL\"\nbeliefs = \"HT\"\n[market]\nh0 = 0.1").unwrap();
        let back = validate_config(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn wrong_types_are_reported() {
        let e = validate_config("seed = \"x\"\n[market]\nh0 = \"a\"\n[stage2]\nepochs = -3").unwrap_err();
        assert_eq!(e.errors.len(), 3, "{e}");
    }
}
