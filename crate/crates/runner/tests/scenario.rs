use std::fs;
use std::path::Path;

use relwealth::config::{validate_config, ScenarioConfig};
use relwealth::table::{cells, run_table, Suite};
use relwealth::{run_scenario, ScenarioReport};

fn config(text: &str, out: &Path) -> ScenarioConfig {
    let mut c = validate_config(text).unwrap();
    c.out = out.to_path_buf();
    c.serial = true;
    c
}

const SMALL: &str = "seed = 5\n[stage2]\nepochs = 20\nbatch = 32\n[eval]\npaths = 8\n";

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn minimal_config_is_echoed_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let c = config("[mode]\nsolver = \"analytic\"\n", dir.path());
    run_scenario(&c).unwrap();
    let m = manifest(dir.path());
    let echoed = validate_config(m["config_toml"].as_str().unwrap()).unwrap();
    assert_eq!(echoed, c);
    assert_eq!(m["config"]["stage2"]["epochs"], c.stage2.epochs);
    assert!(m["solvers"]["analytic"]["initial_positions"].as_array().unwrap().len() == 3);
    for f in m["files"].as_array().unwrap() {
        assert!(dir.path().join(f.as_str().unwrap()).exists());
    }
}

#[test]
fn both_solvers_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_scenario(&config(SMALL, dir.path())).unwrap();
    let m = manifest(dir.path());
    for s in ["analytic", "fbsde"] {
        assert_eq!(m["solvers"][s]["initial_positions"].as_array().unwrap().len(), 3);
    }
    assert!(r.analytic.is_some() && r.fbsde.is_some());
    assert_eq!(r.primary().solver, "fbsde");
}

#[test]
fn no_competition_gives_zero_matrix() {
    let dir = tempfile::tempdir().unwrap();
    run_scenario(&config("[mode]\ncompetition = \"NC\"\nsolver = \"analytic\"\n", dir.path())).unwrap();
    let m = manifest(dir.path());
    for row in m["competition_matrix"].as_array().unwrap() {
        assert!(row.as_array().unwrap().iter().all(|v| v.as_f64() == Some(0.0)));
    }
    assert_eq!(m["competition_norm"].as_f64(), Some(0.0));
    assert_eq!(m["config"]["agents"][1]["competition"].as_f64(), Some(0.5));
}

fn assert_nl_support(dir: &Path) {
    let mut rdr = csv::Reader::from_path(dir.join("paths.csv")).unwrap();
    let hidden = rdr.headers().unwrap().iter().position(|h| h == "hidden").unwrap();
    let price = rdr.headers().unwrap().iter().position(|h| h == "price").unwrap();
    let mut rows = 0;
    for r in rdr.records() {
        let r = r.unwrap();
        let a: f64 = r[hidden].parse().unwrap();
        assert!((-0.3..=0.3).contains(&a), "{a}");
        assert!(r[price].parse::<f64>().unwrap() > 0.0);
        rows += 1;
    }
    assert_eq!(rows, 8 * 51);
}

#[test]
fn nonlinear_heterogeneous_run_emits_everything() {
    let dir = tempfile::tempdir().unwrap();
    let text = "seed = 5\n[market]\npreset = \"nl_base\"\n[mode]\nfilter = \"NL\"\nbeliefs = \"HT\"\n\
                [stage1]\nepochs = 10\nensemble = 2\nhidden = 8\n[stage2]\nepochs = 20\nbatch = 32\n[eval]\npaths = 8\npool = 128\n";
    let r: ScenarioReport = run_scenario(&config(text, dir.path())).unwrap();
    assert_eq!(r.label, "NL-HT-C-PI");
    for f in ["paths.csv", "strategies_fbsde.csv", "stats_fbsde.csv", "stage1_log.csv", "stage2_log.csv", "manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert_nl_support(dir.path());
    // Three distinct priors, one ensemble each.
    assert_eq!(r.stage1_logs.len(), 3);
}

#[test]
fn same_seed_gives_identical_csvs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_scenario(&config(SMALL, a.path())).unwrap();
    run_scenario(&config(SMALL, b.path())).unwrap();
    let (ca, cb) = (csvs(a.path()), csvs(b.path()));
    assert!(ca.len() >= 5);
    assert_eq!(ca, cb);

    let c = tempfile::tempdir().unwrap();
    run_scenario(&config(&SMALL.replace("seed = 5", "seed = 6"), c.path())).unwrap();
    assert_ne!(csvs(c.path()), ca);
}

#[test]
fn manifest_reproduces_the_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_scenario(&config(SMALL, a.path())).unwrap();
    let text = manifest(a.path())["config_toml"].as_str().unwrap().to_string();
    let mut again = validate_config(&text).unwrap();
    again.out = b.path().to_path_buf();
    run_scenario(&again).unwrap();
    assert_eq!(csvs(a.path()), csvs(b.path()));
}

#[test]
fn empty_grids_give_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(&format!("{SMALL}[table]\npanels = []\nlrs = []\n"), dir.path());
    for suite in [Suite::PdeVsFbsde, Suite::LinStats, Suite::LrSweep] {
        assert!(cells(suite, &c).is_empty());
        let r = run_table(suite, &c).unwrap();
        assert!(r.rows.is_empty() && r.failures.is_empty());
        let text = fs::read_to_string(&r.path).unwrap();
        assert_eq!(text.lines().count(), 1, "{text}");
    }
    let text = fs::read_to_string(dir.path().join("pde_vs_fbsde.csv")).unwrap();
    assert_eq!(text.trim(), "h0,mean,method,pi_1,pi_2,pi_3,v_1,v_2,v_3");
}

#[test]
fn pde_vs_fbsde_has_six_rows() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(SMALL, dir.path());
    let r = run_table(Suite::PdeVsFbsde, &c).unwrap();
    assert_eq!(r.rows.len(), 6);
    let methods: Vec<&str> = r.rows.iter().map(|row| row[2].as_str()).collect();
    assert_eq!(methods, ["PDE", "FBSDE", "PDE", "FBSDE", "PDE", "FBSDE"]);
    assert_eq!(r.rows[0][0], "0.02");
    assert!(dir.path().join("pde_vs_fbsde").read_dir().unwrap().count() == 3);
}

#[test]
fn lr_sweep_reports_failed_cells() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(&format!("{SMALL}[table]\nlrs = [0.001, 1e6]\n"), dir.path());
    let r = run_table(Suite::LrSweep, &c).unwrap();
    assert_eq!(r.failures.len(), 1);
    assert!(r.failures[0].0.starts_with("lr1000000"));
    assert_eq!(r.rows.len(), 20);
}
