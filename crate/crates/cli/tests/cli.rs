use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dsswave_cli::config::ScenarioConfig;

fn dsswave(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsswave"))
        .args(args)
        .arg("--out")
        .arg(dir.join("out"))
        .env_remove("DSSWAVE_THREADS")
        .output()
        .expect("spawn dsswave")
}

fn with_config(dir: &Path, toml: &str, args: &[&str]) -> Output {
    let path = dir.join("scenario.toml");
    fs::write(&path, toml).unwrap();
    let mut all = vec!["--config", path.to_str().unwrap()];
    all.extend_from_slice(args);
    dsswave(&all, dir)
}

fn csv_column(text: &str, name: &str) -> Vec<f64> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(k).unwrap().parse().unwrap()).collect()
}

#[test]
fn extremal_parameters_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = with_config(dir.path(), "[spacetime]\nm = 1.0\nlambda = 0.1111111111111111\n", &["horizons"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("extremal"));
}

#[test]
fn unknown_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = with_config(dir.path(), "[spacetime]\nm = 1.0\nlambda = 0.02\nlamda = 0.02\n", &["horizons"]);
    assert_eq!(out.status.code(), Some(2));
    let out = with_config(dir.path(), "[evolution]\ncfl_ratio = 0.5\n", &["horizons"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cfl_above_one_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = with_config(dir.path(), "[evolution]\ncfl = 1.5\n", &["evolve"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_threads_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dsswave(&["horizons", "--threads", "0"], dir.path()).status.code(), Some(2));
}

#[test]
fn de_sitter_horizon_is_at_unit_radius() {
    let dir = tempfile::tempdir().unwrap();
    let out = with_config(dir.path(), "[spacetime]\nm = 0.0\nlambda = 3.0\nde_sitter = true\n", &["horizons"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/horizons.csv")).unwrap();
    assert!((csv_column(&csv, "r_ds")[0] - 1.0).abs() < 1e-14);
    assert_eq!(csv_column(&csv, "r_bh")[0], 0.0);
}

#[test]
fn small_lambda_approaches_schwarzschild() {
    let dir = tempfile::tempdir().unwrap();
    let out = with_config(dir.path(), "[spacetime]\nm = 1.0\nlambda = 1e-6\n", &["horizons"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("out/horizons.csv")).unwrap();
    assert!((csv_column(&csv, "r_bh")[0] - 2.0).abs() < 1e-5);
    assert!(csv.ends_with('\n') && !csv.contains('\r'));
}

const SHORT_RUN: &str = "[grid]\nkind = \"uniform\"\nr_star = [-40.0, 40.0]\n\n[evolution]\nt_end = 30.0\nprobes = [-5.0, 0.0, 5.0]\nsnapshot_every = 10.0\n\n[initial]\nchannels = [0, 1]\n";

#[test]
fn zero_data_give_zero_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let toml = format!("{SHORT_RUN}\n[initial.profile]\namplitude = 0.0\n");
    let out = with_config(dir.path(), &toml, &["evolve"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for l in [0, 1] {
        let csv = fs::read_to_string(dir.path().join(format!("out/evolve_l{l}_probes.csv"))).unwrap();
        let phi = csv_column(&csv, "phi");
        assert!(!phi.is_empty());
        assert!(phi.iter().all(|&x| x == 0.0));
        let snaps = fs::read_to_string(dir.path().join(format!("out/evolve_l{l}_snapshots.csv"))).unwrap();
        assert!(csv_column(&snaps, "phi").iter().all(|&x| x == 0.0));
    }
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(with_config(a.path(), SHORT_RUN, &["evolve", "--threads", "2"]).status.code(), Some(0));
    assert_eq!(with_config(b.path(), SHORT_RUN, &["evolve", "--threads", "3"]).status.code(), Some(0));
    for name in ["evolve_l0_probes.csv", "evolve_l1_probes.csv", "evolve_l0_diagnostics.csv", "evolve_l1_snapshots.csv", "config.json"] {
        let x = fs::read(a.path().join("out").join(name)).unwrap();
        let y = fs::read(b.path().join("out").join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn ledger_is_append_only_and_echoes_tolerances() {
    let dir = tempfile::tempdir().unwrap();
    for _ in 0..2 {
        assert_eq!(dsswave(&["horizons"], dir.path()).status.code(), Some(0));
    }
    let ledger = fs::read_to_string(dir.path().join("out/ledger.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = ledger.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["config_hash"], lines[1]["config_hash"]);
    assert_eq!(lines[0]["input_hash"], lines[1]["input_hash"]);
    let cfg = &lines[0]["config"];
    assert_eq!(cfg["fit"]["stability_tol"], 1e-3);
    assert_eq!(cfg["acceptance"]["geometry"]["root_sum_tol"], 1e-12);
    assert_eq!(cfg["mellin"]["reconstruction"]["contour_tol"], 1e-6);
    let files = lines[0]["files"].as_array().unwrap();
    assert!(files.iter().any(|f| f["path"] == "horizons.csv"));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dsswave(&["horizons", "--seed", "7"], dir.path()).status.code(), Some(0));
    let cfg: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("out/config.json")).unwrap()).unwrap();
    assert_eq!(cfg["seed"], 7);
}

#[test]
fn charts_verify_passes_by_default() {
    let dir = tempfile::tempdir().unwrap();
    let out = dsswave(&["charts-verify"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("out/charts_report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
}

#[test]
fn misset_lambda_fails_charts_verify() {
    let dir = tempfile::tempdir().unwrap();
    let out = with_config(dir.path(), "[charts]\nlambda_bh = 0.25\n", &["charts-verify"]);
    assert_eq!(out.status.code(), Some(3));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FAIL criterion 2"), "{stdout}");
    let ledger = fs::read_to_string(dir.path().join("out/ledger.jsonl")).unwrap();
    let entry: serde_json::Value = serde_json::from_str(ledger.lines().last().unwrap()).unwrap();
    assert_eq!(entry["exit_code"], 3);
    assert_eq!(entry["checks"]["total"], 2);
    assert_eq!(entry["checks"]["failed"], 1);
}

#[test]
fn contour_on_the_wrong_side_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = with_config(dir.path(), "[mellin.reconstruction]\nheights = [0.04, -0.06]\n", &["mellin-verify"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn symmetric_box_gives_mirror_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let toml = "[[resonances.boxes]]\nell = 1\nre = [-0.4, 0.4]\nim = [-0.05, 0.15]\n\n[strip]\nells = [1]\nheights = [-0.5]\ncount = 2\n";
    let out = with_config(dir.path(), toml, &["resonances"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/resonances.csv")).unwrap();
    let (re, im) = (csv_column(&csv, "re"), csv_column(&csv, "im"));
    assert_eq!(re.len(), 3);
    for (a, b) in re.iter().zip(&im) {
        assert!(re.iter().zip(&im).any(|(c, d)| (a + c).abs() < 1e-10 && (b - d).abs() < 1e-10));
    }
    assert!(dir.path().join("out/strip_l1.csv").exists());
}

#[test]
fn de_sitter_resonances_are_purely_imaginary() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/de_sitter.toml")).unwrap();
    let out = with_config(dir.path(), &text, &["resonances"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/resonances.csv")).unwrap();
    let (re, im) = (csv_column(&csv, "re"), csv_column(&csv, "im"));
    assert_eq!(im.len(), 5);
    assert!(re.iter().all(|x| x.abs() < 1e-8));
    for (got, k) in im.iter().zip([1.0, 3.0, 4.0, 5.0, 6.0]) {
        assert!((got - k).abs() < 1e-4 * k, "{got} vs {k}");
    }
}

#[test]
fn shipped_scenarios_parse_and_validate() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let (cfg, _) = ScenarioConfig::load(&path).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 3);
}

#[test]
fn default_scenario_matches_built_in_acceptance_setup() {
    let (cfg, _) = ScenarioConfig::load(Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/default.toml"))).unwrap();
    let d = ScenarioConfig::default();
    assert_eq!(cfg.spacetime, d.spacetime);
    assert_eq!(cfg.acceptance, d.acceptance);
    assert_eq!(cfg.grid, d.grid);
}
