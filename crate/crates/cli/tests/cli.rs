use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hnncb_cli::plot::final_decade_slope;
use hnncb_cli::{cmd_run, AgentConfig, ExperimentConfig, Manifest};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hnncb"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run_bin(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn hnncb")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const SMALL: &str = r#"
seeds = [3]

[env]
kind = "cloud"
trials = 150
actions = 2

[[agents]]
kind = "hnn"
nu = 1.5

[[agents]]
kind = "nan"
rho_grid = [0.5, 0.25]

[[agents]]
kind = "exp3"

[audit]
sigma = [0.5]
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn packaged_configs_round_trip() {
    for name in ["two_balls.toml", "two_balls_r1.toml", "boundary_cover.toml", "quick.toml"] {
        let cfg = ExperimentConfig::load(&configs().join(name)).unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg, "{name}");
    }
    let small = ExperimentConfig::from_toml(SMALL).unwrap();
    assert_eq!(ExperimentConfig::from_toml(&small.to_toml()).unwrap(), small);
}

#[test]
fn unknown_keys_are_rejected() {
    for (needle, replacement) in [
        ("seeds = [3]", "seeds = [3]\nsneds = [4]"),
        ("actions = 2", "actions = 2\nradius = 1.0"),
        ("nu = 1.5", "nu = 1.5\nmu = 2.0"),
        ("sigma = [0.5]", "sigma = [0.5]\nsigmas = [0.5]"),
    ] {
        let text = SMALL.replace(needle, replacement);
        assert!(ExperimentConfig::from_toml(&text).is_err(), "accepted {replacement:?}");
    }
    assert!(ExperimentConfig::from_toml(&SMALL.replace("\"hnn\"", "\"hnm\"")).is_err());
}

#[test]
fn invalid_values_are_rejected() {
    assert!(ExperimentConfig::from_toml(&SMALL.replace("seeds = [3]", "seeds = []")).is_err());
    assert!(ExperimentConfig::from_toml(&SMALL.replace("nu = 1.5", "nu = 0.5")).is_err());
    assert!(ExperimentConfig::from_toml(&SMALL.replace("[0.5, 0.25]", "[0.25, 0.5]")).is_err());
    assert!(ExperimentConfig::from_toml(&SMALL.replace("sigma = [0.5]", "sigma = [1.5]")).is_err());
}

#[test]
fn empty_agent_list_writes_only_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.split("[[agents]]").next().unwrap();
    let cfg = write_config(dir.path(), text);
    let out = dir.path().join("out");
    let res = run_bin(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let entries: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(entries, vec!["manifest.json"]);
    assert!(Manifest::load(&out).unwrap().artifacts.is_empty());
}

#[test]
fn repeated_runs_have_identical_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
    let a = cmd_run(&cfg, &dir.path().join("a")).unwrap();
    let mut parallel = cfg.clone();
    parallel.parallel = 3;
    let b = cmd_run(&parallel, &dir.path().join("b")).unwrap();
    assert_eq!(a.artifacts, b.artifacts);
    // hnn, exp3 and one nan run per radius, each as CSV plus JSON.
    assert_eq!(a.artifacts.len(), 2 * (2 + 2));
}

#[test]
fn two_balls_config_yields_expected_file_count() {
    let cfg = ExperimentConfig::load(&configs().join("two_balls.toml")).unwrap();
    let per_seed: usize = cfg
        .agents
        .iter()
        .map(|a: &AgentConfig| if a.nan_mode().is_some() { a.rho_grid().len() } else { 1 })
        .sum();
    assert_eq!(per_seed, 7 + 3);
    let mut one = cfg.clone();
    one.seeds = vec![0];
    if let hnncb_cli::EnvConfig::TwoBalls { per_ball, .. } = &mut one.env {
        *per_ball = 64;
    }
    let dir = tempfile::tempdir().unwrap();
    let m = cmd_run(&one, dir.path()).unwrap();
    assert_eq!(m.artifacts.len(), 2 * per_seed);
}

#[test]
fn seed_flag_overrides_the_seed_list() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let res = run_bin(&["run", "--config", cfg.to_str().unwrap(), "--seed", "9", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 0);
    let m = Manifest::load(&out).unwrap();
    assert_eq!(m.config.seeds, vec![9]);
    assert!(m.artifacts.iter().all(|a| a.path.contains("_seed9.")));
}

#[test]
fn missing_config_exits_with_one() {
    let res = run_bin(&["run", "--config", "/nonexistent/config.toml"]);
    assert_eq!(code(&res), 1);
    assert!(String::from_utf8_lossy(&res.stderr).contains("error"));
    assert_eq!(code(&run_bin(&["frobnicate"])), 1);
}

fn small_runs(dir: &Path, text: &str) -> PathBuf {
    let cfg = write_config(dir, text);
    let out = dir.join("out");
    let res = run_bin(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    out
}

#[test]
fn audit_passes_on_untampered_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_runs(dir.path(), SMALL);
    let res = run_bin(&["audit", out.to_str().unwrap(), "--sigma", "0.25", "0.75"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("audit/hnn-cb_seed3_sigma0.25.json")).unwrap()).unwrap();
    assert!(report["lemmas"].as_array().unwrap().iter().all(|l| l["pass"] == true));
    assert!(out.join("audit/hnn-cb_seed3_sigma0.75.json").exists());
    assert!(!out.join("audit/hnn-cb_seed3_sigma0.5.json").exists());
}

#[test]
fn audit_fails_with_witness_on_corrupted_parents() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_runs(dir.path(), SMALL);
    let csv_path = out.join("runs/hnn-cb_seed3.csv");
    let text = fs::read_to_string(&csv_path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let last = lines.len() - 1;
    let mut cols: Vec<String> = lines[last].split(',').map(str::to_string).collect();
    assert_ne!(cols[4], "1");
    cols[4] = "1".into();
    lines[last] = cols.join(",");
    fs::write(&csv_path, lines.join("\n") + "\n").unwrap();
    let res = run_bin(&["audit", out.to_str().unwrap()]);
    assert_eq!(code(&res), 2);
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("FAILED") && err.contains("t="), "{err}");
}

#[test]
fn margin_empty_ignores_a_missing_margin_file() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("sigma = [0.5]", "sigma = [0.5]\nmargin = \"no-such-file.txt\"");
    let out = small_runs(dir.path(), &text);
    assert_eq!(code(&run_bin(&["audit", out.to_str().unwrap()])), 1);
    let res = run_bin(&["audit", out.to_str().unwrap(), "--margin", "empty"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("audit/hnn-cb_seed3_sigma0.5.json")).unwrap()).unwrap();
    assert!(report["margin"].as_array().unwrap().is_empty());
}

#[test]
fn margin_file_is_used() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_runs(dir.path(), SMALL);
    let margin = dir.path().join("margin.txt");
    fs::write(&margin, "# boundary trials\n2, 5\n7\n").unwrap();
    let res = run_bin(&["audit", out.to_str().unwrap(), "--margin", margin.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("audit/hnn-cb_seed3_sigma0.5.json")).unwrap()).unwrap();
    assert_eq!(report["margin"], serde_json::json!([2, 5, 7]));
}

#[test]
fn boundary_cover_audit_writes_cover_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::load(&configs().join("boundary_cover.toml")).unwrap();
    cfg.seeds = vec![1];
    let out = dir.path().join("out");
    cmd_run(&cfg, &out).unwrap();
    let res = run_bin(&["audit", out.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let cover: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("audit/hnn-cb_seed1_sigma0.5_cover.json")).unwrap())
            .unwrap();
    assert!(cover["lemmas"].as_array().unwrap().iter().any(|l| l["lemma_id"] == "corlem1"));
}

fn read_series(csv: &Path) -> Vec<(String, usize, f64)> {
    fs::read_to_string(csv)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            (c[0].to_string(), c[1].parse().unwrap(), c[2].parse().unwrap())
        })
        .collect()
}

/// Independent least squares of ln y on ln t over the last decade of t.
fn ols_slope(points: &[(usize, f64)]) -> f64 {
    let t_max = points.iter().map(|p| p.0).max().unwrap() as f64;
    let xy: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.0 as f64 >= t_max / 10.0 && p.1 > 0.0)
        .map(|p| ((p.0 as f64).ln(), p.1.ln()))
        .collect();
    let n = xy.len() as f64;
    let (sx, sy) = xy.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (sxx, sxy) = xy.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 * p.0, a.1 + p.0 * p.1));
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

#[test]
fn plot_single_run_has_one_curve() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("[[agents]]\nkind = \"nan\"\nrho_grid = [0.5, 0.25]\n\n[[agents]]\nkind = \"exp3\"\n", "");
    let out = small_runs(dir.path(), &text);
    let plots = dir.path().join("plots");
    let res = run_bin(&["plot", out.to_str().unwrap(), "--out", plots.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let svg = fs::read_to_string(plots.join("regret.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 1);
    assert!(svg.contains("hnn-cb (slope"));
}

#[test]
fn plot_two_runs_in_label_order_with_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("[[agents]]\nkind = \"nan\"\nrho_grid = [0.5, 0.25]\n\n", "");
    let out = small_runs(dir.path(), &text);
    let plots = dir.path().join("plots");
    let res = run_bin(&["plot", out.to_str().unwrap(), "--out", plots.to_str().unwrap(), "--log"]);
    assert_eq!(code(&res), 0);
    let svg = fs::read_to_string(plots.join("regret.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    let exp3 = svg.find("exp3 (slope").unwrap();
    let hnn = svg.find("hnn-cb (slope").unwrap();
    assert!(exp3 < hnn);
    assert!(svg.find("#1f77b4").unwrap() < svg.find("#d62728").unwrap());

    let rows = read_series(&plots.join("regret.csv"));
    for label in ["exp3", "hnn-cb"] {
        let pts: Vec<(usize, f64)> = rows.iter().filter(|r| r.0 == label).map(|r| (r.1, r.2)).collect();
        assert_eq!(pts.first().unwrap().0, 1);
        assert_eq!(pts.last().unwrap().0, 150);
        let want = ols_slope(&pts);
        let got = final_decade_slope(&pts).unwrap();
        assert!((want - got).abs() < 1e-9, "{label}: {want} vs {got}");
        assert!(svg.contains(&format!("{label} (slope {got:.3})")));
    }

    let again = dir.path().join("plots2");
    run_bin(&["plot", out.to_str().unwrap(), "--out", again.to_str().unwrap(), "--log"]);
    assert_eq!(fs::read(plots.join("regret.svg")).unwrap(), fs::read(again.join("regret.svg")).unwrap());
}

#[test]
fn plot_without_runs_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_runs(dir.path(), SMALL.split("[[agents]]").next().unwrap());
    let res = run_bin(&["plot", out.to_str().unwrap()]);
    assert_eq!(code(&res), 1);
    assert!(String::from_utf8_lossy(&res.stderr).contains("no runs with regret data"));
}

#[test]
fn generated_instance_round_trips_through_csv_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), SMALL);
    let inst = dir.path().join("inst");
    let res = run_bin(&["gen", "--config", cfg_path.to_str().unwrap(), "--seed", "3", "--out", inst.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(code(&run_bin(&["validate", inst.join("metric.csv").to_str().unwrap()])), 0);

    let original = ExperimentConfig::from_toml(SMALL).unwrap();
    let mut from_csv = original.clone();
    from_csv.env = hnncb_cli::EnvConfig::Csv { metric: inst.join("metric.csv"), losses: inst.join("losses.csv") };
    let a = cmd_run(&original, &dir.path().join("a")).unwrap();
    let b = cmd_run(&from_csv, &dir.path().join("b")).unwrap();
    assert_eq!(a.artifacts, b.artifacts);
}

#[test]
fn validate_reports_axiom_violations() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "0,1,0.1\n1,0,0.1\n0.1,0.1,0\n").unwrap();
    let res = run_bin(&["validate", bad.to_str().unwrap()]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("Triangle"));
    let good = dir.path().join("good.csv");
    fs::write(&good, "0,1,0.5\n1,0,0.5\n0.5,0.5,0\n").unwrap();
    assert_eq!(code(&run_bin(&["validate", good.to_str().unwrap()])), 0);
}
