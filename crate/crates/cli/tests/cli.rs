use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pairmlm::record::Record;
use pairmlm::simulation::{generate_trial, replication_rng, ScenarioConfig};

fn pairmlm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pairmlm")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn trial_file(dir: &Path, covariate: bool) -> PathBuf {
    let cfg = ScenarioConfig { pi: 0.4, covariate, ..ScenarioConfig::default() };
    let ds = generate_trial(&cfg, &mut replication_rng(5, 0, 0));
    let path = dir.join(if covariate { "trial_x.csv" } else { "trial.csv" });
    ds.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
    path
}

fn stdout_record(out: &Output) -> Record {
    Record::parse(&String::from_utf8_lossy(&out.stdout)).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const HAND: &str = "pair_id,cluster_id,treated,y\n1,a,1,3\n1,a,1,5\n1,b,0,2\n1,b,0,2\n\
2,c,1,4\n2,c,1,5\n2,c,1,6\n2,d,0,1\n2,d,0,2\n2,d,0,3\n";

#[test]
fn fit_writes_record() {
    let dir = tempfile::tempdir().unwrap();
    let csv = trial_file(dir.path(), false);
    let out_path = dir.path().join("fit.txt");
    let out = pairmlm(&["fit", csv.to_str().unwrap(), "--model", "mlm2", "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let record = Record::parse(&std::fs::read_to_string(out_path).unwrap()).unwrap();
    for key in ["tau0", "se_tau", "sigma_tau_sq", "loglik"] {
        assert!(record.get_f64(key).unwrap().is_some(), "{key}");
    }
    assert_eq!(record.get("model"), Some("mlm2"));
}

#[test]
fn invalid_file_lists_violations() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write(dir.path(), "bad.csv", "pair_id,cluster_id,treated,y\n1,a,1,1\n1,b,1,2\n2,c,1,1\n");
    let out = pairmlm(&["fit", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("pair 1: two treated clusters"), "{err}");
    assert!(err.contains("pair 2: 1 cluster"), "{err}");
}

#[test]
fn covariate_model_needs_covariate() {
    let dir = tempfile::tempdir().unwrap();
    let csv = trial_file(dir.path(), false);
    let out = pairmlm(&["fit", csv.to_str().unwrap(), "--model", "mlm3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("covariate required"));
}

#[test]
fn missing_file_is_an_input_error() {
    let out = pairmlm(&["fit", "/nonexistent/trial.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("/nonexistent/trial.csv"));
}

#[test]
fn exhausted_budget_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let csv = trial_file(dir.path(), false);
    let out = pairmlm(&["fit", csv.to_str().unwrap(), "--max-evals", "10"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stdout_record(&out).get("converged"), Some("false"));
}

#[test]
fn estimate_hand_example() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write(dir.path(), "hand.csv", HAND);
    let out = pairmlm(&["estimate", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = stdout_record(&out);
    assert_eq!(r.get_f64("tau_hat").unwrap(), Some(2.6));
    assert_eq!(r.get_f64("se_upper").unwrap(), Some(1.0));
    assert_eq!(r.get_f64("pair.1.weight").unwrap(), Some(0.4));
}

#[test]
fn estimate_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let constant = write(dir.path(), "c.csv", "pair_id,cluster_id,treated,y\n1,a,1,5\n1,b,0,3\n2,c,0,7\n2,d,1,9\n");
    let r = stdout_record(&pairmlm(&["estimate", constant.to_str().unwrap()]));
    assert_eq!(r.get_f64("se_upper").unwrap(), Some(0.0));
    let single = write(dir.path(), "s.csv", "pair_id,cluster_id,treated,y\n1,a,1,5\n1,b,0,3\n");
    let out = pairmlm(&["estimate", single.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let r = stdout_record(&out);
    assert_eq!(r.get_f64("tau_hat").unwrap(), Some(2.0));
    assert_eq!(r.get("se_upper"), Some("NA"));
}

#[test]
fn lrt_with_and_without_covariate() {
    let dir = tempfile::tempdir().unwrap();
    let csv = trial_file(dir.path(), true);
    let r = stdout_record(&pairmlm(&["lrt", csv.to_str().unwrap()]));
    assert_eq!((r.get("null_model"), r.get("alt_model")), (Some("mlm1"), Some("mlm2")));
    let p = r.get_f64("p_naive").unwrap().unwrap();
    assert!((0.0..=1.0).contains(&p));
    let r = stdout_record(&pairmlm(&["lrt", csv.to_str().unwrap(), "--covariate"]));
    assert_eq!((r.get("null_model"), r.get("alt_model")), (Some("mlm1x"), Some("mlm3")));
}

const SMALL: &str = "K = 6\nmean_cluster_size = 10\nreplications = 3\npi_grid = [0.0, 0.3]\n";

#[test]
fn simulate_and_figure1_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let sim = dir.path().join("sim");
    let out = pairmlm(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "9", "--out", sim.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let summary = std::fs::read_to_string(sim.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2 * 3);
    assert!(sim.join("raw.csv").exists());

    let fig = dir.path().join("fig");
    let out = pairmlm(&["figure1", "--config", cfg.to_str().unwrap(), "--threads", "2", "--out", fig.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for name in ["panelA.csv", "panelB.csv", "panelA.svg", "panelB.svg", "panelA_raw.csv", "panelB_raw.csv"] {
        assert!(fig.join(name).exists(), "{name}");
    }
    let b = std::fs::read_to_string(fig.join("panelB.svg")).unwrap();
    assert!(!b.contains(">MLM1<") && b.contains(">MLM2<"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "K = 6\nnot_a_key = 1\n");
    let out = pairmlm(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("not_a_key"), "{}", stderr(&out));
}
