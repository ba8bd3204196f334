use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sgsd_core::policy::ToyPolicy;
use sgsd_core::trainer::{RunConfig, FINAL_POLICY_FILE, METRICS_COLUMNS};

fn sgsd(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgsd"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn train_then_eval_reads_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "steps = 10\ncheckpoint_every = 5\n").unwrap();
    let out = dir.path().join("out");
    let o = sgsd(&out, &["--config", cfg.to_str().unwrap(), "--quiet", "train"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join(FINAL_POLICY_FILE).exists());
    assert!(out.join("checkpoints/step_10.json").exists());
    let header = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap(), METRICS_COLUMNS.join(","));
    ToyPolicy::load(&out.join(FINAL_POLICY_FILE)).unwrap();

    let o = sgsd(&out, &["--config", cfg.to_str().unwrap(), "eval", "--samples", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["samples"], 4);
    let rate = report["success_rate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&rate));

    let o = sgsd(&out, &["bank", "snapshot-list"]);
    assert!(o.status.success());
    let steps: Vec<u64> = stdout(&o).lines().map(|l| l.split('\t').next().unwrap().parse().unwrap()).collect();
    assert!(steps.first() == Some(&0) && steps.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn eval_without_a_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = sgsd(dir.path(), &["eval"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn bank_inspect_on_the_example_bank() {
    let dir = tempfile::tempdir().unwrap();
    let bank = repo("configs/example_bank.json");
    let o = sgsd(dir.path(), &["bank", "inspect", bank.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("1 general skill, 1 common mistake\n"), "{text}");
    assert!(text.contains("gen_001") && text.contains("err_001"));
    assert!(text.contains("static: 1 skills, 1 mistakes"));
}

#[test]
fn bank_merge_writes_under_out() {
    let dir = tempfile::tempdir().unwrap();
    let bank = repo("configs/example_bank.json");
    let o = sgsd(dir.path(), &["--quiet", "bank", "merge", bank.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let merged = sgsd_core::skillbank::SkillBank::load(&dir.path().join("bank/merged_bank.json")).unwrap();
    assert_eq!(merged.general_skills.len(), 1);
    assert_eq!(merged.metadata.layer_merge_counts.general_skills, vec![1, 1]);
}

#[test]
fn gate_curve_starts_at_the_left_end() {
    let dir = tempfile::tempdir().unwrap();
    let o = sgsd(dir.path(), &["gate-curve", "--svg"]);
    assert!(o.status.success());
    let csv = fs::read_to_string(dir.path().join("gate_curve.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("delta,loss,grad"));
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(first[0], -6.0);
    assert!(first[1] > 0.0 && first[2] < 0.0);
    assert_eq!(csv.lines().count(), 1 + 1201);
    assert!(fs::read_to_string(dir.path().join("gate_curve.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn gate_curve_rejects_bad_grids() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(sgsd(dir.path(), &["gate-curve", "--step", "0"]).status.code(), Some(2));
    assert_eq!(sgsd(dir.path(), &["gate-curve", "--tau", "-1"]).status.code(), Some(2));
}

#[test]
fn bad_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "tau_g = -2.0\n").unwrap();
    let o = sgsd(dir.path(), &["--config", cfg.to_str().unwrap(), "train"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tau_g"));

    fs::write(&cfg, "lerning_rate = 0.1\n").unwrap();
    let o = sgsd(dir.path(), &["--config", cfg.to_str().unwrap(), "train"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lerning_rate"));
    assert!(!dir.path().join("metrics.csv").exists());
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(sgsd(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(sgsd(dir.path(), &["train", "--steps", "3"]).status.code(), Some(2));
    assert_eq!(sgsd(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = sgsd(dir.path(), &["--seed", "7", "show-config"]);
    let cfg = RunConfig::from_toml(&stdout(&o)).unwrap();
    assert_eq!(cfg.seed, 7);
}

fn table_keys(doc: &str, heading: &str) -> Vec<String> {
    doc.split(heading)
        .nth(1)
        .unwrap()
        .lines()
        .skip_while(|l| !l.starts_with('|'))
        .take_while(|l| l.starts_with('|'))
        .filter_map(|l| l.split('|').nth(1))
        .filter_map(|c| c.trim().strip_prefix('`')?.strip_suffix('`').map(str::to_string))
        .collect()
}

#[test]
fn schema_doc_matches_the_code() {
    let doc = fs::read_to_string(repo("docs/schema.md")).unwrap();
    assert_eq!(table_keys(&doc, "## metrics.csv columns"), METRICS_COLUMNS);
    let keys: Vec<String> = RunConfig::default()
        .to_toml()
        .lines()
        .filter_map(|l| l.split_once(" = ").map(|(k, _)| k.to_string()))
        .collect();
    assert_eq!(table_keys(&doc, "## Configuration keys"), keys);
}

#[test]
fn shipped_default_config_is_the_default() {
    assert_eq!(RunConfig::load(&repo("configs/default.toml")).unwrap(), RunConfig::default());
}
