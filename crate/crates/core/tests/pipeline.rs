use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sqldrill::corpus::QueryGroup;
use sqldrill::evaluator::EvalReport;
use sqldrill::fixtures;
use sqldrill::inference::{read_predictions, write_predictions};

fn sqldrill(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqldrill"))
        .args(args)
        .env_remove("SQLDRILL_LOG")
        .output()
        .expect("spawn sqldrill")
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: String,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let out = sqldrill(&["init-fixture", root.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let config = root.join("config.json").to_str().unwrap().to_string();
        Fixture { _dir: dir, root, config }
    }

    fn run(&self, cmd: &str, extra: &[&str]) -> Output {
        let mut args = vec![cmd, "--config", self.config.as_str()];
        args.extend_from_slice(extra);
        sqldrill(&args)
    }

    fn ok(&self, cmd: &str, extra: &[&str]) -> String {
        let out = self.run(cmd, extra);
        assert!(
            out.status.success(),
            "{cmd} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn out(&self, name: &str) -> PathBuf {
        self.root.join("out").join(name)
    }

    fn edit_config(&self, f: impl FnOnce(&mut Value)) {
        let mut v: Value = serde_json::from_str(&fs::read_to_string(&self.config).unwrap()).unwrap();
        f(&mut v);
        fs::write(&self.config, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    }
}

fn manifest(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn partition_writes_counts_and_cross_tab() {
    let fx = Fixture::new();
    let stdout = fx.ok("partition", &[]);
    assert!(stdout.contains("Multi-set: 6"), "{stdout}");
    let stats = manifest(&fx.out("partition.json"));
    assert_eq!(stats["total"], 24);
    assert_eq!(stats["counts"]["multi_set"], 6);
    assert!(stats["multi_label"]["(Multi-set, Filtering,)"]["multi_set"].as_u64().unwrap() >= 1);
    let m = manifest(&fx.out("manifests/partition.json"));
    assert_eq!(m["command"], "partition");
    assert!(m["corpus"]["train"].as_str().unwrap().len() == 64);
}

#[test]
fn empty_corpus_is_a_corpus_error() {
    let fx = Fixture::new();
    fs::write(fx.root.join("train.json"), "[]").unwrap();
    let out = fx.run("partition", &[]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn config_errors_exit_with_two() {
    let fx = Fixture::new();
    assert_eq!(fx.run("infer", &["--strategy", "mixed", "--shots", "3"]).status.code(), Some(2));
    assert_eq!(sqldrill(&["partition"]).status.code(), Some(2));
    fx.edit_config(|v| v["provider"]["kind"] = "nonsense".into());
    assert_eq!(fx.run("partition", &[]).status.code(), Some(2));
}

#[test]
fn missing_api_key_is_a_provider_error() {
    let fx = Fixture::new();
    fx.edit_config(|v| {
        v["provider"]["kind"] = "openai".into();
        v["provider"]["api_key_env"] = "SQLDRILL_SURELY_UNSET_KEY".into();
    });
    let out = fx.run("build-bank", &[]);
    assert_eq!(out.status.code(), Some(4));
    let text = fs::read_to_string(&fx.config).unwrap();
    assert!(!text.contains("sk-"));
}

#[test]
fn full_pipeline_with_ablation_flags() {
    let fx = Fixture::new();
    fx.ok("build-bank", &[]);
    for g in QueryGroup::ALL {
        assert!(fx.out(&format!("banks/{}.jsonl", g.as_str())).exists());
    }
    let logs: Value = serde_json::from_str(&fs::read_to_string(fx.out("build_log.json")).unwrap()).unwrap();
    assert_eq!(logs.as_array().unwrap().len(), 4);

    fx.ok("infer", &[]);
    let report = fx.ok("evaluate", &[]);
    assert!(report.contains("Strategy: mixed k=4"));
    assert!(report.contains("EX: 100.0"));
    assert_eq!(fx.ok("report", &[]), report);

    fx.ok("infer", &["--no-qgp", "--strategy", "syntactic", "--shots", "2"]);
    let preds = read_predictions(&fx.out("predictions.jsonl")).unwrap();
    assert!(preds.iter().all(|p| p.flags.iter().any(|f| f == "no_qgp")));
    let report = fx.ok("evaluate", &["--no-qgp", "--strategy", "syntactic", "--shots", "2"]);
    assert!(report.contains("Strategy: syntactic k=2, w/o QGP"), "{report}");

    // a second infer over a warm cache answers from it
    fx.ok("infer", &[]);
    let m = manifest(&fx.out("manifests/infer.json"));
    assert_eq!(m["gateway"]["completion_requests"], 12);
    assert_eq!(m["gateway"]["provider_completion_calls"], 0);
}

#[test]
fn constant_mock_builds_nothing() {
    let fx = Fixture::new();
    fx.edit_config(|v| v["provider"]["kind"] = "mock-constant".into());
    let out = fx.run("build-bank", &[]);
    assert_eq!(out.status.code(), Some(1));
    let logs: Value = serde_json::from_str(&fs::read_to_string(fx.out("build_log.json")).unwrap()).unwrap();
    assert!(logs.as_array().unwrap().iter().all(|l| l["kept"] == 0));
}

#[test]
fn three_quarters_correct_and_missing_predictions() {
    let fx = Fixture::new();
    fx.ok("build-bank", &[]);
    fx.ok("infer", &[]);
    let path = fx.out("predictions.jsonl");
    let mut preds = read_predictions(&path).unwrap();
    for p in preds.iter_mut().take(3) {
        p.sql = "SELECT 999".into();
    }
    write_predictions(&path, &preds).unwrap();
    fx.ok("evaluate", &[]);
    let report: EvalReport = serde_json::from_str(&fs::read_to_string(fx.out("report.json")).unwrap()).unwrap();
    assert_eq!(report.n, fixtures::dev_examples().len());
    assert!((report.ex_percent - 75.0).abs() < 1e-9);

    preds.pop();
    write_predictions(&path, &preds).unwrap();
    let out = fx.run("evaluate", &[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("dev_011"));
}
