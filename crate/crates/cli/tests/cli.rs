use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use stylecrawl_core::dataset::save_corpus;
use stylecrawl_core::model::{EventType, FeatureValue};
use stylecrawl_core::synth::rule_corpus;

fn stylecrawl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stylecrawl"))
        .args(args)
        .env_remove("STYLECRAWL_CDP_ENDPOINT")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = stylecrawl(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixtures(dir: &Path) -> PathBuf {
    let d = dir.join("apps");
    ok(&["fixture", "--out", s(&d)]);
    d
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Every file under `dir`, relative path and contents, sorted.
fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn unknown_strategy_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let apps = fixtures(tmp.path());
    let backend = format!("sim:{}", apps.join("two_state_anchor.json").display());
    let out = stylecrawl(&["crawl", "--backend", &backend, "--strategy", "BFS", "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = stylecrawl(&["compare", "--backend", &backend, "--strategies", "DEF,nope", "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failure_classes_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let apps = fixtures(tmp.path());
    let backend = format!("sim:{}", apps.join("two_state_anchor.json").display());
    let o = tmp.path().join("o");
    // A ranking strategy without a predictor.
    let out = stylecrawl(&["crawl", "--backend", &backend, "--strategy", "STYLEX_CLK", "--out", s(&o)]);
    assert_eq!(out.status.code(), Some(2));
    let out = stylecrawl(&["crawl", "--backend", &backend, "--budget-actions", "0", "--budget-seconds", "0", "--out", s(&o)]);
    assert_eq!(out.status.code(), Some(2));
    let out = stylecrawl(&["crawl", "--out", s(&o)]);
    assert_eq!(out.status.code(), Some(2), "no backend at all");
    // Nothing listens on this port.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let out = stylecrawl(&["crawl", "--backend", &format!("cdp:ws://127.0.0.1:{port}/devtools/page/x"), "--url", "http://x/", "--out", s(&o)]);
    assert_eq!(out.status.code(), Some(3));
    let missing = format!("sim:{}", tmp.path().join("missing.json").display());
    let out = stylecrawl(&["crawl", "--backend", &missing, "--out", s(&o)]);
    assert_eq!(out.status.code(), Some(4));
    fs::write(tmp.path().join("bad.jsonl"), "not a corpus\n").unwrap();
    let out = stylecrawl(&["train", "--corpus", s(&tmp.path().join("bad.jsonl")), "--out", s(&o)]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn crawl_writes_report_graph_and_series() {
    let tmp = tempfile::tempdir().unwrap();
    let apps = fixtures(tmp.path());
    let o = tmp.path().join("run");
    let backend = format!("sim:{}", apps.join("two_state_anchor.json").display());
    ok(&["crawl", "--backend", &backend, "--strategy", "DEF", "--seed", "3", "--out", s(&o)]);
    for f in ["config.json", "report.json", "series.csv", "graph.dot", "graph.json", "actions.json", "coverage.svg"] {
        assert!(o.join(f).exists(), "{f} missing");
    }
    let report = json(o.join("report.json"));
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["states"], 2);
    assert_eq!(report["covered_weight"], 40);
    assert_eq!(report["coverage_ratio"], 1.0);
    let csv = fs::read_to_string(o.join("series.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("action,elapsed_ms,covered_weight,ratio"));
    assert_eq!(csv.lines().nth(1), Some("0,0,10,0.25"));
    let config = json(o.join("config.json"));
    assert_eq!(config["run"]["command"], "crawl");
    assert_eq!(config["run"]["seed"], 3);
}

#[test]
fn compare_finds_every_class_in_m_actions_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let apps = fixtures(tmp.path());
    ok(&["fixture", "--classes", "5", "--clones", "10", "--seed", "7", "--out", s(&apps)]);
    // The generated app equals the bundled one.
    assert_eq!(
        fs::read(apps.join("equivalence_5x10.json")).unwrap(),
        fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/equivalence_5x10.json")).unwrap()
    );
    let backend = format!("sim:{}", apps.join("equivalence_5x10.json").display());
    let a = tmp.path().join("a");
    let args = ["compare", "--backend", &backend, "--strategies", "STYLEX_CLK,RND", "--repeats", "1", "--oracle", "--budget-actions", "100", "--seed", "11"];
    let stdout = ok(&[&args[..], &["--out", s(&a)]].concat());
    assert!(stdout.contains("| STYLEX_CLK |"));
    let summary = fs::read_to_string(a.join("summary.csv")).unwrap();
    let clk: Vec<&str> = summary.lines().find(|l| l.starts_with("STYLEX_CLK,")).unwrap().split(',').collect();
    assert_eq!(clk[4], "1.000000", "STYLEX_CLK covers the maximal set");
    assert_eq!(clk[7], "5.00", "one action per class");
    let rnd: Vec<&str> = summary.lines().find(|l| l.starts_with("RND,")).unwrap().split(',').collect();
    assert!(rnd[7].is_empty() || rnd[7].parse::<f64>().unwrap() >= 5.0);
    for f in ["compare_actions.csv", "compare_time.csv", "summary.md", "coverage_actions.svg", "coverage_time.svg", "runs/STYLEX_CLK-0/report.json", "runs/RND-0/graph.dot"] {
        assert!(a.join(f).exists(), "{f} missing");
    }

    let b = tmp.path().join("b");
    ok(&[&args[..], &["--out", s(&b)]].concat());
    assert_eq!(tree(&a), tree(&b), "reruns differ");

    let c = tmp.path().join("c");
    ok(&["rerun", s(&a.join("config.json")), "--out", s(&c)]);
    assert_eq!(tree(&a), tree(&c), "rerun from the echoed config differs");
}

#[test]
fn parallel_workers_do_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let apps = fixtures(tmp.path());
    let backend = format!("sim:{}", apps.join("deep_menu_3.json").display());
    let base = ["compare", "--backend", &backend, "--strategies", "DEF,RND", "--repeats", "3", "--budget-actions", "12"];
    let one = tmp.path().join("one");
    let four = tmp.path().join("four");
    ok(&[&base[..], &["--workers", "1", "--out", s(&one)]].concat());
    ok(&[&base[..], &["--workers", "4", "--out", s(&four)]].concat());
    let strip = |t: Vec<(PathBuf, Vec<u8>)>| -> Vec<(PathBuf, Vec<u8>)> {
        t.into_iter().filter(|(p, _)| p != Path::new("config.json")).collect()
    };
    assert_eq!(strip(tree(&one)), strip(tree(&four)));
}

#[test]
fn collect_train_eval_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus_path = tmp.path().join("corpus.jsonl");
    let corpus = rule_corpus(1500, 20, EventType::Click, 5, |f| {
        f.css_value("cursor") == Some(&FeatureValue::Cat("pointer".into()))
    });
    save_corpus(&corpus, &corpus_path).unwrap();
    let models = tmp.path().join("models");
    ok(&["train", "--corpus", s(&corpus_path), "--event", "click", "--boosting-rounds", "10", "--test-fraction", "0.2", "--seed", "1", "--out", s(&models)]);
    assert!(models.join("click.model.json").exists());
    let importance = fs::read_to_string(models.join("click.importance.csv")).unwrap();
    assert!(importance.lines().nth(1).unwrap().starts_with("cursor,"));

    let eval_dir = tmp.path().join("eval");
    let table = ok(&["eval", "--models", s(&models), "--corpus", s(&models.join("test.jsonl")), "--out", s(&eval_dir)]);
    assert!(table.contains("| click | actionable |"));
    let report = json(eval_dir.join("eval.json"));
    assert!(report["click"]["actionable"]["f_measure"].as_f64().unwrap() > 0.99);

    // Training twice with the same seed gives the same model file.
    let again = tmp.path().join("again");
    ok(&["train", "--corpus", s(&corpus_path), "--event", "click", "--test-fraction", "0.2", "--seed", "1", "--out", s(&again)]);
    assert_eq!(fs::read(models.join("click.model.json")).unwrap(), fs::read(again.join("click.model.json")).unwrap());

    let out = stylecrawl(&["train", "--corpus", s(&corpus_path), "--event", "keydown", "--out", s(&again)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sim_collection_labels_every_state() {
    let tmp = tempfile::tempdir().unwrap();
    let apps = fixtures(tmp.path());
    let o = tmp.path().join("c");
    ok(&["collect", "--backend", &format!("sim:{}", apps.join("deep_menu_3.json").display()), "--out", s(&o)]);
    let summary = json(o.join("collect.json"));
    assert!(summary["sites"].as_u64().unwrap() >= 4);
    assert!(summary["positives"]["click"].as_u64().unwrap() > 0);
    assert!(o.join("corpus.jsonl").exists());
}
