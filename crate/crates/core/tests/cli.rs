use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctr_nli::corpus::{corpus_paths, corpus_stats, load_instances};
use ctr_nli::eval::read_predictions;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn ctrnli(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctrnli"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) {
    let o = ctrnli(args, out);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Runs every stage on the mini corpus into `out`.
fn pipeline(out: &Path) {
    let corpus = fixtures().join("nli4ct_mini");
    let inv = fixtures().join("inventory.csv");
    let pairs = out.join("pairs.jsonl");
    let acr = out.join("acronym_pairs.jsonl");
    let num = out.join("numeric_pairs.jsonl");
    ok(&["ingest", "--corpus", s(&corpus)], out);
    ok(&["stats", "--corpus", s(&corpus)], out);
    ok(&["perturb-acronym", "--pairs", s(&pairs), "--inventory", s(&inv), "--review"], out);
    ok(&["perturb-numeric", "--pairs", s(&pairs)], out);
    let all = [s(&pairs), s(&acr), s(&num)];
    let with = |head: &[&str]| -> Vec<String> {
        head.iter().chain(["--pairs"].iter()).chain(all.iter()).map(|x| x.to_string()).collect()
    };
    let run = |v: Vec<String>| ok(&v.iter().map(String::as_str).collect::<Vec<_>>(), out);
    run(with(&["train", "--epochs", "2", "--dim", "4096"]));
    run(with(&["predict", "--model", s(&out.join("model.ckpt")), "--runs", "3"]));
    run(with(&["analyze", "--dynamics", s(&out.join("dynamics.jsonl")), "--bins", "10"]));
    let mut ev = with(&["evaluate", "--predictions", s(&out.join("predictions.json"))]);
    ev.extend(["--links".into(), s(&out.join("acronym_links.jsonl")).into(), s(&out.join("numeric_links.jsonl")).into()]);
    run(ev);
    ok(&["render-prompts", "--pairs", s(&pairs), "--with-answer"], out);
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn no_arguments_prints_usage_and_exits_two() {
    let o = Command::new(env!("CARGO_BIN_EXE_ctrnli")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn usage_and_input_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    assert_eq!(ctrnli(&["frobnicate"], out).status.code(), Some(2));
    let o = ctrnli(&["ingest", "--corpus", "/no/such/corpus"], out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/no/such/corpus"));
    assert_eq!(ctrnli(&["predict", "--model", "/no/model.ckpt", "--pairs", "x.jsonl"], out).status.code(), Some(2));

    let cfg = out.join("bad.json");
    fs::write(&cfg, r#"{"train": {"epochs": 0}}"#).unwrap();
    let corpus = fixtures().join("nli4ct_mini");
    assert_eq!(ctrnli(&["stats", "--corpus", s(&corpus), "--config", s(&cfg)], out).status.code(), Some(2));
    fs::write(&cfg, r#"{"unknown_key": 1}"#).unwrap();
    assert_eq!(ctrnli(&["stats", "--corpus", s(&corpus), "--config", s(&cfg)], out).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_one_and_name_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("pairs.jsonl");
    fs::write(&bad, "{not json}\n").unwrap();
    let o = ctrnli(&["render-prompts", "--pairs", s(&bad)], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pairs.jsonl"));
}

#[test]
fn stats_matches_direct_computation() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = fixtures().join("nli4ct_mini");
    let o = ctrnli(&["stats", "--corpus", s(&corpus)], tmp.path());
    assert!(o.status.success());
    let (inst, _) = corpus_paths(&corpus);
    let expected = corpus_stats(&load_instances(&inst).unwrap()).to_csv();
    assert_eq!(fs::read_to_string(tmp.path().join("stats.csv")).unwrap(), expected);
    assert_eq!(String::from_utf8(o.stdout).unwrap(), expected);
}

#[test]
fn config_file_values_apply_and_flags_override_them() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = fixtures().join("nli4ct_mini");
    let cfg = tmp.path().join("cfg.json");
    let cfg_out = tmp.path().join("from_config");
    fs::write(
        &cfg,
        serde_json::json!({"corpus": corpus, "out_dir": cfg_out, "token_budget": 40, "overflow": "remove"}).to_string(),
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ctrnli"))
        .args(["ingest", "--config", s(&cfg)])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let small = fs::read_to_string(cfg_out.join("pairs.jsonl")).unwrap().lines().count();

    let flag_out = tmp.path().join("from_flags");
    let o = ctrnli(&["ingest", "--config", s(&cfg), "--budget", "100000"], &flag_out);
    assert!(o.status.success());
    let full = fs::read_to_string(flag_out.join("pairs.jsonl")).unwrap().lines().count();
    assert!(small < full, "budget 40 kept {small}, unlimited kept {full}");
}

#[test]
fn pipeline_is_idempotent_and_leaves_inputs_untouched() {
    let fixture_before = snapshot(&fixtures().join("nli4ct_mini"));
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    pipeline(&a);
    pipeline(&b);
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    assert_eq!(sa.len(), sb.len());
    for ((na, ca), (nb, cb)) in sa.iter().zip(&sb) {
        assert_eq!(na, nb);
        assert!(ca == cb, "{na} differs between runs");
    }
    assert_eq!(snapshot(&fixtures().join("nli4ct_mini")), fixture_before);

    let preds = read_predictions(&a.join("predictions.json")).unwrap();
    assert_eq!(preds.len(), 200);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(a.join("report.json")).unwrap()).unwrap();
    assert!(report["macro_f1"].as_f64().is_some());
    assert!(a.join("prompts").is_dir());
}

#[test]
fn even_vote_counts_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = tmp.path().join("model.ckpt");
    fs::write(&ckpt, b"placeholder").unwrap();
    let o = ctrnli(&["predict", "--model", s(&ckpt), "--pairs", s(&ckpt), "--runs", "4"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}
