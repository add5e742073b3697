use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vulndistill::training::Checkpoint;

const TINY: &str = r#"{
  "corpus.n": 120,
  "prepare.vocab_size": 200,
  "prepare.seq_len": 24,
  "teacher_a.embed_dim": 8,
  "teacher_a.filters_per_width": 4,
  "teacher_b.embed_dim": 8,
  "teacher_b.hidden_dim": 8,
  "student.embed_dim": 8,
  "student.layers": 1,
  "student.heads": 2,
  "student.ffn_dim": 16,
  "train.epochs": 2,
  "train.batch_size": 16,
  "train.lr": 0.01
}"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_vulndistill"));
    c.env_remove("SAFE_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|f| f.is_file())
        .map(|f| (f.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&f).unwrap()))
        .collect()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("tiny.json");
        std::fs::write(&config, TINY).unwrap();
        Self { _dir: dir, root, config }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Corpus and prepared data under `corpus/` and `prep/`.
    fn prepared(&self) -> PathBuf {
        let (corpus, prep) = (self.path("corpus"), self.path("prep"));
        ok(&["gen-corpus", "--config", p(&self.config), "--seed", "3", "--out", p(&corpus)]);
        ok(&["prepare", "--config", p(&self.config), "--data", p(&corpus), "--out", p(&prep)]);
        prep
    }

    fn teachers(&self, prep: &Path) -> (PathBuf, PathBuf) {
        let out = self.path("models");
        ok(&["train-teacher-a", "--config", p(&self.config), "--data", p(prep), "--out", p(&out)]);
        ok(&["train-teacher-b", "--config", p(&self.config), "--data", p(prep), "--out", p(&out)]);
        (out.join("teacher_a.ckpt"), out.join("teacher_b.ckpt"))
    }
}

#[test]
fn prepare_is_deterministic_and_writes_all_artifacts() {
    let f = Fixture::new();
    let prep = f.prepared();
    let again = f.path("prep2");
    ok(&["prepare", "--config", p(&f.config), "--data", p(&f.path("corpus")), "--out", p(&again)]);
    let (a, b) = (files(&prep), files(&again));
    assert_eq!(a, b);
    for split in ["train", "val", "test"] {
        for kind in ["tokens.jsonl", "structure.jsonl", "graphs.txt"] {
            assert!(a.contains_key(&format!("{split}.{kind}")), "{split}.{kind}");
        }
    }
    assert!(a.contains_key("code_vocab.json") && a.contains_key("structure_vocab.json"));
    let meta = String::from_utf8(a["prepare.json"].clone()).unwrap();
    assert!(meta.contains("\"train.epochs\": \"2\""), "{meta}");
}

#[test]
fn malformed_line_reports_line_number() {
    let f = Fixture::new();
    let mut lines: Vec<String> = (1..=9).map(|i| format!(r#"{{"id": "s{i}", "code": "int f(){{return {i};}}", "label": 0}}"#)).collect();
    lines[6] = r#"{"id": "s7", "code": "int g(){return 0;}"}"#.into();
    let data = f.path("bad.jsonl");
    std::fs::write(&data, lines.join("\n")).unwrap();
    let out = run(&["prepare", "--data", p(&data), "--out", p(&f.path("prep"))]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 7") && err.contains("label"), "{err}");
}

#[test]
fn exit_codes() {
    let f = Fixture::new();
    assert_eq!(run(&["prepare", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["gen-corpus", "--ablation", "wA"]).status.code(), Some(2));
    let cfg = f.path("bad.json");
    std::fs::write(&cfg, r#"{"train.epoch": 2}"#).unwrap();
    let out = run(&["gen-corpus", "--config", p(&cfg), "--out", p(&f.path("c"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.epoch"));
    let out = run(&["train-teacher-a", "--data", p(&f.path("nowhere")), "--out", p(&f.path("m"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("prepare"));
}

#[test]
fn seed_env_fallback() {
    let f = Fixture::new();
    let gen = |out: &str, seed_flag: Option<&str>, env: Option<&str>| {
        let dir = f.path(out);
        let mut c = bin();
        c.args(["gen-corpus", "--config", p(&f.config), "--out", p(&dir)]);
        if let Some(s) = seed_flag {
            c.args(["--seed", s]);
        }
        if let Some(e) = env {
            c.env("SAFE_SEED", e);
        }
        assert!(c.output().unwrap().status.success());
        files(&dir)
    };
    let by_flag = gen("a", Some("5"), None);
    assert_eq!(gen("b", None, Some("5")), by_flag);
    assert_eq!(gen("c", Some("5"), Some("6")), by_flag);
    assert_ne!(gen("d", None, None), by_flag);
}

#[test]
fn student_ablation_contract() {
    let f = Fixture::new();
    let prep = f.prepared();
    let out = f.path("s");
    ok(&["train-student", "--config", p(&f.config), "--data", p(&prep), "--out", p(&out), "--ablation", "w/oAB"]);
    assert!(out.join("student.ckpt").exists());

    let (ta, _) = f.teachers(&prep);
    let res = run(&[
        "train-student", "--config", p(&f.config), "--data", p(&prep), "--out", p(&out), "--ablation", "wAB",
        "--teacher-a", p(&ta),
    ]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("--teacher-b"));

    let res = run(&[
        "train-student", "--config", p(&f.config), "--data", p(&prep), "--out", p(&out), "--teacher-a", p(&ta),
        "--teacher-b", p(&ta),
    ]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("teacher_b"));
}

#[test]
fn full_flow_with_grid_evaluate_and_predict() {
    let f = Fixture::new();
    let prep = f.prepared();
    let (ta, tb) = f.teachers(&prep);
    let out = f.path("grid");
    let log = ok(&[
        "train-student", "--config", p(&f.config), "--data", p(&prep), "--out", p(&out), "--teacher-a", p(&ta),
        "--teacher-b", p(&tb), "--grid", "--epochs", "1", "--format", "md",
    ]);
    assert!(log.contains("epoch 1/1"), "{log}");
    let ckpts: Vec<_> = files(&out).into_keys().filter(|k| k.ends_with(".ckpt")).collect();
    assert_eq!(ckpts.len(), 9);
    let table = std::fs::read_to_string(out.join("grid.md")).unwrap();
    assert_eq!(table.lines().count(), 2 + 9);
    assert!(table.starts_with("| Dataset | Split | Model | Recall | Precision | F1-measure |"));

    let ckpt_path = out.join("student-g0.3-k0.7.ckpt");
    let ckpt = Checkpoint::load(&ckpt_path).unwrap();
    assert_eq!(ckpt.provenance["distill.gamma"], "0.3");
    assert!(ckpt.provenance.contains_key("teacher_b.sha256"));
    let reports = f.path("reports");
    ok(&[
        "evaluate", "--data", p(&prep), "--checkpoint", p(&ckpt_path), "--split", "val", "--out", p(&reports),
    ]);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(reports.join("student-g0.3-k0.7.val.json")).unwrap()).unwrap();
    let f1 = json["f1"].as_f64().unwrap();
    assert!((f1 - ckpt.metrics.unwrap().f1).abs() <= 1e-9);
    let preds = std::fs::read_to_string(reports.join("student-g0.3-k0.7.val.predictions.jsonl")).unwrap();
    assert_eq!(preds.lines().count() as u64, json["tp"].as_u64().unwrap() + json["fp"].as_u64().unwrap() + json["fn"].as_u64().unwrap() + json["tn"].as_u64().unwrap());

    let res = run(&["evaluate", "--data", p(&prep), "--checkpoint", p(&ckpt_path), "--split", "dev"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("train, val, test"));

    let other = f.path("prep-other");
    ok(&["prepare", "--config", p(&f.config), "--vocab-size", "150", "--data", p(&f.path("corpus")), "--out", p(&other)]);
    let res = run(&["evaluate", "--data", p(&other), "--checkpoint", p(&ckpt_path)]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("vocabulary hash mismatch"));

    let input = f.path("in.jsonl");
    std::fs::write(&input, "{\"id\": \"x\", \"code\": \"int f(int *a){ return a[8]; }\"}\n{\"id\": 2, \"code\": \"\"}\n").unwrap();
    let printed = ok(&["predict", "--checkpoint", p(&ckpt_path), "--prepared", p(&prep), "--data", p(&input)]);
    let rows: Vec<serde_json::Value> = printed.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1]["id"], "2");
    let s = rows[0]["p_safe"].as_f64().unwrap() + rows[0]["p_vulnerable"].as_f64().unwrap();
    assert!((s - 1.0).abs() < 1e-12);
}
