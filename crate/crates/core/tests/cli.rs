mod common;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kgbias::report::parse_csv;
use kgbias::synth::SynthSpec;

fn kgbias(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgbias"))
        .args(args)
        .output()
        .expect("spawn kgbias")
}

fn ok(args: &[&str]) -> String {
    let out = kgbias(args);
    assert!(
        out.status.success(),
        "kgbias {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Workspace {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    fn write(&self, name: &str, contents: &str) -> String {
        std::fs::write(self.path(name), contents).unwrap();
        self.s(name)
    }

    fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.path(name)).unwrap()
    }

    /// synth + ingest + train on a small planted graph.
    fn trained(&self, learning_rate: f64) {
        self.write("synth.kv", &SynthSpec::planted(150, 8, 2, 0.4, 3).to_key_values());
        ok(&["synth", "--spec", &self.s("synth.kv"), "--out", &self.s("graph.tsv")]);
        ok(&["ingest", "--triples", &self.s("graph.tsv"), "--out", &self.s("store")]);
        self.write(
            "train.kv",
            &format!(
                "model = transe\ndim = 8\nnegatives_per_positive = 20\nepochs = 3\nlearning_rate = {learning_rate}\nseed = 2\n"
            ),
        );
        self.write(
            "probe.kv",
            "sensitive_relation = hasAttribute\nattribute_a = group_a\nattribute_b = group_b\ntarget_relation = hasProfession\nalpha = 0.01\n",
        );
        ok(&["train", "--store", &self.s("store"), "--config", &self.s("train.kv"), "--out", &self.s("model.ckpt")]);
    }

    fn audit(&self, out: &str, extra: &[&str]) -> String {
        let mut args = vec![
            "audit",
            "--store",
            self.path("store").to_str().unwrap(),
            "--model",
            self.path("model.ckpt").to_str().unwrap(),
            "--probe",
            self.path("probe.kv").to_str().unwrap(),
        ]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
        args.push("--out".into());
        args.push(self.s(out));
        args.extend(extra.iter().map(|s| s.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(&refs)
    }
}

fn b_p_by_label(csv: &str) -> HashMap<String, f64> {
    parse_csv(csv).unwrap().into_iter().map(|r| (r.label, r.b_p)).collect()
}

#[test]
fn usage_errors_exit_with_1() {
    assert_eq!(kgbias(&[]).status.code(), Some(1));
    assert_eq!(kgbias(&["train"]).status.code(), Some(1));
    assert_eq!(kgbias(&["bogus"]).status.code(), Some(1));
    assert_eq!(kgbias(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_with_2() {
    let ws = Workspace::new();
    let bad = ws.write("bad.tsv", "a\tr\tb\nc\td\n");
    let out = kgbias(&["ingest", "--triples", &bad, "--out", &ws.s("store")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let empty = ws.write("empty.tsv", "");
    assert_eq!(kgbias(&["ingest", "--triples", &empty, "--out", &ws.s("s2")]).status.code(), Some(2));

    let missing = ws.s("nope.tsv");
    assert_eq!(kgbias(&["ingest", "--triples", &missing, "--out", &ws.s("s3")]).status.code(), Some(2));
}

#[test]
fn diverging_training_exits_with_3() {
    let ws = Workspace::new();
    ws.write("g.tsv", "a\tr\tb\nb\tr\tc\nc\tr\ta\n");
    ok(&["ingest", "--triples", &ws.s("g.tsv"), "--out", &ws.s("store")]);
    let cfg = ws.write(
        "cfg.kv",
        "dim = 4\nnegatives_per_positive = 2\nepochs = 50\nlearning_rate = 1e300\noptimizer = sgd\n",
    );
    let out = kgbias(&["train", "--store", &ws.s("store"), "--config", &cfg, "--out", &ws.s("m.ckpt")]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite loss"));
}

#[test]
fn train_prints_per_epoch_loss() {
    let ws = Workspace::new();
    ws.write("synth.kv", &SynthSpec::planted(20, 4, 1, 0.5, 1).to_key_values());
    ok(&["synth", "--spec", &ws.s("synth.kv"), "--out", &ws.s("g.tsv")]);
    ok(&["ingest", "--triples", &ws.s("g.tsv"), "--out", &ws.s("store")]);
    let cfg = ws.write("t.kv", "dim = 4\nnegatives_per_positive = 5\nepochs = 3\n");
    let stdout = ok(&["train", "--store", &ws.s("store"), "--config", &cfg, "--out", &ws.s("m.ckpt")]);
    let epochs: Vec<&str> = stdout.lines().filter(|l| l.starts_with("epoch ")).collect();
    assert_eq!(epochs.len(), 3);
    assert!(epochs[2].starts_with("epoch 3 mean_loss "));
}

#[test]
fn swapped_attributes_negate_the_report() {
    let ws = Workspace::new();
    ws.trained(0.1);
    ws.audit("ab.csv", &["--min-count", "0", "--top-k", "1000"]);
    ws.audit(
        "ba.csv",
        &["--min-count", "0", "--top-k", "1000", "--attribute-a", "group_b", "--attribute-b", "group_a"],
    );
    let ab = b_p_by_label(&ws.read("ab.csv"));
    let ba = b_p_by_label(&ws.read("ba.csv"));
    assert_eq!(ab.len(), 8);
    for (label, value) in &ab {
        let other = ba[label];
        assert!(common::scalar_relative_error(*value, -other) < 1e-12, "{label}: {value} vs {other}");
    }
}

#[test]
fn zero_rate_training_gives_reproducible_reports_and_audit_is_read_only() {
    let ws = Workspace::new();
    ws.trained(0.0);
    let before = common::sha256_file(&ws.path("model.ckpt"));
    ws.audit("r1.csv", &["--markdown", &ws.s("r1.md")]);
    ws.audit("r2.csv", &["--markdown", &ws.s("r2.md")]);
    assert_eq!(common::sha256_file(&ws.path("model.ckpt")), before);
    assert_eq!(ws.read("r1.csv"), ws.read("r2.csv"));
    assert_eq!(ws.read("r1.md"), ws.read("r2.md"));
}

#[test]
fn csv_and_markdown_list_the_same_rows() {
    let ws = Workspace::new();
    ws.trained(0.1);
    ws.audit("r.csv", &["--markdown", &ws.s("r.md"), "--min-count", "40", "--top-k", "5", "--title", "Planted"]);
    let csv_rows = parse_csv(&ws.read("r.csv")).unwrap();
    let md = ws.read("r.md");
    assert!(md.starts_with("## Planted\n\n| target | b_p | C_group_a | C_group_b |\n"));
    let md_labels: Vec<String> = md
        .lines()
        .skip(4)
        .map(|l| l.split('|').nth(1).unwrap().trim().to_string())
        .collect();
    let csv_labels: Vec<String> = csv_rows.iter().map(|r| r.label.clone()).collect();
    assert_eq!(md_labels, csv_labels);
    assert!(csv_rows.len() <= 5);
    assert!(csv_rows.iter().all(|r| r.count_a + r.count_b >= 40));
    assert!(csv_rows.windows(2).all(|w| w[0].b_p >= w[1].b_p));
}

#[test]
fn pairwise_mode_compares_two_entities() {
    let ws = Workspace::new();
    ws.trained(0.1);
    ws.audit(
        "self.csv",
        &["--pairwise", "human_group_a_00000,human_group_a_00000", "--min-count", "0"],
    );
    assert!(parse_csv(&ws.read("self.csv")).unwrap().iter().all(|r| r.b_p == 0.0));

    ws.audit(
        "pair.csv",
        &["--pairwise", "human_group_a_00000,human_group_b_00000", "--min-count", "0", "--top-k", "100"],
    );
    let rows = parse_csv(&ws.read("pair.csv")).unwrap();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().any(|r| r.b_p != 0.0));

    let out = kgbias(&[
        "audit", "--store", &ws.s("store"), "--model", &ws.s("model.ckpt"), "--probe", &ws.s("probe.kv"),
        "--out", &ws.s("x.csv"), "--pairwise", "nobody,human_group_a_00000",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn audit_rejects_a_model_for_another_store() {
    let ws = Workspace::new();
    ws.trained(0.1);
    ws.write("other.tsv", "x\tr\ty\n");
    ok(&["ingest", "--triples", &ws.s("other.tsv"), "--out", &ws.s("other")]);
    let out = kgbias(&[
        "audit", "--store", &ws.s("other"), "--model", &ws.s("model.ckpt"), "--probe", &ws.s("probe.kv"),
        "--out", &ws.s("x.csv"),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ingest_writes_vocabulary_dumps() {
    let ws = Workspace::new();
    ws.write("g.tsv", "q1\thasGender\tmale\nq1\thasProfession\tbanker\nq1\thasGender\tmale\n");
    let stdout = ok(&["ingest", "--triples", &ws.s("g.tsv"), "--out", &ws.s("store")]);
    assert!(stdout.contains("read 3 lines: 2 unique triples, 3 entities, 2 relations"));
    assert_eq!(ws.read("store/entities.csv"), "id,label\n0,q1\n1,male\n2,banker\n");
    assert_eq!(ws.read("store/relations.csv"), "id,label\n0,hasGender\n1,hasProfession\n");
    assert!(Path::new(&ws.s("store/triples.tsv")).exists());
}
