use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sesim::bundle::load_bundle;
use sesim::config::RunConfig;
use sesim::formats::{checkpoint_bytes, read_history, LABEL_HEADER};
use sesim_core::trainer::{init_model, TrainingData};
use sesim_core::JumpLabelSet;

const SMALL: &str = r#"
epochs = 3
hidden = 8
embed = 4
primary_hidden = 6
contribution_hidden = 5
batch_size = 32
val_batch_size = 32
pretext_batch_size = 32
pair_targets = 20
pair_neighbors = 4

[synth]
counts = [40, 30, 30]
"#;

fn sesim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sesim")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = sesim(args);
    assert_eq!(o.status.code(), Some(0), "{args:?}\n{}", String::from_utf8_lossy(&o.stderr));
    o
}

fn code(args: &[&str]) -> (i32, String) {
    let o = sesim(args);
    (o.status.code().unwrap(), String::from_utf8_lossy(&o.stderr).into_owned())
}

struct Setup {
    dir: tempfile::TempDir,
}

impl Setup {
    fn new() -> Self {
        let s = Setup { dir: tempfile::tempdir().unwrap() };
        fs::write(s.p("run.toml"), SMALL).unwrap();
        ok(&["synth", "--config", s.s("run.toml"), "--seed", "3", "--out", s.s("g")]);
        s
    }

    fn p(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> &'static str {
        Box::leak(self.p(name).to_str().unwrap().to_owned().into_boxed_str())
    }
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn synth_is_deterministic_and_validates() {
    let s = Setup::new();
    ok(&["synth", "--config", s.s("run.toml"), "--seed", "3", "--out", s.s("g2")]);
    for f in ["node_types.tsv", "edges.tsv", "features.tsv", "labels.tsv", "metapaths.json"] {
        assert_eq!(read(&s.p("g").join(f)), read(&s.p("g2").join(f)), "{f}");
    }
    let (c, err) = code(&["synth", "--intra", "1.5", "--out", s.s("bad")]);
    assert_eq!(c, 2);
    assert!(err.contains("intra"), "{err}");
    assert_eq!(code(&["synth"]).0, 2);
    assert_eq!(code(&["synth", "--bogus"]).0, 2);
}

#[test]
fn config_is_printed_and_unknown_keys_rejected() {
    let s = Setup::new();
    let o = ok(&["labels", "--config", s.s("run.toml"), "--bundle", s.s("g"), "--out", s.s("l.tsv"), "--jmax", "3"]);
    let err = String::from_utf8_lossy(&o.stderr);
    let start = err.find("seed = ").expect("config printed");
    let printed = RunConfig::from_toml(&err[start..]).unwrap();
    assert_eq!(printed.j_max, 3);
    assert_eq!(printed.hidden, 8);
    assert_eq!(printed.lr, 0.001);

    fs::write(s.p("typo.toml"), "epoch = 3\n").unwrap();
    let (c, err) = code(&["labels", "--config", s.s("typo.toml"), "--bundle", s.s("g"), "--out", s.s("x.tsv")]);
    assert_eq!(c, 2);
    assert!(err.contains("epoch"), "{err}");
}

#[test]
fn labels_counts_match_file_and_are_deterministic() {
    let s = Setup::new();
    let args = ["labels", "--config", s.s("run.toml"), "--bundle", s.s("g"), "--out", s.s("l.tsv")];
    let o = ok(&args);
    let text = String::from_utf8(read(&s.p("l.tsv"))).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(LABEL_HEADER));
    let body: Vec<&str> = lines.collect();
    let stdout = String::from_utf8(o.stdout).unwrap();
    let mut total = 0;
    for line in stdout.lines() {
        let (head, count) = line.split_once(": ").unwrap();
        let id = head.strip_prefix("metapath ").unwrap();
        let n: usize = count.strip_suffix(" labels").unwrap().parse().unwrap();
        assert_eq!(body.iter().filter(|l| l.split('\t').nth(2) == Some(id)).count(), n, "{line}");
        total += n;
    }
    assert_eq!(total, body.len());
    assert!(total > 0);
    let first = read(&s.p("l.tsv"));
    ok(&args);
    assert_eq!(read(&s.p("l.tsv")), first);
}

#[test]
fn labels_on_edgeless_graph_writes_header_only() {
    let s = Setup::new();
    let g = s.p("g");
    let edges = g.join("edges.tsv");
    fs::write(&edges, "# no edges\n").unwrap();
    let (c, err) = code(&["labels", "--config", s.s("run.toml"), "--bundle", s.s("g"), "--out", s.s("e.tsv")]);
    if c == 0 {
        assert_eq!(read(&s.p("e.tsv")), format!("{LABEL_HEADER}\n").into_bytes());
    } else {
        panic!("exit {c}: {err}");
    }
}

#[test]
fn malformed_bundle_exits_3() {
    let s = Setup::new();
    fs::write(s.p("g").join("edges.tsv"), "0\t0\t1\t0\t999\n").unwrap();
    let (c, err) = code(&["labels", "--bundle", s.s("g"), "--out", s.s("l.tsv")]);
    assert_eq!(c, 3);
    assert!(err.contains("edges.tsv:1"), "{err}");
}

#[test]
fn train_zero_epochs_saves_the_initialization() {
    let s = Setup::new();
    ok(&["train", "--config", s.s("run.toml"), "--bundle", s.s("g"), "--epochs", "0", "--out", s.s("t")]);
    let cfg = RunConfig::from_toml(SMALL).unwrap().train_config();
    let (b, _) = load_bundle(&s.p("g")).unwrap();
    let data = TrainingData::prepare(&b.graph, &b.metapaths, Some(&JumpLabelSet::new(vec![], 4).unwrap()), &cfg).unwrap();
    let init = init_model(&data, &cfg).unwrap();
    assert_eq!(read(&s.p("t").join("model.ckpt")), checkpoint_bytes(&init));
    assert!(read_history(&s.p("t").join("history.csv")).unwrap().records.is_empty());
}

#[test]
fn train_and_eval_are_deterministic() {
    let s = Setup::new();
    ok(&["labels", "--config", s.s("run.toml"), "--bundle", s.s("g"), "--out", s.s("l.tsv")]);
    for run in ["a", "b"] {
        ok(&["train", "--config", s.s("run.toml"), "--bundle", s.s("g"), "--labels", s.s("l.tsv"), "--out", s.s(run)]);
        let ckpt = format!("{run}/model.ckpt");
        let report = format!("{run}.json");
        ok(&["eval", "--config", s.s("run.toml"), "--bundle", s.s("g"), "--checkpoint", s.s(&ckpt), "--out", s.s(&report)]);
    }
    for f in ["a/model.ckpt", "a/history.csv"] {
        assert_eq!(read(&s.p(f)), read(&s.p(&f.replacen('a', "b", 1))), "{f}");
    }
    assert_eq!(read(&s.p("a.json")), read(&s.p("b.json")));
    let h = read_history(&s.p("a/history.csv")).unwrap();
    assert_eq!(h.records.len(), 3);
    assert_eq!(h.metapaths, vec![0, 1]);

    let report: serde_json::Value = serde_json::from_slice(&read(&s.p("a.json"))).unwrap();
    let keys: Vec<&String> = report.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["auc_mean", "auc_peak"]);
    assert_eq!(report["auc_peak"].as_f64().unwrap(), (h.peak_metric().unwrap() * 1e6).round() / 1e6);

    ok(&["train", "--config", s.s("run.toml"), "--bundle", s.s("g"), "--labels", s.s("l.tsv"), "--seed", "4", "--out", s.s("c")]);
    assert_ne!(read(&s.p("a/history.csv")), read(&s.p("c/history.csv")));
}

#[test]
fn vanilla_history_has_no_pretext_loss() {
    let s = Setup::new();
    ok(&["train", "--config", s.s("run.toml"), "--bundle", s.s("g"), "--vanilla", "--out", s.s("v")]);
    let h = read_history(&s.p("v").join("history.csv")).unwrap();
    assert!(h.records.iter().all(|r| r.loss_pre_total == 0.0));
}

#[test]
fn node_task_report_has_f1_keys() {
    let s = Setup::new();
    ok(&["train", "--config", s.s("run.toml"), "--bundle", s.s("g"), "--task", "node", "--out", s.s("n")]);
    ok(&["eval", "--config", s.s("run.toml"), "--bundle", s.s("g"), "--task", "node", "--checkpoint", s.s("n/model.ckpt"), "--out", s.s("n.json")]);
    let report: serde_json::Value = serde_json::from_slice(&read(&s.p("n.json"))).unwrap();
    let obj = report.as_object().unwrap();
    assert_eq!(obj.keys().collect::<Vec<_>>(), ["macro_f1", "micro_f1"]);
    for v in obj.values() {
        assert!((0.0..=1.0).contains(&v.as_f64().unwrap()));
    }
    fs::remove_file(s.p("g").join("labels.tsv")).unwrap();
    let (c, _) = code(&["eval", "--config", s.s("run.toml"), "--bundle", s.s("g"), "--task", "node", "--checkpoint", s.s("n/model.ckpt"), "--out", s.s("x.json")]);
    assert_ne!(c, 0);
}

#[test]
fn eval_artifact_failures_exit_5() {
    let s = Setup::new();
    let (c, _) = code(&["eval", "--bundle", s.s("g"), "--checkpoint", s.s("missing.ckpt"), "--out", s.s("r.json")]);
    assert_eq!(c, 5);
    ok(&["train", "--config", s.s("run.toml"), "--bundle", s.s("g"), "--epochs", "1", "--out", s.s("t")]);
    let (c, err) = code(&["eval", "--bundle", s.s("g"), "--checkpoint", s.s("t/model.ckpt"), "--out", s.s("r.json")]);
    assert_eq!(c, 5, "default dims must not fit the small checkpoint: {err}");
    assert!(!s.p("r.json").exists());
}

#[test]
fn numeric_failure_exits_4_with_epoch_context() {
    let s = Setup::new();
    let feats = s.p("g").join("features.tsv");
    let text: String = String::from_utf8(read(&feats))
        .unwrap()
        .lines()
        .map(|l| l.split('\t').map(|_| "1e306").collect::<Vec<_>>().join("\t") + "\n")
        .collect();
    fs::write(&feats, text).unwrap();
    let (c, err) = code(&["train", "--config", s.s("run.toml"), "--bundle", s.s("g"), "--out", s.s("t")]);
    assert_eq!(c, 4, "{err}");
    assert!(err.contains("epoch 0"), "{err}");
}

#[test]
fn thread_setting_is_validated() {
    let s = Setup::new();
    let o = Command::new(env!("CARGO_BIN_EXE_sesim"))
        .args(["sweep", "--bundle", s.s("g"), "--out", s.s("sw")])
        .env("SESIM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn overfit_toy_evaluates_to_auc_one() {
    let d = tempfile::tempdir().unwrap();
    let g = d.path().join("toy");
    fs::create_dir(&g).unwrap();
    let edges: String = (0..6).map(|u| format!("0\t0\t1\t{u}\t{}\n", u / 3)).collect();
    let feats: String = (0..6).map(|u| if u < 3 { "1\t0\n" } else { "0\t1\n" }).collect();
    fs::write(g.join("node_types.tsv"), "0\tU\t6\n1\tB\t2\n").unwrap();
    fs::write(g.join("edges.tsv"), edges).unwrap();
    fs::write(g.join("features.tsv"), feats).unwrap();
    fs::write(
        g.join("metapaths.json"),
        r#"{"target_type":0,"relations":[{"edge_type":0,"src_type":0,"dst_type":1}],
           "metapaths":[{"id":0,"hops":[{"edge_type":0},{"edge_type":0,"reverse":true}]}]}"#,
    )
    .unwrap();
    let cfg = d.path().join("toy.toml");
    fs::write(&cfg, "epochs = 1000\ntrain_frac = 0.15\nval_frac = 0.5\nhidden = 8\nembed = 4\nprimary_hidden = 8\ncontribution_hidden = 4\n").unwrap();
    let (cfg, g) = (cfg.to_str().unwrap(), g.to_str().unwrap());
    let t = d.path().join("t");
    let r = d.path().join("r.json");
    ok(&["train", "--config", cfg, "--bundle", g, "--vanilla", "--out", t.to_str().unwrap()]);
    let ckpt = t.join("model.ckpt");
    ok(&["eval", "--config", cfg, "--bundle", g, "--checkpoint", ckpt.to_str().unwrap(), "--out", r.to_str().unwrap()]);
    let report: serde_json::Value = serde_json::from_slice(&read(&r)).unwrap();
    assert_eq!(report["auc_peak"].as_f64(), Some(1.0), "{report}");
}
