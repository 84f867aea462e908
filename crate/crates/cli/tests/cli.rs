use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;
use srhgnn::fixtures::{planted, PlantedSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_srhgnn"))
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let p = planted(&PlantedSpec {
            num_users: 24,
            num_items: 30,
            num_interactions: 300,
            seed: 7,
            ..PlantedSpec::default()
        })
        .unwrap();
        let ratings: String = p
            .records
            .iter()
            .map(|r| format!("u{}\ti{}\t{}\n", r.user, r.item, r.rating))
            .collect();
        let trust: String = p
            .social_edges
            .iter()
            .map(|(a, b)| format!("u{a}\tu{b}\n"))
            .collect();
        fs::write(dir.path().join("ratings.tsv"), ratings).unwrap();
        fs::write(dir.path().join("trust.tsv"), trust).unwrap();
        fs::write(
            dir.path().join("small.conf"),
            "# tiny run\ndim = 4\nsocial_dim = 4\nsocial_epochs = 3\nepochs = 3\nbatch_size = 64\nlr = 0.01\n",
        )
        .unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn data_args(&self) -> Vec<String> {
        vec![
            "--ratings".into(),
            self.path("ratings.tsv").display().to_string(),
            "--trust".into(),
            self.path("trust.tsv").display().to_string(),
        ]
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        bin()
            .arg("train")
            .args(self.data_args())
            .args(["--config", &self.path("small.conf").display().to_string()])
            .args(["--out-dir", &self.path(out).display().to_string()])
            .args(extra)
            .output()
            .unwrap()
    }
}

fn json_lines(bytes: &[u8]) -> Vec<Value> {
    String::from_utf8_lossy(bytes)
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn gradcheck_passes() {
    let out = bin().args(["gradcheck", "--seed", "3"]).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let records = json_lines(&out.stdout);
    assert_eq!(records.len(), 2);
    assert!(records.iter().all(|r| r["pass"] == Value::Bool(true)));
}

#[test]
fn train_evaluate_and_sparsity_report() {
    let ws = Workspace::new();
    let out = ws.train("run", &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = json_lines(&fs::read(ws.path("run/report.jsonl")).unwrap());
    assert_eq!(report.len(), 4);
    let summary = report.last().unwrap();
    assert_eq!(summary["record"], "summary");
    assert!(summary["rmse"].as_f64().unwrap() >= summary["mae"].as_f64().unwrap());
    assert!(ws.path("run/timing.json").exists());

    let ckpt = ws.path("run/model.ckpt").display().to_string();
    let eval = bin()
        .arg("evaluate")
        .args(ws.data_args())
        .args(["--checkpoint", &ckpt])
        .output()
        .unwrap();
    assert!(eval.status.success(), "{}", stderr(&eval));
    let e = &json_lines(&eval.stdout)[0];
    assert_eq!(e["rmse"], summary["rmse"]);
    assert_eq!(e["mae"], summary["mae"]);

    let sp = bin()
        .arg("sparsity-report")
        .args(ws.data_args())
        .args(["--checkpoint", &ckpt, "--buckets", "3"])
        .output()
        .unwrap();
    assert!(sp.status.success(), "{}", stderr(&sp));
    let s = &json_lines(&sp.stdout)[0];
    assert_eq!(s["buckets"].as_array().unwrap().len(), 3);
    assert_eq!(s["rmse"], summary["rmse"]);
}

#[test]
fn identical_runs_are_bitwise_identical() {
    let ws = Workspace::new();
    for dir in ["a", "b"] {
        let out = ws.train(dir, &["--seed", "5", "--precision", "f64"]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for file in ["report.jsonl", "model.ckpt"] {
        assert_eq!(
            fs::read(ws.path(&format!("a/{file}"))).unwrap(),
            fs::read(ws.path(&format!("b/{file}"))).unwrap(),
            "{file} differs"
        );
    }
}

#[test]
fn pretrained_social_matrix_can_be_reused() {
    let ws = Workspace::new();
    let h = ws.path("h.txt").display().to_string();
    let pre = bin()
        .arg("pretrain-social")
        .args(ws.data_args())
        .args([
            "--config",
            &ws.path("small.conf").display().to_string(),
            "--out",
            &h,
        ])
        .output()
        .unwrap();
    assert!(pre.status.success(), "{}", stderr(&pre));
    assert!(fs::read_to_string(&h)
        .unwrap()
        .starts_with("SRHGNN v1 matrix"));
    let reused = ws.train("reuse", &["--social-matrix", &h]);
    assert!(reused.status.success(), "{}", stderr(&reused));
    let inline = ws.train("inline", &[]);
    assert!(inline.status.success());
    assert_eq!(
        fs::read(ws.path("reuse/model.ckpt")).unwrap(),
        fs::read(ws.path("inline/model.ckpt")).unwrap()
    );
}

#[test]
fn ablations_run() {
    let ws = Workspace::new();
    for (i, a) in ["no-social", "single-type", "no-reconstruction"]
        .iter()
        .enumerate()
    {
        let out = ws.train(&format!("ab{i}"), &["--ablate", a]);
        assert!(out.status.success(), "{a}: {}", stderr(&out));
    }
    let gcn = ws.train("gcn", &["--social-encoder", "gcn"]);
    assert!(gcn.status.success(), "{}", stderr(&gcn));
}

#[test]
fn sweep_reports_every_grid_point() {
    let ws = Workspace::new();
    let out = bin()
        .arg("sweep")
        .args(ws.data_args())
        .args([
            "--config",
            &ws.path("small.conf").display().to_string(),
            "--grid",
            "0.01,0.1",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let lines = json_lines(&out.stdout);
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[4]["record"], "sweep-best");
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn exit_codes() {
    let ws = Workspace::new();
    let gat = ws.train("gat", &["--social-encoder", "gat"]);
    assert_eq!(code(&gat), 1, "{}", stderr(&gat));
    let bad_key = ws.train("bad", &["--set", "nonsense=1"]);
    assert_eq!(code(&bad_key), 1);
    let usage = bin().arg("train").output().unwrap();
    assert_eq!(code(&usage), 1);

    fs::write(ws.path("broken.tsv"), "a\tb\t4\na\tc\tx\n").unwrap();
    let broken = bin()
        .arg("train")
        .args(["--ratings", &ws.path("broken.tsv").display().to_string()])
        .args(["--trust", &ws.path("trust.tsv").display().to_string()])
        .args(["--out-dir", &ws.path("x").display().to_string()])
        .output()
        .unwrap();
    assert_eq!(code(&broken), 2);
    assert!(stderr(&broken).contains(":2:"), "{}", stderr(&broken));

    let diverged = ws.train(
        "nan",
        &[
            "--set",
            "lr=1e300",
            "--set",
            "social_lr=0.01",
            "--precision",
            "f64",
        ],
    );
    assert_eq!(code(&diverged), 3, "{}", stderr(&diverged));
    assert!(ws.path("nan/model.ckpt").exists());
}

#[test]
fn help_lists_subcommands() {
    let out = bin().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in [
        "pretrain-social",
        "train",
        "evaluate",
        "sparsity-report",
        "gradcheck",
        "sweep",
    ] {
        assert!(text.contains(cmd), "{cmd}");
    }
}
