use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn osae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_osae"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn error_json(o: &Output) -> serde_json::Value {
    let line = stderr(o);
    let line = line.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not json: {line}"))
}

fn train_config(k: usize, seed: u64) -> serde_json::Value {
    serde_json::json!({
        "k": k,
        "m": 2,
        "epochs": 3,
        "batch_size": 64,
        "learning_rate": 0.003,
        "loss": {"kind": "nested_dropout", "prefix": {"type": "uniform"}, "random_draws": 1},
        "k_init": k,
        "warmup_epochs": 1,
        "seed": seed,
        "checkpoint_every": 10
    })
}

fn experiment(dir: &Path) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "name": "cli-tiny",
        "generator": {"d": 6, "k": 8, "m": 2, "n": 500, "alpha": 1.0},
        "train": train_config(8, 0),
        "seeds": [1, 2, 3],
        "eval_fraction": 0.1
    });
    let p = dir.join("experiment.json");
    fs::write(&p, cfg.to_string()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_train_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let o = osae(&["gen", "--config", s(&experiment(tmp.path())), "--out", s(&data), "--seed", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["dstar.mat", "codes.mat", "x.mat", "x_train.mat", "x_eval.mat", "codes_eval.mat", "meta.json"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let cfg = tmp.path().join("train.json");
    fs::write(&cfg, train_config(8, 0).to_string()).unwrap();
    let run = tmp.path().join("run");
    let o = osae(&["train", "--config", s(&cfg), "--data", s(&data.join("x_train.mat")), "--out", s(&run), "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(summary["steps"].as_u64().unwrap() > 0);
    let trace = fs::read_to_string(run.join("trace.csv")).unwrap();
    assert!(trace.starts_with("step,epoch,loss,effective_k,frozen_count"));

    let mut ckpts: Vec<_> = fs::read_dir(run.join("checkpoints")).unwrap().map(|e| e.unwrap().path()).collect();
    ckpts.sort();
    let last = ckpts.last().unwrap();
    let o = osae(&[
        "eval",
        "--checkpoint",
        s(last),
        "--against-truth",
        s(&data.join("dstar.mat")),
        "--data",
        s(&data.join("x_eval.mat")),
        "--codes",
        s(&data.join("codes_eval.mat")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let reports: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let r = &reports[0];
    assert_eq!(r["provenance"]["seed"], 7);
    for key in ["stab_dstar", "ord_dstar", "fifr", "recon_mse", "stab_z"] {
        assert!(r[key].is_number(), "{key} missing");
    }

    // a checkpoint against itself is a perfect pair
    let o = osae(&["eval", "--checkpoint", s(last), s(last), "--format", "csv"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("pair:7:7,stab_dd,1e0"));
}

#[test]
fn run_then_report_and_pairs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = osae(&["run", "--config", s(&experiment(tmp.path())), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("OSAE"));
    let dir = out.join("cli-tiny");
    let o = osae(&["report", "--dir", s(&dir), "--format", "csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("experiment,method,scope,metric,n,mean,std,ci95"));
    let o = osae(&["pairs", "--dir", s(&dir), "--format", "json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["aggregate"]["n"], 3);
}

#[test]
fn pairs_over_ten_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(osae(&["gen", "--config", s(&experiment(tmp.path())), "--out", s(&data)]).status.success());
    let cfg = tmp.path().join("train.json");
    let mut c = train_config(8, 0);
    c["epochs"] = 1.into();
    fs::write(&cfg, c.to_string()).unwrap();
    let runs = tmp.path().join("runs");
    for seed in 0..10 {
        let out = runs.join(format!("seed{seed}"));
        let seed = seed.to_string();
        let o = osae(&["train", "--config", s(&cfg), "--data", s(&data.join("x_train.mat")), "--out", s(&out), "--seed", &seed]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let o = osae(&["pairs", "--dir", s(&runs)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("seed_a,seed_b,stab_dd,ord_dd,stab_z,ord_z"));
    assert_eq!(lines.count(), 45);
}

#[test]
fn stitch_self_is_never_novel() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(osae(&["gen", "--config", s(&experiment(tmp.path())), "--out", s(&data)]).status.success());
    let cfg = tmp.path().join("train.json");
    fs::write(&cfg, train_config(8, 0).to_string()).unwrap();
    let run = tmp.path().join("run");
    assert!(osae(&["train", "--config", s(&cfg), "--data", s(&data.join("x_train.mat")), "--out", s(&run)]).status.success());
    let ckpt = run.join("checkpoints/step-00000000.ckpt");
    let o = osae(&["stitch", "--small", s(&ckpt), "--large", s(&ckpt), "--data", s(&data.join("x_eval.mat")), "--format", "json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["novel_pct"], 0.0);
    assert_eq!(v["latents"], 8);
}

#[test]
fn report_on_empty_dir_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let o = osae(&["report", "--dir", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
    let e = error_json(&o);
    assert_eq!(e["error"], "empty");
    assert!(e["message"].as_str().unwrap().contains("no runs found"));
}

#[test]
fn usage_errors_exit_two() {
    let o = osae(&["report", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "usage");

    let tmp = tempfile::tempdir().unwrap();
    let mut c = train_config(8, 0);
    c["learning_rat"] = 0.1.into();
    let cfg = tmp.path().join("typo.json");
    fs::write(&cfg, c.to_string()).unwrap();
    let o = osae(&["train", "--config", s(&cfg), "--data", "missing.mat", "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    let e = error_json(&o);
    assert_eq!(e["error"], "usage");
    assert!(e["message"].as_str().unwrap().contains("learning_rat"));
}

#[test]
fn missing_data_is_a_core_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("train.json");
    fs::write(&cfg, train_config(8, 0).to_string()).unwrap();
    let o = osae(&["train", "--config", s(&cfg), "--data", s(&tmp.path().join("nope.mat")), "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_json(&o)["error"], "io");
    assert_eq!(stderr(&o).lines().count(), 1);
}
