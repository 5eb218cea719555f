use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY_MODEL: &str = r#""model": {"hidden": 8, "mlp_hidden": 8, "embed": 8, "gat_heads": 2, "token_heads": 2}"#;

fn hmfnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmfnet")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("cfg.json");
    let body = format!(
        r#"{{"data": {{"synthetic": {{"n_molecules": 48, "n_labels": 4, "seed": 3}}}}, "epochs": 2, {TINY_MODEL}{extra}}}"#
    );
    std::fs::write(&p, body).unwrap();
    p
}

fn labeled_csv(dir: &Path) -> PathBuf {
    let p = dir.join("data.csv");
    std::fs::write(
        &p,
        "smiles,labels\nCCO,fruit;green\nCC(=O)OCC,fruit;sweet\nc1ccccc1O,floral;sweet\nCC=O,green\nCCCCO,fruit;green\nnot a molecule,fruit\n",
    )
    .unwrap();
    p
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn train_predict_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let run = dir.path().join("run");
    let o = hmfnet(&["train", "--config", p(&cfg), "--out", p(&run)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["epochs_run"], 2);
    for f in ["model.bin", "model.json", "metrics.jsonl"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let log = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);

    let ckpt = run.join("model.bin");
    let o = hmfnet(&["predict", "--checkpoint", p(&ckpt), "--smiles", "CCO", "--top-k", "3"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let top = v["top"].as_array().unwrap();
    assert_eq!(top.len(), 3);
    let probs: Vec<f64> = top.iter().map(|t| t["probability"].as_f64().unwrap()).collect();
    assert!(probs.windows(2).all(|w| w[0] >= w[1]));

    let o = hmfnet(&["predict", "--checkpoint", p(&ckpt), "--smiles", "C1CC"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), r#", "seed": 1"#);
    let run = |name: &str, seed: Option<&str>| {
        let out = dir.path().join(name);
        let mut c = Command::new(env!("CARGO_BIN_EXE_hmfnet"));
        c.args(["train", "--config", p(&cfg), "--out", p(&out)]);
        match seed {
            Some(s) => c.env("HMFNET_SEED", s),
            None => c.env_remove("HMFNET_SEED"),
        };
        assert!(c.output().unwrap().status.success());
        std::fs::read(out.join("model.bin")).unwrap()
    };
    let plain = run("a", None);
    assert_eq!(plain, run("b", Some("1")));
    assert_ne!(plain, run("c", Some("2")));
}

#[test]
fn bad_config_exits_with_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), r#", "learning_rate": 0.1"#);
    let o = hmfnet(&["train", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));

    let o = hmfnet(&["train", "--config", p(&dir.path().join("missing.json"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stats_reports_pairs_and_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let csv = labeled_csv(dir.path());
    let out = dir.path().join("stats");
    let o = hmfnet(&["stats", "--data", p(&csv), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["molecules"], 5);
    assert_eq!(v["skipped_rows"], 1);
    assert_eq!(v["fruit_green_cooccurrence"], 2);
    assert_eq!(v["floral_sweet_cooccurrence"], 1);
    for f in ["stats.json", "label_counts.csv", "co_occurrence.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let co = std::fs::read_to_string(out.join("co_occurrence.csv")).unwrap();
    assert_eq!(co.lines().count(), 5);
}

#[test]
fn featurize_writes_one_line_per_molecule() {
    let dir = tempfile::tempdir().unwrap();
    let csv = labeled_csv(dir.path());
    let out = dir.path().join("features.jsonl");
    let o = hmfnet(&["featurize", "--input", p(&csv), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 6);
    assert!(lines[..5].iter().all(|l| l.get("error").is_none()));
    assert!(lines[5]["error"].is_string());
}

#[test]
fn sweep_with_explicit_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let o = hmfnet(&["sweep", "--config", p(&cfg), "--param", "c", "--values", "0.3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("0.3,1,0.2,0.1,0.2,"));

    let o = hmfnet(&["sweep", "--config", p(&cfg), "--param", "lambda", "--values", "1:0.3:0.3:0.3"]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().nth(1).unwrap().starts_with("0.2,1,0.3,0.3,0.3,"));

    let o = hmfnet(&["sweep", "--config", p(&cfg), "--param", "lambda", "--values", "1:0.3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn structural_ablation_has_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let out = dir.path().join("abl.csv");
    let o = hmfnet(&["ablate", "--config", p(&cfg), "--structural", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(out).unwrap().lines().count(), 5);
}

#[test]
fn gradcheck_exit_codes() {
    let o = hmfnet(&["gradcheck", "--points", "1"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("all checks passed"));
    let o = hmfnet(&["gradcheck", "--points", "1", "--corrupt", "matmul"]);
    assert_eq!(o.status.code(), Some(1));
}
