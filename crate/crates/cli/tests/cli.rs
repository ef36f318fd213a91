use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn splt(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_splt"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs");
    out
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = splt(dir, args);
    assert!(
        out.status.success(),
        "splt {args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const TINY: &[&str] = &["--layers", "1", "--heads", "1", "--embed", "8", "--steps", "5", "--batch", "4", "--context", "2"];

fn train(dir: &Path, data: &str, model: &str, out: &str) {
    let mut args = vec!["train", "--dataset", data, "--model", model, "--out", out];
    args.extend_from_slice(TINY);
    ok(dir, &args);
}

#[test]
fn collect_train_eval_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = dir.join("toy.spltds");
    let data = data.to_str().unwrap();
    let stdout = ok(dir, &["--seed", "3", "collect", "--env", "toy", "--steps", "600", "--out", data]);
    assert!(stdout.contains("transitions"));
    assert!(dir.join("collect_config.json").exists());

    let ckpt = dir.join("splt.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    train(dir, data, "splt", ckpt);
    let losses = fs::read_to_string(dir.join("splt_losses.csv")).unwrap();
    assert!(losses.starts_with("# version: splt-core"));
    assert!(losses.contains("# config: {"));
    assert!(losses.contains("policy_loss"));

    let metrics = dir.join("m.csv");
    let metrics = metrics.to_str().unwrap();
    let eval = [
        "eval", "--checkpoint", ckpt, "--episodes", "2", "--eval-seeds", "0,1", "--horizon", "1", "--metrics-out", metrics,
        "--dump-candidates",
    ];
    let stdout = ok(dir, &eval);
    assert!(stdout.contains("SPLT (maxmin)"));
    let csv = fs::read_to_string(metrics).unwrap();
    assert!(csv.contains("\"horizon\":1"));
    assert_eq!(csv.lines().filter(|l| l.starts_with("SPLT (maxmin),")).count(), 3);
    let dump = fs::read_to_string(dir.join("candidates.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(dump.lines().next().unwrap()).unwrap();
    assert_eq!(first["rows"], 8);
    assert_eq!(first["cols"], 4);
    assert_eq!(first["values"].as_array().unwrap().len(), 32);
    assert_eq!(first["episode"], 0);

    // evaluation is reproducible
    let again = dir.join("m2.csv");
    let mut eval2 = eval.to_vec();
    eval2[10] = again.to_str().unwrap();
    ok(dir, &eval2);
    assert_eq!(csv, fs::read_to_string(&again).unwrap());

    let bc = dir.join("bc.ckpt");
    train(dir, data, "bc", bc.to_str().unwrap());
    let dt = dir.join("dt.ckpt");
    train(dir, data, "dt", dt.to_str().unwrap());
    let stdout = ok(
        dir,
        &[
            "compare", "--checkpoint", ckpt, bc.to_str().unwrap(), dt.to_str().unwrap(), "--ablation", "--metrics", metrics,
            "--episodes", "1", "--eval-seeds", "0", "--horizon", "0",
        ],
    );
    assert!(stdout.contains("Success (%)"));
    let table = fs::read_to_string(dir.join("compare.csv")).unwrap();
    let rows: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[0].starts_with("SPLT (maxmin),"));
    assert!(rows[1].starts_with("SPLT (maxmax),"));
    assert!(rows[2].starts_with("BC,"));
    assert!(rows[3].starts_with("DT (target"));
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = dir.join("mdp.spltds");
    ok(dir, &["collect", "--env", "mdp", "--steps", "200", "--out", data.to_str().unwrap()]);
    let cfg = dir.join("cfg.json");
    fs::write(&cfg, r#"{"beta": 0.5, "n_w": 2, "train": {"steps": 3}, "seed": 11}"#).unwrap();
    let ckpt = dir.join("s.ckpt");
    ok(
        dir,
        &[
            "--config", cfg.to_str().unwrap(), "--seed", "4", "train", "--dataset", data.to_str().unwrap(), "--npi", "2",
            "--layers", "1", "--embed", "8", "--heads", "2", "--out", ckpt.to_str().unwrap(),
        ],
    );
    let snap: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("splt_config.json")).unwrap()).unwrap();
    assert_eq!(snap["beta"], 0.5);
    assert_eq!(snap["n_w"], 2);
    assert_eq!(snap["n_pi"], 2);
    assert_eq!(snap["train"]["steps"], 3);
    assert_eq!(snap["train"]["batch_size"], 32);
    assert_eq!(snap["seed"], 4);
    assert_eq!(snap["env"], "mdp");
}

#[test]
fn rejects_mismatched_environment_and_bad_input() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = dir.join("mdp.spltds");
    ok(dir, &["collect", "--env", "mdp", "--steps", "100", "--out", data.to_str().unwrap()]);
    let ckpt = dir.join("bc.ckpt");
    train(dir, data.to_str().unwrap(), "bc", ckpt.to_str().unwrap());
    let out = splt(dir, &["eval", "--checkpoint", ckpt.to_str().unwrap(), "--env", "toy", "--episodes", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("trained on"));

    let out = splt(dir, &["train", "--dataset", dir.join("missing").to_str().unwrap()]);
    assert!(!out.status.success());
    let out = splt(dir, &["eval", "--checkpoint", data.to_str().unwrap()]);
    assert!(!out.status.success());
    let out = splt(dir, &["train", "--dataset", data.to_str().unwrap(), "--model", "gpt"]);
    assert!(!out.status.success());
}

#[test]
fn mdp_demo_writes_a_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let stdout = ok(
        dir,
        &["mdp-demo", "--collect-steps", "300", "--decisions", "5", "--layers", "1", "--embed", "8", "--heads", "2", "--steps", "3"],
    );
    assert!(stdout.contains("SPLT max-min"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("mdp_report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["decisions"], 5);
    assert_eq!(report["report"]["world_predictions"].as_array().unwrap().len(), 4);
    assert!(dir.join("mdp_splt.ckpt").exists());
    assert!(dir.join("mdp_dt.ckpt").exists());
}
