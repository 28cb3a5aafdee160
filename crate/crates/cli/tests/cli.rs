use std::path::Path;
use std::process::{Command, Output};

fn btl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_btl")).args(args).env_remove("BTL_SEED").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&read(p)).unwrap()
}

const DATA: [&str; 6] = ["--classes", "8", "--per-class", "12", "--input-dim", "6"];

fn small_train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--epochs", "3", "--hidden", "16", "--embed-dim", "6", "--out", out.to_str().unwrap()];
    args.extend(DATA);
    args.extend(extra);
    btl(&args)
}

#[test]
fn simulate_writes_one_row_per_trial_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let args = ["simulate-approx", "--dims", "1,16,512", "--trials", "5", "--samples", "2000", "--seed", "7"];
    let run = |o: &Path| btl(&[&args[..], &["--out", o.to_str().unwrap()]].concat());
    assert_eq!(code(&run(&out)), 0);
    let csv = read(&out.join("approx_study.csv"));
    assert_eq!(csv.lines().count(), 1 + 15);
    let first = std::fs::read(out.join("approx_study.json")).unwrap();
    assert_eq!(code(&run(&out)), 0);
    assert_eq!(read(&out.join("approx_study.csv")), csv);
    assert_eq!(std::fs::read(out.join("approx_study.json")).unwrap(), first);
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["command"], "simulate-approx");
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config"]["dims"], serde_json::json!([1, 16, 512]));
    assert!(m["duration_secs"].as_f64().unwrap() >= 0.0);
}

#[test]
fn simulate_defaults_cover_the_study_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let o = btl(&["simulate-approx", "--trials", "1", "--samples", "50", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["config"]["dims"], serde_json::json!([1, 2, 4, 8, 16, 32, 128, 512, 2048]));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&btl(&["simulate-approx", "--dims", "a,b"])), 2);
    assert_eq!(code(&btl(&["train", "--loss", "softmax"])), 2);
    assert_eq!(code(&btl(&["no-such-command"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let o = btl(&["simulate-approx", "--dims", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let o = Command::new(env!("CARGO_BIN_EXE_btl"))
        .args(["simulate-approx", "--trials", "1", "--samples", "10", "--out", out.to_str().unwrap()])
        .env("BTL_SEED", "minus one")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn flags_override_config_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"dims": [2, 3], "trials": 2, "samples": 100, "seed": 11}"#).unwrap();
    let out = dir.path().join("a");
    let o = btl(&["simulate-approx", "--config", cfg.to_str().unwrap(), "--trials", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["config"]["trials"], 3);
    assert_eq!(m["config"]["dims"], serde_json::json!([2, 3]));
    assert_eq!(m["seed"], 11);

    // the environment seed only applies when neither flag nor file sets one
    std::fs::write(&cfg, r#"{"dims": [2], "trials": 1, "samples": 100}"#).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_btl"))
        .args(["simulate-approx", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .env("BTL_SEED", "42")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(json(&out.join("manifest.json"))["seed"], 42);

    std::fs::write(&cfg, r#"{"trails": 2}"#).unwrap();
    assert_eq!(code(&btl(&["simulate-approx", "--config", cfg.to_str().unwrap()])), 2);
}

#[test]
fn gradcheck_passes_and_catches_an_injected_sign_flip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gc");
    let o = btl(&["gradcheck", "--trials", "15", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&out.join("gradcheck.json"));
    let names: Vec<&str> = report["components"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["nll", "kl_gaussian", "kl_vmf", "vmf_mean_resultant", "encoder"]);
    for c in report["components"].as_array().unwrap() {
        assert!(c["max_rel_err"].as_f64().unwrap() < c["tolerance"].as_f64().unwrap());
    }
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("max_rel_err") && stdout.contains("encoder"));

    let o = btl(&["gradcheck", "--trials", "3", "--inject-fault", "sign-flip", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("worst case"));
    let report = json(&out.join("gradcheck.json"));
    assert_eq!(report["passed"], false);
    assert!(report["components"][0]["worst"]["analytic"].is_array());
}

#[test]
fn hinge_on_separable_data_reaches_perfect_recall() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let o = small_train(&out, &["--loss", "hinge", "--noise-max", "0"]);
    assert_eq!(code(&o), 0);
    let history = read(&out.join("history.csv"));
    assert_eq!(history.lines().next().unwrap(), "epoch,loss,nll,kl,val_r1,lr");
    let last: Vec<&str> = history.lines().last().unwrap().split(',').collect();
    assert_eq!(last[4], "1");
}

#[test]
fn training_defaults_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&small_train(&a, &["--threads", "1"])), 0);
    assert_eq!(code(&small_train(&b, &["--threads", "1"])), 0);
    assert_eq!(read(&a.join("checkpoint.json")), read(&b.join("checkpoint.json")));
    assert_eq!(read(&a.join("history.csv")), read(&b.join("history.csv")));
    let m = json(&a.join("manifest.json"));
    assert_eq!(m["config"]["train"]["kl_scale"], 1e-6);
    assert_eq!(m["config"]["train"]["loss"], "bayes-gauss");

    // replaying the manifest reproduces the checkpoint
    let c = dir.path().join("c");
    let o = btl(&["train", "--config", a.join("manifest.json").to_str().unwrap(), "--out", c.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(read(&a.join("checkpoint.json")), read(&c.join("checkpoint.json")));
}

#[test]
fn divergence_exits_with_one_and_keeps_a_finite_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let o = small_train(&out, &["--lr", "1e300"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged"));
    let ck = read(&out.join("checkpoint.json"));
    let v: serde_json::Value = serde_json::from_str(&ck).unwrap();
    assert!(v["layers"][0]["weights"].as_array().unwrap().iter().all(|w| w.as_f64().unwrap().is_finite()));
}

#[test]
fn embed_and_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s);
    assert_eq!(code(&small_train(&p("t"), &[])), 0);
    let ck = p("t").join("checkpoint.json");
    let embed = |out: &str, extra: &[&str]| {
        let mut args = vec!["embed", "--checkpoint", ck.to_str().unwrap(), "--out"];
        let o = p(out);
        args.push(o.to_str().unwrap());
        args.extend(DATA);
        args.extend(extra);
        btl(&args)
    };
    assert_eq!(code(&embed("e", &[])), 0);
    assert_eq!(code(&embed("o", &["--split", "ood", "--ood-classes", "3", "--ood-per-class", "5"])), 0);
    assert_eq!(code(&embed("c", &["--format", "csv"])), 0);

    let set = json(&p("e").join("embeddings.json"));
    let items = set["items"].as_array().unwrap();
    assert_eq!(items.len(), 4 * 12);
    assert!(items.iter().all(|it| it["embedding"]["variance"].as_f64().unwrap() > 0.0));
    let parsed: btl_core::EmbeddingSet = serde_json::from_value(set.clone()).unwrap();
    assert_eq!(serde_json::to_value(&parsed).unwrap(), set);

    let csv = read(&p("c").join("embeddings.csv"));
    assert_eq!(csv.lines().count(), 1 + 48);
    for (line, it) in csv.lines().skip(1).zip(&parsed.items) {
        let (id, e) = btl_core::Gaussian::from_csv_row(line).unwrap();
        assert_eq!(id, it.id);
        assert_eq!(e, it.embedding);
    }

    let (db, oq) = (p("e").join("embeddings.json"), p("o").join("embeddings.json"));
    let o = btl(&["eval", "--db", db.to_str().unwrap(), "--out", p("v").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&p("v").join("metrics.json"));
    for k in [1, 5, 10] {
        for f in ["R", "M", "ECE"] {
            assert!(m[format!("{f}@{k}")].is_f64(), "{f}@{k}");
        }
    }
    assert_eq!(m["M@1"], m["R@1"]);
    assert!(m["auroc"].is_null());
    let cal = read(&p("v").join("calibration_at_5.csv"));
    assert_eq!(cal.lines().nth(1).unwrap(), "bin,count,map_at_k,conf");
    assert_eq!(cal.lines().count(), 2 + 10);

    let o = btl(&["eval", "--db", db.to_str().unwrap(), "--ood-queries", oq.to_str().unwrap(), "--out", p("w").to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(json(&p("w").join("metrics.json"))["auroc"].is_f64());
    let ood = json(&p("w").join("ood.json"));
    assert!(ood["id_hist"].is_array() && ood["ood_hist"].is_array());
}

#[test]
fn hinge_embeddings_report_no_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s);
    assert_eq!(code(&small_train(&p("t"), &["--loss", "hinge"])), 0);
    let ck = p("t").join("checkpoint.json");
    let mut args = vec!["embed", "--checkpoint", ck.to_str().unwrap(), "--out"];
    let e = p("e");
    args.push(e.to_str().unwrap());
    args.extend(DATA);
    assert_eq!(code(&btl(&args)), 0);
    let db = e.join("embeddings.json");
    assert_eq!(code(&btl(&["eval", "--db", db.to_str().unwrap(), "--out", p("v").to_str().unwrap()])), 0);
    let m = json(&p("v").join("metrics.json"));
    assert!(m["ECE@5"].is_null());
    assert!(m["R@1"].is_f64());
    assert!(!p("v").join("calibration_at_5.csv").exists());
}

#[test]
fn mismatches_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s);
    assert_eq!(code(&small_train(&p("t"), &[])), 0);
    let ck = p("t").join("checkpoint.json");
    let o = btl(&["embed", "--checkpoint", ck.to_str().unwrap(), "--input-dim", "7", "--out", p("e").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&btl(&["embed", "--out", p("e").to_str().unwrap()])), 2);

    // embeddings of different dimension
    let (e6, e9) = (p("e6"), p("e9"));
    let mut args = vec!["embed", "--checkpoint", ck.to_str().unwrap(), "--out", e6.to_str().unwrap()];
    args.extend(DATA);
    assert_eq!(code(&btl(&args)), 0);
    let t9 = p("t9");
    let mut args = vec!["train", "--epochs", "1", "--embed-dim", "9", "--out", t9.to_str().unwrap()];
    args.extend(DATA);
    assert_eq!(code(&btl(&args)), 0);
    let ck9 = t9.join("checkpoint.json");
    let mut args = vec!["embed", "--checkpoint", ck9.to_str().unwrap(), "--out", e9.to_str().unwrap()];
    args.extend(DATA);
    assert_eq!(code(&btl(&args)), 0);
    let o = btl(&[
        "eval",
        "--db",
        e6.join("embeddings.json").to_str().unwrap(),
        "--queries",
        e9.join("embeddings.json").to_str().unwrap(),
        "--out",
        p("v").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("dimension"));
}
