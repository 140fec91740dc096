use std::path::Path;
use std::process::{Command, Output};

use image::{GrayImage, RgbImage};
use lssf_core::checkpoint::Checkpoint;
use lssf_core::config::NetworkConfig;
use lssf_core::network::{count_params, init_params};
use lssf_core::profile::count_flops;
use serde_json::Value;
use sha2::{Digest, Sha256};

fn lssf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lssf"))
        .args(args)
        .env_remove("LSSF_SEED")
        .env("RUST_LOG", "info")
        .output()
        .unwrap()
}

fn lssf_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lssf")).args(args).env(key, value).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, n: usize, size: usize, seed: u64) {
    ok(&lssf(&["synth", "--n", &n.to_string(), "--size", &size.to_string(), "--seed", &seed.to_string(), "--out", s(dir)]));
}

const TINY: [&str; 4] = ["--size", "16", "--widths", "4,8,12,16"];

#[test]
fn unknown_config_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"train": {"batch_size": 2, "learning_rate": 0.1}}"#).unwrap();
    let out = lssf(&["train", "--config", s(&cfg), "--data", s(dir.path()), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("train.learning_rate"), "{}", stderr(&out));

    std::fs::write(&cfg, r#"{"network": {"input_size": 100}}"#).unwrap();
    let out = lssf(&["report", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("input_size"));
}

#[test]
fn missing_data_and_bad_seed_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lssf(&["train", "--out", s(dir.path())]).status.code(), Some(2));
    let out = lssf_env(&["synth", "--n", "1", "--size", "16", "--out", s(dir.path())], "LSSF_SEED", "abc");
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("LSSF_SEED"));
}

#[test]
fn seed_env_is_the_fallback() {
    let d = tempfile::tempdir().unwrap();
    let (a, b, c) = (d.path().join("a"), d.path().join("b"), d.path().join("c"));
    ok(&lssf_env(&["synth", "--n", "2", "--size", "16", "--out", s(&a)], "LSSF_SEED", "5"));
    synth(&b, 2, 16, 5);
    ok(&lssf_env(&["synth", "--n", "2", "--size", "16", "--seed", "6", "--out", s(&c)], "LSSF_SEED", "5"));
    let read = |p: &Path| std::fs::read(p.join("images/0000.png")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn report_totals_match_the_library() {
    let r: Value = serde_json::from_str(&ok(&lssf(&["report", "--json"]))).unwrap();
    let params = r["total_params"].as_u64().unwrap();
    let flops = r["total_flops"].as_u64().unwrap();
    assert!((700_000..=920_000).contains(&params), "{params}");
    assert!((flops as f64 - 3.1e9).abs() <= 0.2 * 3.1e9, "{flops}");
    let cfg = NetworkConfig::default();
    assert_eq!(params as usize, count_params(&init_params(&cfg).unwrap()));
    assert_eq!(flops, count_flops(&cfg).unwrap());

    let table = ok(&lssf(&["report"]));
    assert!(table.contains(&format!("total: {params} params")));
}

#[test]
fn predict_with_zero_head_marks_everything() {
    let dir = tempfile::tempdir().unwrap();
    let mut ck = Checkpoint::fresh(NetworkConfig::tiny(16)).unwrap();
    assert!(ck.params.zero_prefix("head.out") > 0);
    let ckpt = dir.path().join("zero.ckpt");
    ck.save(&ckpt).unwrap();
    let img = dir.path().join("black.png");
    RgbImage::new(37, 23).save(&img).unwrap();
    let mask = dir.path().join("mask.png");
    ok(&lssf(&["predict", "--checkpoint", s(&ckpt), "--image", s(&img), "--out-mask", s(&mask)]));
    let m = image::open(&mask).unwrap().to_luma8();
    assert_eq!(m.dimensions(), (37, 23));
    assert!(m.pixels().all(|p| p.0[0] == 255));
}

#[test]
fn predicted_mask_keeps_input_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("fresh.ckpt");
    Checkpoint::fresh(NetworkConfig::tiny(32)).unwrap().save(&ckpt).unwrap();
    for (w, h) in [(32, 32), (100, 61), (7, 19)] {
        let img = dir.path().join(format!("{w}x{h}.png"));
        RgbImage::from_fn(w, h, |x, y| image::Rgb([(x * 5) as u8, (y * 9) as u8, 128])).save(&img).unwrap();
        let mask = dir.path().join(format!("{w}x{h}-mask.png"));
        ok(&lssf(&["predict", "--checkpoint", s(&ckpt), "--image", s(&img), "--out-mask", s(&mask)]));
        let m: GrayImage = image::open(&mask).unwrap().to_luma8();
        assert_eq!(m.dimensions(), (w, h));
        assert!(m.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));
    }
    let missing = dir.path().join("nope.png");
    let out = lssf(&["predict", "--checkpoint", s(&ckpt), "--image", s(&missing), "--out-mask", s(&missing)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_eval_and_warm_start() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 4, 16, 1);
    let run = dir.path().join("run");
    let mut args = vec!["train", "--data", s(&data), "--out", s(&run), "--batch-size", "2", "--max-steps", "4", "--seed", "3"];
    args.extend(TINY);
    let out = lssf(&args);
    let report: Value = serde_json::from_str(&ok(&out)).unwrap();
    assert_eq!(report["schema"], 1);
    assert_eq!(report["n_images"], 4);
    for f in ["best.ckpt", "last.ckpt", "history.csv", "metrics.json", "config.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let written: Value = serde_json::from_slice(&std::fs::read(run.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(written, report);

    let last = run.join("last.ckpt");
    let eval = |ck: &Path| ok(&lssf(&["eval", "--checkpoint", s(ck), "--data", s(&data)]));
    assert_eq!(eval(&last), eval(&last));
    let detailed: Value = serde_json::from_str(&ok(&lssf(&["eval", "--checkpoint", s(&last), "--data", s(&data), "--per-image"]))).unwrap();
    assert_eq!(detailed["per_image"].as_array().unwrap().len(), 4);

    let hash = hex::encode(Sha256::digest(std::fs::read(&last).unwrap()));
    let warm = dir.path().join("warm");
    let out = lssf(&["train", "--data", s(&data), "--out", s(&warm), "--init-from", s(&last), "--max-steps", "2", "--batch-size", "2"]);
    ok(&out);
    let log = stderr(&out);
    assert!(log.contains("warm start") && log.contains(&hash), "{log}");
    let resumed = Checkpoint::load(&warm.join("last.ckpt")).unwrap();
    assert_eq!((resumed.step, resumed.seed), (6, 3));

    let out = lssf(&["train", "--data", s(&data), "--out", s(&warm), "--init-from", s(&last), "--widths", "4,8,12,20"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn cli_training_overfits_synthetic_set() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 8, 64, 17);
    let run = dir.path().join("run");
    let out = lssf(&[
        "train", "--data", s(&data), "--out", s(&run), "--size", "64", "--widths", "4,8,12,16", "--lr", "3e-3",
        "--batch-size", "4", "--max-steps", "300", "--max-epochs", "1000", "--no-early-stop", "--seed", "17",
    ]);
    ok(&out);
    let eval: Value = serde_json::from_str(&ok(&lssf(&["eval", "--checkpoint", s(&run.join("best.ckpt")), "--data", s(&data)]))).unwrap();
    let j = eval["jaccard"].as_f64().unwrap();
    assert!(j >= 0.95, "jaccard {j}");
}

#[test]
fn selftest_passes() {
    let out = lssf(&["selftest", "--instances", "1", "--json"]);
    let suites: Value = serde_json::from_str(&ok(&out)).unwrap();
    let suites = suites.as_array().unwrap();
    assert_eq!(suites.len(), 4);
    assert!(suites.iter().all(|s| s["cases"].as_array().unwrap().iter().all(|c| c["passed"] == true)));
}
