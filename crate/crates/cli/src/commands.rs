use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};
use image::imageops::{self, FilterType};
use image::GrayImage;
use log::{info, warn};
use lssf_core::checkpoint::Checkpoint;
use lssf_core::config::NetworkConfig;
use lssf_core::data::{image_to_tensor, resolve_entries, save_mask, split_manifest, synth_lesions, Dataset};
use lssf_core::loss::LossConfig;
use lssf_core::metrics::ConfusionCounts;
use lssf_core::network::predict_mask;
use lssf_core::profile::{profile, CostReport};
use lssf_core::selftest;
use lssf_core::train::{evaluate, write_history, Init};
use lssf_tensor::Mode;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::run_config::{resolve_seed, ConfigError, RunConfig};
use crate::{EvalArgs, NetworkOverrides, PredictArgs, ReportArgs, SelftestArgs, SynthArgs, TrainArgs};

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn apply_overrides(net: &mut NetworkConfig, o: &NetworkOverrides) {
    if let Some(s) = o.size {
        net.input_size = s;
    }
    if let Some(w) = o.widths {
        net.widths = w;
    }
}

fn check_threshold(t: f64) -> Result<(), ConfigError> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(ConfigError(format!("--threshold {t} must lie in (0, 1)")))
    }
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, String)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let hash = hex::encode(Sha256::digest(&bytes));
    let ck = Checkpoint::from_bytes(&bytes).with_context(|| format!("loading {}", path.display()))?;
    Ok((ck, hash))
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let warm = match &a.init_from {
        Some(p) => {
            let (ck, hash) = load_checkpoint(p)?;
            info!(
                "warm start from {} (sha256 {hash}, epoch {}, step {})",
                p.display(),
                ck.epoch,
                ck.step
            );
            // Without a document, the architecture comes from the checkpoint.
            if a.config.is_none() {
                cfg.network = ck.config.clone();
            }
            Some(ck)
        }
        None => None,
    };
    apply_overrides(&mut cfg.network, &a.network);
    cfg.data = a.data.clone().or(cfg.data);
    cfg.val_data = a.val_data.clone().or(cfg.val_data);
    cfg.out = a.out.clone().or(cfg.out);
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(e) = a.max_epochs {
        cfg.train.max_epochs = e;
    }
    if a.max_steps.is_some() {
        cfg.train.max_steps = a.max_steps;
    }
    if let Some(lr) = a.lr {
        cfg.train.adam.lr = lr;
    }
    if a.no_early_stop {
        cfg.train.early_stopping.enabled = false;
    }
    let mut seed = resolve_seed(a.seed, cfg.seed)?;
    if let Some(ck) = &warm {
        // Data order and dropout continue the checkpoint's schedule.
        if seed != ck.seed {
            warn!("seed {seed} ignored; a warm start keeps the checkpoint seed {}", ck.seed);
        }
        seed = ck.seed;
    }
    cfg.apply_seed(seed);
    cfg.validate()?;

    let data = cfg.data.clone().ok_or_else(|| ConfigError("no training data: pass --data or set `data`".into()))?;
    let out = cfg.out.clone().ok_or_else(|| ConfigError("no output directory: pass --out or set `out`".into()))?;
    let size = cfg.network.input_size;
    let entries = resolve_entries(&data)?;
    let (train_entries, val_entries) = match &cfg.val_data {
        Some(v) => (entries, Some(resolve_entries(v)?)),
        None if cfg.val_fraction > 0.0 => {
            let mut parts = split_manifest(&entries, &[1.0 - cfg.val_fraction, cfg.val_fraction], seed)?;
            let val = parts.pop().unwrap_or_default();
            (parts.pop().unwrap_or_default(), (!val.is_empty()).then_some(val))
        }
        None => (entries, None),
    };
    let train_set = Dataset::load(&train_entries, size)?;
    let val_set = val_entries.map(|v| Dataset::load(&v, size)).transpose()?;
    info!(
        "seed {seed}; {} training and {} validation images at {size}px",
        train_set.len(),
        val_set.as_ref().map_or(0, Dataset::len)
    );

    let init = warm.map_or(Init::Fresh, Init::Checkpoint);
    let outcome = lssf_core::train::train(&cfg.network, &train_set, val_set.as_ref(), &cfg.loss, &cfg.train, init)?;

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    outcome.best.save(&out.join("best.ckpt"))?;
    outcome.last.save(&out.join("last.ckpt"))?;
    write_history(&out.join("history.csv"), &outcome.history)?;
    write_json(&out.join("config.json"), &cfg)?;
    let eval_set = val_set.as_ref().unwrap_or(&train_set);
    let eval = evaluate(&outcome.best, eval_set, &cfg.loss, cfg.train.threshold, cfg.train.aggregation)?;
    write_json(&out.join("metrics.json"), &eval.report)?;
    info!(
        "best epoch {}, {} steps{}; outputs in {}",
        outcome.best_epoch.map_or("none".to_string(), |e| e.to_string()),
        outcome.last.step,
        if outcome.stopped_early { ", stopped early" } else { "" },
        out.display()
    );
    print_json(&eval.report)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct ImageCounts<'a> {
    id: &'a str,
    #[serde(flatten)]
    counts: ConfusionCounts,
}

#[derive(Serialize)]
struct DetailedReport<'a, R> {
    report: &'a R,
    per_image: Vec<ImageCounts<'a>>,
}

pub fn eval(a: EvalArgs) -> Result<ExitCode> {
    check_threshold(a.threshold)?;
    let (ck, _) = load_checkpoint(&a.checkpoint)?;
    let entries = resolve_entries(&a.data)?;
    let data = Dataset::load(&entries, ck.config.input_size)?;
    let eval = evaluate(&ck, &data, &LossConfig::default(), a.threshold, a.aggregation.into())?;
    if a.per_image {
        let per_image = eval.per_image.iter().map(|(id, counts)| ImageCounts { id, counts: *counts }).collect();
        print_json(&DetailedReport {
            report: &eval.report,
            per_image,
        })?;
    } else {
        print_json(&eval.report)?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn predict(a: PredictArgs) -> Result<ExitCode> {
    check_threshold(a.threshold)?;
    let (ck, _) = load_checkpoint(&a.checkpoint)?;
    let img = image::open(&a.image).with_context(|| format!("reading {}", a.image.display()))?.to_rgb8();
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        anyhow::bail!("{} has a zero dimension", a.image.display());
    }
    let s = ck.config.input_size;
    let x = image_to_tensor(&img, s).reshape([1, s, s, 3])?;
    let prob = ck.model().predict(&x, Mode::Infer, 0)?;
    let mask = predict_mask(&prob, a.threshold)?;
    let small = GrayImage::from_raw(s as u32, s as u32, mask.image(0).to_vec()).expect("mask is S x S");
    let full = imageops::resize(&small, w, h, FilterType::Nearest);
    save_mask(&a.out_mask, full.as_raw(), w as usize, h as usize)?;
    info!(
        "{}x{h} mask with {:.1}% foreground written to {}",
        w,
        100.0 * mask.positives() as f64 / (s * s) as f64,
        a.out_mask.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn print_table(r: &CostReport) {
    println!("{:<28} {:>16} {:>10} {:>14}", "layer", "output", "params", "flops");
    for l in &r.layers {
        let shape = l.shape.iter().map(ToString::to_string).collect::<Vec<_>>().join("x");
        println!("{:<28} {:>16} {:>10} {:>14}", l.name, shape, l.params, l.flops);
    }
    println!(
        "total: {} params ({:.3} M), {} FLOPs ({:.3} G) at {}x{}",
        r.total_params,
        r.total_params as f64 / 1e6,
        r.total_flops,
        r.total_flops as f64 / 1e9,
        r.input_size,
        r.input_size
    );
    println!("convention: {}", r.flop_convention);
}

pub fn report(a: ReportArgs) -> Result<ExitCode> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply_overrides(&mut cfg.network, &a.network);
    cfg.network.validate().map_err(|e| ConfigError(e.to_string()))?;
    let r = profile(&cfg.network)?;
    if a.json {
        print_json(&r)?;
    } else {
        print_table(&r);
    }
    Ok(ExitCode::SUCCESS)
}

pub fn selftest(a: SelftestArgs) -> Result<ExitCode> {
    if a.instances == 0 {
        return Err(ConfigError("--instances must be at least 1".into()).into());
    }
    let suites = selftest::run_all(a.instances);
    let passed = suites.iter().all(|s| s.passed());
    if a.json {
        print_json(&suites)?;
    } else {
        for s in &suites {
            println!("{} ({:.1}s): {}", s.suite, s.seconds, if s.passed() { "PASS" } else { "FAIL" });
            for c in &s.cases {
                println!("  {} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
            }
        }
    }
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

pub fn synth(a: SynthArgs) -> Result<ExitCode> {
    let seed = resolve_seed(a.seed, None)?;
    let m = synth_lesions(a.n, a.size, seed, &a.out)?;
    info!("{} synthetic {}px pairs (seed {seed}) in {}", m.entries.len(), m.image_size, a.out.display());
    Ok(ExitCode::SUCCESS)
}
