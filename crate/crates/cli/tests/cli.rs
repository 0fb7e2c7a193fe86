//! End-to-end command tests over a temp artifact tree.  Training steps are
//! tiny; these exercise plumbing and determinism, not model quality.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use dcgan_cli::run;

static STAMP: AtomicU64 = AtomicU64::new(0);

fn scratch(label: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "dcgan-cli-{label}-{}-{}",
        std::process::id(),
        STAMP.fetch_add(1, Ordering::Relaxed)
    ));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn call(args: &[&str]) -> dc_gan::Result<()> {
    let mut argv = vec!["dcgan".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    run(argv)
}

fn ok(args: &[&str]) {
    if let Err(e) = call(args) {
        panic!("command {args:?} failed: {e}");
    }
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

/// Small opinion dataset: 48 particles, 10 grid steps.
fn simulate_small(dir: &Path, seed: &str) {
    ok(&[
        "simulate-data",
        "--dataset",
        "opinion",
        "--particles",
        "48",
        "--horizon",
        "0.2",
        "--dt",
        "0.02",
        "--seed",
        seed,
        "--out",
        dir.to_str().unwrap(),
    ]);
}

fn train_config(dir: &Path) -> PathBuf {
    let cfg = dir.join("train.cfg");
    fs::write(
        &cfg,
        "[train]\ndepth = 2\nbatch = 16\nsteps = 2\nhidden = 8,8\ninit_family = uniform\n",
    )
    .unwrap();
    cfg
}

#[test]
fn simulate_reruns_byte_identical() {
    let root = scratch("sim-determinism");
    let (a, b) = (root.join("a"), root.join("b"));
    simulate_small(&a, "7");
    simulate_small(&b, "7");
    for f in ["data.csv", "manifest.txt", "config.txt"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f} differs between reruns");
    }
    let c = root.join("c");
    simulate_small(&c, "8");
    assert_ne!(read(&a.join("data.csv")), read(&c.join("data.csv")), "seed must matter");
}

#[test]
fn simulate_reruns_from_persisted_config() {
    let root = scratch("sim-config");
    let a = root.join("a");
    simulate_small(&a, "7");
    let b = root.join("b");
    ok(&[
        "simulate-data",
        "--config",
        a.join("config.txt").to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
    ]);
    assert_eq!(read(&a.join("data.csv")), read(&b.join("data.csv")));
    assert_eq!(read(&a.join("manifest.txt")), read(&b.join("manifest.txt")));
}

#[test]
fn flags_override_config_values() {
    let root = scratch("precedence");
    let cfg = root.join("sim.cfg");
    fs::write(&cfg, "[simulate-data]\nparticles = 8\nseed = 1\ndt = 0.02\nhorizon = 0.04\n").unwrap();
    let a = root.join("a");
    ok(&[
        "simulate-data",
        "--config",
        cfg.to_str().unwrap(),
        "--particles",
        "5",
        "--out",
        a.to_str().unwrap(),
    ]);
    let manifest = read(&a.join("manifest.txt"));
    assert!(manifest.contains("particles = 5"), "flag should win:\n{manifest}");
    assert!(manifest.contains("seed = 1"), "config should fill the rest:\n{manifest}");
}

#[test]
fn sample_q1_returns_the_data() {
    let root = scratch("q1");
    let sim = root.join("sim");
    simulate_small(&sim, "3");
    let trained = root.join("trained");
    ok(&[
        "train",
        "--config",
        train_config(&root).to_str().unwrap(),
        "--data",
        sim.join("data.csv").to_str().unwrap(),
        "--seed",
        "11",
        "--out",
        trained.to_str().unwrap(),
    ]);
    let samples = root.join("samples");
    ok(&[
        "sample",
        "--generator",
        trained.join("generator").to_str().unwrap(),
        "--data",
        sim.join("data.csv").to_str().unwrap(),
        "--q",
        "1",
        "--seed",
        "5",
        "--out",
        samples.to_str().unwrap(),
    ]);
    assert_eq!(
        read(&sim.join("data.csv")),
        read(&samples.join("samples-0.csv")),
        "q = 1 must return the data unchanged"
    );
}

#[test]
fn full_pipeline_produces_all_scores_and_reruns_identically() {
    let root = scratch("pipeline");
    let sim = root.join("sim");
    simulate_small(&sim, "2");
    let data = sim.join("data.csv");
    let trained = root.join("trained");
    ok(&[
        "train",
        "--config",
        train_config(&root).to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--seed",
        "9",
        "--out",
        trained.to_str().unwrap(),
    ]);
    assert!(trained.join("generator/generator.json").is_file());
    assert!(trained.join("generator/v0.csv").is_file());
    assert!(trained.join("generator/v1.csv").is_file());
    let loss = read(&trained.join("loss.csv"));
    assert_eq!(loss.lines().count(), 3, "header + one line per step:\n{loss}");

    let samples = root.join("samples");
    ok(&[
        "sample",
        "--generator",
        trained.join("generator").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--q",
        "10",
        "--chains",
        "2",
        "--seed",
        "4",
        "--out",
        samples.to_str().unwrap(),
    ]);
    assert!(samples.join("samples-0.csv").is_file());
    assert!(samples.join("samples-1.csv").is_file());

    let eval = root.join("eval");
    ok(&[
        "evaluate",
        "--real",
        data.to_str().unwrap(),
        "--fake",
        samples.join("samples-0.csv").to_str().unwrap(),
        "--seed",
        "6",
        "--out",
        eval.to_str().unwrap(),
    ]);
    let report = root.join("report");
    ok(&[
        "report",
        eval.join("report.csv").to_str().unwrap(),
        "--kde-data",
        samples.join("samples-0.csv").to_str().unwrap(),
        "--kde-bandwidth",
        "0.15",
        "--out",
        report.to_str().unwrap(),
    ]);

    let md = read(&report.join("report.md"));
    for col in ["discriminative", "predictive", "sig-MMD", "independence"] {
        assert!(md.contains(col), "missing column {col}:\n{md}");
    }
    assert!(!md.contains(" - "), "all four scores should be present:\n{md}");
    assert!(report.join("kde.csv").is_file());

    // Re-run every stage from its persisted config into fresh directories.
    let trained2 = root.join("trained2");
    ok(&[
        "train",
        "--config",
        trained.join("config.txt").to_str().unwrap(),
        "--out",
        trained2.to_str().unwrap(),
    ]);
    for f in ["generator/v0.csv", "generator/v1.csv", "generator/generator.json", "loss.csv"] {
        assert_eq!(read(&trained.join(f)), read(&trained2.join(f)), "{f} differs on re-run");
    }
    let samples2 = root.join("samples2");
    ok(&[
        "sample",
        "--config",
        samples.join("config.txt").to_str().unwrap(),
        "--out",
        samples2.to_str().unwrap(),
    ]);
    assert_eq!(read(&samples.join("samples-0.csv")), read(&samples2.join("samples-0.csv")));
    assert_eq!(read(&samples.join("samples-1.csv")), read(&samples2.join("samples-1.csv")));
    let eval2 = root.join("eval2");
    ok(&[
        "evaluate",
        "--config",
        eval.join("config.txt").to_str().unwrap(),
        "--out",
        eval2.to_str().unwrap(),
    ]);
    assert_eq!(read(&eval.join("report.csv")), read(&eval2.join("report.csv")));
}

#[test]
fn evaluate_score_subset_and_timestamps() {
    let root = scratch("subset");
    let sim = root.join("sim");
    simulate_small(&sim, "5");
    let data = sim.join("data.csv");
    let eval = root.join("eval");
    ok(&[
        "evaluate",
        "--real",
        data.to_str().unwrap(),
        "--fake",
        data.to_str().unwrap(),
        "--scores",
        "sig_mmd,independence",
        "--timestamps",
        "0.1,0.2",
        "--out",
        eval.to_str().unwrap(),
    ]);
    let report = read(&eval.join("report.csv"));
    let line = report.lines().nth(1).unwrap();
    let fields: Vec<&str> = line.split(',').collect();
    assert_ne!(fields[0], "", "sig_mmd should be present");
    assert_ne!(fields[1], "", "independence should be present");
    assert_eq!(fields[2], "", "discriminative skipped");
    assert_eq!(fields[3], "", "predictive skipped");
}

#[test]
fn csv_ingest_windows_and_scales() {
    let root = scratch("ingest");
    let raw = root.join("raw.csv");
    let mut text = String::from("open,close\n");
    for i in 0..10 {
        text.push_str(&format!("{},{}\n", 10.0 + i as f64, 100.0 - 2.0 * i as f64));
    }
    fs::write(&raw, text).unwrap();
    let out = root.join("out");
    ok(&[
        "simulate-data",
        "--dataset",
        "csv",
        "--input",
        raw.to_str().unwrap(),
        "--window",
        "4",
        "--stride",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    let batch = dc_gan::io::read_path_batch(&out.join("data.csv")).unwrap();
    // starts at rows 0, 3, 6 (start 9 would need rows 9..13).
    assert_eq!(batch.len(), 3);
    assert_eq!(batch.channels(), 2);
    assert_eq!(batch.grid().steps(), 3);
    let all = batch.values();
    assert!(all.iter().all(|v| (0.0..=1.0).contains(v)), "min-max scaled to [0,1]");
    // First window starts at the global minimum of channel 0 and maximum of channel 1.
    assert_eq!(batch.value(0, 0, 0), 0.0);
    assert_eq!(batch.value(0, 0, 1), 1.0);
    let manifest = read(&out.join("manifest.txt"));
    assert!(manifest.contains("scale_lo_0"), "{manifest}");
    assert!(manifest.contains("rows = 10"), "{manifest}");
}

#[test]
fn usage_errors_and_missing_files() {
    let err = call(&["frobnicate"]).unwrap_err().to_string();
    assert!(err.contains("Usage") || err.contains("usage"), "{err}");
    let err = call(&["sample", "--bogus-flag"]).unwrap_err().to_string();
    assert!(err.contains("Usage") || err.contains("usage"), "{err}");
    let err = call(&[
        "train",
        "--data",
        "/nonexistent/data.csv",
        "--out",
        "/tmp/never-created",
    ])
    .unwrap_err()
    .to_string();
    assert!(err.contains("/nonexistent/data.csv"), "{err}");
    let err = call(&["train", "--out", "/tmp/never-created"]).unwrap_err().to_string();
    assert!(err.contains("--data"), "{err}");
}

#[test]
fn shuffle_neighbors_needs_single_chain() {
    let err = call(&[
        "sample",
        "--generator",
        "g",
        "--data",
        "d",
        "--out",
        "o",
        "--chains",
        "2",
        "--shuffle-neighbors",
    ])
    .unwrap_err()
    .to_string();
    assert!(err.contains("single chain"), "{err}");
}
