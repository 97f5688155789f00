use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bcdnet_cli::config::TrainConfig;
use bcdnet_cli::metrics::{read_metrics, METRICS_HEADER};
use bcdnet_core::model::{Model, ModelConfig};
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_bcdnet");

fn bcdnet(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("BCDNET_SEED").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let out = dir.join(format!("synth_{n}_{seed}"));
    let o = bcdnet(&[
        "synth",
        s(&out),
        "--n-per-class",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for class in std::fs::read_dir(root).unwrap() {
        for f in std::fs::read_dir(class.unwrap().path()).unwrap() {
            let p = f.unwrap().path();
            out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}

fn write_config(dir: &Path, name: &str, cfg: &TrainConfig) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, cfg.to_json()).unwrap();
    p
}

fn micro(epochs: u32) -> TrainConfig {
    TrainConfig {
        epochs,
        ..TrainConfig::micro()
    }
}

#[test]
fn synth_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let a = files(&synth(dir.path(), 5, 1));
    assert_eq!(a.len(), 10);
    assert!(a.iter().all(|(p, _)| p.extension().unwrap() == "png"));
    let other = dir.path().join("again");
    assert!(bcdnet(&["synth", s(&other), "--n-per-class", "5", "--seed", "1"])
        .status
        .success());
    assert_eq!(files(&other), a);
    assert_ne!(files(&synth(dir.path(), 5, 2)), a);
}

#[test]
fn train_writes_artifacts_and_eval_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 10, 0);
    let cfg = write_config(dir.path(), "cfg.json", &micro(2));
    let run = dir.path().join("run");
    let o = bcdnet(&[
        "train",
        "--config",
        s(&cfg),
        "--data-root",
        s(&data),
        "--out-dir",
        s(&run),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "metrics.csv",
        "timing.csv",
        "best.ckpt",
        "last.ckpt",
        "DONE",
        "config.json",
        "manifest.tsv",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }

    let text = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(METRICS_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.len() == 7));
    assert_eq!(
        rows.iter().map(|r| r[1]).collect::<Vec<_>>(),
        ["train", "val", "train", "val"]
    );
    assert_eq!(read_metrics(&run.join("metrics.csv")).unwrap().len(), 4);

    let ckpt = run.join("last.ckpt");
    let eval = |split: &str| {
        let o = bcdnet(&[
            "eval",
            "--checkpoint",
            s(&ckpt),
            "--data-root",
            s(&data),
            "--split",
            split,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        serde_json::from_str::<Value>(&stdout(&o)).unwrap()
    };
    let first = eval("test");
    assert_eq!(first, eval("test"));
    assert_eq!(first["split"], "test");
    assert_eq!(first["records"], 2);
    let written: Value = serde_json::from_str(&std::fs::read_to_string(run.join("eval_test.json")).unwrap()).unwrap();
    assert_eq!(written, first);
    assert_eq!(eval("train")["records"], 14);
}

#[test]
fn seed_environment_variable_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 10, 0);
    let cfg = write_config(dir.path(), "cfg.json", &micro(1));
    let run = |seed: Option<&str>, name: &str| {
        let out = dir.path().join(name);
        let mut cmd = Command::new(BIN);
        cmd.args([
            "train",
            "--config",
            s(&cfg),
            "--data-root",
            s(&data),
            "--out-dir",
            s(&out),
        ])
        .env_remove("BCDNET_SEED");
        if let Some(v) = seed {
            cmd.env("BCDNET_SEED", v);
        }
        assert!(cmd.output().unwrap().status.success());
        std::fs::read_to_string(out.join("config.json")).unwrap()
    };
    let base: TrainConfig = serde_json::from_str(&run(None, "a")).unwrap();
    let seeded: TrainConfig = serde_json::from_str(&run(Some("7"), "b")).unwrap();
    assert_eq!(base.seed, 0);
    assert_eq!(seeded.seed, 7);

    let o = Command::new(BIN)
        .args(["train", "--config", s(&cfg), "--data-root", s(&data)])
        .env("BCDNET_SEED", "seven")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("BCDNET_SEED"));
}

#[test]
fn io_and_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 3, 0);
    let missing = dir.path().join("nope.ckpt");
    let o = bcdnet(&["eval", "--checkpoint", s(&missing), "--data-root", s(&data)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.ckpt"), "{}", stderr(&o));

    let garbage = dir.path().join("garbage.ckpt");
    std::fs::write(&garbage, b"not a checkpoint at all").unwrap();
    let o = bcdnet(&["eval", "--checkpoint", s(&garbage), "--data-root", s(&data)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("magic"), "{}", stderr(&o));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"epoch": 3}"#).unwrap();
    let o = bcdnet(&["train", "--config", s(&bad), "--data-root", s(&data)]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = write_config(dir.path(), "cfg.json", &micro(1));
    let o = bcdnet(&[
        "train",
        "--config",
        s(&cfg),
        "--data-root",
        s(&dir.path().join("absent")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_reports_every_layer_and_catches_a_fault() {
    let o = bcdnet(&["gradcheck", "--seeds", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    let layers = [
        "conv2d",
        "maxpool2d",
        "relu",
        "linear",
        "batchnorm2d",
        "dropout",
        "softmax_cross_entropy",
    ];
    for layer in layers {
        let line = out
            .lines()
            .find(|l| l.starts_with(&format!("{layer} ")))
            .unwrap_or_else(|| panic!("{layer} missing:\n{out}"));
        assert!(line.ends_with("ok"), "{line}");
    }

    let o = bcdnet(&["gradcheck", "--seeds", "2", "--inject-fault", "conv2d"]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(out.contains("failing: conv2d"), "{out}");
    assert_eq!(out.lines().filter(|l| l.ends_with("FAIL")).count(), 1);
}

#[test]
fn bench_reports_model_size() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        model: ModelConfig {
            input_hw: 16,
            block_channels: vec![4],
            fc_hidden: 8,
            ..ModelConfig::micro()
        },
        augment: bcdnet_core::data::AugmentPolicy {
            target_hw: 16,
            ..Default::default()
        },
        ..micro(1)
    };
    let expected = Model::<f32>::build(&cfg.model, 0).unwrap().param_count();
    let path = write_config(dir.path(), "bench.json", &cfg);
    let mut rss = Vec::new();
    for bs in [1, 4, 16] {
        let o = bcdnet(&["bench", "--config", s(&path), "--batch-size", &bs.to_string()]);
        assert!(o.status.success(), "{}", stderr(&o));
        let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
        assert_eq!(r["param_count"], expected);
        assert_eq!(r["batch_size"], bs);
        assert!(r["forward_imgs_per_s"].as_f64().unwrap() > 0.0);
        assert!(r["train_step_imgs_per_s"].as_f64().unwrap() > 0.0);
        rss.push(r["peak_rss_bytes"].as_u64().unwrap());
    }
    assert!(rss.windows(2).all(|w| w[0] <= w[1]), "{rss:?}");
}

#[test]
#[ignore = "timing-sensitive; run on an idle machine"]
fn bench_throughput_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "micro.json", &TrainConfig::micro());
    let rates: Vec<f64> = (0..3)
        .map(|_| {
            let o = bcdnet(&["bench", "--config", s(&path)]);
            let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
            r["forward_imgs_per_s"].as_f64().unwrap()
        })
        .collect();
    let mean = rates.iter().sum::<f64>() / 3.0;
    assert!(rates.iter().all(|r| (r - mean).abs() / mean < 0.2), "{rates:?}");
}

#[test]
fn stats_prints_and_writes_channel_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 5, 0);
    let cfg = write_config(dir.path(), "cfg.json", &TrainConfig::micro());
    let o = bcdnet(&["stats", "--data-root", s(&data), "--config", s(&cfg), "--write"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let mean: Vec<f64> = serde_json::from_value(v["mean"].clone()).unwrap();
    let std: Vec<f64> = serde_json::from_value(v["std"].clone()).unwrap();
    assert!(mean.iter().all(|m| (0.0..=1.0).contains(m)));
    assert!(std.iter().all(|s| *s > 0.0));
    let updated = TrainConfig::load(Some(&cfg)).unwrap();
    assert_eq!(updated.augment.mean.to_vec(), mean);
    assert_eq!(updated.augment.std.to_vec(), std);

    assert_eq!(
        bcdnet(&["stats", "--data-root", s(&data), "--write"]).status.code(),
        Some(2)
    );
}
