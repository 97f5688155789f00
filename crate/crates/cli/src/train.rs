use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use bcdnet_core::autograd::Tape;
use bcdnet_core::data::{build_manifest, Loader, Split};
use bcdnet_core::model::{Checkpoint, Model};
use bcdnet_core::nn::Mode;
use bcdnet_core::optim::{accuracy, argmax_rows, cross_entropy, softmax_cross_entropy, Adam};
use bcdnet_core::{exec_mode, ExecMode};

use crate::config::TrainConfig;
use crate::metrics::{peak_rss_bytes, MetricsRecord, MetricsWriter, METRICS_HEADER};

pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const BEST_CKPT: &str = "best.ckpt";
pub const LAST_CKPT: &str = "last.ckpt";
pub const DONE_MARKER: &str = "DONE";
pub const CONFIG_COPY: &str = "config.json";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub records: Vec<MetricsRecord>,
    pub best_epoch: u32,
    pub out_dir: PathBuf,
}

impl TrainSummary {
    pub fn last(&self, split: Split) -> Option<&MetricsRecord> {
        self.records.iter().rev().find(|r| r.split == split)
    }
}

/// Mean loss and accuracy of `model` over every batch of `loader`, in eval
/// mode.
pub fn evaluate(model: &Model<f32>, loader: &mut Loader, batch_size: usize) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut hits = 0.0;
    let n = loader.len() as f64;
    for b in loader.plan(batch_size, 0, 0) {
        let batch = loader.load(&b, 0, 0)?;
        let logits = model.predict(&batch.images)?;
        let (l, _) = softmax_cross_entropy(&logits, &batch.labels)?;
        loss += f64::from(l) * batch.len() as f64;
        hits += accuracy(&logits, &batch.labels)? * batch.len() as f64;
    }
    Ok((loss / n, hits / n))
}

/// Run the full training protocol and write every artifact into `out_dir`.
///
/// Each epoch trains on the shuffled, augmented train split with mean
/// softmax cross-entropy and Adam. Both metrics rows of the epoch are then
/// measured in eval mode with the end-of-epoch weights: the train split
/// without augmentation and the val split. The learning rate for epoch `e`
/// (0-based) is `lr · gamma^⌊e / step_size⌋`.
///
/// In deterministic mode the wall-time and RSS columns of `metrics.csv` are
/// written as 0 so the file is reproducible; measured values always go to
/// `timing.csv`.
pub fn train(cfg: &TrainConfig, data_root: &Path, out_dir: &Path, log: &mut dyn Write) -> Result<TrainSummary> {
    cfg.validate()?;
    let deterministic = exec_mode() == ExecMode::Deterministic;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let done = out_dir.join(DONE_MARKER);
    if done.exists() {
        std::fs::remove_file(&done)?;
    }
    std::fs::write(out_dir.join(CONFIG_COPY), cfg.to_json())?;

    let manifest =
        build_manifest(data_root, cfg.seed).with_context(|| format!("reading data root {}", data_root.display()))?;
    if manifest.num_classes() != cfg.model.num_classes {
        bail!(
            "data root has {} classes but model.num_classes is {}",
            manifest.num_classes(),
            cfg.model.num_classes
        );
    }
    std::fs::write(out_dir.join(MANIFEST_FILE), manifest.to_tsv())?;
    let mut train_loader = Loader::new(&manifest, Split::Train, cfg.augment)?;
    let mut train_eval_loader = Loader::new(&manifest, Split::Train, cfg.augment)?.without_augmentation();
    let mut val_loader = Loader::new(&manifest, Split::Val, cfg.augment)?;

    let mut model = Model::<f32>::build(&cfg.model, cfg.seed)?;
    let mut adam = Adam::new(cfg.optimizer)?;
    let mut schedule = cfg.scheduler()?;

    let mut metrics = MetricsWriter::create(&out_dir.join(METRICS_FILE), METRICS_HEADER)?;
    let mut timing = MetricsWriter::create(
        &out_dir.join(TIMING_FILE),
        "epoch,train_wall_time_s,eval_wall_time_s,peak_rss_bytes",
    )?;
    let mut records = Vec::with_capacity(2 * cfg.epochs as usize);
    let mut best: Option<(f64, f64, u32)> = None;

    writeln!(
        log,
        "{} train / {} val records, {} parameters",
        train_loader.len(),
        val_loader.len(),
        model.param_count()
    )?;
    for epoch in 0..cfg.epochs {
        schedule.epoch = epoch;
        let lr = schedule.lr();
        adam.set_lr(lr);

        let started = Instant::now();
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for b in train_loader.plan(cfg.batch_size, cfg.seed, u64::from(epoch)) {
            let batch = train_loader.load(&b, cfg.seed, u64::from(epoch))?;
            model.zero_grad();
            let mut tape = Tape::new();
            let x = tape.constant(batch.images);
            let logits = model.forward(&mut tape, x, Mode::Train)?;
            let loss = cross_entropy(&mut tape, logits, &batch.labels)?;
            loss_sum += f64::from(tape.value(loss).item()?) * batch.labels.len() as f64;
            hits += argmax_rows(tape.value(logits))?
                .iter()
                .zip(&batch.labels)
                .filter(|(p, l)| p == l)
                .count();
            model.backward(&tape, loss)?;
            adam.step(model.parameters_mut());
        }
        let train_time = started.elapsed().as_secs_f64();
        let n = train_loader.len() as f64;
        let (running_loss, running_acc) = (loss_sum / n, hits as f64 / n);

        let started = Instant::now();
        let (train_loss, train_acc) = evaluate(&model, &mut train_eval_loader, cfg.batch_size)?;
        let (val_loss, val_acc) = evaluate(&model, &mut val_loader, cfg.batch_size)?;
        let eval_time = started.elapsed().as_secs_f64();
        let rss = peak_rss_bytes();

        for (split, loss, acc, secs) in [
            (Split::Train, train_loss, train_acc, train_time),
            (Split::Val, val_loss, val_acc, eval_time),
        ] {
            let rec = MetricsRecord {
                epoch,
                split,
                loss,
                accuracy: acc,
                lr,
                epoch_wall_time_s: if deterministic { 0.0 } else { secs },
                peak_rss_bytes: if deterministic { 0 } else { rss },
            };
            metrics.row(&rec.to_csv())?;
            records.push(rec);
        }
        timing.row(&format!("{epoch},{train_time},{eval_time},{rss}"))?;
        writeln!(
            log,
            "epoch {epoch:>3}  lr {lr:<8}  running loss {running_loss:.4} acc {running_acc:.3}  \
             train loss {train_loss:.4} acc {train_acc:.3}  val loss {val_loss:.4} acc {val_acc:.3}  {:.1}s",
            train_time + eval_time
        )?;

        let improved = match best {
            None => true,
            Some((acc, loss, _)) => val_acc > acc || (val_acc == acc && val_loss < loss),
        };
        if improved {
            best = Some((val_acc, val_loss, epoch));
            Checkpoint::capture(&model, Some(&adam), Some(cfg.preprocess())).save(out_dir.join(BEST_CKPT))?;
        }
    }
    Checkpoint::capture(&model, Some(&adam), Some(cfg.preprocess())).save(out_dir.join(LAST_CKPT))?;
    std::fs::write(&done, b"")?;
    let best_epoch = best.map_or(0, |b| b.2);
    writeln!(log, "best val epoch {best_epoch}; artifacts in {}", out_dir.display())?;
    Ok(TrainSummary {
        records,
        best_epoch,
        out_dir: out_dir.to_path_buf(),
    })
}
