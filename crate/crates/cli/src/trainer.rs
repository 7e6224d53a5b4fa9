//! Training loop: deterministic mini-batch Adam with per-epoch validation,
//! best-checkpoint tracking, optional early stopping, and resume.
//!
//! Determinism contract: every stochastic choice is drawn from a stream
//! keyed by (root seed, purpose, epoch index), so a resumed run replays
//! the exact trajectory of an uninterrupted one.

use std::path::PathBuf;

use wdmir_core::data::{Dataset, FeatureRecord, Split};
use wdmir_core::metrics::MetricsReport;
use wdmir_core::model::{train_step, ModelParams};
use wdmir_core::optim::AdamState;
use wdmir_core::rng::{shuffle_indices, stream_rng, StreamKind};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::evalcmd::evaluate_split;
use crate::{CliError, Result};

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val: Option<MetricsReport>,
}

#[derive(Debug, Clone)]
pub struct BestSnapshot {
    pub params: ModelParams,
    pub epoch: usize,
    pub val_acc: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub adam: AdamState,
    /// Epochs completed in total (including any resumed prefix).
    pub epoch: usize,
    /// Best validation accuracy seen, including the resumed prefix.
    pub best_val_acc: f64,
    /// Set only when this run improved on `best_val_acc`'s starting value.
    pub best: Option<BestSnapshot>,
    pub stats: Vec<EpochStats>,
    pub log: Vec<String>,
}

fn format_epoch(s: &EpochStats) -> String {
    match &s.val {
        Some(v) => format!(
            "epoch={} train_loss={:.6} train_acc={:.6} val_acc={:.6} val_wf1={:.6} val_wp={:.6} val_r={:.6}",
            s.epoch, s.train_loss, s.train_acc, v.accuracy, v.weighted_f1,
            v.weighted_precision, v.macro_recall
        ),
        None => format!(
            "epoch={} train_loss={:.6} train_acc={:.6}",
            s.epoch, s.train_loss, s.train_acc
        ),
    }
}

/// Count of logits rows whose argmax equals the record label.
fn batch_correct(logits: &[f64], records: &[&FeatureRecord], classes: usize) -> usize {
    records
        .iter()
        .enumerate()
        .filter(|(i, r)| {
            let row = &logits[i * classes..(i + 1) * classes];
            let mut best = 0;
            for (j, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = j;
                }
            }
            best == r.label
        })
        .count()
}

/// Run the training loop. `sink` receives each epoch's log line as it is
/// produced; the same lines come back in the outcome.
pub fn train(
    cfg: &RunConfig,
    dataset: &Dataset,
    resume: Option<&Checkpoint>,
    sink: &mut dyn FnMut(&str),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = cfg.model_config(dataset);
    let flags = cfg.ablation_flags();
    let adam_cfg = cfg.adam_config();

    let (mut params, mut adam, start_epoch, start_best) = match resume {
        Some(ck) => {
            ck.verify_model(&model)?;
            (
                ck.restore_params()?,
                ck.restore_adam(),
                ck.epoch,
                ck.best_val_acc,
            )
        }
        None => (
            ModelParams::init(model, &mut stream_rng(cfg.seed, StreamKind::Init, 0))?,
            AdamState::new(),
            0,
            f64::NEG_INFINITY,
        ),
    };
    if start_epoch > cfg.epochs {
        return Err(CliError::Usage(format!(
            "checkpoint is already at epoch {start_epoch}, beyond the {} epoch budget",
            cfg.epochs
        )));
    }

    let train_records = dataset.split(Split::Train);
    let val_records = dataset.split(Split::Val);
    if train_records.is_empty() && cfg.epochs > start_epoch {
        return Err(CliError::Data("train split is empty".into()));
    }

    let mut best_val_acc = start_best;
    let mut best: Option<BestSnapshot> = None;
    let mut stats = Vec::new();
    let mut log = Vec::new();
    let mut since_improve = 0usize;
    let mut completed = start_epoch;

    for epoch in start_epoch..cfg.epochs {
        let order = shuffle_indices(
            train_records.len(),
            &mut stream_rng(cfg.seed, StreamKind::Shuffle, epoch as u64),
        );
        let mut dropout_rng = stream_rng(cfg.seed, StreamKind::Dropout, epoch as u64);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.train_batch) {
            let batch: Vec<&FeatureRecord> = chunk.iter().map(|&i| train_records[i]).collect();
            let step = train_step(
                &mut params,
                &mut adam,
                &adam_cfg,
                &flags,
                &batch,
                cfg.clip_norm,
                if cfg.dropout > 0.0 {
                    Some(&mut dropout_rng)
                } else {
                    None
                },
            )?;
            loss_sum += step.loss * batch.len() as f64;
            correct += batch_correct(&step.logits, &batch, dataset.classes);
        }
        let n = train_records.len() as f64;
        let val = if val_records.is_empty() {
            None
        } else {
            let (report, _, _) = evaluate_split(
                &params,
                &flags,
                &val_records,
                dataset.classes,
                cfg.eval_batch,
            )?;
            Some(report)
        };
        let row = EpochStats {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val,
        };
        let line = format_epoch(&row);
        sink(&line);
        log.push(line);
        completed = epoch + 1;

        let mut improved = false;
        if let Some(v) = &row.val {
            if v.accuracy > best_val_acc {
                best_val_acc = v.accuracy;
                best = Some(BestSnapshot {
                    params: params.clone(),
                    epoch,
                    val_acc: v.accuracy,
                });
                improved = true;
            }
        }
        stats.push(row);
        if improved {
            since_improve = 0;
        } else {
            since_improve += 1;
            if let Some(p) = cfg.patience {
                if since_improve >= p {
                    break;
                }
            }
        }
    }

    Ok(TrainOutcome {
        params,
        adam,
        epoch: completed,
        best_val_acc,
        best,
        stats,
        log,
    })
}

#[derive(Debug)]
pub struct TrainArtifacts {
    pub outcome: TrainOutcome,
    pub last_path: PathBuf,
    pub best_path: Option<PathBuf>,
    pub log_path: PathBuf,
}

/// The `train` command: resolve data, run the loop, persist last/best
/// checkpoints and the epoch log under `out_dir`.
pub fn cmd_train(cfg: &RunConfig, sink: &mut dyn FnMut(&str)) -> Result<TrainArtifacts> {
    cfg.validate()?;
    let dataset = cfg.resolve_dataset()?;
    let resume = match &cfg.checkpoint {
        Some(path) => Some(Checkpoint::load(path)?),
        None => None,
    };
    let outcome = train(cfg, &dataset, resume.as_ref(), sink)?;
    let model = cfg.model_config(&dataset);

    std::fs::create_dir_all(&cfg.out_dir)?;
    let last_path = cfg.out_dir.join("last.ckpt");
    Checkpoint::capture(
        cfg,
        &model,
        &outcome.params,
        &outcome.adam,
        outcome.epoch,
        outcome.best_val_acc,
    )
    .save(&last_path)?;

    let best_path = match &outcome.best {
        Some(snap) => {
            let path = cfg.out_dir.join("best.ckpt");
            // the best checkpoint freezes the optimizer alongside the weights
            Checkpoint::capture(
                cfg,
                &model,
                &snap.params,
                &outcome.adam,
                snap.epoch + 1,
                snap.val_acc,
            )
            .save(&path)?;
            Some(path)
        }
        None => None,
    };

    let log_path = cfg.out_dir.join("train_log.txt");
    let mut text = outcome.log.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    std::fs::write(&log_path, text)?;

    Ok(TrainArtifacts {
        outcome,
        last_path,
        best_path,
        log_path,
    })
}
