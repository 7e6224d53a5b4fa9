//! Evaluation: run frozen-parameter inference over a split, score it, and
//! persist the report and confusion matrix.

use std::path::PathBuf;

use wdmir_core::data::{Dataset, FeatureRecord, Split};
use wdmir_core::metrics::{compute_metrics, MetricsReport};
use wdmir_core::model::{predict_batch, predict_record, AblationFlags, ModelParams};
use wdmir_core::progressive::Prediction;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::report::{confusion_csv, format_report};
use crate::{CliError, Result};

/// Batched frozen inference plus scoring. Batching only bounds how many
/// records are in flight at once; results do not depend on `eval_batch`.
pub fn evaluate_split(
    params: &ModelParams,
    flags: &AblationFlags,
    records: &[&FeatureRecord],
    classes: usize,
    eval_batch: usize,
) -> Result<(MetricsReport, Vec<usize>, Vec<usize>)> {
    let mut preds = Vec::with_capacity(records.len());
    for chunk in records.chunks(eval_batch.max(1)) {
        let batch = predict_batch(params, flags, chunk)?;
        preds.extend(batch.into_iter().map(|p| p.label));
    }
    let truths: Vec<usize> = records.iter().map(|r| r.label).collect();
    let report = compute_metrics(&preds, &truths, classes)?;
    Ok((report, preds, truths))
}

/// Dataset dims and class count must match what the checkpoint was
/// trained with; everything else may differ.
fn check_dataset(ck: &Checkpoint, dataset: &Dataset) -> Result<()> {
    let model = ck.model.to_config();
    if model.dims != dataset.dims || model.classes != dataset.classes {
        return Err(CliError::Data(format!(
            "dataset (dims {:?}, {} classes) does not match checkpoint (dims {:?}, {} classes)",
            dataset.dims, dataset.classes, model.dims, model.classes
        )));
    }
    Ok(())
}

#[derive(Debug)]
pub struct EvalArtifacts {
    pub report: MetricsReport,
    pub text: String,
    pub report_path: PathBuf,
    pub confusion_path: PathBuf,
}

/// The `evaluate` command: load a checkpoint, score one split, write
/// `report_<split>.txt` and `confusion_<split>.csv` under `out_dir`.
pub fn cmd_evaluate(cfg: &RunConfig, split: Split) -> Result<EvalArtifacts> {
    let ck_path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Usage("evaluate needs --checkpoint".into()))?;
    let ck = Checkpoint::load(ck_path)?;
    let dataset = cfg.resolve_dataset()?;
    check_dataset(&ck, &dataset)?;
    let params = ck.restore_params()?;
    let records = dataset.split(split);
    if records.is_empty() {
        return Err(CliError::Data(format!("split '{split}' is empty")));
    }
    let flags = cfg.ablation_flags();
    let (report, _, _) = evaluate_split(
        &params,
        &flags,
        &records,
        dataset.classes,
        cfg.eval_batch,
    )?;

    let text = format_report(split, &report, &dataset.class_names);
    std::fs::create_dir_all(&cfg.out_dir)?;
    let report_path = cfg.out_dir.join(format!("report_{split}.txt"));
    std::fs::write(&report_path, &text)?;
    let confusion_path = cfg.out_dir.join(format!("confusion_{split}.csv"));
    std::fs::write(&confusion_path, confusion_csv(&report.confusion))?;

    Ok(EvalArtifacts {
        report,
        text,
        report_path,
        confusion_path,
    })
}

#[derive(Debug)]
pub struct PredictOut {
    pub record_id: String,
    pub prediction: Prediction,
    pub class_name: String,
    pub line: String,
}

/// The `predict` command: single-record forward pass.
pub fn cmd_predict(cfg: &RunConfig, record_id: &str) -> Result<PredictOut> {
    let ck_path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Usage("predict needs --checkpoint".into()))?;
    let ck = Checkpoint::load(ck_path)?;
    let dataset = cfg.resolve_dataset()?;
    check_dataset(&ck, &dataset)?;
    let record = dataset
        .records
        .iter()
        .find(|r| r.id == record_id)
        .ok_or_else(|| CliError::Data(format!("record '{record_id}' not in dataset")))?;
    let params = ck.restore_params()?;
    let flags = cfg.ablation_flags();
    let prediction = predict_record(&params, &flags, record)?;
    let class_name = dataset.class_names[prediction.label].clone();
    let probs = prediction
        .probabilities
        .iter()
        .map(|p| format!("{p:.6}"))
        .collect::<Vec<_>>()
        .join(",");
    let line = format!(
        "record={record_id} label={} name={class_name} prob={:.6} probs={probs}",
        prediction.label, prediction.probabilities[prediction.label]
    );
    Ok(PredictOut {
        record_id: record_id.to_string(),
        prediction,
        class_name,
        line,
    })
}
