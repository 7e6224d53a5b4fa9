//! Ablation sweep: retrain the model once per architectural switch on the
//! same seed and dataset, score each on the test split, and emit a
//! comparison table.

use std::path::PathBuf;

use wdmir_core::data::Split;
use wdmir_core::metrics::MetricsReport;

use crate::config::RunConfig;
use crate::evalcmd::evaluate_split;
use crate::trainer::train;
use crate::{CliError, Result};

/// The sweep's rows: which structural switch each run flips. The final
/// row is the unmodified model and doubles as the baseline.
pub const ROWS: [&str; 5] = [
    "drop_flv_fla",
    "drop_fvat_favt",
    "drop_ftva",
    "disable_wfm",
    "full",
];

fn row_config(cfg: &RunConfig, row: &str) -> RunConfig {
    let mut c = cfg.clone();
    c.drop_flv_fla = row == "drop_flv_fla";
    c.drop_fvat_favt = row == "drop_fvat_favt";
    c.drop_ftva = row == "drop_ftva";
    c.disable_wfm = row == "disable_wfm";
    c
}

#[derive(Debug)]
pub struct AblateRow {
    pub name: &'static str,
    pub report: MetricsReport,
}

pub fn format_row(row: &AblateRow) -> String {
    format!(
        "row={} test_acc={:.6} test_wf1={:.6} test_wp={:.6} test_r={:.6}",
        row.name,
        row.report.accuracy,
        row.report.weighted_f1,
        row.report.weighted_precision,
        row.report.macro_recall
    )
}

#[derive(Debug)]
pub struct AblateArtifacts {
    pub rows: Vec<AblateRow>,
    pub table_path: PathBuf,
}

/// The `ablate` command. Each row trains from scratch with the shared
/// seed; the best-validation parameters (last parameters when there is no
/// validation split) are scored on the test split.
pub fn cmd_ablate(cfg: &RunConfig, sink: &mut dyn FnMut(&str)) -> Result<AblateArtifacts> {
    cfg.validate()?;
    let dataset = cfg.resolve_dataset()?;
    let test_records = dataset.split(Split::Test);
    if test_records.is_empty() {
        return Err(CliError::Data("test split is empty".into()));
    }

    let mut rows = Vec::with_capacity(ROWS.len());
    for name in ROWS {
        let row_cfg = row_config(cfg, name);
        let mut quiet = |_: &str| {};
        let outcome = train(&row_cfg, &dataset, None, &mut quiet)?;
        let scored = match &outcome.best {
            Some(snap) => &snap.params,
            None => &outcome.params,
        };
        let (report, _, _) = evaluate_split(
            scored,
            &row_cfg.ablation_flags(),
            &test_records,
            dataset.classes,
            cfg.eval_batch,
        )?;
        let row = AblateRow { name, report };
        sink(&format_row(&row));
        rows.push(row);
    }

    std::fs::create_dir_all(&cfg.out_dir)?;
    let table_path = cfg.out_dir.join("ablate.txt");
    let mut text = rows.iter().map(format_row).collect::<Vec<_>>().join("\n");
    text.push('\n');
    std::fs::write(&table_path, text)?;

    Ok(AblateArtifacts { rows, table_path })
}
