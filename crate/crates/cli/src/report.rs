//! Line-oriented report rendering: key=value metric lines plus a plain
//! CSV confusion matrix. Both are stable byte-for-byte given equal inputs
//! so runs can be diffed.

use wdmir_core::data::Split;
use wdmir_core::metrics::MetricsReport;

pub fn format_report(split: Split, report: &MetricsReport, class_names: &[String]) -> String {
    let mut out = String::new();
    out.push_str(&format!("split={split} n={}\n", report.total));
    out.push_str(&format!("acc={:.6}\n", report.accuracy));
    out.push_str(&format!("wf1={:.6}\n", report.weighted_f1));
    out.push_str(&format!("wp={:.6}\n", report.weighted_precision));
    out.push_str(&format!("recall={:.6}\n", report.macro_recall));
    for (c, m) in report.per_class.iter().enumerate() {
        let name = class_names.get(c).map(String::as_str).unwrap_or("?");
        out.push_str(&format!(
            "class={c} name={name} precision={:.6} recall={:.6} f1={:.6} support={}\n",
            m.precision, m.recall, m.f1, m.support
        ));
    }
    out
}

/// Header row names predicted classes; each body row is one true class.
pub fn confusion_csv(confusion: &[Vec<usize>]) -> String {
    let classes = confusion.len();
    let mut out = String::from("true_label");
    for j in 0..classes {
        out.push_str(&format!(",pred_{j}"));
    }
    out.push('\n');
    for (i, row) in confusion.iter().enumerate() {
        out.push_str(&i.to_string());
        for &count in row {
            out.push_str(&format!(",{count}"));
        }
        out.push('\n');
    }
    out
}
