//! Classification metrics: accuracy, support-weighted F1 and precision,
//! macro recall, per-class breakdowns, and the confusion matrix.
//!
//! Conventions: confusion rows are true labels, columns predictions;
//! any 0/0 ratio (empty predicted or true class) is defined as 0; macro
//! recall averages over all declared classes, absent ones included.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub weighted_precision: f64,
    pub macro_recall: f64,
    pub per_class: Vec<ClassMetrics>,
    /// confusion[true][predicted]
    pub confusion: Vec<Vec<usize>>,
    pub total: usize,
}

fn validate(preds: &[usize], truths: &[usize], classes: usize) -> Result<()> {
    if preds.len() != truths.len() {
        return Err(Error::LengthMismatch {
            expected: truths.len(),
            got: preds.len(),
        });
    }
    for (index, (&p, &t)) in preds.iter().zip(truths).enumerate() {
        for label in [p, t] {
            if label >= classes {
                return Err(Error::LabelOutOfRange {
                    index,
                    label,
                    classes,
                });
            }
        }
    }
    Ok(())
}

pub fn confusion_matrix(
    preds: &[usize],
    truths: &[usize],
    classes: usize,
) -> Result<Vec<Vec<usize>>> {
    validate(preds, truths, classes)?;
    let mut m = vec![vec![0usize; classes]; classes];
    for (&p, &t) in preds.iter().zip(truths) {
        m[t][p] += 1;
    }
    Ok(m)
}

pub fn compute_metrics(preds: &[usize], truths: &[usize], classes: usize) -> Result<MetricsReport> {
    let confusion = confusion_matrix(preds, truths, classes)?;
    let total = preds.len();
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };

    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let mut per_class = Vec::with_capacity(classes);
    let (mut wf1, mut wp, mut recall_sum) = (0.0, 0.0, 0.0);
    for c in 0..classes {
        let tp = confusion[c][c] as f64;
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = (0..classes).map(|t| confusion[t][c]).sum();
        let precision = ratio(tp, predicted as f64);
        let recall = ratio(tp, support as f64);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        wf1 += support as f64 * f1;
        wp += support as f64 * precision;
        recall_sum += recall;
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
            support,
        });
    }
    Ok(MetricsReport {
        accuracy: ratio(correct as f64, total as f64),
        weighted_f1: ratio(wf1, total as f64),
        weighted_precision: ratio(wp, total as f64),
        macro_recall: if classes > 0 {
            recall_sum / classes as f64
        } else {
            0.0
        },
        per_class,
        confusion,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Definition-by-definition reimplementation used as the oracle:
    /// per-class tallies counted directly from the label pairs.
    pub fn brute_force(preds: &[usize], truths: &[usize], classes: usize) -> MetricsReport {
        let total = preds.len();
        let mut per_class = Vec::new();
        let (mut wf1, mut wp, mut rsum) = (0.0, 0.0, 0.0);
        let correct = preds.iter().zip(truths).filter(|(p, t)| p == t).count();
        for c in 0..classes {
            let tp = preds
                .iter()
                .zip(truths)
                .filter(|(p, t)| **p == c && **t == c)
                .count() as f64;
            let pred_c = preds.iter().filter(|p| **p == c).count() as f64;
            let true_c = truths.iter().filter(|t| **t == c).count() as f64;
            let precision = if pred_c > 0.0 { tp / pred_c } else { 0.0 };
            let recall = if true_c > 0.0 { tp / true_c } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            wf1 += true_c * f1;
            wp += true_c * precision;
            rsum += recall;
            per_class.push(ClassMetrics {
                precision,
                recall,
                f1,
                support: true_c as usize,
            });
        }
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&p, &t) in preds.iter().zip(truths) {
            confusion[t][p] += 1;
        }
        MetricsReport {
            accuracy: if total > 0 {
                correct as f64 / total as f64
            } else {
                0.0
            },
            weighted_f1: if total > 0 { wf1 / total as f64 } else { 0.0 },
            weighted_precision: if total > 0 { wp / total as f64 } else { 0.0 },
            macro_recall: if classes > 0 { rsum / classes as f64 } else { 0.0 },
            per_class,
            confusion,
            total,
        }
    }

    fn assert_reports_match(a: &MetricsReport, b: &MetricsReport) {
        assert!((a.accuracy - b.accuracy).abs() <= 1e-12);
        assert!((a.weighted_f1 - b.weighted_f1).abs() <= 1e-12);
        assert!((a.weighted_precision - b.weighted_precision).abs() <= 1e-12);
        assert!((a.macro_recall - b.macro_recall).abs() <= 1e-12);
        assert_eq!(a.confusion, b.confusion);
        for (x, y) in a.per_class.iter().zip(&b.per_class) {
            assert!((x.precision - y.precision).abs() <= 1e-12);
            assert!((x.recall - y.recall).abs() <= 1e-12);
            assert!((x.f1 - y.f1).abs() <= 1e-12);
            assert_eq!(x.support, y.support);
        }
    }

    #[test]
    fn perfect_predictions_score_one() {
        let labels = vec![0, 1, 2, 1, 0, 2];
        let r = compute_metrics(&labels, &labels, 3).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.weighted_f1, 1.0);
        assert_eq!(r.weighted_precision, 1.0);
        assert_eq!(r.macro_recall, 1.0);
        // diagonal confusion with class supports
        for (c, row) in r.confusion.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let want = if c == j { r.per_class[c].support } else { 0 };
                assert_eq!(v, want);
            }
        }
    }

    #[test]
    fn worked_two_class_example() {
        let truths = [0, 0, 1, 1];
        let preds = [0, 1, 1, 1];
        let r = compute_metrics(&preds, &truths, 2).unwrap();
        assert!((r.accuracy - 0.75).abs() <= 1e-12);
        assert!((r.per_class[0].f1 - 2.0 / 3.0).abs() <= 1e-12);
        assert!((r.per_class[1].f1 - 0.8).abs() <= 1e-12);
        assert!((r.weighted_f1 - 11.0 / 15.0).abs() <= 1e-12);
        assert!((r.weighted_precision - 5.0 / 6.0).abs() <= 1e-12);
        assert!((r.macro_recall - 0.75).abs() <= 1e-12);
    }

    #[test]
    fn single_class_predictor_uses_zero_convention() {
        let truths = [0, 0, 1, 1];
        let preds = [0, 0, 0, 0];
        let r = compute_metrics(&preds, &truths, 2).unwrap();
        assert!((r.accuracy - 0.5).abs() <= 1e-12);
        // class 1 precision is 0/0 -> 0, so WP = (2*0.5 + 2*0)/4
        assert!((r.weighted_precision - 0.25).abs() <= 1e-12);
    }

    #[test]
    fn empty_input_is_all_zeros() {
        let r = compute_metrics(&[], &[], 3).unwrap();
        assert_eq!(r.accuracy, 0.0);
        assert_eq!(r.weighted_f1, 0.0);
        assert_eq!(r.weighted_precision, 0.0);
        assert_eq!(r.macro_recall, 0.0);
        assert_eq!(r.total, 0);
        assert!(r.confusion.iter().flatten().all(|v| *v == 0));
    }

    #[test]
    fn matches_brute_force_on_random_cases() {
        let mut rng = crate::rng::stream_rng(42, crate::rng::StreamKind::Init, 0);
        for case in 0..200 {
            let classes = [2usize, 12, 20][case % 3];
            let n = rng.random_range(0..40);
            let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
            let truths: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
            let got = compute_metrics(&preds, &truths, classes).unwrap();
            let want = brute_force(&preds, &truths, classes);
            assert_reports_match(&got, &want);
            // trace / total
            let trace: usize = (0..classes).map(|c| got.confusion[c][c]).sum();
            if n > 0 {
                assert!((got.accuracy - trace as f64 / n as f64).abs() <= 1e-12);
            }
            // row sums are class supports
            for c in 0..classes {
                let row: usize = got.confusion[c].iter().sum();
                assert_eq!(row, got.per_class[c].support);
            }
        }
    }

    #[test]
    fn relabeling_classes_preserves_aggregates() {
        let mut rng = crate::rng::stream_rng(43, crate::rng::StreamKind::Init, 0);
        let classes = 5;
        let preds: Vec<usize> = (0..60).map(|_| rng.random_range(0..classes)).collect();
        let truths: Vec<usize> = (0..60).map(|_| rng.random_range(0..classes)).collect();
        let perm = [3usize, 0, 4, 1, 2];
        let preds2: Vec<usize> = preds.iter().map(|&p| perm[p]).collect();
        let truths2: Vec<usize> = truths.iter().map(|&t| perm[t]).collect();
        let a = compute_metrics(&preds, &truths, classes).unwrap();
        let b = compute_metrics(&preds2, &truths2, classes).unwrap();
        assert!((a.accuracy - b.accuracy).abs() <= 1e-12);
        assert!((a.weighted_f1 - b.weighted_f1).abs() <= 1e-12);
        assert!((a.weighted_precision - b.weighted_precision).abs() <= 1e-12);
        assert!((a.macro_recall - b.macro_recall).abs() <= 1e-12);
    }

    #[test]
    fn input_validation() {
        assert!(matches!(
            compute_metrics(&[0, 1], &[0], 2),
            Err(Error::LengthMismatch { .. })
        ));
        let err = compute_metrics(&[0, 2], &[0, 1], 2).unwrap_err();
        assert!(err.to_string().contains("index 1"), "{err}");
    }
}
