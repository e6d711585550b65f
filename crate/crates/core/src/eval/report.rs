//! Metrics report rendering: a human-readable table and a machine-readable
//! key/value document with stable keys and fixed 4-decimal precision.

use super::MetricsReport;
use crate::textprep::ALL_LABELS;
use std::fmt::Write;

const CLASS_KEYS: [&str; 4] = ["negative", "neutral", "positive", "conflict"];

/// Key/value form, one metric per line, 4-decimal fixed precision.
pub fn format_machine(report: &MetricsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "accuracy = {:.4}", report.accuracy);
    let _ = writeln!(out, "precision.weighted = {:.4}", report.weighted_precision);
    let _ = writeln!(out, "recall.weighted = {:.4}", report.weighted_recall);
    let _ = writeln!(out, "f1.weighted = {:.4}", report.weighted_f1);
    for (c, key) in CLASS_KEYS.iter().enumerate() {
        let _ = writeln!(out, "precision.{key} = {:.4}", report.precision[c]);
        let _ = writeln!(out, "recall.{key} = {:.4}", report.recall[c]);
        let _ = writeln!(out, "f1.{key} = {:.4}", report.f1[c]);
        let _ = writeln!(out, "support.{key} = {}", report.support[c]);
    }
    out
}

/// Aligned text table for terminals and log files.
pub fn format_table(report: &MetricsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>10} {:>10} {:>10} {:>10}",
        "class", "precision", "recall", "f1", "support"
    );
    for (c, label) in ALL_LABELS.iter().enumerate() {
        let _ = writeln!(
            out,
            "{:<10} {:>10.4} {:>10.4} {:>10.4} {:>10}",
            label.to_string(),
            report.precision[c],
            report.recall[c],
            report.f1[c],
            report.support[c]
        );
    }
    let _ = writeln!(
        out,
        "{:<10} {:>10.4} {:>10.4} {:>10.4} {:>10}",
        "weighted",
        report.weighted_precision,
        report.weighted_recall,
        report.weighted_f1,
        report.support.iter().sum::<u64>()
    );
    let _ = writeln!(out, "accuracy   {:>10.4}", report.accuracy);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{confusion, weighted_metrics};
    use crate::textprep::Label;

    #[test]
    fn machine_format_is_stable() {
        let labels = vec![Label::Negative, Label::Positive, Label::Positive];
        let cm = confusion(&labels, &labels).unwrap();
        let report = weighted_metrics(&cm).unwrap();
        let text = format_machine(&report);
        assert!(text.starts_with("accuracy = 1.0000\n"));
        assert!(text.contains("recall.weighted = 1.0000"));
        assert!(text.contains("support.positive = 2"));
        assert_eq!(format_machine(&report), text);
    }

    #[test]
    fn table_lists_all_classes() {
        let labels = vec![Label::Negative, Label::Conflict];
        let report = weighted_metrics(&confusion(&labels, &labels).unwrap()).unwrap();
        let table = format_table(&report);
        for name in ["NEGATIVE", "NEUTRAL", "POSITIVE", "CONFLICT", "weighted"] {
            assert!(table.contains(name), "missing {name} in:\n{table}");
        }
    }
}
