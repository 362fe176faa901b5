//! Text and JSON renderings of method comparisons and fairness audits.
//!
//! Text reports are whitespace-aligned tables with a header line. Rates are
//! printed as percentages with two decimals (`98.74%`); the JSON documents
//! keep raw fractions.
//!
//! Method table columns: `method auroc fpr fnr threshold n_pos n_neg`.
//! Fairness table columns: `attribute group pairs ratio tnr`, followed by an
//! `overall` row and the per-attribute ratio sums.

use std::fmt::Write;

use ringwatch_core::eval::{EvaluationReport, FairnessReport, GroupBy};
use serde::{Deserialize, Serialize};

pub const METHODS_SCHEMA: &str = "ringwatch/report/methods/v1";
pub const FAIRNESS_SCHEMA: &str = "ringwatch/report/fairness/v1";

pub fn percent(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodsReport {
    pub schema: String,
    pub rows: Vec<EvaluationReport>,
    /// Pairs that could not be scored, per method, in row order.
    pub skipped_pairs: Vec<usize>,
}

impl MethodsReport {
    pub fn new(rows: Vec<EvaluationReport>, skipped_pairs: Vec<usize>) -> Self {
        Self { schema: METHODS_SCHEMA.into(), rows, skipped_pairs }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:<22} {:>8} {:>8} {:>8} {:>12} {:>7} {:>7}", "method", "auroc", "fpr", "fnr", "threshold", "n_pos", "n_neg")
            .unwrap();
        for r in &self.rows {
            writeln!(
                out,
                "{:<22} {:>8} {:>8} {:>8} {:>12.6} {:>7} {:>7}",
                r.method,
                percent(r.auroc),
                percent(r.fpr),
                percent(r.fnr),
                r.threshold,
                r.n_pos,
                r.n_neg
            )
            .unwrap();
        }
        out
    }

    pub fn row(&self, method: &str) -> Option<&EvaluationReport> {
        self.rows.iter().find(|r| r.method == method)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessDocument {
    pub schema: String,
    pub method: String,
    pub report: FairnessReport,
}

impl FairnessDocument {
    pub fn new(method: &str, report: FairnessReport) -> Self {
        Self { schema: FAIRNESS_SCHEMA.into(), method: method.into(), report }
    }

    pub fn to_text(&self) -> String {
        let r = &self.report;
        let mut out = String::new();
        writeln!(out, "# {} at threshold {:.6}", self.method, r.threshold).unwrap();
        writeln!(out, "{:<10} {:<14} {:>8} {:>8} {:>8}", "attribute", "group", "pairs", "ratio", "tnr").unwrap();
        for row in &r.rows {
            writeln!(
                out,
                "{:<10} {:<14} {:>8} {:>8} {:>8}",
                row.attribute.as_str(),
                row.group,
                row.pairs,
                percent(row.ratio),
                percent(row.tnr)
            )
            .unwrap();
        }
        writeln!(out, "{:<10} {:<14} {:>8} {:>8} {:>8}", "overall", "-", r.total_pairs, percent(1.0), percent(r.overall_tnr))
            .unwrap();
        let mut attrs: Vec<GroupBy> = r.rows.iter().map(|row| row.attribute).collect();
        attrs.dedup();
        for a in attrs {
            writeln!(out, "ratio sum {:<10} {}", a.as_str(), percent(r.ratio_sum(a))).unwrap();
        }
        out
    }
}
