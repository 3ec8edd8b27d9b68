//! Delimiter-separated report layouts.

use std::path::Path;

use confadapt_core::controller::{CategoryTotals, HypothesisResult, OutcomeCategory, ReplayResult};
use confadapt_core::domain::ConfusionState;
use confadapt_core::forest::{CvAggregate, CvReport, FoldReport, GridRow};
use confadapt_core::io::Table;
use confadapt_core::stats::{BreakdownRow, ClassificationMetrics, ConfusionCounts};
use confadapt_core::{Error, Result};

const METRIC_COLUMNS: [&str; 9] = ["n", "tp", "fp", "tn", "fn", "accuracy", "precision", "recall", "f1"];

fn metric_cells(counts: &ConfusionCounts, m: &ClassificationMetrics) -> Vec<String> {
    let ratio = |r: confadapt_core::stats::Ratio| if r.degenerate { "NA".to_string() } else { r.value.to_string() };
    vec![
        counts.total().to_string(),
        counts.tp.to_string(),
        counts.fp.to_string(),
        counts.tn.to_string(),
        counts.fn_.to_string(),
        m.accuracy.to_string(),
        ratio(m.confused.precision),
        ratio(m.confused.recall),
        ratio(m.confused.f1),
    ]
}

/// One row per fold, then `mean` and `pooled` rows.
pub fn fold_table(folds: &[FoldReport], aggregate: &CvAggregate) -> Table {
    let mut t = Table::new(std::iter::once("held_out").chain(METRIC_COLUMNS));
    for f in folds {
        let mut row = vec![f.held_out.clone()];
        row.extend(metric_cells(&f.counts, &f.metrics));
        t.push(row);
    }
    let a = aggregate;
    t.push([
        "mean".to_string(),
        a.pooled_counts.total().to_string(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        a.mean_accuracy.to_string(),
        a.mean_precision.to_string(),
        a.mean_recall.to_string(),
        a.mean_f1.to_string(),
    ]);
    let mut pooled = vec!["pooled".to_string()];
    pooled.extend(metric_cells(&a.pooled_counts, &a.pooled));
    t.push(pooled);
    t
}

pub fn cv_table(report: &CvReport) -> Table {
    fold_table(&report.folds, &report.aggregate)
}

pub fn grid_table(rows: &[GridRow]) -> Table {
    let mut t = Table::new([
        "n_trees",
        "max_depth",
        "min_samples_split",
        "min_samples_leaf",
        "mean_accuracy",
        "mean_precision",
        "mean_recall",
        "mean_f1",
    ]);
    for r in rows {
        t.push([
            r.params.n_trees.to_string(),
            r.params.max_depth.to_string(),
            r.params.min_samples_split.to_string(),
            r.params.min_samples_leaf.to_string(),
            r.aggregate.mean_accuracy.to_string(),
            r.aggregate.mean_precision.to_string(),
            r.aggregate.mean_recall.to_string(),
            r.aggregate.mean_f1.to_string(),
        ]);
    }
    t
}

pub const REPLAY_COLUMNS: [&str; 12] = [
    "participant_id",
    "round",
    "object_index",
    "action",
    "e_current",
    "prediction_decrease",
    "prediction_keep",
    "suggested",
    "new_level",
    "realized",
    "category",
    "actual",
];

pub fn replay_table(result: &ReplayResult) -> Table {
    let mut t = Table::new(REPLAY_COLUMNS);
    for r in &result.rows {
        let call = |d: bool| {
            r.decision.predictor_calls.iter().find(|c| c.0 == d).map(|c| c.1.to_string()).unwrap_or_default()
        };
        t.push([
            r.key.participant_id.clone(),
            r.key.round.to_string(),
            r.key.object_index.to_string(),
            r.action.to_string(),
            r.e_current.to_string(),
            call(true),
            call(false),
            format!("{:?}", r.decision.suggested),
            r.decision.new_level.to_string(),
            r.realized.to_string(),
            r.category.to_string(),
            r.actual.to_string(),
        ]);
    }
    t
}

/// Category totals from a replay file.
pub fn read_replay_totals(path: &Path) -> Result<CategoryTotals> {
    let t = Table::read(path)?;
    let col = |name: &str| {
        t.column(name).ok_or_else(|| Error::Parse { line: 1, field: name.into(), message: "missing column".into() })
    };
    let (cat, act) = (col("category")?, col("actual")?);
    let mut totals = CategoryTotals::default();
    for (i, row) in t.rows.iter().enumerate() {
        let bad = |field: &str| Error::Parse { line: i + 2, field: field.into(), message: "invalid value".into() };
        let category = row.get(cat).and_then(|s| OutcomeCategory::parse(s)).ok_or_else(|| bad("category"))?;
        let actual = row.get(act).and_then(|s| ConfusionState::parse(s)).ok_or_else(|| bad("actual"))?;
        totals.add(category, actual);
    }
    Ok(totals)
}

pub fn categories_table(totals: &CategoryTotals) -> Table {
    let mut t = Table::new(["category", "confused", "not_confused", "confused_rate"]);
    for c in OutcomeCategory::ALL {
        let (a, b) = totals.get(c);
        let rate = totals.confused_rate(c).map(|r| r.to_string()).unwrap_or_else(|| "NA".into());
        t.push([c.to_string(), a.to_string(), b.to_string(), rate]);
    }
    t
}

pub fn hypotheses_table(results: &[HypothesisResult]) -> Table {
    let mut t = Table::new([
        "hypothesis",
        "group_confused",
        "group_not_confused",
        "rest_confused",
        "rest_not_confused",
        "statistic",
        "p_value",
        "alpha",
        "verdict",
        "direction_consistent",
    ]);
    for h in results {
        let (stat, p) = match &h.test {
            Some(x) => (x.statistic.to_string(), format!("{:e}", x.p_value)),
            None => ("NA".into(), "NA".into()),
        };
        t.push([
            h.hypothesis.to_string(),
            h.table.a.to_string(),
            h.table.b.to_string(),
            h.table.c.to_string(),
            h.table.d.to_string(),
            stat,
            p,
            h.hypothesis.alpha().to_string(),
            format!("{:?}", h.verdict),
            h.direction_consistent.to_string(),
        ]);
    }
    t
}

pub fn breakdown_table(rows: &[BreakdownRow]) -> Table {
    let mut t = Table::new(["group", "confused_pct", "not_confused_pct", "confused", "n"]);
    for r in rows {
        t.push([
            r.group.to_string(),
            r.confused_pct.to_string(),
            r.not_confused_pct.to_string(),
            r.confused.to_string(),
            r.n.to_string(),
        ]);
    }
    t
}
