//! End-to-end run: simulate, label, featurize, cross-validate, replay the
//! decision rule and test the outcome hypotheses.
//!
//! Replay uses out-of-fold predictors: each participant's episodes are
//! replayed with the forest trained on every other participant.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{
    evaluate_hypotheses, replay, CategoryTotals, HypothesisResult, LevelBounds, OutcomeCategory, ReplayResult,
    TableMode, Verdict,
};
use crate::domain::Dataset;
use crate::error::Result;
use crate::features::{build_training_set, TrainingRow};
use crate::forest::{lopo_splits, train_forest, CvAggregate, CvReport, FoldReport, ForestParams, Sample};
use crate::io::Table;
use crate::labeler::{label_dataset, LabeledEpisode, LabelerThresholds};
use crate::simulate::{simulate_study, SimulatedStudy, StudyConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub study: StudyConfig,
    pub thresholds: LabelerThresholds,
    pub forest: ForestParams,
    pub bounds: LevelBounds,
    pub table_mode: TableMode,
    pub yates: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            study: StudyConfig::default(),
            thresholds: LabelerThresholds::default(),
            forest: ForestParams::default(),
            bounds: LevelBounds::default(),
            table_mode: TableMode::VsRest,
            yates: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSummary {
    pub hypothesis: String,
    pub group_confused: u64,
    pub group_not_confused: u64,
    pub rest_confused: u64,
    pub rest_not_confused: u64,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub alpha: f64,
    pub verdict: Verdict,
    pub direction_consistent: bool,
}

impl From<&HypothesisResult> for HypothesisSummary {
    fn from(h: &HypothesisResult) -> Self {
        HypothesisSummary {
            hypothesis: h.hypothesis.to_string(),
            group_confused: h.table.a,
            group_not_confused: h.table.b,
            rest_confused: h.table.c,
            rest_not_confused: h.table.d,
            statistic: h.test.as_ref().map(|t| t.statistic),
            p_value: h.test.as_ref().map(|t| t.p_value),
            alpha: h.hypothesis.alpha(),
            verdict: h.verdict,
            direction_consistent: h.direction_consistent,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub seed: u64,
    pub n_participants: usize,
    pub n_episodes: usize,
    pub n_training_rows: usize,
    pub confused_rate: f64,
    pub labeler_agreement: f64,
    pub cv_folds: usize,
    pub cv_mean_accuracy: f64,
    pub cv_mean_precision: f64,
    pub cv_mean_recall: f64,
    pub cv_mean_f1: f64,
    pub replayed: usize,
    pub categories: CategoryTotals,
    pub hypotheses: Vec<HypothesisSummary>,
}

impl PipelineSummary {
    pub fn hypothesis(&self, name: &str) -> Option<&HypothesisSummary> {
        self.hypotheses.iter().find(|h| h.hypothesis == name)
    }

    /// Two-column `metric,value` table.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["metric", "value"]);
        let mut row = |k: String, v: String| t.push([k, v]);
        row("seed".into(), self.seed.to_string());
        row("participants".into(), self.n_participants.to_string());
        row("episodes".into(), self.n_episodes.to_string());
        row("training_rows".into(), self.n_training_rows.to_string());
        row("confused_rate".into(), self.confused_rate.to_string());
        row("labeler_agreement".into(), self.labeler_agreement.to_string());
        row("cv_folds".into(), self.cv_folds.to_string());
        row("cv_mean_accuracy".into(), self.cv_mean_accuracy.to_string());
        row("cv_mean_precision".into(), self.cv_mean_precision.to_string());
        row("cv_mean_recall".into(), self.cv_mean_recall.to_string());
        row("cv_mean_f1".into(), self.cv_mean_f1.to_string());
        row("replayed".into(), self.replayed.to_string());
        for c in OutcomeCategory::ALL {
            let (conf, nc) = self.categories.get(c);
            row(format!("category.{}.confused", c.name()), conf.to_string());
            row(format!("category.{}.not_confused", c.name()), nc.to_string());
        }
        for h in &self.hypotheses {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into());
            row(format!("{}.statistic", h.hypothesis), opt(h.statistic));
            row(format!("{}.p_value", h.hypothesis), h.p_value.map_or_else(|| "NA".into(), |p| format!("{p:e}")));
            row(format!("{}.verdict", h.hypothesis), format!("{:?}", h.verdict));
            row(format!("{}.direction_consistent", h.hypothesis), h.direction_consistent.to_string());
        }
        t
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineRun {
    pub study: SimulatedStudy,
    pub labels: Vec<LabeledEpisode>,
    pub training_rows: Vec<TrainingRow>,
    pub cv: CvReport,
    pub replay: ReplayResult,
    pub hypotheses: Vec<HypothesisResult>,
    pub summary: PipelineSummary,
}

fn participant_subset<'a>(dataset: &'a Dataset, labels: &'a [LabeledEpisode], id: &str) -> (Dataset, Vec<LabeledEpisode>) {
    let episodes = dataset.episodes.iter().filter(|e| e.participant_id == id).cloned().collect();
    let labels = labels.iter().filter(|l| l.key.participant_id == id).cloned().collect();
    (Dataset::new(episodes), labels)
}

/// LOPO evaluation that also replays each held-out participant with its
/// fold's model. Returns the CV report and the merged replay.
pub fn lopo_with_replay(
    dataset: &Dataset,
    labels: &[LabeledEpisode],
    rows: &[TrainingRow],
    params: &ForestParams,
    bounds: &LevelBounds,
) -> Result<(CvReport, ReplayResult)> {
    let samples: Vec<Sample> = rows.iter().map(Sample::from).collect();
    let splits = lopo_splits(&samples)?;
    let per_fold = splits
        .par_iter()
        .map(|fold| {
            let train: Vec<Sample> = fold.train.iter().map(|&i| samples[i].clone()).collect();
            let model = train_forest(&train, params)?;
            let pairs = fold
                .test
                .iter()
                .map(|&i| Ok((samples[i].class, model.predict(&samples[i].features)?.class)))
                .collect::<Result<Vec<_>>>()?;
            let report = FoldReport::from_predictions(fold.held_out.clone(), pairs)?;
            let (sub, sub_labels) = participant_subset(dataset, labels, &fold.held_out);
            Ok((report, replay(&sub, &sub_labels, &model, bounds)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut folds = Vec::with_capacity(per_fold.len());
    let mut merged = ReplayResult { rows: Vec::new(), totals: CategoryTotals::default() };
    for (report, r) in per_fold {
        folds.push(report);
        for row in r.rows {
            merged.totals.add(row.category, row.actual);
            merged.rows.push(row);
        }
    }
    let aggregate = CvAggregate::from_folds(&folds)?;
    Ok((CvReport { folds, aggregate }, merged))
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineRun> {
    config.thresholds.validate()?;
    let study = simulate_study(&config.study)?;
    let labels = label_dataset(&study.dataset, &config.thresholds);
    let agree = labels.iter().zip(&study.truth).filter(|(l, t)| l.label.is_confused() == t.confused).count();
    let training_rows = build_training_set(&study.dataset, &labels)?;
    let (cv, replayed) = lopo_with_replay(&study.dataset, &labels, &training_rows, &config.forest, &config.bounds)?;
    let hypotheses = evaluate_hypotheses(&replayed.totals, config.table_mode, config.yates);
    let n = labels.len().max(1) as f64;
    let summary = PipelineSummary {
        seed: config.study.seed,
        n_participants: config.study.n_participants,
        n_episodes: study.dataset.len(),
        n_training_rows: training_rows.len(),
        confused_rate: labels.iter().filter(|l| l.label.is_confused()).count() as f64 / n,
        labeler_agreement: agree as f64 / n,
        cv_folds: cv.aggregate.folds,
        cv_mean_accuracy: cv.aggregate.mean_accuracy,
        cv_mean_precision: cv.aggregate.mean_precision,
        cv_mean_recall: cv.aggregate.mean_recall,
        cv_mean_f1: cv.aggregate.mean_f1,
        replayed: replayed.rows.len(),
        categories: replayed.totals.clone(),
        hypotheses: hypotheses.iter().map(HypothesisSummary::from).collect(),
    };
    Ok(PipelineRun { study, labels, training_rows, cv, replay: replayed, hypotheses, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> PipelineConfig {
        let mut c = PipelineConfig::default();
        c.study.n_participants = n;
        c.forest.n_trees = 10;
        c
    }

    #[test]
    fn two_participants_give_two_folds() {
        let run = run_pipeline(&small(2)).unwrap();
        assert_eq!(run.cv.folds.len(), 2);
        assert_eq!(run.summary.n_episodes, 22);
        assert_eq!(run.summary.n_training_rows, 16);
        assert_eq!(run.summary.replayed, 16);
    }

    #[test]
    fn noiseless_labels_agree_fully() {
        let mut c = small(5);
        c.study.noise_sigma = 0.0;
        assert_eq!(run_pipeline(&c).unwrap().summary.labeler_agreement, 1.0);
    }

    #[test]
    fn summary_table_has_one_row_per_metric() {
        let s = run_pipeline(&small(3)).unwrap().summary;
        let t = s.to_table();
        assert_eq!(t.rows.len(), 12 + 2 * OutcomeCategory::ALL.len() + 4 * 3);
        assert_eq!(t.rows[2], vec!["episodes".to_string(), "33".to_string()]);
    }
}
