//! Class-weighted random forest grown with greedy CART splits on weighted
//! Gini impurity, plus leave-one-participant-out evaluation and grid search.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::ConfusionState;
use crate::error::{Error, Result};
use crate::features::{FeatureVector, TrainingRow, FEATURE_COUNT, FEATURE_LAYOUT_VERSION};
use crate::stats::{classification_metrics, ClassificationMetrics, ConfusionCounts};

pub type TreeRng = ChaCha8Rng;

/// Per-class sample weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub confused: f64,
    pub not_confused: f64,
}

impl ClassWeights {
    pub const UNIT: ClassWeights = ClassWeights { confused: 1.0, not_confused: 1.0 };

    /// Inverse class frequency normalized so `NotConfused` weighs 1.
    pub fn inverse_frequency(n_confused: usize, n_not_confused: usize) -> Self {
        if n_confused == 0 || n_not_confused == 0 {
            return ClassWeights::UNIT;
        }
        ClassWeights { confused: n_not_confused as f64 / n_confused as f64, not_confused: 1.0 }
    }

    pub fn of(&self, class: ConfusionState) -> f64 {
        match class {
            ConfusionState::Confused => self.confused,
            ConfusionState::NotConfused => self.not_confused,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// `None` means `floor(sqrt(n_features))`.
    pub features_per_split: Option<usize>,
    /// `None` means inverse class frequency of the training rows.
    pub class_weights: Option<ClassWeights>,
    pub bootstrap: bool,
    pub decision_threshold: f64,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: 10,
            min_samples_split: 5,
            min_samples_leaf: 10,
            features_per_split: None,
            class_weights: None,
            bootstrap: true,
            decision_threshold: 0.5,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_trees", self.n_trees),
            ("max_depth", self.max_depth),
            ("min_samples_split", self.min_samples_split),
            ("min_samples_leaf", self.min_samples_leaf),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidParams(format!("{name} must be positive")));
        }
        if self.features_per_split == Some(0) {
            return Err(Error::InvalidParams("features_per_split must be positive".into()));
        }
        if let Some(w) = self.class_weights {
            if !(w.confused > 0.0 && w.not_confused > 0.0) {
                return Err(Error::InvalidParams("class weights must be positive".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.decision_threshold) {
            return Err(Error::InvalidParams("decision_threshold must lie in [0,1]".into()));
        }
        Ok(())
    }

    fn resolved_features_per_split(&self, n_features: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (n_features as f64).sqrt().floor() as usize)
            .clamp(1, n_features.max(1))
    }
}

/// A training example; `group` is the participant id used for cross-validation.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub class: ConfusionState,
    pub group: String,
}

impl Sample {
    pub fn new(features: Vec<f64>, class: ConfusionState, group: impl Into<String>) -> Self {
        Sample { features, class, group: group.into() }
    }
}

impl From<&TrainingRow> for Sample {
    fn from(row: &TrainingRow) -> Self {
        Sample::new(row.features.0.to_vec(), row.class, row.participant_id())
    }
}

/// Unweighted class tallies of a node.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub confused: u64,
    pub not_confused: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.confused + self.not_confused
    }

    fn add(&mut self, class: ConfusionState) {
        match class {
            ConfusionState::Confused => self.confused += 1,
            ConfusionState::NotConfused => self.not_confused += 1,
        }
    }

    fn weighted(&self, w: &ClassWeights) -> (f64, f64) {
        (self.confused as f64 * w.confused, self.not_confused as f64 * w.not_confused)
    }

    /// Weighted frequency of `Confused`.
    pub fn confused_probability(&self, w: &ClassWeights) -> f64 {
        let (c, nc) = self.weighted(w);
        if c + nc == 0.0 {
            0.0
        } else {
            c / (c + nc)
        }
    }
}

fn gini_from_weighted(c: f64, nc: f64) -> f64 {
    let total = c + nc;
    let (pc, pn) = (c / total, nc / total);
    1.0 - pc * pc - pn * pn
}

/// `1 - sum p_k^2` with `p_k` the weighted class frequencies.
pub fn weighted_gini(counts: ClassCounts, weights: &ClassWeights) -> Result<f64> {
    if counts.total() == 0 {
        return Err(Error::InsufficientData("gini of an empty node".into()));
    }
    let (c, nc) = counts.weighted(weights);
    Ok(gini_from_weighted(c, nc))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        slot: usize,
        /// Rows with `x[slot] <= threshold` go left.
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        counts: ClassCounts,
        probability: f64,
    },
}

impl TreeNode {
    fn leaf(counts: ClassCounts, weights: &ClassWeights) -> TreeNode {
        TreeNode::Leaf { counts, probability: counts.confused_probability(weights) }
    }

    /// Weighted frequency of `Confused` in the leaf reached by `x`.
    pub fn leaf_probability(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { probability, .. } => return *probability,
                TreeNode::Split { slot, threshold, left, right } => {
                    node = if x[*slot] <= *threshold { left } else { right };
                }
            }
        }
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaves(&self) -> Vec<&ClassCounts> {
        match self {
            TreeNode::Leaf { counts, .. } => vec![counts],
            TreeNode::Split { left, right, .. } => {
                let mut v = left.leaves();
                v.extend(right.leaves());
                v
            }
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, TreeNode::Leaf { .. })
    }

    fn reweighted(&self, w: &ClassWeights) -> TreeNode {
        match self {
            TreeNode::Leaf { counts, .. } => TreeNode::leaf(*counts, w),
            TreeNode::Split { slot, threshold, left, right } => TreeNode::Split {
                slot: *slot,
                threshold: *threshold,
                left: Box::new(left.reweighted(w)),
                right: Box::new(right.reweighted(w)),
            },
        }
    }
}

/// Random stream for tree `index` of a forest seeded with `seed`.
pub fn tree_rng(seed: u64, index: u64) -> TreeRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

struct Grower<'a> {
    samples: &'a [Sample],
    weights: ClassWeights,
    params: &'a ForestParams,
    n_features: usize,
    features_per_split: usize,
}

struct BestSplit {
    gain: f64,
    slot: usize,
    threshold: f64,
}

impl Grower<'_> {
    fn counts(&self, idx: &[usize]) -> ClassCounts {
        let mut c = ClassCounts::default();
        for &i in idx {
            c.add(self.samples[i].class);
        }
        c
    }

    fn grow(&self, idx: Vec<usize>, depth: usize, rng: &mut TreeRng) -> TreeNode {
        let counts = self.counts(&idx);
        let (wc, wnc) = counts.weighted(&self.weights);
        let impurity = gini_from_weighted(wc, wnc);
        let n = idx.len();
        if depth >= self.params.max_depth
            || n < self.params.min_samples_split
            || n < 2 * self.params.min_samples_leaf
            || impurity <= 0.0
        {
            return TreeNode::leaf(counts, &self.weights);
        }
        let Some(best) = self.best_split(&idx, impurity, wc + wnc, rng) else {
            return TreeNode::leaf(counts, &self.weights);
        };
        let (left, right): (Vec<usize>, Vec<usize>) =
            idx.into_iter().partition(|&i| self.samples[i].features[best.slot] <= best.threshold);
        TreeNode::Split {
            slot: best.slot,
            threshold: best.threshold,
            left: Box::new(self.grow(left, depth + 1, rng)),
            right: Box::new(self.grow(right, depth + 1, rng)),
        }
    }

    fn best_split(&self, idx: &[usize], parent: f64, parent_weight: f64, rng: &mut TreeRng) -> Option<BestSplit> {
        let mut slots = index::sample(rng, self.n_features, self.features_per_split).into_vec();
        slots.sort_unstable();
        let min_leaf = self.params.min_samples_leaf;
        let n = idx.len();
        let w = &self.weights;
        let mut best: Option<BestSplit> = None;
        let mut column: Vec<(f64, ConfusionState)> = Vec::with_capacity(n);
        for slot in slots {
            column.clear();
            column.extend(idx.iter().map(|&i| (self.samples[i].features[slot], self.samples[i].class)));
            column.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (mut lc, mut lnc) = (0.0, 0.0);
            let (tc, tnc) = {
                let mut c = ClassCounts::default();
                column.iter().for_each(|(_, k)| c.add(*k));
                c.weighted(w)
            };
            for i in 1..n {
                match column[i - 1].1 {
                    ConfusionState::Confused => lc += w.confused,
                    ConfusionState::NotConfused => lnc += w.not_confused,
                }
                let (lo, hi) = (column[i - 1].0, column[i].0);
                if i < min_leaf || n - i < min_leaf || lo >= hi {
                    continue;
                }
                let (rc, rnc) = (tc - lc, tnc - lnc);
                let lw = lc + lnc;
                let rw = rc + rnc;
                let gain = parent - (lw / parent_weight) * gini_from_weighted(lc, lnc)
                    - (rw / parent_weight) * gini_from_weighted(rc, rnc);
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(BestSplit { gain, slot, threshold });
                }
            }
        }
        best
    }
}

fn class_weights_for(samples: &[Sample], params: &ForestParams) -> ClassWeights {
    params.class_weights.unwrap_or_else(|| {
        let confused = samples.iter().filter(|s| s.class.is_confused()).count();
        ClassWeights::inverse_frequency(confused, samples.len() - confused)
    })
}

fn check_samples(samples: &[Sample]) -> Result<usize> {
    let Some(first) = samples.first() else {
        return Err(Error::InsufficientData("no training rows".into()));
    };
    let n = first.features.len();
    if n == 0 {
        return Err(Error::InsufficientData("rows have no features".into()));
    }
    if let Some(bad) = samples.iter().find(|s| s.features.len() != n) {
        return Err(Error::LayoutMismatch { expected: n, found: bad.features.len() });
    }
    Ok(n)
}

/// Grows one tree on `rows` (indices into `samples`, duplicates allowed).
fn grow_tree(samples: &[Sample], rows: Vec<usize>, weights: ClassWeights, params: &ForestParams, rng: &mut TreeRng) -> TreeNode {
    let n_features = samples[0].features.len();
    let grower = Grower {
        samples,
        weights,
        params,
        n_features,
        features_per_split: params.resolved_features_per_split(n_features),
    };
    grower.grow(rows, 0, rng)
}

/// Greedy CART tree on all of `samples`, without bootstrap.
pub fn train_tree(samples: &[Sample], params: &ForestParams, rng: &mut TreeRng) -> Result<TreeNode> {
    params.validate()?;
    check_samples(samples)?;
    let weights = class_weights_for(samples, params);
    Ok(grow_tree(samples, (0..samples.len()).collect(), weights, params, rng))
}

/// Model file header fields and layout tag for a feature count.
pub const MODEL_SCHEMA_VERSION: &str = "1";

pub fn layout_for(n_features: usize) -> String {
    if n_features == FEATURE_COUNT {
        FEATURE_LAYOUT_VERSION.to_string()
    } else {
        format!("RAW{n_features}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub feature_layout_version: String,
    pub n_features: usize,
    pub params: ForestParams,
    /// Weights actually used during training.
    pub class_weights: ClassWeights,
    pub features_per_split: usize,
    pub training_counts: ClassCounts,
    pub trees: Vec<TreeNode>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: ConfusionState,
    /// Probability of `Confused`.
    pub probability: f64,
}

impl ForestModel {
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        if x.len() != self.n_features {
            return Err(Error::LayoutMismatch { expected: self.n_features, found: x.len() });
        }
        let sum: f64 = self.trees.iter().map(|t| t.leaf_probability(x)).sum();
        let probability = sum / self.trees.len() as f64;
        let class = if probability >= self.params.decision_threshold {
            ConfusionState::Confused
        } else {
            ConfusionState::NotConfused
        };
        Ok(Prediction { class, probability })
    }

    pub fn predict_vector(&self, x: &FeatureVector) -> Result<Prediction> {
        self.predict(x.as_slice())
    }

    /// Same tree structure with leaf probabilities recomputed under `weights`.
    pub fn with_class_weights(&self, weights: ClassWeights) -> ForestModel {
        ForestModel {
            class_weights: weights,
            trees: self.trees.iter().map(|t| t.reweighted(&weights)).collect(),
            ..self.clone()
        }
    }
}

pub fn train_forest(samples: &[Sample], params: &ForestParams) -> Result<ForestModel> {
    params.validate()?;
    let n_features = check_samples(samples)?;
    let weights = class_weights_for(samples, params);
    let n = samples.len();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(params.seed, t as u64);
            let rows = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow_tree(samples, rows, weights, params, &mut rng)
        })
        .collect();
    let mut training_counts = ClassCounts::default();
    samples.iter().for_each(|s| training_counts.add(s.class));
    Ok(ForestModel {
        feature_layout_version: layout_for(n_features),
        n_features,
        params: params.clone(),
        class_weights: weights,
        features_per_split: params.resolved_features_per_split(n_features),
        training_counts,
        trees,
    })
}

/// One leave-one-participant-out split.
#[derive(Clone, Debug, PartialEq)]
pub struct Fold {
    pub held_out: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One fold per distinct group, ordered by group id.
pub fn lopo_splits(samples: &[Sample]) -> Result<Vec<Fold>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups.entry(s.group.as_str()).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "leave-one-participant-out needs at least 2 participants, found {}",
            groups.len()
        )));
    }
    Ok(groups
        .into_iter()
        .map(|(g, test)| Fold {
            held_out: g.to_string(),
            train: (0..samples.len()).filter(|&i| samples[i].group != g).collect(),
            test,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub held_out: String,
    pub counts: ConfusionCounts,
    pub metrics: ClassificationMetrics,
}

impl FoldReport {
    pub fn from_predictions(held_out: impl Into<String>, pairs: impl IntoIterator<Item = (ConfusionState, ConfusionState)>) -> Result<Self> {
        let mut counts = ConfusionCounts::default();
        for (actual, predicted) in pairs {
            counts.record(actual, predicted);
        }
        Ok(FoldReport { held_out: held_out.into(), counts, metrics: classification_metrics(counts)? })
    }
}

/// Fold-level summary.
///
/// Accuracy is the plain mean over folds. Precision, recall and F1 for
/// `Confused` are averaged over the folds where they are defined, and also
/// reported pooled over all held-out predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvAggregate {
    pub folds: usize,
    pub mean_accuracy: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
    pub mean_macro_precision: f64,
    pub mean_weighted_precision: f64,
    pub pooled_counts: ConfusionCounts,
    pub pooled: ClassificationMetrics,
}

fn mean_defined(values: impl Iterator<Item = crate::stats::Ratio>) -> f64 {
    let (sum, n) = values.filter(|r| !r.degenerate).fold((0.0, 0usize), |(s, n), r| (s + r.value, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl CvAggregate {
    pub fn from_folds(folds: &[FoldReport]) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::InsufficientData("no folds".into()));
        }
        let n = folds.len() as f64;
        let mut pooled_counts = ConfusionCounts::default();
        folds.iter().for_each(|f| pooled_counts.add(&f.counts));
        Ok(CvAggregate {
            folds: folds.len(),
            mean_accuracy: folds.iter().map(|f| f.metrics.accuracy).sum::<f64>() / n,
            mean_precision: mean_defined(folds.iter().map(|f| f.metrics.confused.precision)),
            mean_recall: mean_defined(folds.iter().map(|f| f.metrics.confused.recall)),
            mean_f1: mean_defined(folds.iter().map(|f| f.metrics.confused.f1)),
            mean_macro_precision: folds.iter().map(|f| f.metrics.macro_precision).sum::<f64>() / n,
            mean_weighted_precision: folds.iter().map(|f| f.metrics.weighted_precision).sum::<f64>() / n,
            pooled: classification_metrics(pooled_counts)?,
            pooled_counts,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldReport>,
    pub aggregate: CvAggregate,
}

pub fn lopo_cv(samples: &[Sample], params: &ForestParams) -> Result<CvReport> {
    params.validate()?;
    check_samples(samples)?;
    let splits = lopo_splits(samples)?;
    let folds = splits
        .par_iter()
        .map(|fold| {
            let train: Vec<Sample> = fold.train.iter().map(|&i| samples[i].clone()).collect();
            let model = train_forest(&train, params)?;
            let pairs = fold
                .test
                .iter()
                .map(|&i| Ok((samples[i].class, model.predict(&samples[i].features)?.class)))
                .collect::<Result<Vec<_>>>()?;
            FoldReport::from_predictions(fold.held_out.clone(), pairs)
        })
        .collect::<Result<Vec<_>>>()?;
    let aggregate = CvAggregate::from_folds(&folds)?;
    Ok(CvReport { folds, aggregate })
}

/// Candidate values per hyperparameter; the grid is their Cartesian product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub n_trees: Vec<usize>,
    pub max_depth: Vec<usize>,
    pub min_samples_split: Vec<usize>,
    pub min_samples_leaf: Vec<usize>,
}

impl ParamGrid {
    /// Single-point grid at `base`.
    pub fn single(base: &ForestParams) -> Self {
        ParamGrid {
            n_trees: vec![base.n_trees],
            max_depth: vec![base.max_depth],
            min_samples_split: vec![base.min_samples_split],
            min_samples_leaf: vec![base.min_samples_leaf],
        }
    }

    pub fn points(&self, base: &ForestParams) -> Vec<ForestParams> {
        let mut out = Vec::new();
        for &n_trees in &self.n_trees {
            for &max_depth in &self.max_depth {
                for &min_samples_split in &self.min_samples_split {
                    for &min_samples_leaf in &self.min_samples_leaf {
                        out.push(ForestParams { n_trees, max_depth, min_samples_split, min_samples_leaf, ..base.clone() });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub params: ForestParams,
    pub aggregate: CvAggregate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    pub best: ForestParams,
    pub best_report: CvReport,
    pub table: Vec<GridRow>,
}

/// Exhaustive LOPO evaluation of every grid point. Best is the highest mean
/// F1 for `Confused`, then highest mean accuracy, then smallest depth.
pub fn grid_search(samples: &[Sample], grid: &ParamGrid, base: &ForestParams) -> Result<GridResult> {
    let points = grid.points(base);
    if points.is_empty() {
        return Err(Error::InvalidParams("empty parameter grid".into()));
    }
    let mut reports = Vec::with_capacity(points.len());
    for p in &points {
        reports.push(lopo_cv(samples, p)?);
    }
    let mut best = 0;
    for i in 1..points.len() {
        let (a, b) = (&reports[i].aggregate, &reports[best].aggregate);
        let better = a.mean_f1 > b.mean_f1
            || (a.mean_f1 == b.mean_f1
                && (a.mean_accuracy > b.mean_accuracy
                    || (a.mean_accuracy == b.mean_accuracy && points[i].max_depth < points[best].max_depth)));
        if better {
            best = i;
        }
    }
    let table = points
        .iter()
        .zip(&reports)
        .map(|(p, r)| GridRow { params: p.clone(), aggregate: r.aggregate.clone() })
        .collect();
    Ok(GridResult { best: points[best].clone(), best_report: reports.swap_remove(best), table })
}
