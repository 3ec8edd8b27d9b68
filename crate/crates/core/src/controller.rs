//! Explanation-level decision rule and its offline evaluation.
//!
//! The controller first asks the predictor whether the participant would be
//! confused if the level were lowered (D=1). If not, it lowers the level by
//! one step. Otherwise it asks about keeping the level (D=0): predicted
//! confusion raises the level by one step, no confusion keeps it.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{Action, ConfusionState, Dataset, EpisodeKey, ExplanationLevel};
use crate::error::{Error, Result};
use crate::features::{previous_same_action, FeatureBasis, FeatureVector};
use crate::forest::ForestModel;
use crate::labeler::LabeledEpisode;
use crate::stats::{chi_square_2x2, chi_square_goodness_of_fit, ChiSquareResult, ContingencyTable2x2};

/// Anything that maps a feature vector to a confusion class.
pub trait Predictor {
    fn predict_class(&self, x: &FeatureVector) -> Result<ConfusionState>;
}

impl Predictor for ForestModel {
    fn predict_class(&self, x: &FeatureVector) -> Result<ConfusionState> {
        Ok(self.predict_vector(x)?.class)
    }
}

/// Adapts a closure into a [`Predictor`].
pub struct FnPredictor<F>(pub F);

impl<F: Fn(&FeatureVector) -> ConfusionState> Predictor for FnPredictor<F> {
    fn predict_class(&self, x: &FeatureVector) -> Result<ConfusionState> {
        Ok((self.0)(x))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelBounds {
    pub e_min: ExplanationLevel,
    pub e_max: ExplanationLevel,
}

impl Default for LevelBounds {
    fn default() -> Self {
        LevelBounds { e_min: ExplanationLevel::Low, e_max: ExplanationLevel::High }
    }
}

impl LevelBounds {
    pub fn new(e_min: ExplanationLevel, e_max: ExplanationLevel) -> Result<Self> {
        if e_min > e_max {
            return Err(Error::InvalidParams(format!("e_min {e_min} above e_max {e_max}")));
        }
        Ok(LevelBounds { e_min, e_max })
    }

    pub fn contains(&self, level: ExplanationLevel) -> bool {
        self.e_min <= level && level <= self.e_max
    }

    pub fn clamp(&self, level: ExplanationLevel) -> ExplanationLevel {
        level.clamp(self.e_min, self.e_max)
    }

    /// Every valid `(e_min, e_max)` pair.
    pub fn all() -> Vec<LevelBounds> {
        let mut out = Vec::new();
        for lo in ExplanationLevel::ALL {
            for hi in ExplanationLevel::ALL {
                if lo <= hi {
                    out.push(LevelBounds { e_min: lo, e_max: hi });
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Suggestion {
    Decrease,
    Same,
    Increase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub suggested: Suggestion,
    pub new_level: ExplanationLevel,
    /// `(decrease flag, predicted class)` for each predictor call, in order.
    pub predictor_calls: Vec<(bool, ConfusionState)>,
}

/// Next explanation level for the failure described by `basis`.
pub fn decide<P: Predictor + ?Sized>(
    predictor: &P,
    basis: &FeatureBasis,
    e_current: ExplanationLevel,
    bounds: &LevelBounds,
) -> Result<Decision> {
    if !bounds.contains(e_current) {
        return Err(Error::InvalidParams(format!(
            "current level {e_current} outside [{}, {}]",
            bounds.e_min, bounds.e_max
        )));
    }
    let lowered = predictor.predict_class(&basis.assemble(true))?;
    let mut calls = vec![(true, lowered)];
    if lowered == ConfusionState::NotConfused {
        let new_level = ExplanationLevel::clamp_rank(e_current.rank() - 1, bounds.e_min, bounds.e_max);
        return Ok(Decision { suggested: Suggestion::Decrease, new_level, predictor_calls: calls });
    }
    let kept = predictor.predict_class(&basis.assemble(false))?;
    calls.push((false, kept));
    let (suggested, new_level) = match kept {
        ConfusionState::Confused => (
            Suggestion::Increase,
            ExplanationLevel::clamp_rank(e_current.rank() + 1, bounds.e_min, bounds.e_max),
        ),
        ConfusionState::NotConfused => (Suggestion::Same, e_current),
    };
    Ok(Decision { suggested, new_level, predictor_calls: calls })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OutcomeCategory {
    IncreaseFollowed,
    IncreaseNotFollowed,
    SameFollowed,
    SameNotFollowed,
    DecreaseFollowed,
    DecreaseNotFollowed,
}

impl OutcomeCategory {
    pub const ALL: [OutcomeCategory; 6] = [
        OutcomeCategory::IncreaseFollowed,
        OutcomeCategory::IncreaseNotFollowed,
        OutcomeCategory::SameFollowed,
        OutcomeCategory::SameNotFollowed,
        OutcomeCategory::DecreaseFollowed,
        OutcomeCategory::DecreaseNotFollowed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OutcomeCategory::IncreaseFollowed => "IncreaseFollowed",
            OutcomeCategory::IncreaseNotFollowed => "IncreaseNotFollowed",
            OutcomeCategory::SameFollowed => "SameFollowed",
            OutcomeCategory::SameNotFollowed => "SameNotFollowed",
            OutcomeCategory::DecreaseFollowed => "DecreaseFollowed",
            OutcomeCategory::DecreaseNotFollowed => "DecreaseNotFollowed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }

    pub fn suggestion(self) -> Suggestion {
        match self {
            OutcomeCategory::IncreaseFollowed | OutcomeCategory::IncreaseNotFollowed => Suggestion::Increase,
            OutcomeCategory::SameFollowed | OutcomeCategory::SameNotFollowed => Suggestion::Same,
            OutcomeCategory::DecreaseFollowed | OutcomeCategory::DecreaseNotFollowed => Suggestion::Decrease,
        }
    }
}

impl fmt::Display for OutcomeCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Whether the realized level change went in the suggested direction.
pub fn categorize(suggested: Suggestion, realized: ExplanationLevel, e_current: ExplanationLevel) -> OutcomeCategory {
    use std::cmp::Ordering::*;
    let moved = realized.rank().cmp(&e_current.rank());
    match (suggested, moved) {
        (Suggestion::Increase, Greater) => OutcomeCategory::IncreaseFollowed,
        (Suggestion::Increase, _) => OutcomeCategory::IncreaseNotFollowed,
        (Suggestion::Same, Equal) => OutcomeCategory::SameFollowed,
        (Suggestion::Same, _) => OutcomeCategory::SameNotFollowed,
        (Suggestion::Decrease, Less) => OutcomeCategory::DecreaseFollowed,
        (Suggestion::Decrease, _) => OutcomeCategory::DecreaseNotFollowed,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayRow {
    pub key: EpisodeKey,
    pub action: Action,
    pub e_current: ExplanationLevel,
    pub decision: Decision,
    pub realized: ExplanationLevel,
    pub category: OutcomeCategory,
    pub actual: ConfusionState,
}

/// Confused / not-confused tallies per outcome category.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryTotals(pub BTreeMap<OutcomeCategory, (u64, u64)>);

impl CategoryTotals {
    pub fn add(&mut self, category: OutcomeCategory, actual: ConfusionState) {
        let e = self.0.entry(category).or_default();
        if actual.is_confused() {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
    }

    pub fn get(&self, category: OutcomeCategory) -> (u64, u64) {
        self.0.get(&category).copied().unwrap_or_default()
    }

    pub fn set(&mut self, category: OutcomeCategory, confused: u64, not_confused: u64) {
        self.0.insert(category, (confused, not_confused));
    }

    pub fn confused_rate(&self, category: OutcomeCategory) -> Option<f64> {
        let (c, n) = self.get(category);
        (c + n > 0).then(|| c as f64 / (c + n) as f64)
    }

    /// Summed counts over the categories selected by `pred`.
    pub fn sum_where(&self, pred: impl Fn(OutcomeCategory) -> bool) -> (u64, u64) {
        self.0
            .iter()
            .filter(|(k, _)| pred(**k))
            .fold((0, 0), |(c, n), (_, v)| (c + v.0, n + v.1))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayResult {
    pub rows: Vec<ReplayRow>,
    pub totals: CategoryTotals,
}

/// Replays the decision rule over every episode with same-action history.
///
/// The current level is the one delivered at the participant's previous
/// same-action failure, clamped into `bounds`; the realized level is the one
/// the episode actually delivered.
pub fn replay<P: Predictor + Sync + ?Sized>(
    dataset: &Dataset,
    labels: &[LabeledEpisode],
    predictor: &P,
    bounds: &LevelBounds,
) -> Result<ReplayResult> {
    let by_key: HashMap<&EpisodeKey, ConfusionState> =
        labels.iter().map(|l| (&l.key, l.label.state())).collect();
    let prev = previous_same_action(dataset);
    let mut rows = Vec::new();
    let mut totals = CategoryTotals::default();
    for (ep, prev) in dataset.episodes.iter().zip(prev) {
        let Some(p) = prev else { continue };
        let last = &dataset.episodes[p];
        let key = ep.key();
        let actual = *by_key
            .get(&key)
            .ok_or_else(|| Error::InsufficientData(format!("no label for episode {key}")))?;
        let basis = FeatureBasis::from_history(ep, last)?;
        let e_current = bounds.clamp(last.delivered_level);
        let decision = decide(predictor, &basis, e_current, bounds)?;
        let category = categorize(decision.suggested, ep.delivered_level, e_current);
        totals.add(category, actual);
        rows.push(ReplayRow {
            key,
            action: ep.action,
            e_current,
            decision,
            realized: ep.delivered_level,
            category,
            actual,
        });
    }
    Ok(ReplayResult { rows, totals })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Hypothesis {
    /// Increase suggested and not followed: more confusion.
    H1,
    /// Same suggested and followed: less confusion.
    H2,
    /// Decrease suggested, followed or not: less confusion.
    H3,
}

impl Hypothesis {
    pub const ALL: [Hypothesis; 3] = [Hypothesis::H1, Hypothesis::H2, Hypothesis::H3];

    pub fn in_group(self, c: OutcomeCategory) -> bool {
        match self {
            Hypothesis::H1 => c == OutcomeCategory::IncreaseNotFollowed,
            Hypothesis::H2 => c == OutcomeCategory::SameFollowed,
            Hypothesis::H3 => c.suggestion() == Suggestion::Decrease,
        }
    }

    pub fn alpha(self) -> f64 {
        match self {
            Hypothesis::H1 => 1e-5,
            Hypothesis::H2 => 0.05,
            Hypothesis::H3 => 0.005,
        }
    }

    /// Whether the hypothesis predicts a higher confusion rate in the group.
    pub fn expects_more_confusion(self) -> bool {
        self == Hypothesis::H1
    }
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TableMode {
    /// Group vs all other episodes as a 2x2 independence test.
    VsRest,
    /// Group counts vs the overall confused proportion.
    GoodnessOfFit,
}

impl TableMode {
    pub fn parse(s: &str) -> Option<TableMode> {
        match s {
            "vs-rest" => Some(TableMode::VsRest),
            "goodness-of-fit" => Some(TableMode::GoodnessOfFit),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TableMode::VsRest => "vs-rest",
            TableMode::GoodnessOfFit => "goodness-of-fit",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Significant,
    NotSignificant,
    NotEvaluable,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisResult {
    pub hypothesis: Hypothesis,
    pub table: ContingencyTable2x2,
    pub test: Option<ChiSquareResult>,
    pub verdict: Verdict,
    /// Group confusion rate minus rest rate has the hypothesized sign.
    pub direction_consistent: bool,
}

impl HypothesisResult {
    pub fn is_significant(&self) -> bool {
        self.verdict == Verdict::Significant
    }

    pub fn group_rate(&self) -> Option<f64> {
        let n = self.table.a + self.table.b;
        (n > 0).then(|| self.table.a as f64 / n as f64)
    }

    pub fn rest_rate(&self) -> Option<f64> {
        let n = self.table.c + self.table.d;
        (n > 0).then(|| self.table.c as f64 / n as f64)
    }
}

pub fn evaluate_hypotheses(totals: &CategoryTotals, mode: TableMode, yates: bool) -> Vec<HypothesisResult> {
    Hypothesis::ALL
        .into_iter()
        .map(|h| {
            let (a, b) = totals.sum_where(|c| h.in_group(c));
            let (c, d) = totals.sum_where(|c| !h.in_group(c));
            let table = ContingencyTable2x2::new(a, b, c, d);
            let test = if a + b == 0 {
                None
            } else {
                match mode {
                    TableMode::VsRest => chi_square_2x2(&table, yates).ok(),
                    TableMode::GoodnessOfFit => {
                        let total = table.total() as f64;
                        chi_square_goodness_of_fit(a, b, (a + c) as f64 / total).ok()
                    }
                }
            };
            let verdict = match &test {
                None => Verdict::NotEvaluable,
                Some(t) if t.p_value < h.alpha() => Verdict::Significant,
                Some(_) => Verdict::NotSignificant,
            };
            let group = a as f64 / (a + b).max(1) as f64;
            let rest = c as f64 / (c + d).max(1) as f64;
            let direction_consistent = if h.expects_more_confusion() { group > rest } else { group < rest };
            HypothesisResult { hypothesis: h, table, test, verdict, direction_consistent }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::test_support::episode_with;
    use crate::domain::StrategyId;
    use crate::labeler::{label_dataset, LabelerThresholds};
    use std::cell::Cell;
    use ConfusionState::{Confused as C, NotConfused as NC};
    use ExplanationLevel::*;

    fn basis() -> FeatureBasis {
        let last = episode_with("P", 1, 1, Action::Pick, High, [0.1; 4]);
        let cur = episode_with("P", 2, 1, Action::Pick, High, [0.1; 4]);
        FeatureBasis::from_history(&cur, &last).unwrap()
    }

    /// Answers `on_decrease` for D=1 and `on_keep` for D=0, counting calls.
    struct Scripted {
        on_decrease: ConfusionState,
        on_keep: ConfusionState,
        calls: Cell<usize>,
    }

    impl Predictor for Scripted {
        fn predict_class(&self, x: &FeatureVector) -> Result<ConfusionState> {
            self.calls.set(self.calls.get() + 1);
            Ok(if x.decrease_flag() { self.on_decrease } else { self.on_keep })
        }
    }

    fn run(d1: ConfusionState, d0: ConfusionState, cur: ExplanationLevel, bounds: LevelBounds) -> (Decision, usize) {
        let p = Scripted { on_decrease: d1, on_keep: d0, calls: Cell::new(0) };
        let d = decide(&p, &basis(), cur, &bounds).unwrap();
        (d, p.calls.get())
    }

    #[test]
    fn decision_examples() {
        let b = LevelBounds::default();
        assert_eq!(run(NC, C, High, b).0.new_level, Medium);
        assert_eq!(run(NC, C, High, b).0.suggested, Suggestion::Decrease);
        let (d, calls) = run(C, C, Medium, b);
        assert_eq!((d.suggested, d.new_level, calls), (Suggestion::Increase, High, 2));
        let (d, _) = run(C, NC, Medium, b);
        assert_eq!((d.suggested, d.new_level), (Suggestion::Same, Medium));
        let (d, calls) = run(NC, NC, Low, b);
        assert_eq!((d.suggested, d.new_level, calls), (Suggestion::Decrease, Low, 1));
        assert_eq!(d.predictor_calls, vec![(true, NC)]);
    }

    #[test]
    fn out_of_bounds_current_rejected() {
        let p = FnPredictor(|_: &FeatureVector| NC);
        assert!(decide(&p, &basis(), Zero, &LevelBounds::default()).is_err());
        assert!(LevelBounds::new(High, Low).is_err());
    }

    #[test]
    fn categories() {
        assert_eq!(categorize(Suggestion::Decrease, Low, Medium), OutcomeCategory::DecreaseFollowed);
        assert_eq!(categorize(Suggestion::Decrease, Medium, Medium), OutcomeCategory::DecreaseNotFollowed);
        assert_eq!(categorize(Suggestion::Increase, Medium, Medium), OutcomeCategory::IncreaseNotFollowed);
        assert_eq!(categorize(Suggestion::Increase, Low, Medium), OutcomeCategory::IncreaseNotFollowed);
        assert_eq!(categorize(Suggestion::Increase, High, Medium), OutcomeCategory::IncreaseFollowed);
        assert_eq!(categorize(Suggestion::Same, Medium, Medium), OutcomeCategory::SameFollowed);
        assert_eq!(categorize(Suggestion::Same, Low, Medium), OutcomeCategory::SameNotFollowed);
    }

    fn decay_dataset() -> Dataset {
        let mut eps = Vec::new();
        for (pi, strat) in [StrategyId::D1, StrategyId::C2].into_iter().enumerate() {
            for round in 1..=4u8 {
                let level = strat.level_for_round(round).unwrap();
                let lc = if round % 2 == 0 { [0.1, 0.1, 0.1, 0.8] } else { [0.1; 4] };
                let mut ep = episode_with(&format!("P{pi}"), round, 1, Action::Place, level, lc);
                ep.strategy_id = Some(strat);
                eps.push(ep);
            }
        }
        Dataset::new(eps)
    }

    #[test]
    fn replay_with_stub_predictors() {
        let d = decay_dataset();
        let labels = label_dataset(&d, &LabelerThresholds::default());
        let always_nc = FnPredictor(|_: &FeatureVector| NC);
        let r = replay(&d, &labels, &always_nc, &LevelBounds::default()).unwrap();
        assert_eq!(r.rows.len(), 6);
        assert!(r.rows.iter().all(|x| x.category.suggestion() == Suggestion::Decrease));

        let always_c = FnPredictor(|_: &FeatureVector| C);
        let r = replay(&d, &labels, &always_c, &LevelBounds::default()).unwrap();
        assert!(r.rows.iter().all(|x| x.category == OutcomeCategory::IncreaseNotFollowed));
        assert_eq!(r.totals.get(OutcomeCategory::IncreaseNotFollowed), (4, 2));
    }

    #[test]
    fn replay_clamps_current_level() {
        let d = decay_dataset();
        let labels = label_dataset(&d, &LabelerThresholds::default());
        let bounds = LevelBounds::new(Medium, Medium).unwrap();
        let r = replay(&d, &labels, &FnPredictor(|_: &FeatureVector| NC), &bounds).unwrap();
        assert!(r.rows.iter().all(|x| x.e_current == Medium && x.decision.new_level == Medium));
    }

    fn paper_totals() -> CategoryTotals {
        let mut t = CategoryTotals::default();
        t.set(OutcomeCategory::IncreaseNotFollowed, 50, 6);
        t.set(OutcomeCategory::SameFollowed, 1, 12);
        t.set(OutcomeCategory::DecreaseFollowed, 2, 47);
        t.set(OutcomeCategory::DecreaseNotFollowed, 37, 284);
        t
    }

    #[test]
    fn published_counts_reach_published_verdicts() {
        let r = evaluate_hypotheses(&paper_totals(), TableMode::VsRest, false);
        let v: Vec<_> = r.iter().map(|h| h.verdict).collect();
        assert_eq!(v, vec![Verdict::Significant, Verdict::NotSignificant, Verdict::Significant]);
        assert!(r.iter().all(|h| h.direction_consistent));
        assert_eq!(r[0].table, ContingencyTable2x2::new(50, 6, 40, 343));
        assert_eq!(r[2].table, ContingencyTable2x2::new(39, 331, 51, 18));
    }

    #[test]
    fn equal_rates_are_not_significant() {
        let mut t = CategoryTotals::default();
        for c in [OutcomeCategory::IncreaseNotFollowed, OutcomeCategory::SameFollowed, OutcomeCategory::DecreaseFollowed] {
            t.set(c, 10, 30);
        }
        for mode in [TableMode::VsRest, TableMode::GoodnessOfFit] {
            let r = evaluate_hypotheses(&t, mode, false);
            assert!(r.iter().all(|h| h.verdict == Verdict::NotSignificant), "{mode:?}");
        }
    }

    #[test]
    fn empty_group_not_evaluable() {
        let mut t = paper_totals();
        t.0.remove(&OutcomeCategory::SameFollowed);
        let r = evaluate_hypotheses(&t, TableMode::VsRest, false);
        assert_eq!(r[1].verdict, Verdict::NotEvaluable);
    }
}
