//! Classification metrics, the chi-square test of independence and
//! confusion-rate breakdowns.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{Action, ConfusionState, FailureEpisode, StrategyId};
use crate::error::{Error, Result};
use crate::labeler::LabeledEpisode;

/// Confusion-matrix counts with `Confused` as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        ConfusionCounts { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, actual: ConfusionState, predicted: ConfusionState) {
        use ConfusionState::*;
        match (actual, predicted) {
            (Confused, Confused) => self.tp += 1,
            (NotConfused, Confused) => self.fp += 1,
            (NotConfused, NotConfused) => self.tn += 1,
            (Confused, NotConfused) => self.fn_ += 1,
        }
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    /// Same matrix seen with `NotConfused` as the positive class.
    fn flipped(&self) -> ConfusionCounts {
        ConfusionCounts { tp: self.tn, fp: self.fn_, tn: self.tp, fn_: self.fp }
    }
}

/// A ratio that is reported as 0 with `degenerate = true` when its
/// denominator is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    pub degenerate: bool,
}

impl Ratio {
    fn of(num: u64, den: u64) -> Ratio {
        if den == 0 {
            Ratio { value: 0.0, degenerate: true }
        } else {
            Ratio { value: num as f64 / den as f64, degenerate: false }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: Ratio,
    pub recall: Ratio,
    pub f1: Ratio,
    pub support: u64,
}

impl ClassScores {
    fn from_counts(c: &ConfusionCounts) -> Self {
        ClassScores {
            precision: Ratio::of(c.tp, c.tp + c.fp),
            recall: Ratio::of(c.tp, c.tp + c.fn_),
            f1: Ratio::of(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
            support: c.tp + c.fn_,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    /// Scores for the `Confused` class.
    pub confused: ClassScores,
    pub not_confused: ClassScores,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_precision: f64,
    pub weighted_f1: f64,
}

impl ClassificationMetrics {
    pub fn precision(&self) -> f64 {
        self.confused.precision.value
    }

    pub fn recall(&self) -> f64 {
        self.confused.recall.value
    }

    pub fn f1(&self) -> f64 {
        self.confused.f1.value
    }
}

pub fn classification_metrics(counts: ConfusionCounts) -> Result<ClassificationMetrics> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::InsufficientData("all confusion counts are zero".into()));
    }
    let c = ClassScores::from_counts(&counts);
    let nc = ClassScores::from_counts(&counts.flipped());
    let weighted = |a: f64, b: f64| (a * c.support as f64 + b * nc.support as f64) / total as f64;
    Ok(ClassificationMetrics {
        accuracy: (counts.tp + counts.tn) as f64 / total as f64,
        confused: c,
        not_confused: nc,
        macro_precision: (c.precision.value + nc.precision.value) / 2.0,
        macro_recall: (c.recall.value + nc.recall.value) / 2.0,
        macro_f1: (c.f1.value + nc.f1.value) / 2.0,
        weighted_precision: weighted(c.precision.value, nc.precision.value),
        weighted_f1: weighted(c.f1.value, nc.f1.value),
    })
}

/// 2x2 table. Rows are group membership (in group, rest), columns are
/// (Confused, NotConfused).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable2x2 {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl ContingencyTable2x2 {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        ContingencyTable2x2 { a, b, c, d }
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    pub fn cells(&self) -> [[u64; 2]; 2] {
        [[self.a, self.b], [self.c, self.d]]
    }

    pub fn expected(&self) -> [[f64; 2]; 2] {
        let n = self.total() as f64;
        let rows = [(self.a + self.b) as f64, (self.c + self.d) as f64];
        let cols = [(self.a + self.c) as f64, (self.b + self.d) as f64];
        std::array::from_fn(|i| std::array::from_fn(|j| rows[i] * cols[j] / n))
    }

    /// `N (ad - bc)^2 / ((a+b)(c+d)(a+c)(b+d))`.
    pub fn closed_form_statistic(&self) -> f64 {
        let [a, b, c, d] = [self.a, self.b, self.c, self.d].map(|x| x as f64);
        let n = a + b + c + d;
        n * (a * d - b * c).powi(2) / ((a + b) * (c + d) * (a + c) * (b + d))
    }
}

impl fmt::Display for ContingencyTable2x2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[[{}, {}], [{}, {}]]", self.a, self.b, self.c, self.d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub p_value: f64,
    pub dof: u32,
    pub expected: [[f64; 2]; 2],
}

/// Upper tail of the chi-square distribution with one degree of freedom.
pub fn chi_square_sf_1dof(statistic: f64) -> f64 {
    if statistic <= 0.0 {
        return 1.0;
    }
    libm::erfc((statistic / 2.0).sqrt())
}

/// Chi-square test of independence on a 2x2 table, 1 degree of freedom.
pub fn chi_square_2x2(table: &ContingencyTable2x2, yates: bool) -> Result<ChiSquareResult> {
    if table.total() == 0 {
        return Err(Error::InsufficientData("empty contingency table".into()));
    }
    let expected = table.expected();
    if expected.iter().flatten().any(|&e| e <= 0.0) {
        return Err(Error::InsufficientData(format!("zero marginal in table {table}")));
    }
    let observed = table.cells();
    let mut statistic = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let mut diff = (observed[i][j] as f64 - expected[i][j]).abs();
            if yates {
                diff = (diff - 0.5).max(0.0);
            }
            statistic += diff * diff / expected[i][j];
        }
    }
    Ok(ChiSquareResult { statistic, p_value: chi_square_sf_1dof(statistic), dof: 1, expected })
}

/// Goodness-of-fit of one group's (confused, not confused) counts against a
/// reference confused proportion; 1 degree of freedom.
pub fn chi_square_goodness_of_fit(confused: u64, not_confused: u64, reference_rate: f64) -> Result<ChiSquareResult> {
    let n = (confused + not_confused) as f64;
    if n == 0.0 || !(reference_rate > 0.0 && reference_rate < 1.0) {
        return Err(Error::InsufficientData(format!(
            "goodness-of-fit needs a non-empty group and a reference rate in (0,1), got n={n}, rate={reference_rate}"
        )));
    }
    let e = [n * reference_rate, n * (1.0 - reference_rate)];
    let o = [confused as f64, not_confused as f64];
    let statistic: f64 = o.iter().zip(&e).map(|(o, e)| (o - e).powi(2) / e).sum();
    Ok(ChiSquareResult {
        statistic,
        p_value: chi_square_sf_1dof(statistic),
        dof: 1,
        expected: [e, [0.0, 0.0]],
    })
}

/// Rounds to 4 significant figures for reporting.
pub fn round_sig4(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let mag = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(3 - mag);
    (x * scale).round() / scale
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupBy {
    Action,
    Strategy,
    Participant,
    Round,
}

impl GroupBy {
    pub fn name(self) -> &'static str {
        match self {
            GroupBy::Action => "action",
            GroupBy::Strategy => "strategy",
            GroupBy::Participant => "participant",
            GroupBy::Round => "round",
        }
    }

    pub fn parse(s: &str) -> Option<GroupBy> {
        [GroupBy::Action, GroupBy::Strategy, GroupBy::Participant, GroupBy::Round]
            .into_iter()
            .find(|g| g.name() == s)
    }
}

/// Sort key of a breakdown group.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum GroupKey {
    Action(Action),
    Strategy(Option<StrategyId>),
    Participant(String),
    Round(u8),
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupKey::Action(a) => write!(f, "{a}"),
            GroupKey::Strategy(Some(s)) => write!(f, "{s}"),
            GroupKey::Strategy(None) => f.write_str("none"),
            GroupKey::Participant(p) => f.write_str(p),
            GroupKey::Round(r) => write!(f, "{r}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BreakdownRow {
    pub group: GroupKey,
    pub confused_pct: f64,
    pub not_confused_pct: f64,
    pub confused: u64,
    pub n: u64,
}

impl BreakdownRow {
    pub fn confused_rate(&self) -> f64 {
        self.confused as f64 / self.n as f64
    }
}

/// Confused / not-confused percentages per group, sorted by group key.
///
/// `round` restricts the breakdown to episodes from one round.
pub fn confusion_breakdown(
    episodes: &[FailureEpisode],
    labels: &[LabeledEpisode],
    group_by: GroupBy,
    round: Option<u8>,
) -> Result<Vec<BreakdownRow>> {
    if episodes.len() != labels.len() {
        return Err(Error::InsufficientData(format!(
            "{} episodes but {} labels",
            episodes.len(),
            labels.len()
        )));
    }
    let mut groups: BTreeMap<GroupKey, (u64, u64)> = BTreeMap::new();
    for (ep, lab) in episodes.iter().zip(labels) {
        if lab.key != ep.key() {
            return Err(Error::InsufficientData(format!("label {} does not match episode {}", lab.key, ep.key())));
        }
        if round.is_some_and(|r| r != ep.round) {
            continue;
        }
        let key = match group_by {
            GroupBy::Action => GroupKey::Action(ep.action),
            GroupBy::Strategy => GroupKey::Strategy(ep.strategy_id),
            GroupBy::Participant => GroupKey::Participant(ep.participant_id.clone()),
            GroupBy::Round => GroupKey::Round(ep.round),
        };
        let e = groups.entry(key).or_default();
        e.1 += 1;
        if lab.label.is_confused() {
            e.0 += 1;
        }
    }
    if groups.is_empty() {
        return Err(Error::InsufficientData("no episodes to break down".into()));
    }
    Ok(groups
        .into_iter()
        .map(|(group, (confused, n))| {
            let confused_pct = 100.0 * confused as f64 / n as f64;
            BreakdownRow { group, confused_pct, not_confused_pct: 100.0 - confused_pct, confused, n }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Chi-square(1) upper tail by Simpson integration of the density after
    /// substituting x = u^2, which removes the singularity at zero.
    fn sf_by_quadrature(statistic: f64) -> f64 {
        let f = |u: f64| 2.0 / (2.0 * std::f64::consts::PI).sqrt() * (-u * u / 2.0).exp();
        let (a, b, n) = (statistic.sqrt(), 40.0, 200_000);
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn metrics_examples() {
        let m = classification_metrics(ConfusionCounts::new(10, 0, 10, 0)).unwrap();
        assert_eq!((m.accuracy, m.precision(), m.recall(), m.f1()), (1.0, 1.0, 1.0, 1.0));

        let m = classification_metrics(ConfusionCounts::new(0, 0, 10, 10)).unwrap();
        assert_eq!(m.recall(), 0.0);
        assert!(!m.confused.recall.degenerate);
        assert_eq!(m.precision(), 0.0);
        assert!(m.confused.precision.degenerate);

        let m = classification_metrics(ConfusionCounts::new(5, 5, 5, 5)).unwrap();
        assert_eq!((m.accuracy, m.precision(), m.recall(), m.f1()), (0.5, 0.5, 0.5, 0.5));
        assert_eq!(m.macro_precision, 0.5);

        assert!(classification_metrics(ConfusionCounts::default()).is_err());
    }

    #[test]
    fn independence_gives_zero() {
        let r = chi_square_2x2(&ContingencyTable2x2::new(10, 10, 10, 10), false).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.expected, [[10.0, 10.0], [10.0, 10.0]]);
    }

    #[test]
    fn critical_value_against_quadrature() {
        let oracle = sf_by_quadrature(3.841);
        assert!((oracle - 0.05).abs() < 5e-4, "oracle {oracle}");
        let p = chi_square_sf_1dof(3.841);
        assert!((p - 0.05).abs() < 5e-4);
        assert!((p - oracle).abs() < 1e-9);
        for s in [0.1, 1.0, 2.5, 10.0, 25.0] {
            assert_relative_eq!(chi_square_sf_1dof(s), sf_by_quadrature(s), max_relative = 1e-8);
        }
    }

    #[test]
    fn increase_not_followed_table_is_significant() {
        let r = chi_square_2x2(&ContingencyTable2x2::new(50, 6, 40, 343), false).unwrap();
        assert!(r.p_value < 1e-5);
    }

    #[test]
    fn zero_marginal_rejected() {
        assert!(chi_square_2x2(&ContingencyTable2x2::new(0, 0, 3, 4), false).is_err());
        assert!(chi_square_2x2(&ContingencyTable2x2::new(1, 0, 3, 0), false).is_err());
    }

    #[test]
    fn yates_shrinks_statistic() {
        let t = ContingencyTable2x2::new(12, 5, 7, 20);
        let plain = chi_square_2x2(&t, false).unwrap();
        let corrected = chi_square_2x2(&t, true).unwrap();
        assert!(corrected.statistic < plain.statistic);
    }

    #[test]
    fn goodness_of_fit_matches_hand_value() {
        // 8 of 10 confused against rate 0.5: (8-5)^2/5 + (2-5)^2/5 = 3.6
        let r = chi_square_goodness_of_fit(8, 2, 0.5).unwrap();
        assert_relative_eq!(r.statistic, 3.6, max_relative = 1e-12);
        assert!(chi_square_goodness_of_fit(0, 0, 0.5).is_err());
        assert!(chi_square_goodness_of_fit(1, 1, 0.0).is_err());
    }

    #[test]
    fn sig4_rounding() {
        assert_eq!(round_sig4(0.2562345), 0.2562);
        assert_eq!(round_sig4(115.84661), 115.8);
        assert_eq!(round_sig4(0.0), 0.0);
    }

    fn table() -> impl Strategy<Value = ContingencyTable2x2> {
        (1u64..200, 1u64..200, 1u64..200, 1u64..200).prop_map(|(a, b, c, d)| ContingencyTable2x2::new(a, b, c, d))
    }

    proptest! {
        #[test]
        fn closed_form_agrees(t in table()) {
            let s = chi_square_2x2(&t, false).unwrap().statistic;
            let cf = t.closed_form_statistic();
            prop_assert!((s - cf).abs() <= 1e-9 * cf.abs().max(1e-300) || (s - cf).abs() < 1e-12);
        }

        #[test]
        fn permutation_invariant(t in table()) {
            let s = chi_square_2x2(&t, false).unwrap().statistic;
            let swapped = ContingencyTable2x2::new(t.d, t.c, t.b, t.a);
            let rows = ContingencyTable2x2::new(t.c, t.d, t.a, t.b);
            let cols = ContingencyTable2x2::new(t.b, t.a, t.d, t.c);
            for u in [swapped, rows, cols] {
                let s2 = chi_square_2x2(&u, false).unwrap().statistic;
                prop_assert!((s - s2).abs() <= 1e-9 * s.abs().max(1.0));
            }
        }

        #[test]
        fn p_decreases_with_statistic(x in 0.0..60.0f64, dx in 1e-6..10.0f64) {
            prop_assert!(chi_square_sf_1dof(x + dx) <= chi_square_sf_1dof(x));
        }
    }
}
