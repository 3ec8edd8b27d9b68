//! Confusion-induction labeling from the phase-level confusion likelihood.
//!
//! An episode is `Confused` when the confusion likelihood at resolution is
//! high, or when it rose by at least `t_change` and was not brought back
//! down by at least `t_change` by the resolution phase, or when it rose at
//! resolution itself. Rises use the immediately preceding phase as the
//! baseline. A rise that resolves is productive confusion and stays
//! `NotConfused`.

use serde::{Deserialize, Serialize};

use crate::domain::{ConfusionLabel, ConfusionRule, Dataset, EpisodeKey, FailureEpisode, Phase};
use crate::error::{Error, Result};

/// Slack on the inclusive `>= t_change` comparisons so that decimal-exact
/// differences such as `0.15 - 0.10` count as a full step.
const CHANGE_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelerThresholds {
    pub t_high: f64,
    pub t_change: f64,
}

impl Default for LabelerThresholds {
    fn default() -> Self {
        LabelerThresholds { t_high: 0.7, t_change: 0.05 }
    }
}

impl LabelerThresholds {
    pub fn new(t_high: f64, t_change: f64) -> Result<Self> {
        let th = LabelerThresholds { t_high, t_change };
        th.validate()?;
        Ok(th)
    }

    pub fn validate(&self) -> Result<()> {
        if 0.0 < self.t_change && self.t_change < self.t_high && self.t_high <= 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "thresholds must satisfy 0 < t_change < t_high <= 1 (t_high={}, t_change={})",
                self.t_high, self.t_change
            )))
        }
    }

    fn rose(&self, from: f64, to: f64) -> bool {
        to - from >= self.t_change - CHANGE_SLACK
    }
}

/// Confusion likelihood per phase, read from the phase averages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionTrajectory {
    pub lc_pre: f64,
    pub lc_failure: f64,
    pub lc_explanation: f64,
    pub lc_resolution: f64,
}

impl ConfusionTrajectory {
    pub fn new(lc_pre: f64, lc_failure: f64, lc_explanation: f64, lc_resolution: f64) -> Self {
        ConfusionTrajectory { lc_pre, lc_failure, lc_explanation, lc_resolution }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.lc_pre, self.lc_failure, self.lc_explanation, self.lc_resolution]
    }

    pub fn get(&self, phase: Phase) -> f64 {
        self.as_array()[phase as usize]
    }
}

impl From<[f64; 4]> for ConfusionTrajectory {
    fn from(a: [f64; 4]) -> Self {
        ConfusionTrajectory::new(a[0], a[1], a[2], a[3])
    }
}

pub fn extract_trajectory(episode: &FailureEpisode) -> ConfusionTrajectory {
    let lc = |p| episode.obs(p).avg_emotions.confusion();
    ConfusionTrajectory::new(
        lc(Phase::Pre),
        lc(Phase::Failure),
        lc(Phase::Explanation),
        lc(Phase::Resolution),
    )
}

pub fn high_confusion(traj: &ConfusionTrajectory, th: &LabelerThresholds) -> bool {
    traj.lc_resolution > th.t_high
}

/// First persistent-confusion rule that fires, in order a, b, c.
pub fn persistent_confusion(traj: &ConfusionTrajectory, th: &LabelerThresholds) -> (bool, ConfusionRule) {
    let t = traj;
    // (a) rise at explanation, not reduced at resolution
    if th.rose(t.lc_failure, t.lc_explanation) && !th.rose(t.lc_resolution, t.lc_explanation) {
        return (true, ConfusionRule::PersistentA);
    }
    // (b) rise at failure, not reduced at resolution
    if th.rose(t.lc_pre, t.lc_failure) && !th.rose(t.lc_resolution, t.lc_failure) {
        return (true, ConfusionRule::PersistentB);
    }
    // (c) rise at resolution
    if th.rose(t.lc_explanation, t.lc_resolution) {
        return (true, ConfusionRule::PersistentC);
    }
    (false, ConfusionRule::None)
}

pub fn label_trajectory(traj: &ConfusionTrajectory, th: &LabelerThresholds) -> ConfusionLabel {
    if high_confusion(traj, th) {
        return ConfusionLabel::from_rule(ConfusionRule::HighConfusion);
    }
    let (_, rule) = persistent_confusion(traj, th);
    ConfusionLabel::from_rule(rule)
}

pub fn set_confusion(episode: &FailureEpisode, th: &LabelerThresholds) -> ConfusionLabel {
    label_trajectory(&extract_trajectory(episode), th)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledEpisode {
    pub key: EpisodeKey,
    pub label: ConfusionLabel,
}

/// One label per episode, in dataset order.
pub fn label_dataset(dataset: &Dataset, th: &LabelerThresholds) -> Vec<LabeledEpisode> {
    dataset
        .episodes
        .iter()
        .map(|ep| LabeledEpisode { key: ep.key(), label: set_confusion(ep, th) })
        .collect()
}

/// Share of positions where two label lists disagree on the state.
pub fn disagreement_rate(a: &[LabeledEpisode], b: &[LabeledEpisode]) -> f64 {
    assert_eq!(a.len(), b.len(), "label lists differ in length");
    if a.is_empty() {
        return 0.0;
    }
    let diff = a.iter().zip(b).filter(|(x, y)| x.label.state() != y.label.state()).count();
    diff as f64 / a.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::test_support::episode_with;
    use crate::domain::{Action, ConfusionState, ExplanationLevel};
    use proptest::prelude::*;

    fn label(t: [f64; 4]) -> ConfusionLabel {
        label_trajectory(&t.into(), &LabelerThresholds::default())
    }

    #[test]
    fn extracts_average_confusion() {
        let ep = episode_with("P", 1, 1, Action::Pick, ExplanationLevel::Low, [0.1, 0.2, 0.3, 0.1]);
        assert_eq!(extract_trajectory(&ep).as_array(), [0.1, 0.2, 0.3, 0.1]);
        let ep = episode_with("P", 1, 1, Action::Pick, ExplanationLevel::Low, [0.0; 4]);
        assert_eq!(extract_trajectory(&ep).as_array(), [0.0; 4]);
    }

    #[test]
    fn high_confusion_is_strict() {
        let th = LabelerThresholds::default();
        let t = |r| ConfusionTrajectory::new(0.0, 0.0, 0.0, r);
        assert!(high_confusion(&t(0.75), &th));
        assert!(!high_confusion(&t(0.70), &th));
        assert!(!high_confusion(&t(0.0), &th));
    }

    #[test]
    fn persistent_rule_table() {
        let th = LabelerThresholds::default();
        let run = |a: [f64; 4]| persistent_confusion(&a.into(), &th);
        assert_eq!(run([0.10, 0.10, 0.20, 0.18]), (true, ConfusionRule::PersistentA));
        assert_eq!(run([0.10, 0.10, 0.20, 0.10]), (false, ConfusionRule::None));
        assert_eq!(run([0.10, 0.10, 0.10, 0.16]), (true, ConfusionRule::PersistentC));
        // failure rose 0.10 but resolution fell 0.08 below it; resolution fell vs explanation
        assert_eq!(run([0.10, 0.20, 0.15, 0.12]), (false, ConfusionRule::None));
        assert_eq!(run([0.10, 0.20, 0.20, 0.18]), (true, ConfusionRule::PersistentB));
    }

    #[test]
    fn exact_decimal_steps_count_as_rises() {
        // 0.15 - 0.10 is 0.04999999999999999 in binary floating point
        assert_eq!(label([0.10, 0.10, 0.10, 0.15]).rule(), ConfusionRule::PersistentC);
        assert_eq!(label([0.10, 0.10, 0.10, 0.14]).rule(), ConfusionRule::None);
    }

    #[test]
    fn set_confusion_precedence() {
        assert_eq!(label([0.1, 0.1, 0.1, 0.75]).rule(), ConfusionRule::HighConfusion);
        assert_eq!(label([0.1, 0.1, 0.1, 0.1]), ConfusionLabel::not_confused());
        assert_eq!(label([0.1, 0.1, 0.2, 0.75]).rule(), ConfusionRule::HighConfusion);
    }

    #[test]
    fn label_dataset_preserves_order() {
        let eps = [[0.1, 0.1, 0.1, 0.75], [0.1, 0.1, 0.1, 0.1], [0.1, 0.1, 0.2, 0.75]]
            .into_iter()
            .enumerate()
            .map(|(i, t)| episode_with("P", 1, i as u8 + 1, Action::Place, ExplanationLevel::Low, t))
            .collect();
        let labels = label_dataset(&Dataset::new(eps), &LabelerThresholds::default());
        let states: Vec<_> = labels.iter().map(|l| (l.key.object_index, l.label.state())).collect();
        assert_eq!(
            states,
            vec![
                (1, ConfusionState::Confused),
                (2, ConfusionState::NotConfused),
                (3, ConfusionState::Confused)
            ]
        );
        assert!(label_dataset(&Dataset::default(), &LabelerThresholds::default()).is_empty());
    }

    #[test]
    fn threshold_validation() {
        assert!(LabelerThresholds::new(0.7, 0.05).is_ok());
        assert!(LabelerThresholds::new(0.05, 0.05).is_err());
        assert!(LabelerThresholds::new(1.2, 0.05).is_err());
        assert!(LabelerThresholds::new(0.7, 0.0).is_err());
    }

    fn unit() -> impl Strategy<Value = f64> {
        0.0..=1.0f64
    }

    proptest! {
        #[test]
        fn deterministic_and_paired(a in unit(), b in unit(), c in unit(), d in unit()) {
            let l1 = label([a, b, c, d]);
            let l2 = label([a, b, c, d]);
            prop_assert_eq!(l1, l2);
            prop_assert_eq!(l1.state() == ConfusionState::NotConfused, l1.rule() == ConfusionRule::None);
        }

        #[test]
        fn raising_t_high_never_adds_high_confusion(
            a in unit(), b in unit(), c in unit(), d in unit(),
            lo in 0.1..0.95f64, bump in 0.0..0.5f64,
        ) {
            let hi = (lo + bump).min(1.0);
            let t = ConfusionTrajectory::new(a, b, c, d);
            let low = label_trajectory(&t, &LabelerThresholds { t_high: lo, t_change: 0.05 });
            let high = label_trajectory(&t, &LabelerThresholds { t_high: hi, t_change: 0.05 });
            if high.rule() == ConfusionRule::HighConfusion {
                prop_assert_eq!(low.rule(), ConfusionRule::HighConfusion);
            }
        }

        #[test]
        fn rule_tag_is_first_fire(a in unit(), b in unit(), c in unit(), d in unit()) {
            let th = LabelerThresholds::default();
            let t = ConfusionTrajectory::new(a, b, c, d);
            let l = label_trajectory(&t, &th);
            if high_confusion(&t, &th) {
                prop_assert_eq!(l.rule(), ConfusionRule::HighConfusion);
            } else {
                prop_assert_eq!(l.rule(), persistent_confusion(&t, &th).1);
            }
        }
    }
}
