//! Domain types shared across the toolkit: phases, actions, explanation
//! levels, per-phase behavior measures and failure episodes.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Absolute tolerance on the gaze fractions summing to one.
pub const GAZE_SUM_TOLERANCE: f64 = 1e-6;

/// Schema version tag carried by every [`Dataset`].
pub const DATASET_SCHEMA_VERSION: &str = "EP1";

/// Interaction segment of a failure episode, in temporal order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Pre,
    Failure,
    Explanation,
    Resolution,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Pre, Phase::Failure, Phase::Explanation, Phase::Resolution];

    /// Lowercase key used in dataset records.
    pub fn key(self) -> &'static str {
        match self {
            Phase::Pre => "pre",
            Phase::Failure => "failure",
            Phase::Explanation => "explanation",
            Phase::Resolution => "resolution",
        }
    }

    /// The phase immediately before this one, if any.
    pub fn previous(self) -> Option<Phase> {
        match self {
            Phase::Pre => None,
            Phase::Failure => Some(Phase::Pre),
            Phase::Explanation => Some(Phase::Failure),
            Phase::Resolution => Some(Phase::Explanation),
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Robot action during which a failure happened.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    Pick,
    Carry,
    Place,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Pick, Action::Carry, Action::Place];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Pick => "Pick",
            Action::Carry => "Carry",
            Action::Place => "Place",
        }
    }

    pub fn parse(s: &str) -> Option<Action> {
        Action::ALL.into_iter().find(|a| a.name() == s)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Verbosity tier of a failure explanation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExplanationLevel {
    /// Non-verbal cues only.
    Zero,
    /// Action-based.
    Low,
    /// Context-based.
    Medium,
    /// Context and history based.
    High,
}

impl ExplanationLevel {
    pub const ALL: [ExplanationLevel; 4] = [
        ExplanationLevel::Zero,
        ExplanationLevel::Low,
        ExplanationLevel::Medium,
        ExplanationLevel::High,
    ];

    pub fn rank(self) -> i32 {
        self as i32
    }

    pub fn from_rank(rank: i32) -> Option<ExplanationLevel> {
        usize::try_from(rank).ok().and_then(|r| Self::ALL.get(r).copied())
    }

    /// Rank clamped into `[lo, hi]`.
    pub fn clamp_rank(rank: i32, lo: ExplanationLevel, hi: ExplanationLevel) -> ExplanationLevel {
        Self::from_rank(rank.clamp(lo.rank(), hi.rank())).expect("clamped rank is in range")
    }

    pub fn name(self) -> &'static str {
        match self {
            ExplanationLevel::Zero => "Zero",
            ExplanationLevel::Low => "Low",
            ExplanationLevel::Medium => "Medium",
            ExplanationLevel::High => "High",
        }
    }

    pub fn parse(s: &str) -> Option<ExplanationLevel> {
        Self::ALL.into_iter().find(|l| l.name() == s)
    }
}

impl fmt::Display for ExplanationLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Explanation strategy: a per-round schedule of explanation levels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StrategyId {
    /// Fixed-Low
    C1,
    /// Fixed-Medium
    C2,
    /// Fixed-High
    C3,
    /// Decay-Slow
    D1,
    /// Decay-Rapid
    D2,
}

impl StrategyId {
    pub const ALL: [StrategyId; 5] =
        [StrategyId::C1, StrategyId::C2, StrategyId::C3, StrategyId::D1, StrategyId::D2];

    pub fn name(self) -> &'static str {
        match self {
            StrategyId::C1 => "C1",
            StrategyId::C2 => "C2",
            StrategyId::C3 => "C3",
            StrategyId::D1 => "D1",
            StrategyId::D2 => "D2",
        }
    }

    pub fn parse(s: &str) -> Option<StrategyId> {
        Self::ALL.into_iter().find(|id| id.name() == s)
    }

    pub fn details(self) -> &'static str {
        match self {
            StrategyId::C1 => "Fixed-Low",
            StrategyId::C2 => "Fixed-Medium",
            StrategyId::C3 => "Fixed-High",
            StrategyId::D1 => "Decay-Slow",
            StrategyId::D2 => "Decay-Rapid",
        }
    }

    /// Delivered level in rounds 1..=4.
    pub fn schedule(self) -> [ExplanationLevel; 4] {
        use ExplanationLevel::*;
        match self {
            StrategyId::C1 => [Low, Low, Low, Low],
            StrategyId::C2 => [Medium, Medium, Medium, Medium],
            StrategyId::C3 => [High, High, High, High],
            StrategyId::D1 => [High, Medium, Low, Zero],
            StrategyId::D2 => [High, Low, Low, Low],
        }
    }

    /// Level for a 1-based round; `None` outside 1..=4.
    pub fn level_for_round(self, round: u8) -> Option<ExplanationLevel> {
        let idx = usize::from(round).checked_sub(1)?;
        self.schedule().get(idx).copied()
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Emotion channels, in the fixed vector order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Emotion {
    Confusion,
    Doubt,
    Disappointment,
    Anxiety,
    Anger,
    Distress,
    SurpriseNegative,
    Satisfaction,
    Interest,
    Contentment,
    Desire,
}

impl Emotion {
    pub const COUNT: usize = 11;

    pub const ALL: [Emotion; Emotion::COUNT] = [
        Emotion::Confusion,
        Emotion::Doubt,
        Emotion::Disappointment,
        Emotion::Anxiety,
        Emotion::Anger,
        Emotion::Distress,
        Emotion::SurpriseNegative,
        Emotion::Satisfaction,
        Emotion::Interest,
        Emotion::Contentment,
        Emotion::Desire,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_negative(self) -> bool {
        self.index() <= Emotion::SurpriseNegative.index()
    }

    /// snake_case name used for feature slot labels.
    pub fn slug(self) -> &'static str {
        match self {
            Emotion::Confusion => "confusion",
            Emotion::Doubt => "doubt",
            Emotion::Disappointment => "disappointment",
            Emotion::Anxiety => "anxiety",
            Emotion::Anger => "anger",
            Emotion::Distress => "distress",
            Emotion::SurpriseNegative => "surprise_negative",
            Emotion::Satisfaction => "satisfaction",
            Emotion::Interest => "interest",
            Emotion::Contentment => "contentment",
            Emotion::Desire => "desire",
        }
    }
}

/// Likelihoods in `[0, 1]` for the eleven tracked emotions.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmotionVector(pub [f64; Emotion::COUNT]);

impl EmotionVector {
    pub fn splat(value: f64) -> Self {
        EmotionVector([value; Emotion::COUNT])
    }

    pub fn get(&self, emotion: Emotion) -> f64 {
        self.0[emotion.index()]
    }

    pub fn set(&mut self, emotion: Emotion, value: f64) {
        self.0[emotion.index()] = value;
    }

    pub fn confusion(&self) -> f64 {
        self.get(Emotion::Confusion)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Share of phase time spent looking at each gaze target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GazeDistribution {
    pub fraction_robot: f64,
    pub fraction_task: f64,
    pub fraction_misc: f64,
}

impl GazeDistribution {
    pub fn new(fraction_robot: f64, fraction_task: f64, fraction_misc: f64) -> Self {
        GazeDistribution { fraction_robot, fraction_task, fraction_misc }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.fraction_robot, self.fraction_task, self.fraction_misc]
    }

    pub fn sum(&self) -> f64 {
        self.fraction_robot + self.fraction_task + self.fraction_misc
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GestureFlags {
    pub hands_on_head_face: bool,
    pub head_tilt: bool,
}

/// Aggregated behavior measures for one phase of one failure episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseObservation {
    pub phase: Phase,
    pub avg_emotions: EmotionVector,
    pub max_emotions: EmotionVector,
    pub gaze: GazeDistribution,
    pub gestures: GestureFlags,
}

impl PhaseObservation {
    /// Observation with constant emotion likelihoods and no gestures.
    pub fn uniform(phase: Phase, likelihood: f64, gaze: GazeDistribution) -> Self {
        PhaseObservation {
            phase,
            avg_emotions: EmotionVector::splat(likelihood),
            max_emotions: EmotionVector::splat(likelihood),
            gaze,
            gestures: GestureFlags::default(),
        }
    }
}

/// Identity of an episode within a dataset.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EpisodeKey {
    pub participant_id: String,
    pub round: u8,
    pub object_index: u8,
}

impl fmt::Display for EpisodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/r{}/o{}", self.participant_id, self.round, self.object_index)
    }
}

/// One robot failure and the participant's reaction across the four phases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureEpisode {
    pub participant_id: String,
    pub round: u8,
    pub object_index: u8,
    pub action: Action,
    pub delivered_level: ExplanationLevel,
    pub strategy_id: Option<StrategyId>,
    pub observations: BTreeMap<Phase, PhaseObservation>,
}

impl FailureEpisode {
    pub fn key(&self) -> EpisodeKey {
        EpisodeKey {
            participant_id: self.participant_id.clone(),
            round: self.round,
            object_index: self.object_index,
        }
    }

    /// Position in study order for the same participant.
    pub fn study_order(&self) -> (u8, u8) {
        (self.round, self.object_index)
    }

    pub fn observation(&self, phase: Phase) -> Option<&PhaseObservation> {
        self.observations.get(&phase)
    }

    /// Observation for `phase`; panics if missing, so only call on validated episodes.
    pub fn obs(&self, phase: Phase) -> &PhaseObservation {
        self.observations
            .get(&phase)
            .unwrap_or_else(|| panic!("episode {} has no {} observation", self.key(), phase))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConfusionState {
    Confused,
    NotConfused,
}

impl ConfusionState {
    pub fn is_confused(self) -> bool {
        self == ConfusionState::Confused
    }

    pub fn name(self) -> &'static str {
        match self {
            ConfusionState::Confused => "Confused",
            ConfusionState::NotConfused => "NotConfused",
        }
    }

    pub fn parse(s: &str) -> Option<ConfusionState> {
        match s {
            "Confused" => Some(ConfusionState::Confused),
            "NotConfused" => Some(ConfusionState::NotConfused),
            _ => None,
        }
    }
}

impl fmt::Display for ConfusionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which confusion rule fired.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConfusionRule {
    HighConfusion,
    PersistentA,
    PersistentB,
    PersistentC,
    None,
}

impl ConfusionRule {
    pub const ALL: [ConfusionRule; 5] = [
        ConfusionRule::HighConfusion,
        ConfusionRule::PersistentA,
        ConfusionRule::PersistentB,
        ConfusionRule::PersistentC,
        ConfusionRule::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConfusionRule::HighConfusion => "HighConfusion",
            ConfusionRule::PersistentA => "PersistentA",
            ConfusionRule::PersistentB => "PersistentB",
            ConfusionRule::PersistentC => "PersistentC",
            ConfusionRule::None => "None",
        }
    }

    pub fn parse(s: &str) -> Option<ConfusionRule> {
        Self::ALL.into_iter().find(|r| r.name() == s)
    }
}

impl fmt::Display for ConfusionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Confusion state together with the rule that decided it.
///
/// `state == NotConfused` exactly when `rule == None`; the constructors keep
/// that pairing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionLabel {
    state: ConfusionState,
    rule: ConfusionRule,
}

impl ConfusionLabel {
    pub fn confused(rule: ConfusionRule) -> Option<Self> {
        (rule != ConfusionRule::None).then_some(ConfusionLabel { state: ConfusionState::Confused, rule })
    }

    pub fn not_confused() -> Self {
        ConfusionLabel { state: ConfusionState::NotConfused, rule: ConfusionRule::None }
    }

    /// Builds a label from a rule tag alone.
    pub fn from_rule(rule: ConfusionRule) -> Self {
        Self::confused(rule).unwrap_or_else(Self::not_confused)
    }

    pub fn state(&self) -> ConfusionState {
        self.state
    }

    pub fn rule(&self) -> ConfusionRule {
        self.rule
    }

    pub fn is_confused(&self) -> bool {
        self.state.is_confused()
    }
}

/// Ordered collection of failure episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub episodes: Vec<FailureEpisode>,
    pub schema_version: String,
}

impl Default for Dataset {
    fn default() -> Self {
        Dataset { episodes: Vec::new(), schema_version: DATASET_SCHEMA_VERSION.to_string() }
    }
}

impl Dataset {
    pub fn new(episodes: Vec<FailureEpisode>) -> Self {
        Dataset { episodes, schema_version: DATASET_SCHEMA_VERSION.to_string() }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Distinct participant ids in order of first appearance.
    pub fn participants(&self) -> Vec<&str> {
        let mut seen = std::collections::HashSet::new();
        self.episodes
            .iter()
            .map(|e| e.participant_id.as_str())
            .filter(|p| seen.insert(*p))
            .collect()
    }
}

/// A single broken invariant.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    MissingPhase(Phase),
    PhaseMismatch { key: Phase, found: Phase },
    LikelihoodOutOfRange { phase: Phase, which: &'static str, index: usize, value: f64 },
    MaxBelowAverage { phase: Phase, index: usize, avg: f64, max: f64 },
    GazeOutOfRange { phase: Phase, value: f64 },
    GazeSum { phase: Phase, sum: f64 },
    RoundOutOfRange(u8),
    ObjectIndexOutOfRange(u8),
    EmptyParticipant,
    DuplicateKey(EpisodeKey),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingPhase(p) => write!(f, "missing phase {p}"),
            Violation::PhaseMismatch { key, found } => {
                write!(f, "observation stored under {key} is tagged {found}")
            }
            Violation::LikelihoodOutOfRange { phase, which, index, value } => {
                write!(f, "{phase} {which}[{index}] = {value} outside [0,1]")
            }
            Violation::MaxBelowAverage { phase, index, avg, max } => {
                write!(f, "{phase} max_emotions[{index}] = {max} below avg {avg}")
            }
            Violation::GazeOutOfRange { phase, value } => {
                write!(f, "{phase} gaze fraction {value} outside [0,1]")
            }
            Violation::GazeSum { phase, sum } => write!(f, "{phase} gaze sum {sum} ≠ 1"),
            Violation::RoundOutOfRange(r) => write!(f, "round {r} outside 1..=4"),
            Violation::ObjectIndexOutOfRange(o) => write!(f, "object_index {o} outside 1..=4"),
            Violation::EmptyParticipant => f.write_str("empty participant_id"),
            Violation::DuplicateKey(k) => write!(f, "duplicate episode key {k}"),
        }
    }
}

fn in_unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

/// Every invariant violation of a single episode; empty when valid.
pub fn validate_episode(episode: &FailureEpisode) -> Vec<Violation> {
    let mut out = Vec::new();
    if episode.participant_id.is_empty() {
        out.push(Violation::EmptyParticipant);
    }
    if !(1..=4).contains(&episode.round) {
        out.push(Violation::RoundOutOfRange(episode.round));
    }
    if !(1..=4).contains(&episode.object_index) {
        out.push(Violation::ObjectIndexOutOfRange(episode.object_index));
    }
    for phase in Phase::ALL {
        let Some(obs) = episode.observations.get(&phase) else {
            out.push(Violation::MissingPhase(phase));
            continue;
        };
        if obs.phase != phase {
            out.push(Violation::PhaseMismatch { key: phase, found: obs.phase });
        }
        for (which, vec) in [("avg_emotions", &obs.avg_emotions), ("max_emotions", &obs.max_emotions)] {
            for (index, &value) in vec.0.iter().enumerate() {
                if !in_unit(value) {
                    out.push(Violation::LikelihoodOutOfRange { phase, which, index, value });
                }
            }
        }
        for (index, (&avg, &max)) in obs.avg_emotions.0.iter().zip(&obs.max_emotions.0).enumerate() {
            if max < avg {
                out.push(Violation::MaxBelowAverage { phase, index, avg, max });
            }
        }
        for value in obs.gaze.as_array() {
            if !in_unit(value) {
                out.push(Violation::GazeOutOfRange { phase, value });
            }
        }
        let sum = obs.gaze.sum();
        if sum.is_nan() || (sum - 1.0).abs() > GAZE_SUM_TOLERANCE {
            out.push(Violation::GazeSum { phase, sum });
        }
    }
    out
}

/// Per-episode violations plus duplicate-key checks, as `(episode index, violation)`.
pub fn validate_dataset(dataset: &Dataset) -> Vec<(usize, Violation)> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (i, ep) in dataset.episodes.iter().enumerate() {
        out.extend(validate_episode(ep).into_iter().map(|v| (i, v)));
        let key = ep.key();
        if !seen.insert(key.clone()) {
            out.push((i, Violation::DuplicateKey(key)));
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn gaze() -> GazeDistribution {
        GazeDistribution::new(0.4, 0.4, 0.2)
    }

    /// Valid episode with every likelihood at `likelihood` and Confusion
    /// following `lc` across the four phases.
    pub fn episode_with(
        participant: &str,
        round: u8,
        object_index: u8,
        action: Action,
        level: ExplanationLevel,
        lc: [f64; 4],
    ) -> FailureEpisode {
        let observations = Phase::ALL
            .into_iter()
            .zip(lc)
            .map(|(phase, c)| {
                let mut obs = PhaseObservation::uniform(phase, 0.5, gaze());
                obs.avg_emotions.set(Emotion::Confusion, c);
                obs.max_emotions.set(Emotion::Confusion, c.max(0.5));
                (phase, obs)
            })
            .collect();
        FailureEpisode {
            participant_id: participant.to_string(),
            round,
            object_index,
            action,
            delivered_level: level,
            strategy_id: None,
            observations,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    fn base() -> FailureEpisode {
        episode_with("P01", 1, 1, Action::Pick, ExplanationLevel::High, [0.5; 4])
    }

    #[test]
    fn uniform_episode_is_valid() {
        assert!(validate_episode(&base()).is_empty());
    }

    #[test]
    fn missing_resolution_reported() {
        let mut ep = base();
        ep.observations.remove(&Phase::Resolution);
        let v = validate_episode(&ep);
        assert_eq!(v, vec![Violation::MissingPhase(Phase::Resolution)]);
        assert_eq!(v[0].to_string(), "missing phase Resolution");
    }

    #[test]
    fn gaze_sum_reported() {
        let mut ep = base();
        ep.observations.get_mut(&Phase::Failure).unwrap().gaze = GazeDistribution::new(0.5, 0.5, 0.5);
        let v = validate_episode(&ep);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].to_string(), "Failure gaze sum 1.5 ≠ 1");
    }

    #[test]
    fn reports_every_violation() {
        let mut ep = base();
        ep.round = 9;
        ep.observations.remove(&Phase::Pre);
        let obs = ep.observations.get_mut(&Phase::Explanation).unwrap();
        obs.avg_emotions.set(Emotion::Anger, f64::NAN);
        obs.max_emotions.set(Emotion::Doubt, 0.1);
        let v = validate_episode(&ep);
        assert!(v.contains(&Violation::RoundOutOfRange(9)));
        assert!(v.contains(&Violation::MissingPhase(Phase::Pre)));
        assert!(v.iter().any(|x| matches!(x, Violation::LikelihoodOutOfRange { index: 4, .. })));
        assert!(v.iter().any(|x| matches!(x, Violation::MaxBelowAverage { index: 1, .. })));
    }

    #[test]
    fn gaze_within_tolerance_accepted() {
        let mut ep = base();
        ep.observations.get_mut(&Phase::Pre).unwrap().gaze = GazeDistribution::new(0.3, 0.3, 0.4 + 5e-7);
        assert!(validate_episode(&ep).is_empty());
    }

    #[test]
    fn duplicate_keys_flagged() {
        let d = Dataset::new(vec![base(), base()]);
        let v = validate_dataset(&d);
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], (1, Violation::DuplicateKey(_))));
    }

    #[test]
    fn level_rank_arithmetic() {
        use ExplanationLevel::*;
        assert_eq!(High.rank() - Zero.rank(), 3);
        for r in -2..6 {
            let once = ExplanationLevel::clamp_rank(r, Low, High);
            assert_eq!(ExplanationLevel::clamp_rank(once.rank(), Low, High), once);
        }
    }

    #[test]
    fn emotion_groups() {
        let neg: Vec<_> = Emotion::ALL.iter().filter(|e| e.is_negative()).collect();
        assert_eq!(neg.len(), 7);
        assert_eq!(Emotion::ALL[0], Emotion::Confusion);
        assert!(!Emotion::Satisfaction.is_negative());
    }

    #[test]
    fn label_pairing() {
        assert!(ConfusionLabel::confused(ConfusionRule::None).is_none());
        let l = ConfusionLabel::from_rule(ConfusionRule::PersistentC);
        assert_eq!(l.state(), ConfusionState::Confused);
        assert_eq!(ConfusionLabel::from_rule(ConfusionRule::None).state(), ConfusionState::NotConfused);
    }

    #[test]
    fn decay_slow_schedule() {
        use ExplanationLevel::*;
        assert_eq!(StrategyId::D1.schedule(), [High, Medium, Low, Zero]);
        assert_eq!(StrategyId::D2.level_for_round(2), Some(Low));
        assert_eq!(StrategyId::C1.level_for_round(5), None);
    }
}
