//! Seeded generator of synthetic study datasets with known ground truth.
//!
//! Each participant gets an independent random stream keyed by
//! `(seed, participant index)`, so output does not depend on the order in
//! which participants are simulated. Whether a failure induces confusion is
//! a Bernoulli draw whose probability grows with action difficulty and the
//! participant's propensity and shrinks with explanation adequacy and prior
//! exposure to the same action. The confusion-likelihood trajectory is then
//! built from one of the patterns the labeler recognizes, with margins of at
//! least three noise standard deviations to the labeler thresholds.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{
    Action, Dataset, Emotion, EmotionVector, EpisodeKey, ExplanationLevel, FailureEpisode, GazeDistribution,
    GestureFlags, Phase, PhaseObservation, StrategyId,
};
use crate::error::{Error, Result};
use crate::labeler::{ConfusionTrajectory, LabelerThresholds};

pub type ParticipantRng = ChaCha8Rng;

pub fn participant_rng(seed: u64, participant_index: u64) -> ParticipantRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(participant_index);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticipantProfile {
    pub participant_id: String,
    pub confusion_propensity: f64,
    pub familiarity_gain: f64,
    pub expressiveness: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduledFailure {
    pub round: u8,
    pub object_index: u8,
    pub action: Action,
}

impl ScheduledFailure {
    pub const fn new(round: u8, object_index: u8, action: Action) -> Self {
        ScheduledFailure { round, object_index, action }
    }
}

/// Three first-round failures, one per action, then eight more over rounds 2-4.
pub fn default_failure_schedule() -> Vec<ScheduledFailure> {
    use Action::*;
    vec![
        ScheduledFailure::new(1, 1, Pick),
        ScheduledFailure::new(1, 2, Carry),
        ScheduledFailure::new(1, 3, Place),
        ScheduledFailure::new(2, 1, Place),
        ScheduledFailure::new(2, 2, Pick),
        ScheduledFailure::new(2, 3, Carry),
        ScheduledFailure::new(3, 1, Carry),
        ScheduledFailure::new(3, 2, Place),
        ScheduledFailure::new(3, 4, Pick),
        ScheduledFailure::new(4, 2, Pick),
        ScheduledFailure::new(4, 3, Place),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionDifficulty {
    pub pick: f64,
    pub carry: f64,
    pub place: f64,
}

impl Default for ActionDifficulty {
    fn default() -> Self {
        ActionDifficulty { pick: 0.05, carry: 0.30, place: 0.35 }
    }
}

impl ActionDifficulty {
    pub fn of(&self, action: Action) -> f64 {
        match action {
            Action::Pick => self.pick,
            Action::Carry => self.carry,
            Action::Place => self.place,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelAdequacy {
    pub zero: f64,
    pub low: f64,
    pub medium: f64,
    pub high: f64,
}

impl Default for LevelAdequacy {
    fn default() -> Self {
        LevelAdequacy { zero: 0.0, low: 0.4, medium: 0.7, high: 0.9 }
    }
}

impl LevelAdequacy {
    pub fn of(&self, level: ExplanationLevel) -> f64 {
        match level {
            ExplanationLevel::Zero => self.zero,
            ExplanationLevel::Low => self.low,
            ExplanationLevel::Medium => self.medium,
            ExplanationLevel::High => self.high,
        }
    }
}

/// Closed interval a profile trait is drawn from uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub n_participants: usize,
    /// Assigned round-robin by participant index.
    pub strategies: Vec<StrategyId>,
    pub failure_schedule: Vec<ScheduledFailure>,
    pub difficulty: ActionDifficulty,
    pub adequacy: LevelAdequacy,
    pub noise_sigma: f64,
    pub propensity: Range,
    pub familiarity_gain: Range,
    pub expressiveness: Range,
    /// Thresholds the trajectory patterns are built around.
    pub thresholds: LabelerThresholds,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            n_participants: 55,
            strategies: StrategyId::ALL.to_vec(),
            failure_schedule: default_failure_schedule(),
            difficulty: ActionDifficulty::default(),
            adequacy: LevelAdequacy::default(),
            noise_sigma: 0.02,
            propensity: Range::new(0.3, 0.8),
            familiarity_gain: Range::new(0.0, 0.1),
            expressiveness: Range::new(0.4, 1.0),
            thresholds: LabelerThresholds::default(),
            seed: 7,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_participants == 0 {
            return bad("n_participants must be positive".into());
        }
        if self.strategies.is_empty() {
            return bad("at least one strategy is required".into());
        }
        if self.failure_schedule.is_empty() {
            return bad("failure schedule is empty".into());
        }
        let mut slots = HashSet::new();
        for f in &self.failure_schedule {
            if !(1..=4).contains(&f.round) || !(1..=4).contains(&f.object_index) {
                return bad(format!("schedule slot round {} object {} outside 1..=4", f.round, f.object_index));
            }
            if !slots.insert((f.round, f.object_index)) {
                return bad(format!("schedule slot round {} object {} repeated", f.round, f.object_index));
            }
        }
        for a in Action::ALL {
            if !self.failure_schedule.iter().any(|f| f.action == a) {
                return bad(format!("schedule has no {a} failure"));
            }
        }
        let unit = |name: &str, v: f64| -> Result<()> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} = {v} outside [0,1]")))
            }
        };
        for a in Action::ALL {
            unit(&format!("difficulty {a}"), self.difficulty.of(a))?;
        }
        for l in ExplanationLevel::ALL {
            unit(&format!("adequacy {l}"), self.adequacy.of(l))?;
        }
        for (name, r) in [
            ("propensity", self.propensity),
            ("familiarity_gain", self.familiarity_gain),
            ("expressiveness", self.expressiveness),
        ] {
            unit(name, r.lo)?;
            unit(name, r.hi)?;
            if r.lo > r.hi {
                return bad(format!("{name} range is empty"));
            }
        }
        if self.expressiveness.lo <= 0.0 {
            return bad("expressiveness must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma <= 0.1) {
            return bad(format!("noise_sigma {} outside [0, 0.1]", self.noise_sigma));
        }
        self.thresholds.validate()
    }

    pub fn participant_id(&self, index: usize) -> String {
        let width = self.n_participants.to_string().len().max(2);
        format!("P{:0width$}", index + 1)
    }

    pub fn strategy_for(&self, index: usize) -> StrategyId {
        self.strategies[index % self.strategies.len()]
    }
}

/// Probability that a failure induces confusion.
pub fn confusion_probability(
    config: &StudyConfig,
    profile: &ParticipantProfile,
    action: Action,
    level: ExplanationLevel,
    exposure_count: u32,
) -> f64 {
    (config.difficulty.of(action) + profile.confusion_propensity
        - config.adequacy.of(level)
        - profile.familiarity_gain * f64::from(exposure_count))
    .clamp(0.0, 1.0)
}

pub fn ground_truth_confusion(
    config: &StudyConfig,
    profile: &ParticipantProfile,
    action: Action,
    level: ExplanationLevel,
    exposure_count: u32,
    rng: &mut impl Rng,
) -> bool {
    let p = confusion_probability(config, profile, action, level, exposure_count);
    rng.random::<f64>() < p
}

/// Shape of the confusion-likelihood trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrajectoryPattern {
    HighSpike,
    UnresolvedExplanationRise,
    UnresolvedFailureRise,
    ResolutionRise,
    Settling,
    Productive,
}

impl TrajectoryPattern {
    pub const CONFUSED: [TrajectoryPattern; 4] = [
        TrajectoryPattern::HighSpike,
        TrajectoryPattern::UnresolvedExplanationRise,
        TrajectoryPattern::UnresolvedFailureRise,
        TrajectoryPattern::ResolutionRise,
    ];
    pub const NOT_CONFUSED: [TrajectoryPattern; 2] = [TrajectoryPattern::Settling, TrajectoryPattern::Productive];

    pub fn name(self) -> &'static str {
        match self {
            TrajectoryPattern::HighSpike => "HighSpike",
            TrajectoryPattern::UnresolvedExplanationRise => "UnresolvedExplanationRise",
            TrajectoryPattern::UnresolvedFailureRise => "UnresolvedFailureRise",
            TrajectoryPattern::ResolutionRise => "ResolutionRise",
            TrajectoryPattern::Settling => "Settling",
            TrajectoryPattern::Productive => "Productive",
        }
    }
}

/// Noise-free confusion likelihoods for a pattern.
fn pattern_trajectory(
    pattern: TrajectoryPattern,
    th: &LabelerThresholds,
    sigma: f64,
    rng: &mut impl Rng,
) -> [f64; 4] {
    let margin = 3.0 * sigma;
    let base = rng.random_range(0.05..=0.2);
    let rise = th.t_change + margin + rng.random_range(0.05..=0.12);
    // resolution stays at or slightly above the risen level, clear of a reduction
    let hold = (margin - th.t_change).max(0.0) + rng.random_range(0.01..=0.02);
    let step = margin.max(0.02) + rng.random_range(0.0..=0.03);
    match pattern {
        TrajectoryPattern::HighSpike => {
            let spike = th.t_high + margin + rng.random_range(0.03..=0.12);
            [base, base, base, spike.min(1.0)]
        }
        TrajectoryPattern::UnresolvedExplanationRise => [base, base, base + rise, base + rise + hold],
        TrajectoryPattern::UnresolvedFailureRise => [base, base + rise, base + rise, base + rise + hold],
        TrajectoryPattern::ResolutionRise => [base, base, base, base + rise],
        TrajectoryPattern::Settling => [base + 3.0 * step, base + 2.0 * step, base + step, base],
        TrajectoryPattern::Productive => {
            let settle = rng.random_range(0.0..=0.02);
            [base + step, base, base + rise, (base - settle).max(0.0)]
        }
    }
}

/// Per-phase reaction intensity driving the non-confusion channels.
fn intensity(confused: bool, phase: Phase) -> f64 {
    match (confused, phase) {
        (_, Phase::Pre) => 0.0,
        (true, Phase::Failure) => 0.6,
        (true, Phase::Explanation) => 0.8,
        (true, Phase::Resolution) => 1.0,
        (false, Phase::Failure) => 0.15,
        (false, Phase::Explanation) => 0.1,
        (false, Phase::Resolution) => 0.0,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticReaction {
    pub pattern: TrajectoryPattern,
    pub trajectory: ConfusionTrajectory,
    pub observations: [PhaseObservation; 4],
}

/// Phase observations whose confusion channel follows a pattern consistent
/// with `confused`, with correlated emotion, gaze and gesture channels.
pub fn synthesize_trajectory(
    confused: bool,
    expressiveness: f64,
    th: &LabelerThresholds,
    noise_sigma: f64,
    rng: &mut impl Rng,
) -> SyntheticReaction {
    let choices: &[TrajectoryPattern] =
        if confused { &TrajectoryPattern::CONFUSED } else { &TrajectoryPattern::NOT_CONFUSED };
    let pattern = choices[rng.random_range(0..choices.len())];
    let clean = pattern_trajectory(pattern, th, noise_sigma, rng);
    let normal = Normal::new(0.0, noise_sigma.max(0.0)).expect("finite sigma");
    let noise = |rng: &mut dyn rand::RngCore| if noise_sigma > 0.0 { normal.sample(rng) } else { 0.0 };

    let observations = Phase::ALL.map(|phase| {
        let k = expressiveness * intensity(confused, phase);
        let mut avg = EmotionVector::default();
        for e in Emotion::ALL {
            let mean = if e == Emotion::Confusion {
                clean[phase as usize]
            } else if e.is_negative() {
                0.08 + 0.25 * k
            } else {
                0.35 - 0.2 * k
            };
            avg.set(e, (mean + noise(rng)).clamp(0.0, 1.0));
        }
        let mut max = avg;
        for v in max.0.iter_mut() {
            *v = (*v + rng.random_range(0.02..=0.15)).min(1.0);
        }
        let misc = (0.1 + 0.2 * k + noise(rng)).clamp(0.0, 0.6);
        let robot = (0.3 + noise(rng)).clamp(0.2, 0.4);
        let gaze = GazeDistribution::new(robot, 1.0 - robot - misc, misc);
        let gestures = GestureFlags {
            hands_on_head_face: rng.random::<f64>() < 0.05 + 0.4 * k,
            head_tilt: rng.random::<f64>() < 0.1 + 0.3 * k,
        };
        PhaseObservation { phase, avg_emotions: avg, max_emotions: max, gaze, gestures }
    });
    let trajectory = ConfusionTrajectory::from(observations.map(|o| o.avg_emotions.confusion()));
    SyntheticReaction { pattern, trajectory, observations }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub key: EpisodeKey,
    pub confused: bool,
    pub probability: f64,
    pub pattern: TrajectoryPattern,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedStudy {
    pub dataset: Dataset,
    pub truth: Vec<GroundTruth>,
    pub profiles: Vec<ParticipantProfile>,
}

fn simulate_participant(config: &StudyConfig, index: usize) -> (ParticipantProfile, Vec<(FailureEpisode, GroundTruth)>) {
    let mut rng = participant_rng(config.seed, index as u64);
    let profile = ParticipantProfile {
        participant_id: config.participant_id(index),
        confusion_propensity: config.propensity.sample(&mut rng),
        familiarity_gain: config.familiarity_gain.sample(&mut rng),
        expressiveness: config.expressiveness.sample(&mut rng),
    };
    let strategy = config.strategy_for(index);
    let mut schedule = config.failure_schedule.clone();
    schedule.sort_by_key(|f| (f.round, f.object_index));
    let mut exposure = [0u32; 3];
    let mut out = Vec::with_capacity(schedule.len());
    for slot in schedule {
        let level = strategy.level_for_round(slot.round).expect("validated round");
        let seen = exposure[slot.action.index()];
        let probability = confusion_probability(config, &profile, slot.action, level, seen);
        let confused = rng.random::<f64>() < probability;
        exposure[slot.action.index()] += 1;
        let reaction =
            synthesize_trajectory(confused, profile.expressiveness, &config.thresholds, config.noise_sigma, &mut rng);
        let episode = FailureEpisode {
            participant_id: profile.participant_id.clone(),
            round: slot.round,
            object_index: slot.object_index,
            action: slot.action,
            delivered_level: level,
            strategy_id: Some(strategy),
            observations: reaction.observations.into_iter().map(|o| (o.phase, o)).collect(),
        };
        let truth = GroundTruth { key: episode.key(), confused, probability, pattern: reaction.pattern };
        out.push((episode, truth));
    }
    (profile, out)
}

pub fn simulate_study(config: &StudyConfig) -> Result<SimulatedStudy> {
    config.validate()?;
    let per_participant: Vec<_> =
        (0..config.n_participants).into_par_iter().map(|i| simulate_participant(config, i)).collect();
    let mut episodes = Vec::new();
    let mut truth = Vec::new();
    let mut profiles = Vec::new();
    for (profile, rows) in per_participant {
        profiles.push(profile);
        for (ep, gt) in rows {
            episodes.push(ep);
            truth.push(gt);
        }
    }
    Ok(SimulatedStudy { dataset: Dataset::new(episodes), truth, profiles })
}
