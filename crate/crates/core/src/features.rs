//! Fixed-layout feature vectors (layout `FV1`).
//!
//! | slots    | content                                                    |
//! |----------|------------------------------------------------------------|
//! | 0..3     | action one-hot (Pick, Carry, Place)                        |
//! | 3        | explanation-decrease flag D                                |
//! | 4..31    | last same-action reaction, explanation phase block         |
//! | 31..58   | last same-action reaction, resolution phase block          |
//! | 58..69   | last reaction change, resolution avg minus explanation avg |
//! | 69..96   | current failure phase block                                |
//! | 96..107  | current change, failure avg minus pre avg                  |
//!
//! A phase block is 11 average emotions, 11 peak emotions, gaze
//! robot/task/misc and the two gesture flags as 0/1.

use std::collections::{BTreeMap, HashMap};

use crate::domain::{
    Action, ConfusionState, Dataset, Emotion, EpisodeKey, ExplanationLevel, FailureEpisode, Phase,
    PhaseObservation,
};
use crate::error::{Error, Result};
use crate::labeler::LabeledEpisode;

pub const FEATURE_LAYOUT_VERSION: &str = "FV1";
pub const PHASE_BLOCK_LEN: usize = 2 * Emotion::COUNT + 3 + 2;
pub const FEATURE_COUNT: usize = 3 + 1 + 2 * PHASE_BLOCK_LEN + Emotion::COUNT + PHASE_BLOCK_LEN + Emotion::COUNT;

pub const ACTION_OFFSET: usize = 0;
pub const DECREASE_SLOT: usize = 3;
pub const LAST_EXPLANATION_OFFSET: usize = 4;
pub const LAST_RESOLUTION_OFFSET: usize = LAST_EXPLANATION_OFFSET + PHASE_BLOCK_LEN;
pub const LAST_CHANGE_OFFSET: usize = LAST_RESOLUTION_OFFSET + PHASE_BLOCK_LEN;
pub const CURRENT_FAILURE_OFFSET: usize = LAST_CHANGE_OFFSET + Emotion::COUNT;
pub const CURRENT_CHANGE_OFFSET: usize = CURRENT_FAILURE_OFFSET + PHASE_BLOCK_LEN;

pub type PhaseBlock = [f64; PHASE_BLOCK_LEN];
pub type ChangeBlock = [f64; Emotion::COUNT];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn decrease_flag(&self) -> bool {
        self.0[DECREASE_SLOT] == 1.0
    }

    pub fn action(&self) -> Option<Action> {
        Action::ALL.into_iter().find(|a| self.0[ACTION_OFFSET + a.index()] == 1.0)
    }
}

impl TryFrom<&[f64]> for FeatureVector {
    type Error = Error;

    fn try_from(values: &[f64]) -> Result<Self> {
        let arr: [f64; FEATURE_COUNT] = values
            .try_into()
            .map_err(|_| Error::LayoutMismatch { expected: FEATURE_COUNT, found: values.len() })?;
        Ok(FeatureVector(arr))
    }
}

pub fn phase_block(obs: &PhaseObservation) -> PhaseBlock {
    let mut block = [0.0; PHASE_BLOCK_LEN];
    let n = Emotion::COUNT;
    block[..n].copy_from_slice(obs.avg_emotions.as_slice());
    block[n..2 * n].copy_from_slice(obs.max_emotions.as_slice());
    block[2 * n..2 * n + 3].copy_from_slice(&obs.gaze.as_array());
    block[2 * n + 3] = f64::from(u8::from(obs.gestures.hands_on_head_face));
    block[2 * n + 4] = f64::from(u8::from(obs.gestures.head_tilt));
    block
}

fn change_block(earlier: &PhaseObservation, later: &PhaseObservation) -> ChangeBlock {
    std::array::from_fn(|i| later.avg_emotions.0[i] - earlier.avg_emotions.0[i])
}

/// Behavioral part of a feature vector: everything except the action and D slots.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBasis {
    pub action: Action,
    pub last_explanation: PhaseBlock,
    pub last_resolution: PhaseBlock,
    pub last_change: ChangeBlock,
    pub current_failure: PhaseBlock,
    pub current_change: ChangeBlock,
}

impl FeatureBasis {
    /// Basis from the current episode and the participant's last episode with
    /// the same action.
    pub fn from_history(current: &FailureEpisode, last_same_action: &FailureEpisode) -> Result<Self> {
        if current.participant_id != last_same_action.participant_id {
            return Err(Error::History(format!(
                "participant mismatch: {} vs {}",
                current.participant_id, last_same_action.participant_id
            )));
        }
        if current.action != last_same_action.action {
            return Err(Error::History(format!(
                "action mismatch: {} vs {}",
                current.action, last_same_action.action
            )));
        }
        if last_same_action.study_order() >= current.study_order() {
            return Err(Error::History(format!(
                "{} does not precede {}",
                last_same_action.key(),
                current.key()
            )));
        }
        let last_expl = last_same_action.obs(Phase::Explanation);
        let last_res = last_same_action.obs(Phase::Resolution);
        let cur_pre = current.obs(Phase::Pre);
        let cur_fail = current.obs(Phase::Failure);
        Ok(FeatureBasis {
            action: current.action,
            last_explanation: phase_block(last_expl),
            last_resolution: phase_block(last_res),
            last_change: change_block(last_expl, last_res),
            current_failure: phase_block(cur_fail),
            current_change: change_block(cur_pre, cur_fail),
        })
    }

    /// Full vector with the given value of the decrease flag.
    pub fn assemble(&self, decrease: bool) -> FeatureVector {
        let mut v = [0.0; FEATURE_COUNT];
        v[ACTION_OFFSET + self.action.index()] = 1.0;
        v[DECREASE_SLOT] = if decrease { 1.0 } else { 0.0 };
        v[LAST_EXPLANATION_OFFSET..LAST_RESOLUTION_OFFSET].copy_from_slice(&self.last_explanation);
        v[LAST_RESOLUTION_OFFSET..LAST_CHANGE_OFFSET].copy_from_slice(&self.last_resolution);
        v[LAST_CHANGE_OFFSET..CURRENT_FAILURE_OFFSET].copy_from_slice(&self.last_change);
        v[CURRENT_FAILURE_OFFSET..CURRENT_CHANGE_OFFSET].copy_from_slice(&self.current_failure);
        v[CURRENT_CHANGE_OFFSET..].copy_from_slice(&self.current_change);
        FeatureVector(v)
    }
}

pub fn extract_features(
    current: &FailureEpisode,
    last_same_action: &FailureEpisode,
    candidate_level: ExplanationLevel,
) -> Result<FeatureVector> {
    let basis = FeatureBasis::from_history(current, last_same_action)?;
    Ok(basis.assemble(candidate_level < last_same_action.delivered_level))
}

fn block_names(prefix: &str) -> Vec<String> {
    let mut names = Vec::with_capacity(PHASE_BLOCK_LEN);
    for stat in ["avg", "max"] {
        names.extend(Emotion::ALL.iter().map(|e| format!("{prefix}_{stat}_{}", e.slug())));
    }
    names.extend(["gaze_robot", "gaze_task", "gaze_misc"].iter().map(|g| format!("{prefix}_{g}")));
    names.push(format!("{prefix}_hands_on_head_face"));
    names.push(format!("{prefix}_head_tilt"));
    names
}

/// Slot names in layout order.
pub fn slot_names() -> Vec<String> {
    let mut names: Vec<String> = Action::ALL.iter().map(|a| format!("action_{}", a.name().to_lowercase())).collect();
    names.push("explanation_decrease".into());
    names.extend(block_names("last_explanation"));
    names.extend(block_names("last_resolution"));
    names.extend(Emotion::ALL.iter().map(|e| format!("last_change_{}", e.slug())));
    names.extend(block_names("current_failure"));
    names.extend(Emotion::ALL.iter().map(|e| format!("current_change_{}", e.slug())));
    names
}

/// For every episode, the index of the same participant's most recent
/// earlier episode with the same action.
pub fn previous_same_action(dataset: &Dataset) -> Vec<Option<usize>> {
    let mut groups: BTreeMap<(&str, Action), Vec<usize>> = BTreeMap::new();
    for (i, ep) in dataset.episodes.iter().enumerate() {
        groups.entry((ep.participant_id.as_str(), ep.action)).or_default().push(i);
    }
    let mut prev = vec![None; dataset.len()];
    for idxs in groups.values_mut() {
        idxs.sort_by_key(|&i| dataset.episodes[i].study_order());
        for w in idxs.windows(2) {
            prev[w[1]] = Some(w[0]);
        }
    }
    prev
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingRow {
    pub key: EpisodeKey,
    pub features: FeatureVector,
    pub class: ConfusionState,
}

impl TrainingRow {
    pub fn participant_id(&self) -> &str {
        &self.key.participant_id
    }
}

/// Training rows for every episode that has a prior same-action episode.
///
/// The candidate level is the level actually delivered, so D records the
/// realized change. Episodes without history are skipped.
pub fn build_training_set(dataset: &Dataset, labels: &[LabeledEpisode]) -> Result<Vec<TrainingRow>> {
    let by_key: HashMap<&EpisodeKey, ConfusionState> =
        labels.iter().map(|l| (&l.key, l.label.state())).collect();
    let prev = previous_same_action(dataset);
    let mut rows = Vec::new();
    for (ep, prev) in dataset.episodes.iter().zip(prev) {
        let Some(p) = prev else { continue };
        let key = ep.key();
        let class = *by_key
            .get(&key)
            .ok_or_else(|| Error::InsufficientData(format!("no label for episode {key}")))?;
        let features = extract_features(ep, &dataset.episodes[p], ep.delivered_level)?;
        rows.push(TrainingRow { key, features, class });
    }
    log::debug!("built {} training rows from {} episodes", rows.len(), dataset.len());
    Ok(rows)
}
