//! Reading and writing datasets, labels, feature matrices, models and
//! delimiter-separated report tables.
//!
//! Datasets are UTF-8 JSON lines, one episode per line. Models are a single
//! header line `CONFADAPT-FOREST schema_version=<v> feature_layout_version=<l>`
//! followed by one JSON document with parameters and trees.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::{
    validate_episode, Action, ConfusionLabel, ConfusionRule, ConfusionState, Dataset, Emotion, EmotionVector,
    EpisodeKey, ExplanationLevel, FailureEpisode, GazeDistribution, GestureFlags, Phase, PhaseObservation,
    StrategyId, Violation, DATASET_SCHEMA_VERSION,
};
use crate::error::{Error, LineViolation, Result};
use crate::features::{slot_names, FeatureVector, TrainingRow, FEATURE_COUNT};
use crate::forest::{layout_for, ForestModel, TreeNode, MODEL_SCHEMA_VERSION};
use crate::labeler::LabeledEpisode;
use crate::simulate::GroundTruth;

pub const MODEL_MAGIC: &str = "CONFADAPT-FOREST";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReadMode {
    /// Unknown fields and invalid episodes are errors.
    Strict,
    /// Unknown fields are ignored; invalid episodes are dropped with a warning.
    Lenient,
}

#[derive(Serialize, Deserialize)]
struct PhaseRecord {
    avg_emotions: [f64; Emotion::COUNT],
    max_emotions: [f64; Emotion::COUNT],
    gaze: [f64; 3],
    gestures: [u8; 2],
}

#[derive(Serialize, Deserialize, Default)]
struct PhasesRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pre: Option<PhaseRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    failure: Option<PhaseRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    explanation: Option<PhaseRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    resolution: Option<PhaseRecord>,
}

impl PhasesRecord {
    fn slot(&mut self, phase: Phase) -> &mut Option<PhaseRecord> {
        match phase {
            Phase::Pre => &mut self.pre,
            Phase::Failure => &mut self.failure,
            Phase::Explanation => &mut self.explanation,
            Phase::Resolution => &mut self.resolution,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct EpisodeRecord {
    participant_id: String,
    round: u8,
    object_index: u8,
    action: Action,
    delivered_level: ExplanationLevel,
    strategy_id: Option<StrategyId>,
    phases: PhasesRecord,
}

const RECORD_FIELDS: [&str; 7] =
    ["participant_id", "round", "object_index", "action", "delivered_level", "strategy_id", "phases"];
const PHASE_FIELDS: [&str; 4] = ["avg_emotions", "max_emotions", "gaze", "gestures"];

fn unknown_field(value: &Value) -> Option<String> {
    let obj = value.as_object()?;
    if let Some(k) = obj.keys().find(|k| !RECORD_FIELDS.contains(&k.as_str())) {
        return Some(k.clone());
    }
    let phases = obj.get("phases")?.as_object()?;
    for (name, phase) in phases {
        if !Phase::ALL.iter().any(|p| p.key() == name) {
            return Some(format!("phases.{name}"));
        }
        if let Some(k) = phase.as_object().and_then(|o| o.keys().find(|k| !PHASE_FIELDS.contains(&k.as_str()))) {
            return Some(format!("phases.{name}.{k}"));
        }
    }
    None
}

fn record_to_episode(rec: EpisodeRecord, line: usize) -> Result<FailureEpisode> {
    let mut phases = rec.phases;
    let mut observations = std::collections::BTreeMap::new();
    for phase in Phase::ALL {
        let Some(p) = phases.slot(phase).take() else { continue };
        let flag = |i: usize| match p.gestures[i] {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Parse {
                line,
                field: format!("phases.{}.gestures[{i}]", phase.key()),
                message: format!("expected 0 or 1, found {other}"),
            }),
        };
        let gestures = GestureFlags { hands_on_head_face: flag(0)?, head_tilt: flag(1)? };
        observations.insert(
            phase,
            PhaseObservation {
                phase,
                avg_emotions: EmotionVector(p.avg_emotions),
                max_emotions: EmotionVector(p.max_emotions),
                gaze: GazeDistribution::new(p.gaze[0], p.gaze[1], p.gaze[2]),
                gestures,
            },
        );
    }
    Ok(FailureEpisode {
        participant_id: rec.participant_id,
        round: rec.round,
        object_index: rec.object_index,
        action: rec.action,
        delivered_level: rec.delivered_level,
        strategy_id: rec.strategy_id,
        observations,
    })
}

fn episode_to_record(ep: &FailureEpisode) -> EpisodeRecord {
    let mut phases = PhasesRecord::default();
    for (&phase, obs) in &ep.observations {
        *phases.slot(phase) = Some(PhaseRecord {
            avg_emotions: obs.avg_emotions.0,
            max_emotions: obs.max_emotions.0,
            gaze: obs.gaze.as_array(),
            gestures: [u8::from(obs.gestures.hands_on_head_face), u8::from(obs.gestures.head_tilt)],
        });
    }
    EpisodeRecord {
        participant_id: ep.participant_id.clone(),
        round: ep.round,
        object_index: ep.object_index,
        action: ep.action,
        delivered_level: ep.delivered_level,
        strategy_id: ep.strategy_id,
        phases,
    }
}

/// Decodes one dataset line (1-based `line` for error messages).
pub fn parse_episode_line(text: &str, line: usize, mode: ReadMode) -> Result<FailureEpisode> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        field: "<record>".into(),
        message: e.to_string(),
    })?;
    if mode == ReadMode::Strict {
        if let Some(field) = unknown_field(&value) {
            return Err(Error::Parse { line, field, message: "unknown field".into() });
        }
    }
    let rec: EpisodeRecord = serde_path_to_error::deserialize(value).map_err(|e| Error::Parse {
        line,
        field: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    record_to_episode(rec, line)
}

pub fn episode_to_line(ep: &FailureEpisode) -> String {
    serde_json::to_string(&episode_to_record(ep)).expect("episode records always serialize")
}

/// Dataset plus the invalid records dropped in lenient mode.
#[derive(Debug)]
pub struct ReadReport {
    pub dataset: Dataset,
    pub dropped: Vec<LineViolation>,
}

pub fn read_dataset_report(path: &Path, mode: ReadMode) -> Result<ReadReport> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut episodes = Vec::new();
    let mut violations = Vec::new();
    let mut keys = HashSet::new();
    for (i, text) in BufReader::new(file).lines().enumerate() {
        let line = i + 1;
        let text = text.map_err(|e| Error::io(path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        let ep = parse_episode_line(&text, line, mode)?;
        let mut found: Vec<Violation> = validate_episode(&ep);
        if !keys.insert(ep.key()) {
            found.push(Violation::DuplicateKey(ep.key()));
        }
        if found.is_empty() {
            episodes.push(ep);
        } else {
            violations.extend(found.into_iter().map(|violation| LineViolation { line, violation }));
        }
    }
    if mode == ReadMode::Strict && !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    for v in &violations {
        log::warn!("{}: dropped record: {v}", path.display());
    }
    Ok(ReadReport { dataset: Dataset::new(episodes), dropped: violations })
}

pub fn read_dataset(path: &Path, mode: ReadMode) -> Result<Dataset> {
    Ok(read_dataset_report(path, mode)?.dataset)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    if dataset.schema_version != DATASET_SCHEMA_VERSION {
        return Err(Error::VersionMismatch {
            expected: DATASET_SCHEMA_VERSION.into(),
            found: dataset.schema_version.clone(),
        });
    }
    let violations: Vec<LineViolation> = crate::domain::validate_dataset(dataset)
        .into_iter()
        .map(|(i, violation)| LineViolation { line: i + 1, violation })
        .collect();
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let mut w = create(path)?;
    for ep in &dataset.episodes {
        writeln!(w, "{}", episode_to_line(ep)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn model_to_string(model: &ForestModel) -> String {
    let body = serde_json::to_string(model).expect("models always serialize");
    format!(
        "{MODEL_MAGIC} schema_version={MODEL_SCHEMA_VERSION} feature_layout_version={}\n{body}\n",
        model.feature_layout_version
    )
}

fn check_tree(node: &TreeNode, n_features: usize) -> bool {
    match node {
        TreeNode::Leaf { probability, .. } => (0.0..=1.0).contains(probability),
        TreeNode::Split { slot, left, right, .. } => {
            *slot < n_features && check_tree(left, n_features) && check_tree(right, n_features)
        }
    }
}

pub fn model_from_str(text: &str) -> Result<ForestModel> {
    let (header, body) = text.split_once('\n').ok_or_else(|| Error::CorruptModel("missing header line".into()))?;
    let mut fields = header.split(' ');
    if fields.next() != Some(MODEL_MAGIC) {
        return Err(Error::CorruptModel("bad magic string".into()));
    }
    let mut field = |name: &str| -> Result<String> {
        fields
            .next()
            .and_then(|f| f.strip_prefix(name)?.strip_prefix('='))
            .map(str::to_string)
            .ok_or_else(|| Error::CorruptModel(format!("header lacks {name}")))
    };
    let schema = field("schema_version")?;
    let layout = field("feature_layout_version")?;
    if schema != MODEL_SCHEMA_VERSION {
        return Err(Error::VersionMismatch { expected: MODEL_SCHEMA_VERSION.into(), found: schema });
    }
    let model: ForestModel =
        serde_json::from_str(body.trim_end()).map_err(|e| Error::CorruptModel(e.to_string()))?;
    let expected_layout = layout_for(model.n_features);
    if layout != expected_layout || model.feature_layout_version != expected_layout {
        return Err(Error::VersionMismatch { expected: expected_layout, found: layout });
    }
    if model.trees.is_empty() || !model.trees.iter().all(|t| check_tree(t, model.n_features)) {
        return Err(Error::CorruptModel("tree structure inconsistent with header".into()));
    }
    Ok(model)
}

pub fn save_model(model: &ForestModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_string(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ForestModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(&text)
}

/// Header plus string rows, written as comma-separated values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push<S: ToString>(&mut self, row: impl IntoIterator<Item = S>) {
        let row: Vec<String> = row.into_iter().map(|s| s.to_string()).collect();
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Table> {
        let mut r = csv::ReaderBuilder::new().from_path(path).map_err(|e| csv_error(path, e))?;
        let header = r.headers().map_err(|e| csv_error(path, e))?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec.map_err(|e| csv_error(path, e))?.iter().map(str::to_string).collect());
        }
        Ok(Table { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse { line, field: "<csv>".into(), message: format!("{other:?}") },
    }
}

/// Row `i` of a table is on file line `i + 2`.
fn cell<'a>(t: &'a Table, row: usize, col: usize, name: &str) -> Result<&'a str> {
    t.rows[row].get(col).map(String::as_str).ok_or_else(|| Error::Parse {
        line: row + 2,
        field: name.into(),
        message: "missing value".into(),
    })
}

fn parse_cell<T>(t: &Table, row: usize, name: &str, parse: impl Fn(&str) -> Option<T>) -> Result<T> {
    let col = t.column(name).ok_or_else(|| Error::Parse { line: 1, field: name.into(), message: "missing column".into() })?;
    let raw = cell(t, row, col, name)?;
    parse(raw).ok_or_else(|| Error::Parse { line: row + 2, field: name.into(), message: format!("invalid value {raw:?}") })
}

fn parse_key(t: &Table, row: usize) -> Result<EpisodeKey> {
    Ok(EpisodeKey {
        participant_id: parse_cell(t, row, "participant_id", |s| Some(s.to_string()))?,
        round: parse_cell(t, row, "round", |s| s.parse().ok())?,
        object_index: parse_cell(t, row, "object_index", |s| s.parse().ok())?,
    })
}

pub const LABEL_COLUMNS: [&str; 5] = ["participant_id", "round", "object_index", "state", "rule"];

pub fn labels_table(labels: &[LabeledEpisode]) -> Table {
    let mut t = Table::new(LABEL_COLUMNS);
    for l in labels {
        t.push([
            l.key.participant_id.clone(),
            l.key.round.to_string(),
            l.key.object_index.to_string(),
            l.label.state().to_string(),
            l.label.rule().to_string(),
        ]);
    }
    t
}

pub fn write_labels(labels: &[LabeledEpisode], path: &Path) -> Result<()> {
    labels_table(labels).write(path)
}

pub fn read_labels(path: &Path) -> Result<Vec<LabeledEpisode>> {
    let t = Table::read(path)?;
    (0..t.rows.len())
        .map(|i| {
            let key = parse_key(&t, i)?;
            let state = parse_cell(&t, i, "state", ConfusionState::parse)?;
            let rule = parse_cell(&t, i, "rule", ConfusionRule::parse)?;
            let label = ConfusionLabel::from_rule(rule);
            if label.state() != state {
                return Err(Error::Parse {
                    line: i + 2,
                    field: "rule".into(),
                    message: format!("rule {rule} inconsistent with state {state}"),
                });
            }
            Ok(LabeledEpisode { key, label })
        })
        .collect()
}

pub fn truth_table(truth: &[GroundTruth]) -> Table {
    let mut t = Table::new(["participant_id", "round", "object_index", "confused", "probability", "pattern"]);
    for g in truth {
        t.push([
            g.key.participant_id.clone(),
            g.key.round.to_string(),
            g.key.object_index.to_string(),
            u8::from(g.confused).to_string(),
            g.probability.to_string(),
            g.pattern.name().to_string(),
        ]);
    }
    t
}

/// `(key, confused)` pairs from a ground-truth file.
pub fn read_truth(path: &Path) -> Result<Vec<(EpisodeKey, bool)>> {
    let t = Table::read(path)?;
    (0..t.rows.len())
        .map(|i| {
            let confused = parse_cell(&t, i, "confused", |s| match s {
                "0" => Some(false),
                "1" => Some(true),
                _ => None,
            })?;
            Ok((parse_key(&t, i)?, confused))
        })
        .collect()
}

const FEATURE_KEY_COLUMNS: [&str; 4] = ["participant_id", "round", "object_index", "class"];

pub fn features_table(rows: &[TrainingRow]) -> Table {
    let mut t = Table::new(FEATURE_KEY_COLUMNS.iter().map(|s| s.to_string()).chain(slot_names()));
    for r in rows {
        let mut cells = vec![
            r.key.participant_id.clone(),
            r.key.round.to_string(),
            r.key.object_index.to_string(),
            r.class.to_string(),
        ];
        cells.extend(r.features.0.iter().map(f64::to_string));
        t.push(cells);
    }
    t
}

pub fn write_features(rows: &[TrainingRow], path: &Path) -> Result<()> {
    features_table(rows).write(path)
}

pub fn read_features(path: &Path) -> Result<Vec<TrainingRow>> {
    let t = Table::read(path)?;
    let expected: Vec<String> = FEATURE_KEY_COLUMNS.iter().map(|s| s.to_string()).chain(slot_names()).collect();
    if t.header != expected {
        return Err(Error::LayoutMismatch { expected: expected.len(), found: t.header.len() });
    }
    (0..t.rows.len())
        .map(|i| {
            let key = parse_key(&t, i)?;
            let class = parse_cell(&t, i, "class", ConfusionState::parse)?;
            let mut values = [0.0; FEATURE_COUNT];
            for (j, v) in values.iter_mut().enumerate() {
                let raw = cell(&t, i, FEATURE_KEY_COLUMNS.len() + j, &expected[4 + j])?;
                *v = raw.parse().map_err(|_| Error::Parse {
                    line: i + 2,
                    field: expected[4 + j].clone(),
                    message: format!("invalid number {raw:?}"),
                })?;
            }
            Ok(TrainingRow { key, features: FeatureVector(values), class })
        })
        .collect()
}
