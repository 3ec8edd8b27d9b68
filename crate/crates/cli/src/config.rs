//! Flat key-value settings shared by every subcommand.
//!
//! Values come from command-line flags, then the `--config` TOML file, then
//! built-in defaults. The resolved values and the source of each are
//! recorded in the run manifest.

use std::collections::BTreeMap;
use std::path::Path;

use clap::Args;
use serde::{Deserialize, Serialize};

use confadapt_core::controller::{LevelBounds, TableMode};
use confadapt_core::domain::{Action, ExplanationLevel, StrategyId};
use confadapt_core::forest::{ClassWeights, ForestParams};
use confadapt_core::labeler::LabelerThresholds;
use confadapt_core::pipeline::PipelineConfig;
use confadapt_core::simulate::{default_failure_schedule, Range, ScheduledFailure, StudyConfig};
use confadapt_core::Error;

macro_rules! settings {
    ($($(#[doc = $doc:literal])* $name:ident : $ty:ty),* $(,)?) => {
        /// Every tunable. `None` means "not given at this layer".
        #[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct Settings {
            $(
                $(#[doc = $doc])*
                #[arg(long, help_heading = "Settings")]
                #[serde(default, skip_serializing_if = "Option::is_none")]
                pub $name: Option<$ty>,
            )*
        }

        impl Settings {
            /// Fields of `self` override those of `base`.
            pub fn over(&self, base: &Settings) -> Settings {
                Settings { $($name: self.$name.clone().or_else(|| base.$name.clone()),)* }
            }

            /// Key names present at this layer.
            pub fn present(&self) -> Vec<&'static str> {
                let mut out = Vec::new();
                $(if self.$name.is_some() { out.push(stringify!($name)); })*
                out
            }

            pub fn keys() -> Vec<&'static str> {
                vec![$(stringify!($name)),*]
            }
        }
    };
}

settings! {
    /// Number of simulated participants
    n_participants: usize,
    /// Seed for simulation and forest training
    seed: u64,
    /// Standard deviation of observation noise
    noise_sigma: f64,
    /// Comma-separated strategy ids assigned round-robin
    strategies: String,
    /// Comma-separated round:object:Action slots
    failure_schedule: String,
    difficulty_pick: f64,
    difficulty_carry: f64,
    difficulty_place: f64,
    adequacy_zero: f64,
    adequacy_low: f64,
    adequacy_medium: f64,
    adequacy_high: f64,
    propensity_min: f64,
    propensity_max: f64,
    familiarity_gain_min: f64,
    familiarity_gain_max: f64,
    expressiveness_min: f64,
    expressiveness_max: f64,
    /// Confusion threshold on the resolution phase
    t_high: f64,
    /// Minimum rise counted as a change
    t_change: f64,
    n_trees: usize,
    max_depth: usize,
    min_samples_split: usize,
    min_samples_leaf: usize,
    /// Features tried per split (default floor(sqrt(n)))
    features_per_split: usize,
    /// Weight of the Confused class (default inverse frequency)
    class_weight_confused: f64,
    /// Weight of the NotConfused class (default inverse frequency)
    class_weight_not_confused: f64,
    bootstrap: bool,
    decision_threshold: f64,
    /// Lowest level the controller may choose
    e_min: String,
    /// Highest level the controller may choose
    e_max: String,
    /// vs-rest or goodness-of-fit
    table_mode: String,
    /// Apply the continuity correction to 2x2 tests
    yates: bool,
}

pub const DEFAULT_SEED: u64 = 7;

fn invalid(key: &str, value: impl std::fmt::Display) -> Error {
    Error::InvalidConfig(format!("invalid value for {key}: {value}"))
}

fn parse_list<T>(key: &str, raw: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Vec<T>, Error> {
    raw.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(s).ok_or_else(|| invalid(key, s))).collect()
}

fn parse_slot(s: &str) -> Option<ScheduledFailure> {
    let mut it = s.split(':');
    let slot = ScheduledFailure::new(it.next()?.parse().ok()?, it.next()?.parse().ok()?, Action::parse(it.next()?)?);
    it.next().is_none().then_some(slot)
}

pub fn format_schedule(schedule: &[ScheduledFailure]) -> String {
    schedule.iter().map(|f| format!("{}:{}:{}", f.round, f.object_index, f.action)).collect::<Vec<_>>().join(",")
}

/// Fully resolved configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub pipeline: PipelineConfig,
    /// Every key with its value and source (`flag`, `config` or `default`).
    pub values: BTreeMap<String, (String, &'static str)>,
}

impl Resolved {
    pub fn seed(&self) -> u64 {
        self.pipeline.study.seed
    }
}

pub fn defaults() -> Settings {
    let s = StudyConfig::default();
    let f = ForestParams::default();
    let th = LabelerThresholds::default();
    let b = LevelBounds::default();
    Settings {
        n_participants: Some(s.n_participants),
        seed: Some(DEFAULT_SEED),
        noise_sigma: Some(s.noise_sigma),
        strategies: Some(s.strategies.iter().map(|x| x.name()).collect::<Vec<_>>().join(",")),
        failure_schedule: Some(format_schedule(&default_failure_schedule())),
        difficulty_pick: Some(s.difficulty.pick),
        difficulty_carry: Some(s.difficulty.carry),
        difficulty_place: Some(s.difficulty.place),
        adequacy_zero: Some(s.adequacy.zero),
        adequacy_low: Some(s.adequacy.low),
        adequacy_medium: Some(s.adequacy.medium),
        adequacy_high: Some(s.adequacy.high),
        propensity_min: Some(s.propensity.lo),
        propensity_max: Some(s.propensity.hi),
        familiarity_gain_min: Some(s.familiarity_gain.lo),
        familiarity_gain_max: Some(s.familiarity_gain.hi),
        expressiveness_min: Some(s.expressiveness.lo),
        expressiveness_max: Some(s.expressiveness.hi),
        t_high: Some(th.t_high),
        t_change: Some(th.t_change),
        n_trees: Some(f.n_trees),
        max_depth: Some(f.max_depth),
        min_samples_split: Some(f.min_samples_split),
        min_samples_leaf: Some(f.min_samples_leaf),
        features_per_split: None,
        class_weight_confused: None,
        class_weight_not_confused: None,
        bootstrap: Some(f.bootstrap),
        decision_threshold: Some(f.decision_threshold),
        e_min: Some(b.e_min.name().into()),
        e_max: Some(b.e_max.name().into()),
        table_mode: Some(TableMode::VsRest.name().into()),
        yates: Some(false),
    }
}

pub fn read_config_file(path: &Path) -> Result<Settings, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {}", path.display(), e.message())))
}

/// Layers `flags` over `file` over the defaults and validates the result.
pub fn resolve(flags: &Settings, file: Option<&Settings>) -> Result<Resolved, Error> {
    let empty = Settings::default();
    let file = file.unwrap_or(&empty);
    let merged = flags.over(&file.over(&defaults()));

    let flag_keys = flags.present();
    let file_keys = file.present();
    let rendered = toml::Value::try_from(&merged).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut values = BTreeMap::new();
    for key in Settings::keys() {
        let source = if flag_keys.contains(&key) {
            "flag"
        } else if file_keys.contains(&key) {
            "config"
        } else {
            "default"
        };
        let value = match rendered.get(key) {
            Some(toml::Value::String(s)) => s.clone(),
            Some(v) => v.to_string(),
            None => "auto".into(),
        };
        values.insert(key.to_string(), (value, source));
    }

    let m = merged;
    let level = |key: &str, v: &Option<String>| {
        let raw = v.as_deref().unwrap_or_default();
        ExplanationLevel::parse(raw).ok_or_else(|| invalid(key, raw))
    };
    let seed = m.seed.unwrap_or(DEFAULT_SEED);
    let thresholds = LabelerThresholds::new(m.t_high.unwrap_or_default(), m.t_change.unwrap_or_default())?;
    let strategies = parse_list("strategies", m.strategies.as_deref().unwrap_or_default(), StrategyId::parse)?;
    let failure_schedule = parse_list("failure_schedule", m.failure_schedule.as_deref().unwrap_or_default(), parse_slot)?;
    let study = StudyConfig {
        n_participants: m.n_participants.unwrap_or_default(),
        strategies,
        failure_schedule,
        difficulty: confadapt_core::simulate::ActionDifficulty {
            pick: m.difficulty_pick.unwrap_or_default(),
            carry: m.difficulty_carry.unwrap_or_default(),
            place: m.difficulty_place.unwrap_or_default(),
        },
        adequacy: confadapt_core::simulate::LevelAdequacy {
            zero: m.adequacy_zero.unwrap_or_default(),
            low: m.adequacy_low.unwrap_or_default(),
            medium: m.adequacy_medium.unwrap_or_default(),
            high: m.adequacy_high.unwrap_or_default(),
        },
        noise_sigma: m.noise_sigma.unwrap_or_default(),
        propensity: Range::new(m.propensity_min.unwrap_or_default(), m.propensity_max.unwrap_or_default()),
        familiarity_gain: Range::new(m.familiarity_gain_min.unwrap_or_default(), m.familiarity_gain_max.unwrap_or_default()),
        expressiveness: Range::new(m.expressiveness_min.unwrap_or_default(), m.expressiveness_max.unwrap_or_default()),
        thresholds,
        seed,
    };
    study.validate()?;
    let class_weights = match (m.class_weight_confused, m.class_weight_not_confused) {
        (None, None) => None,
        (c, n) => Some(ClassWeights { confused: c.unwrap_or(1.0), not_confused: n.unwrap_or(1.0) }),
    };
    let forest = ForestParams {
        n_trees: m.n_trees.unwrap_or_default(),
        max_depth: m.max_depth.unwrap_or_default(),
        min_samples_split: m.min_samples_split.unwrap_or_default(),
        min_samples_leaf: m.min_samples_leaf.unwrap_or_default(),
        features_per_split: m.features_per_split,
        class_weights,
        bootstrap: m.bootstrap.unwrap_or(true),
        decision_threshold: m.decision_threshold.unwrap_or_default(),
        seed,
    };
    forest.validate()?;
    let bounds = LevelBounds::new(level("e_min", &m.e_min)?, level("e_max", &m.e_max)?)?;
    let raw_mode = m.table_mode.as_deref().unwrap_or_default();
    let table_mode = TableMode::parse(raw_mode).ok_or_else(|| invalid("table_mode", raw_mode))?;
    Ok(Resolved {
        pipeline: PipelineConfig { study, thresholds, forest, bounds, table_mode, yates: m.yates.unwrap_or(false) },
        values,
    })
}
