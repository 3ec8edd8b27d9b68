//! `confadapt` command-line pipelines.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or
//! validation error, 3 internal or environment error.

pub mod config;
pub mod manifest;
pub mod tables;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use confadapt_core::controller::{evaluate_hypotheses, replay};
use confadapt_core::domain::Dataset;
use confadapt_core::features::build_training_set;
use confadapt_core::forest::{
    grid_search, lopo_cv, train_forest, CvAggregate, FoldReport, ParamGrid, Sample,
};
use confadapt_core::io::{self, ReadMode, Table};
use confadapt_core::labeler::label_dataset;
use confadapt_core::pipeline::run_pipeline;
use confadapt_core::simulate::simulate_study;
use confadapt_core::stats::{confusion_breakdown, GroupBy};
use confadapt_core::Error;

use config::{read_config_file, resolve, Resolved, Settings};
use manifest::RunManifest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

/// Violations listed before the rest are summarized.
const MAX_LISTED_VIOLATIONS: usize = 10;

#[derive(Parser, Debug)]
#[command(name = "confadapt", version, about = "Confusion labeling, prediction and explanation-level control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Flat TOML file with settings; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Where to write the run manifest (default: next to the first output)
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Strict,
    Lenient,
}

impl From<Mode> for ReadMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Strict => ReadMode::Strict,
            Mode::Lenient => ReadMode::Lenient,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic study dataset with ground-truth labels
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth label file
        #[arg(long)]
        truth: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Label every episode as Confused or NotConfused
    Label {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Ground-truth file to report agreement against
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "strict")]
        mode: Mode,
        #[command(flatten)]
        common: Common,
    },
    /// Build the feature matrix from a dataset and its labels
    Featurize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "strict")]
        mode: Mode,
        #[command(flatten)]
        common: Common,
    },
    /// Train a forest, optionally selecting hyperparameters by LOPO grid search
    Train {
        #[arg(long)]
        features: PathBuf,
        /// Model file
        #[arg(long)]
        out: PathBuf,
        /// Leave-one-participant-out fold report
        #[arg(long)]
        cv_report: Option<PathBuf>,
        /// One row per grid point
        #[arg(long)]
        grid_report: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        grid_n_trees: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        grid_max_depth: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        grid_min_samples_split: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        grid_min_samples_leaf: Vec<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Per-participant scores of a model, or LOPO scores when no model is given
    Evaluate {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Replay the level controller over a dataset and test the outcome hypotheses
    Replay {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Per-episode category file
        #[arg(long)]
        out: Option<PathBuf>,
        /// Hypothesis report
        #[arg(long)]
        hypotheses: Option<PathBuf>,
        /// Category totals
        #[arg(long)]
        categories: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "strict")]
        mode: Mode,
        #[command(flatten)]
        common: Common,
    },
    /// Breakdown and hypothesis tables, or the full synthetic pipeline
    Report {
        #[arg(long, required_unless_present = "end_to_end")]
        input: Option<PathBuf>,
        #[arg(long, required_unless_present = "end_to_end")]
        labels: Option<PathBuf>,
        /// Per-episode category file from `replay`
        #[arg(long)]
        replay: Option<PathBuf>,
        /// Run simulate, label, featurize, LOPO training, replay and tests
        #[arg(long, conflicts_with_all = ["input", "labels", "replay"])]
        end_to_end: bool,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "strict")]
        mode: Mode,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Label { .. } => "label",
            Command::Featurize { .. } => "featurize",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Replay { .. } => "replay",
            Command::Report { .. } => "report",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Simulate { common, .. }
            | Command::Label { common, .. }
            | Command::Featurize { common, .. }
            | Command::Train { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Replay { common, .. }
            | Command::Report { common, .. } => common,
        }
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    /// Problem with an input file or its content.
    Data(Error),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn data<T>(r: confadapt_core::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Data)
}

/// Run context: manifest bookkeeping and the output stream.
struct Ctx<'a> {
    manifest: RunManifest,
    first_output: Option<PathBuf>,
    stdout: &'a mut dyn Write,
    stdout_bytes: Vec<u8>,
}

impl Ctx<'_> {
    fn input(&mut self, path: &Path) -> Result<(), Failure> {
        data(self.manifest.input(path))
    }

    fn wrote(&mut self, path: &Path) -> Result<(), Failure> {
        if self.first_output.is_none() {
            self.first_output = Some(path.to_path_buf());
        }
        Ok(self.manifest.output(path)?)
    }

    fn table(&mut self, table: &Table, out: Option<&Path>) -> Result<(), Failure> {
        match out {
            Some(p) => {
                table.write(p)?;
                self.wrote(p)
            }
            None => {
                let text = table.to_csv();
                self.stdout_bytes.extend_from_slice(text.as_bytes());
                self.stdout
                    .write_all(text.as_bytes())
                    .map_err(|e| Failure::Core(Error::Io { path: "<stdout>".into(), source: e }))
            }
        }
    }

    fn read_dataset(&mut self, path: &Path, mode: Mode) -> Result<Dataset, Failure> {
        self.input(path)?;
        let report = data(io::read_dataset_report(path, mode.into()))?;
        if !report.dropped.is_empty() {
            log::warn!("{}: {} invalid record(s) dropped", path.display(), report.dropped.len());
        }
        Ok(report.dataset)
    }
}

fn samples_from(path: &Path, ctx: &mut Ctx) -> Result<Vec<Sample>, Failure> {
    ctx.input(path)?;
    let rows = data(io::read_features(path))?;
    Ok(rows.iter().map(Sample::from).collect())
}

fn execute(cmd: &Command, cfg: &Resolved, ctx: &mut Ctx) -> Result<(), Failure> {
    let p = &cfg.pipeline;
    match cmd {
        Command::Simulate { out, truth, .. } => {
            let study = simulate_study(&p.study)?;
            io::write_dataset(&study.dataset, out)?;
            ctx.wrote(out)?;
            if let Some(t) = truth {
                io::truth_table(&study.truth).write(t)?;
                ctx.wrote(t)?;
            }
            log::info!("simulated {} episodes from {} participants", study.dataset.len(), p.study.n_participants);
        }
        Command::Label { input, out, truth, mode, .. } => {
            let dataset = ctx.read_dataset(input, *mode)?;
            let labels = label_dataset(&dataset, &p.thresholds);
            if let Some(t) = truth {
                ctx.input(t)?;
                let truth = data(io::read_truth(t))?;
                let by_key: std::collections::HashMap<_, _> = truth.into_iter().collect();
                let matched: Vec<bool> = labels
                    .iter()
                    .filter_map(|l| by_key.get(&l.key).map(|&c| c == l.label.is_confused()))
                    .collect();
                let agree = matched.iter().filter(|m| **m).count();
                log::info!("agreement with ground truth: {agree}/{} episodes", matched.len());
            }
            let confused = labels.iter().filter(|l| l.label.is_confused()).count();
            log::info!("{confused} of {} episodes labeled Confused", labels.len());
            ctx.table(&io::labels_table(&labels), out.as_deref())?;
        }
        Command::Featurize { input, labels, out, mode, .. } => {
            let dataset = ctx.read_dataset(input, *mode)?;
            ctx.input(labels)?;
            let labels = data(io::read_labels(labels))?;
            let rows = data(build_training_set(&dataset, &labels))?;
            log::info!("{} training rows", rows.len());
            ctx.table(&io::features_table(&rows), out.as_deref())?;
        }
        Command::Train {
            features,
            out,
            cv_report,
            grid_report,
            grid_n_trees,
            grid_max_depth,
            grid_min_samples_split,
            grid_min_samples_leaf,
            ..
        } => {
            let samples = samples_from(features, ctx)?;
            let mut params = p.forest.clone();
            let grid_given = !(grid_n_trees.is_empty()
                && grid_max_depth.is_empty()
                && grid_min_samples_split.is_empty()
                && grid_min_samples_leaf.is_empty());
            if grid_given {
                let single = ParamGrid::single(&params);
                let pick = |v: &Vec<usize>, d: Vec<usize>| if v.is_empty() { d } else { v.clone() };
                let grid = ParamGrid {
                    n_trees: pick(grid_n_trees, single.n_trees),
                    max_depth: pick(grid_max_depth, single.max_depth),
                    min_samples_split: pick(grid_min_samples_split, single.min_samples_split),
                    min_samples_leaf: pick(grid_min_samples_leaf, single.min_samples_leaf),
                };
                let result = data(grid_search(&samples, &grid, &params))?;
                log::info!(
                    "grid best: n_trees={} max_depth={} min_samples_split={} min_samples_leaf={}",
                    result.best.n_trees,
                    result.best.max_depth,
                    result.best.min_samples_split,
                    result.best.min_samples_leaf
                );
                if let Some(g) = grid_report {
                    ctx.table(&tables::grid_table(&result.table), Some(g))?;
                }
                if let Some(c) = cv_report {
                    ctx.table(&tables::cv_table(&result.best_report), Some(c))?;
                }
                params = result.best;
            } else if let Some(c) = cv_report {
                let report = data(lopo_cv(&samples, &params))?;
                log::info!("LOPO mean accuracy {:.4}, mean F1 {:.4}", report.aggregate.mean_accuracy, report.aggregate.mean_f1);
                ctx.table(&tables::cv_table(&report), Some(c))?;
            }
            let model = data(train_forest(&samples, &params))?;
            io::save_model(&model, out)?;
            ctx.wrote(out)?;
        }
        Command::Evaluate { features, model, out, .. } => {
            let samples = samples_from(features, ctx)?;
            let table = match model {
                Some(m) => {
                    ctx.input(m)?;
                    let model = data(io::load_model(m))?;
                    let mut groups: std::collections::BTreeMap<&str, Vec<_>> = Default::default();
                    for s in &samples {
                        let predicted = data(model.predict(&s.features))?.class;
                        groups.entry(s.group.as_str()).or_default().push((s.class, predicted));
                    }
                    let folds = groups
                        .into_iter()
                        .map(|(g, pairs)| FoldReport::from_predictions(g, pairs))
                        .collect::<confadapt_core::Result<Vec<_>>>();
                    let folds = data(folds)?;
                    let aggregate = data(CvAggregate::from_folds(&folds))?;
                    tables::fold_table(&folds, &aggregate)
                }
                None => tables::cv_table(&data(lopo_cv(&samples, &p.forest))?),
            };
            ctx.table(&table, out.as_deref())?;
        }
        Command::Replay { input, labels, model, out, hypotheses, categories, mode, .. } => {
            let dataset = ctx.read_dataset(input, *mode)?;
            ctx.input(labels)?;
            let labels = data(io::read_labels(labels))?;
            ctx.input(model)?;
            let model = data(io::load_model(model))?;
            let result = data(replay(&dataset, &labels, &model, &p.bounds))?;
            let tests = evaluate_hypotheses(&result.totals, p.table_mode, p.yates);
            ctx.table(&tables::replay_table(&result), out.as_deref())?;
            if let Some(h) = hypotheses {
                ctx.table(&tables::hypotheses_table(&tests), Some(h))?;
            }
            if let Some(c) = categories {
                ctx.table(&tables::categories_table(&result.totals), Some(c))?;
            }
        }
        Command::Report { input, labels, replay: replay_file, end_to_end, out_dir, mode, .. } => {
            std::fs::create_dir_all(out_dir).map_err(|e| Error::Io { path: out_dir.clone(), source: e })?;
            if *end_to_end {
                let run = run_pipeline(p)?;
                ctx.table(&run.summary.to_table(), Some(&out_dir.join("summary.csv")))?;
                ctx.table(&tables::cv_table(&run.cv), Some(&out_dir.join("folds.csv")))?;
                ctx.table(&tables::replay_table(&run.replay), Some(&out_dir.join("replay.csv")))?;
                ctx.table(&tables::categories_table(&run.replay.totals), Some(&out_dir.join("categories.csv")))?;
                ctx.table(&tables::hypotheses_table(&run.hypotheses), Some(&out_dir.join("hypotheses.csv")))?;
                let s = &run.summary;
                log::info!(
                    "labeler agreement {:.4}; LOPO accuracy {:.4}, F1 {:.4}",
                    s.labeler_agreement,
                    s.cv_mean_accuracy,
                    s.cv_mean_f1
                );
                for h in &s.hypotheses {
                    log::info!("{}: {:?} (p = {})", h.hypothesis, h.verdict, h.p_value.map_or("NA".into(), |v| format!("{v:.3e}")));
                }
                return Ok(());
            }
            let (Some(input), Some(labels_path)) = (input, labels) else {
                return Err(Failure::Usage("report needs --input and --labels, or --end-to-end".into()));
            };
            let dataset = ctx.read_dataset(input, *mode)?;
            ctx.input(labels_path)?;
            let labels = data(io::read_labels(labels_path))?;
            for (group, round, file) in [
                (GroupBy::Action, None, "breakdown_action.csv"),
                (GroupBy::Strategy, None, "breakdown_strategy.csv"),
                (GroupBy::Strategy, Some(2), "breakdown_strategy_round2.csv"),
                (GroupBy::Participant, None, "breakdown_participant.csv"),
                (GroupBy::Round, None, "breakdown_round.csv"),
            ] {
                let rows = data(confusion_breakdown(&dataset.episodes, &labels, group, round))?;
                ctx.table(&tables::breakdown_table(&rows), Some(&out_dir.join(file)))?;
            }
            if let Some(r) = replay_file {
                ctx.input(r)?;
                let totals = data(tables::read_replay_totals(r))?;
                let tests = evaluate_hypotheses(&totals, p.table_mode, p.yates);
                ctx.table(&tables::categories_table(&totals), Some(&out_dir.join("categories.csv")))?;
                ctx.table(&tables::hypotheses_table(&tests), Some(&out_dir.join("hypotheses.csv")))?;
            }
        }
    }
    Ok(())
}

fn report_failure(f: &Failure, stderr: &mut dyn Write) -> i32 {
    let (code, err) = match f {
        Failure::Usage(msg) => {
            let _ = writeln!(stderr, "error: {msg}");
            return EXIT_USAGE;
        }
        Failure::Data(e) | Failure::Core(e) => {
            let code = match e {
                Error::InvalidConfig(_) | Error::InvalidParams(_) => EXIT_USAGE,
                Error::Io { .. } if matches!(f, Failure::Core(_)) => EXIT_INTERNAL,
                _ => EXIT_DATA,
            };
            (code, e)
        }
    };
    let _ = writeln!(stderr, "error: {err}");
    if let Error::Validation(violations) = err {
        for v in violations.iter().take(MAX_LISTED_VIOLATIONS) {
            let _ = writeln!(stderr, "  {v}");
        }
        if violations.len() > MAX_LISTED_VIOLATIONS {
            let _ = writeln!(stderr, "  ... and {} more", violations.len() - MAX_LISTED_VIOLATIONS);
        }
    }
    code
}

/// Runs one command line with explicit output and error streams.
pub fn run_with<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    let cmd = &cli.command;
    let common = cmd.common();
    let file = match common.config.as_deref().map(read_config_file).transpose() {
        Ok(f) => f,
        Err(e) => return report_failure(&Failure::Data(e), stderr),
    };
    let resolved = match resolve(&common.settings, file.as_ref()) {
        Ok(r) => r,
        Err(e) => return report_failure(&Failure::Core(e), stderr),
    };
    for (k, (v, src)) in &resolved.values {
        log::debug!("{k} = {v} ({src})");
    }
    let mut ctx = Ctx {
        manifest: RunManifest::new(cmd.name(), &resolved),
        first_output: None,
        stdout,
        stdout_bytes: Vec::new(),
    };
    if let Some(c) = &common.config {
        if let Err(f) = ctx.input(c) {
            return report_failure(&f, stderr);
        }
    }
    if let Err(f) = execute(cmd, &resolved, &mut ctx) {
        return report_failure(&f, stderr);
    }
    if !ctx.stdout_bytes.is_empty() {
        let bytes = std::mem::take(&mut ctx.stdout_bytes);
        ctx.manifest.stdout(&bytes);
    }
    let path = common.manifest.clone().unwrap_or_else(|| manifest::default_path(cmd.name(), ctx.first_output.as_deref()));
    match ctx.manifest.write(&path) {
        Ok(()) => EXIT_OK,
        Err(e) => report_failure(&Failure::Core(e), stderr),
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}
