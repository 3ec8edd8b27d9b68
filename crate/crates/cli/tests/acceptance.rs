//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use confadapt_core::controller::{
    decide, evaluate_hypotheses, CategoryTotals, FnPredictor, Hypothesis, LevelBounds, OutcomeCategory, Suggestion,
    TableMode, Verdict,
};
use confadapt_core::domain::{Action, ConfusionRule, ConfusionState, ExplanationLevel};
use confadapt_core::features::{build_training_set, FeatureBasis, TrainingRow};
use confadapt_core::forest::{lopo_cv, lopo_splits, train_forest, ForestParams, Sample};
use confadapt_core::labeler::{disagreement_rate, label_dataset, label_trajectory, LabelerThresholds};
use confadapt_core::pipeline::{run_pipeline, PipelineConfig};
use confadapt_core::simulate::{simulate_study, SimulatedStudy, StudyConfig};
use confadapt_core::stats::{chi_square_2x2, chi_square_sf_1dof, ContingencyTable2x2};

const SEED: u64 = 7;

/// Id, name, runtime limit in seconds, check.
type Criterion = (u8, &'static str, u64, fn() -> (bool, String));

fn default_study(noise_sigma: f64) -> SimulatedStudy {
    simulate_study(&StudyConfig { seed: SEED, noise_sigma, ..StudyConfig::default() }).expect("default study")
}

fn training_rows(study: &SimulatedStudy) -> Vec<TrainingRow> {
    let labels = label_dataset(&study.dataset, &LabelerThresholds::default());
    build_training_set(&study.dataset, &labels).expect("training rows")
}

fn c1_rule_table() -> (bool, String) {
    use ConfusionRule::*;
    let cases: [([f64; 4], bool, ConfusionRule); 9] = [
        ([0.10, 0.10, 0.20, 0.18], true, PersistentA),
        ([0.10, 0.10, 0.20, 0.10], false, None),
        ([0.10, 0.10, 0.10, 0.16], true, PersistentC),
        ([0.10, 0.20, 0.15, 0.12], false, None),
        ([0.10, 0.10, 0.10, 0.75], true, HighConfusion),
        ([0.10, 0.10, 0.10, 0.10], false, None),
        ([0.10, 0.10, 0.20, 0.75], true, HighConfusion),
        ([0.70, 0.70, 0.70, 0.70], false, None),
        ([0.0, 0.0, 0.0, 0.0], false, None),
    ];
    let th = LabelerThresholds::default();
    let mut wrong = Vec::new();
    for (t, confused, rule) in cases {
        let label = label_trajectory(&t.into(), &th);
        if label.is_confused() != confused || label.rule() != rule {
            wrong.push(format!("{t:?} -> {}/{}", label.state(), label.rule()));
        }
    }
    (wrong.is_empty(), format!("{}/{} trajectories match {}", cases.len() - wrong.len(), cases.len(), wrong.join("; ")))
}

fn agreement(study: &SimulatedStudy) -> f64 {
    let labels = label_dataset(&study.dataset, &LabelerThresholds::default());
    let agree = labels.iter().zip(&study.truth).filter(|(l, t)| l.label.is_confused() == t.confused).count();
    agree as f64 / labels.len() as f64
}

fn c2_agreement() -> (bool, String) {
    let clean = agreement(&default_study(0.0));
    let noisy = agreement(&default_study(0.02));
    (clean == 1.0 && noisy >= 0.95, format!("sigma=0: {:.2}%, sigma=0.02: {:.2}% (need 100%, >=95%)", clean * 100.0, noisy * 100.0))
}

fn c3_threshold_sweep() -> (bool, String) {
    let study = default_study(0.02);
    let base = label_dataset(&study.dataset, &LabelerThresholds::default());
    let mut worst: (f64, f64, f64) = (0.0, 0.0, 0.0);
    for t_high in [0.6, 0.65, 0.7, 0.75, 0.8] {
        for t_change in [0.03, 0.05, 0.08] {
            let th = LabelerThresholds::new(t_high, t_change).expect("valid thresholds");
            let rate = disagreement_rate(&base, &label_dataset(&study.dataset, &th));
            if rate > worst.0 {
                worst = (rate, t_high, t_change);
            }
        }
    }
    (
        worst.0 <= 0.10,
        format!("max label change {:.2}% at t_high={} t_change={} over 15 grid points (limit 10%)", worst.0 * 100.0, worst.1, worst.2),
    )
}

fn c4_structure() -> (bool, String) {
    let rows = training_rows(&default_study(0.02));
    let samples: Vec<Sample> = rows.iter().map(Sample::from).collect();
    let params = ForestParams { seed: SEED, ..ForestParams::default() };
    let model = train_forest(&samples, &params).expect("forest");
    let max_depth = model.trees.iter().map(|t| t.depth()).max().unwrap_or(0);
    let min_leaf = model.trees.iter().flat_map(|t| t.leaves()).map(|c| c.total()).min().unwrap_or(0);
    let ok = model.trees.len() == params.n_trees && max_depth <= params.max_depth && min_leaf >= params.min_samples_leaf as u64;
    (ok, format!("{} trees, deepest {} (<= {}), smallest leaf {} samples (>= {})", model.trees.len(), max_depth, params.max_depth, min_leaf, params.min_samples_leaf))
}

fn c5_lopo_integrity() -> (bool, String) {
    let mut checked = 0;
    for (n, seed, stride) in [(55, SEED, 0), (2, 1, 0), (7, 2, 3), (13, 3, 5), (30, 4, 2)] {
        let study = simulate_study(&StudyConfig { n_participants: n, seed, ..StudyConfig::default() }).expect("study");
        let mut samples: Vec<Sample> = training_rows(&study).iter().map(Sample::from).collect();
        if stride > 0 {
            // uneven participant sizes
            samples = samples.into_iter().enumerate().filter(|(i, _)| i % stride != 0).map(|(_, s)| s).collect();
        }
        let folds = lopo_splits(&samples).expect("splits");
        let mut participants: Vec<&str> = samples.iter().map(|s| s.group.as_str()).collect();
        participants.sort_unstable();
        participants.dedup();
        let held: Vec<&str> = folds.iter().map(|f| f.held_out.as_str()).collect();
        if held != participants {
            return (false, format!("n={n}: held-out list differs from participant list"));
        }
        for f in &folds {
            let leaked = f.train.iter().any(|&i| samples[i].group == f.held_out);
            let test_ok = f.test.iter().all(|&i| samples[i].group == f.held_out);
            if leaked || !test_ok || f.train.len() + f.test.len() != samples.len() {
                return (false, format!("n={n}: fold {} mixes participants", f.held_out));
            }
        }
        checked += folds.len();
    }
    (true, format!("{checked} folds over 5 datasets: each participant held out once, never in its own training set"))
}

fn c6_predictor() -> (bool, String) {
    let rows = training_rows(&default_study(0.02));
    let samples: Vec<Sample> = rows.iter().map(Sample::from).collect();
    let params = ForestParams { seed: SEED, class_weights: None, ..ForestParams::default() };
    let report = lopo_cv(&samples, &params).expect("lopo");
    let a = &report.aggregate;
    (
        a.mean_accuracy >= 0.85 && a.mean_f1 >= 0.60,
        format!("LOPO mean accuracy {:.4} (>= 0.85), mean F1(Confused) {:.4} (>= 0.60), {} folds", a.mean_accuracy, a.mean_f1, a.folds),
    )
}

/// Upper tail of chi-square(1) by Simpson's rule on x = u^2, independent of
/// any closed form: P(X > s) = 1 - (2 / sqrt(2 pi)) * int_0^sqrt(s) exp(-u^2/2) du.
fn simpson_sf(s: f64) -> f64 {
    let b = s.sqrt();
    let n = 20_000;
    let h = b / n as f64;
    let f = |u: f64| (-u * u / 2.0).exp();
    let mut acc = f(0.0) + f(b);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    1.0 - 2.0 / (2.0 * std::f64::consts::PI).sqrt() * acc * h / 3.0
}

fn c7_chi_square() -> (bool, String) {
    let flat = chi_square_2x2(&ContingencyTable2x2::new(10, 10, 10, 10), false).expect("test");
    let flat_ok = flat.statistic == 0.0 && flat.p_value == 1.0;
    let p = chi_square_sf_1dof(3.841);
    let oracle = simpson_sf(3.841);
    let p_ok = (p - 0.05).abs() <= 0.0005 && (oracle - 0.05).abs() <= 0.0005 && (p - oracle).abs() < 1e-9;
    let mut worst = 0.0f64;
    for t in [
        ContingencyTable2x2::new(50, 6, 40, 343),
        ContingencyTable2x2::new(1, 12, 89, 337),
        ContingencyTable2x2::new(39, 331, 51, 18),
        ContingencyTable2x2::new(3, 7, 11, 2),
        ContingencyTable2x2::new(1000, 1, 1, 1000),
    ] {
        let e = t.expected();
        let cells = t.cells();
        let mut sum = 0.0;
        for r in 0..2 {
            for c in 0..2 {
                sum += (cells[r][c] as f64 - e[r][c]).powi(2) / e[r][c];
            }
        }
        worst = worst.max(((t.closed_form_statistic() - sum) / sum).abs());
    }
    (
        flat_ok && p_ok && worst <= 1e-9,
        format!(
            "[[10,10],[10,10]] -> stat {} p {}; p(3.841) = {:.6} vs quadrature {:.6}; closed form max rel diff {:.1e}",
            flat.statistic, flat.p_value, p, oracle, worst
        ),
    )
}

fn c8_paper_counts() -> (bool, String) {
    let mut totals = CategoryTotals::default();
    totals.set(OutcomeCategory::IncreaseNotFollowed, 50, 6);
    totals.set(OutcomeCategory::SameFollowed, 1, 12);
    totals.set(OutcomeCategory::DecreaseFollowed, 2, 47);
    totals.set(OutcomeCategory::DecreaseNotFollowed, 37, 284);
    let r = evaluate_hypotheses(&totals, TableMode::VsRest, false);
    let get = |h: Hypothesis| r.iter().find(|x| x.hypothesis == h).expect("hypothesis");
    let (h1, h2, h3) = (get(Hypothesis::H1), get(Hypothesis::H2), get(Hypothesis::H3));
    let p = |x: &confadapt_core::controller::HypothesisResult| x.test.as_ref().map_or(f64::NAN, |t| t.p_value);
    let ok = h1.verdict == Verdict::Significant
        && p(h1) < 1e-5
        && h3.verdict == Verdict::Significant
        && p(h3) < 0.005
        && h2.verdict == Verdict::NotSignificant
        && p(h2) >= 0.05;
    (ok, format!("H1 p={:.2e} {:?}, H2 p={:.3} {:?}, H3 p={:.2e} {:?}", p(h1), h1.verdict, p(h2), h2.verdict, p(h3), h3.verdict))
}

fn c9_end_to_end() -> (bool, String) {
    let mut sig = 0;
    let mut order_ok = 0;
    let mut parts = Vec::new();
    let seeds = [1u64, 2, 3, 4, 5];
    for seed in seeds {
        let mut cfg = PipelineConfig::default();
        cfg.study.seed = seed;
        cfg.forest.seed = seed;
        let run = run_pipeline(&cfg).expect("pipeline");
        let s = &run.summary;
        let both = [Hypothesis::H1, Hypothesis::H3]
            .iter()
            .all(|h| s.hypothesis(&h.to_string()).is_some_and(|x| x.verdict == Verdict::Significant));
        let dec = s.categories.confused_rate(OutcomeCategory::DecreaseFollowed);
        let inc = s.categories.confused_rate(OutcomeCategory::IncreaseNotFollowed);
        let ordered = matches!((dec, inc), (Some(d), Some(i)) if d < i);
        sig += usize::from(both);
        order_ok += usize::from(ordered);
        parts.push(format!(
            "seed {seed}: H1&H3 {} DF {:.3} < INF {:.3}",
            if both { "sig" } else { "not sig" },
            dec.unwrap_or(f64::NAN),
            inc.unwrap_or(f64::NAN)
        ));
    }
    (
        sig >= 4 && order_ok == seeds.len(),
        format!("{sig}/5 seeds with H1 and H3 significant, rate order held in {order_ok}/5 [{}]", parts.join("; ")),
    )
}

fn cli(dir: &Path, args: &[&str]) -> i32 {
    std::env::set_current_dir(dir).expect("chdir");
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = confadapt_cli::run_with(std::iter::once("confadapt").chain(args.iter().copied()), &mut out, &mut err);
    if code != 0 {
        eprintln!("{}", String::from_utf8_lossy(&err));
    }
    code
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("read dir") {
            let p = entry.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).expect("prefix").display().to_string();
                files.push((rel, std::fs::read(&p).expect("read")));
            }
        }
    }
    files.sort();
    files
}

fn c10_determinism() -> (bool, String) {
    let stages: [&[&str]; 8] = [
        &["simulate", "--out", "d.jsonl", "--truth", "truth.csv"],
        &["label", "--input", "d.jsonl", "--out", "labels.csv"],
        &["featurize", "--input", "d.jsonl", "--labels", "labels.csv", "--out", "features.csv"],
        &["train", "--features", "features.csv", "--out", "forest.model", "--cv-report", "cv.csv"],
        &["evaluate", "--features", "features.csv", "--model", "forest.model", "--out", "eval.csv"],
        &["replay", "--input", "d.jsonl", "--labels", "labels.csv", "--model", "forest.model", "--out", "replay.csv", "--hypotheses", "hyp.csv"],
        &["report", "--input", "d.jsonl", "--labels", "labels.csv", "--replay", "replay.csv", "--out-dir", "report"],
        &["report", "--end-to-end", "--out-dir", "e2e", "--manifest", "e2e.manifest.json"],
    ];
    let cwd = std::env::current_dir().expect("cwd");
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().expect("tempdir");
            for s in stages {
                if cli(dir.path(), s) != 0 {
                    return Err(format!("stage {} failed", s[0]));
                }
            }
            Ok((snapshot(dir.path()), dir))
        })
        .collect();
    std::env::set_current_dir(cwd).expect("chdir back");
    let mut snaps = Vec::new();
    for r in runs {
        match r {
            Ok((s, _dir)) => snaps.push(s),
            Err(e) => return (false, e),
        }
    }
    let differing: Vec<&str> =
        snaps[0].iter().zip(&snaps[1]).filter(|(a, b)| a != b).map(|(a, _)| a.0.as_str()).collect();
    let same_set = snaps[0].len() == snaps[1].len();
    (
        same_set && differing.is_empty(),
        format!("{} files over {} stages byte-identical across two runs{}", snaps[0].len(), stages.len(), if differing.is_empty() { String::new() } else { format!("; differ: {differing:?}") }),
    )
}

/// Direct transcription of the decision rule on integer ranks.
fn brute_force(d1: ConfusionState, d0: ConfusionState, cur: i32, lo: i32, hi: i32) -> (Suggestion, i32, usize) {
    if d1 == ConfusionState::NotConfused {
        return (Suggestion::Decrease, (cur - 1).max(lo), 1);
    }
    if d0 == ConfusionState::Confused {
        (Suggestion::Increase, (cur + 1).min(hi), 2)
    } else {
        (Suggestion::Same, cur, 2)
    }
}

fn c11_decision_rule() -> (bool, String) {
    let study = simulate_study(&StudyConfig { n_participants: 1, ..StudyConfig::default() }).expect("study");
    let eps = &study.dataset.episodes;
    let last = eps.iter().find(|e| e.action == Action::Pick).expect("pick");
    let cur = eps.iter().rev().find(|e| e.action == Action::Pick).expect("pick");
    let basis = FeatureBasis::from_history(cur, last).expect("basis");
    let states = [ConfusionState::Confused, ConfusionState::NotConfused];
    let (mut checked, mut mismatches, mut rejected) = (0, 0, 0);
    for d1 in states {
        for d0 in states {
            let predictor = FnPredictor(move |x: &confadapt_core::features::FeatureVector| if x.decrease_flag() { d1 } else { d0 });
            for bounds in LevelBounds::all() {
                for e in ExplanationLevel::ALL {
                    let got = decide(&predictor, &basis, e, &bounds);
                    if !bounds.contains(e) {
                        rejected += usize::from(got.is_err());
                        mismatches += usize::from(got.is_ok());
                        continue;
                    }
                    checked += 1;
                    let got = got.expect("decision");
                    let (s, rank, calls) = brute_force(d1, d0, e.rank(), bounds.e_min.rank(), bounds.e_max.rank());
                    let mut expected_calls = vec![(true, d1)];
                    if calls == 2 {
                        expected_calls.push((false, d0));
                    }
                    if got.suggested != s || got.new_level.rank() != rank || got.predictor_calls != expected_calls {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    (
        mismatches == 0 && checked == 4 * 20,
        format!("{checked} in-bounds combinations match the transcription, {rejected} out-of-bounds inputs rejected, {mismatches} mismatches"),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "labeler rule table", 1, c1_rule_table),
        (2, "labeler-generator agreement", 10, c2_agreement),
        (3, "threshold insensitivity", 60, c3_threshold_sweep),
        (4, "forest structural audit", 60, c4_structure),
        (5, "LOPO integrity", 10, c5_lopo_integrity),
        (6, "LOPO predictor performance", 300, c6_predictor),
        (7, "chi-square correctness", 1, c7_chi_square),
        (8, "paper-count hypothesis verdicts", 1, c8_paper_counts),
        (9, "end-to-end mechanism direction", 600, c9_end_to_end),
        (10, "determinism", 300, c10_determinism),
        (11, "decision rule exhaustive check", 1, c11_decision_rule),
    ];
    let mut failed = 0;
    for (id, name, limit, f) in criteria {
        let start = Instant::now();
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(r) => r,
            Err(e) => {
                let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                (false, format!("panicked: {}", msg.unwrap_or_default()))
            }
        };
        let elapsed = start.elapsed();
        let in_time = elapsed < Duration::from_secs(limit);
        let pass = ok && in_time;
        failed += usize::from(!pass);
        println!(
            "criterion {id:>2} {} {name}: {detail} ({:.2}s, limit {limit}s{})",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            if in_time { "" } else { ", exceeded" }
        );
    }
    println!("{} of 11 criteria passed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
