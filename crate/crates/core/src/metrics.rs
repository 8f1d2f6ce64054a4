//! Evaluation: set F1, clarification utility, smoothing diagnostics, paired
//! ask-impact gains and CSV report emission.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{HistoryRecord, Label};
use crate::memory::{cosine, embed};
use crate::rollout::RolloutTrace;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("utility needs at least one step")]
    NoSteps,
    #[error("scores ({scores}) and asks ({asks}) differ in length")]
    LengthMismatch { scores: usize, asks: usize },
    #[error("moving-average window must be >= 1")]
    ZeroWindow,
    #[error("paired traces differ: {0}")]
    Unpaired(String),
    #[error("nothing to report")]
    Empty,
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// `(precision, recall, f1)`; two empty sets score a perfect match.
pub fn set_f1(predicted: &BTreeSet<Label>, truth: &BTreeSet<Label>) -> (f64, f64, f64) {
    if predicted.is_empty() && truth.is_empty() {
        return (1.0, 1.0, 1.0);
    }
    let tp = predicted.intersection(truth).count() as f64;
    let precision = if predicted.is_empty() { 0.0 } else { tp / predicted.len() as f64 };
    let recall = if truth.is_empty() { 0.0 } else { tp / truth.len() as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub t: usize,
    pub k: u64,
    pub acc: f64,
    pub ask_rate: f64,
    pub utility: f64,
}

pub fn clarification_utility(scores: &[f64], asks: &[u32]) -> Result<UtilityReport, MetricsError> {
    if scores.len() != asks.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            asks: asks.len(),
        });
    }
    if scores.is_empty() {
        return Err(MetricsError::NoSteps);
    }
    let t = scores.len();
    let k: u64 = asks.iter().map(|&q| u64::from(q)).sum();
    let total: f64 = scores.iter().sum();
    let utility = total / (t as f64 + k as f64);
    let acc = total / t as f64;
    let ask_rate = k as f64 / t as f64;
    debug_assert!((utility * (1.0 + ask_rate) - acc).abs() <= 1e-12 * acc.abs().max(1.0));
    Ok(UtilityReport {
        t,
        k,
        acc,
        ask_rate,
        utility,
    })
}

/// Trailing-window mean; the first `window - 1` points average what exists.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>, MetricsError> {
    if window == 0 {
        return Err(MetricsError::ZeroWindow);
    }
    let out = (0..series.len())
        .map(|i| {
            let w = &series[(i + 1).saturating_sub(window)..=i];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect();
    Ok(out)
}

pub fn cumulative_ask_rate(flags: &[bool]) -> Vec<f64> {
    let mut n = 0u32;
    flags
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            n += u32::from(f);
            f64::from(n) / (i + 1) as f64
        })
        .collect()
}

/// Ground truth a step is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepTruth {
    pub true_intent: Label,
    pub required_task: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredStep {
    pub record: HistoryRecord,
    pub truth: StepTruth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDay {
    pub day_index: u32,
    pub steps: Vec<ScoredStep>,
}

pub fn scored_days(trace: &RolloutTrace) -> Vec<ScoredDay> {
    trace
        .days
        .iter()
        .map(|d| ScoredDay {
            day_index: d.day_index,
            steps: d
                .steps
                .iter()
                .map(|s| ScoredStep {
                    record: s.record.clone(),
                    truth: StepTruth {
                        true_intent: s.latent.true_intent,
                        required_task: s.latent.required_task(),
                    },
                })
                .collect(),
        })
        .collect()
}

fn predicted(label: Label) -> BTreeSet<Label> {
    if label.is_abstain() {
        BTreeSet::new()
    } else {
        BTreeSet::from([label])
    }
}

fn semantic_similarity(step: &ScoredStep) -> f64 {
    let a = &step.record.action;
    let said = format!("intent:{} task:{}", a.intent_label, a.task_need_label);
    let meant = format!("intent:{} task:{}", step.truth.true_intent, step.truth.required_task);
    cosine(&embed(&said), &embed(&meant))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayMetrics {
    pub day: u32,
    pub intent_f1: f64,
    pub task_f1: f64,
    pub intent_acc: f64,
    pub task_acc: f64,
    pub ask_rate_intent: f64,
    pub ask_rate_task: f64,
    pub utility: f64,
    pub semantic_similarity: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Per-day metrics; F1 is macro-averaged over the day's steps.
pub fn day_metrics(day: &ScoredDay) -> Result<DayMetrics, MetricsError> {
    let s = &day.steps;
    let scores: Vec<f64> = s.iter().map(|x| x.record.outcome.assistance_score).collect();
    let asks: Vec<u32> = s.iter().map(|x| x.record.asks()).collect();
    let u = clarification_utility(&scores, &asks)?;
    let f1 = |pick: fn(&ScoredStep) -> (Label, Label)| {
        mean(s.iter().map(|x| {
            let (p, t) = pick(x);
            set_f1(&predicted(p), &BTreeSet::from([t])).2
        }))
    };
    Ok(DayMetrics {
        day: day.day_index,
        intent_f1: f1(|x| (x.record.action.intent_label, x.truth.true_intent)),
        task_f1: f1(|x| (x.record.action.task_need_label, x.truth.required_task)),
        intent_acc: mean(s.iter().map(|x| f64::from(u8::from(x.record.outcome.intent_correct)))),
        task_acc: mean(s.iter().map(|x| f64::from(u8::from(x.record.outcome.task_correct)))),
        ask_rate_intent: mean(s.iter().map(|x| f64::from(u8::from(x.record.ask_intent.ask)))),
        ask_rate_task: mean(s.iter().map(|x| f64::from(u8::from(x.record.ask_task.ask)))),
        utility: u.utility,
        semantic_similarity: mean(s.iter().map(semantic_similarity)),
    })
}

/// Whole-rollout utility over every step.
pub fn rollout_utility(days: &[ScoredDay]) -> Result<UtilityReport, MetricsError> {
    let steps = days.iter().flat_map(|d| &d.steps);
    let scores: Vec<f64> = steps.clone().map(|x| x.record.outcome.assistance_score).collect();
    let asks: Vec<u32> = steps.map(|x| x.record.asks()).collect();
    clarification_utility(&scores, &asks)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactGain {
    pub day: u32,
    pub semantic_similarity_gain: f64,
    pub intent_f1_gain: f64,
    pub task_f1_gain: f64,
    pub utility_gain: f64,
}

/// Per-day metric differences between a run and its no-ask twin. The two
/// must cover the same days and face the same ground truth.
pub fn ask_impact(with: &[ScoredDay], without: &[ScoredDay]) -> Result<Vec<ImpactGain>, MetricsError> {
    if with.len() != without.len() {
        return Err(MetricsError::Unpaired(format!(
            "{} days vs {} days",
            with.len(),
            without.len()
        )));
    }
    with.iter()
        .zip(without)
        .map(|(a, b)| {
            let truths = |d: &ScoredDay| d.steps.iter().map(|s| s.truth).collect::<Vec<_>>();
            if a.day_index != b.day_index || truths(a) != truths(b) {
                return Err(MetricsError::Unpaired(format!("day {} ground truth differs", a.day_index)));
            }
            let (ma, mb) = (day_metrics(a)?, day_metrics(b)?);
            Ok(ImpactGain {
                day: a.day_index,
                semantic_similarity_gain: ma.semantic_similarity - mb.semantic_similarity,
                intent_f1_gain: ma.intent_f1 - mb.intent_f1,
                task_f1_gain: ma.task_f1 - mb.task_f1,
                utility_gain: ma.utility - mb.utility,
            })
        })
        .collect()
}

/// One rollout's scored days with its identifying labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportInput {
    pub policy: String,
    pub setting: String,
    pub seed: u64,
    pub days: Vec<ScoredDay>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub per_day: PathBuf,
    pub summary: PathBuf,
    pub diagnostics: PathBuf,
}

pub const MOVING_AVERAGE_WINDOW: usize = 13;

fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>, MetricsError> {
    let file = fs::File::create(path).map_err(|source| MetricsError::Io {
        path: path.to_owned(),
        source,
    })?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

/// Writes `per_day.csv`, `summary.csv` (mean and sample sd over seeds per
/// policy and setting) and `diagnostics.csv` (long format) into `out_dir`.
pub fn emit_report(inputs: &[ReportInput], out_dir: &Path) -> Result<ReportFiles, MetricsError> {
    if inputs.is_empty() {
        return Err(MetricsError::Empty);
    }
    fs::create_dir_all(out_dir).map_err(|source| MetricsError::Io {
        path: out_dir.to_owned(),
        source,
    })?;
    let mut sorted: Vec<&ReportInput> = inputs.iter().collect();
    sorted.sort_by(|a, b| (&a.policy, &a.setting, a.seed).cmp(&(&b.policy, &b.setting, b.seed)));

    let files = ReportFiles {
        per_day: out_dir.join("per_day.csv"),
        summary: out_dir.join("summary.csv"),
        diagnostics: out_dir.join("diagnostics.csv"),
    };

    let mut w = writer(&files.per_day)?;
    w.write_record([
        "policy", "setting", "seed", "day", "intent_f1", "task_f1", "intent_acc", "task_acc",
        "ask_rate_intent", "ask_rate_task", "utility",
    ])?;
    // (policy, setting) -> per-seed [intent_f1, task_f1, intent_acc, task_acc, ask_rate, utility]
    let mut groups: BTreeMap<(String, String), Vec<[f64; 6]>> = BTreeMap::new();
    for input in &sorted {
        let mut metrics = Vec::new();
        for day in &input.days {
            let m = day_metrics(day)?;
            w.write_record([
                input.policy.clone(),
                input.setting.clone(),
                input.seed.to_string(),
                m.day.to_string(),
                m.intent_f1.to_string(),
                m.task_f1.to_string(),
                m.intent_acc.to_string(),
                m.task_acc.to_string(),
                m.ask_rate_intent.to_string(),
                m.ask_rate_task.to_string(),
                m.utility.to_string(),
            ])?;
            metrics.push(m);
        }
        let u = rollout_utility(&input.days)?;
        let avg = |f: fn(&DayMetrics) -> f64| mean(metrics.iter().map(f));
        groups
            .entry((input.policy.clone(), input.setting.clone()))
            .or_default()
            .push([
                avg(|m| m.intent_f1),
                avg(|m| m.task_f1),
                avg(|m| m.intent_acc),
                avg(|m| m.task_acc),
                u.ask_rate,
                u.utility,
            ]);
    }
    w.flush().map_err(|source| MetricsError::Io {
        path: files.per_day.clone(),
        source,
    })?;

    let names = ["intent_f1", "task_f1", "intent_acc", "task_acc", "ask_rate", "utility"];
    let mut w = writer(&files.summary)?;
    let mut header = vec!["policy".to_owned(), "setting".to_owned(), "n_seeds".to_owned()];
    for n in names {
        header.push(format!("{n}_mean"));
        header.push(format!("{n}_sd"));
    }
    w.write_record(&header)?;
    for ((policy, setting), rows) in &groups {
        let mut rec = vec![policy.clone(), setting.clone(), rows.len().to_string()];
        for i in 0..names.len() {
            let xs: Vec<f64> = rows.iter().map(|r| r[i]).collect();
            rec.push((xs.iter().sum::<f64>() / xs.len() as f64).to_string());
            rec.push(sample_sd(&xs).to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| MetricsError::Io {
        path: files.summary.clone(),
        source,
    })?;

    let mut w = writer(&files.diagnostics)?;
    w.write_record(["policy", "setting", "seed", "step", "series", "value"])?;
    for input in &sorted {
        let steps: Vec<&ScoredStep> = input.days.iter().flat_map(|d| &d.steps).collect();
        let scores: Vec<f64> = steps.iter().map(|s| s.record.outcome.assistance_score).collect();
        let ma = moving_average(&scores, MOVING_AVERAGE_WINDOW)?;
        let ci = cumulative_ask_rate(&steps.iter().map(|s| s.record.ask_intent.ask).collect::<Vec<_>>());
        let ct = cumulative_ask_rate(&steps.iter().map(|s| s.record.ask_task.ask).collect::<Vec<_>>());
        for (series, values) in [
            ("assistance_ma13", &ma),
            ("cum_ask_rate_intent", &ci),
            ("cum_ask_rate_task", &ct),
        ] {
            for (i, v) in values.iter().enumerate() {
                w.write_record([
                    input.policy.as_str(),
                    input.setting.as_str(),
                    &input.seed.to_string(),
                    &i.to_string(),
                    series,
                    &v.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|source| MetricsError::Io {
        path: files.diagnostics.clone(),
        source,
    })?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::fixtures::record;
    use proptest::prelude::*;

    fn set(xs: &[u32]) -> BTreeSet<Label> {
        xs.iter().map(|&x| Label(x)).collect()
    }

    #[test]
    fn f1_cases() {
        assert_eq!(set_f1(&set(&[7]), &set(&[7])), (1.0, 1.0, 1.0));
        let (p, r, f) = set_f1(&set(&[7, 3]), &set(&[7]));
        assert_eq!((p, r), (0.5, 1.0));
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(set_f1(&set(&[]), &set(&[])), (1.0, 1.0, 1.0));
        assert_eq!(set_f1(&set(&[]), &set(&[4])), (0.0, 0.0, 0.0));
    }

    #[test]
    fn utility_cases() {
        let u = clarification_utility(&[1.0; 12], &[0; 12]).unwrap();
        assert_eq!((u.utility, u.acc), (1.0, 1.0));
        let scores: Vec<f64> = (0..12).map(|i| if i < 6 { 1.0 } else { 0.0 }).collect();
        let asks = [1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0];
        let u = clarification_utility(&scores, &asks).unwrap();
        assert_eq!(u.utility, 0.375);
        assert!((u.acc / (1.0 + u.ask_rate) - 0.375).abs() < 1e-15);
        assert_eq!(clarification_utility(&[0.0; 5], &[2; 5]).unwrap().utility, 0.0);
        assert!(matches!(clarification_utility(&[], &[]), Err(MetricsError::NoSteps)));
    }

    #[test]
    fn smoothing_cases() {
        for x in moving_average(&[0.4; 20], 13).unwrap() {
            assert!((x - 0.4).abs() < 1e-12);
        }
        let xs = [0.1, 0.7, 0.3];
        assert_eq!(moving_average(&xs, 1).unwrap(), xs.to_vec());
        assert_eq!(moving_average(&[0.0, 1.0], 2).unwrap(), vec![0.0, 0.5]);
        assert!(moving_average(&[], 13).unwrap().is_empty());
        assert_eq!(cumulative_ask_rate(&[true; 4]), vec![1.0; 4]);
        assert_eq!(
            cumulative_ask_rate(&[true, false, false, false]),
            vec![1.0, 0.5, 1.0 / 3.0, 0.25]
        );
        assert!(cumulative_ask_rate(&[]).is_empty());
    }

    fn day(correct: &[bool]) -> ScoredDay {
        let mut r = record();
        r.ask_task.ask = false;
        r.response_task.payload = None;
        r.final_tasks = crate::domain::CandidateSet::new(
            crate::domain::ClarifyTarget::Task,
            crate::domain::Stage::Final,
            vec![crate::domain::Candidate::new(Label(12), 0.9)],
        );
        ScoredDay {
            day_index: 0,
            steps: correct
                .iter()
                .map(|&c| {
                    let mut r = r.clone();
                    r.outcome = crate::domain::Outcome::binary(c, c);
                    ScoredStep {
                        record: r,
                        truth: StepTruth {
                            true_intent: Label(if c { 7 } else { 8 }),
                            required_task: Label(if c { 12 } else { 13 }),
                        },
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn impact_of_identical_traces_is_zero() {
        let d = vec![day(&[true, false, true])];
        for g in ask_impact(&d, &d).unwrap() {
            assert_eq!(
                (g.semantic_similarity_gain, g.intent_f1_gain, g.task_f1_gain, g.utility_gain),
                (0.0, 0.0, 0.0, 0.0)
            );
        }
    }

    #[test]
    fn impact_extremes() {
        let good = day(&[true, true]);
        let mut bad = good.clone();
        for s in &mut bad.steps {
            s.record.outcome = crate::domain::Outcome::binary(false, false);
            s.record.action.intent_label = Label(99);
            s.record.action.task_need_label = Label(98);
        }
        let g = ask_impact(&[good], &[bad]).unwrap();
        assert_eq!(g[0].task_f1_gain, 1.0);
        assert_eq!(g[0].intent_f1_gain, 1.0);
        assert!(g[0].semantic_similarity_gain > 0.0);
    }

    #[test]
    fn impact_requires_shared_truth() {
        let a = vec![day(&[true, true])];
        let b = vec![day(&[false, true])];
        assert!(matches!(ask_impact(&a, &b), Err(MetricsError::Unpaired(_))));
    }

    #[test]
    fn report_rows_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let inputs: Vec<ReportInput> = (0..2)
            .map(|seed| ReportInput {
                policy: "never".into(),
                setting: "S1".into(),
                seed,
                days: (0..5)
                    .map(|d| ScoredDay {
                        day_index: d,
                        ..day(&[true, seed == 0, false])
                    })
                    .collect(),
            })
            .collect();
        let files = emit_report(&inputs, dir.path()).unwrap();
        let per_day = fs::read_to_string(&files.per_day).unwrap();
        assert_eq!(per_day.lines().count(), 1 + 10);
        let summary = fs::read_to_string(&files.summary).unwrap();
        assert!(summary.lines().next().unwrap().contains("utility_sd"));
        assert_eq!(summary.lines().count(), 2);
        let again = tempfile::tempdir().unwrap();
        let files2 = emit_report(&inputs, again.path()).unwrap();
        for (a, b) in [
            (&files.per_day, &files2.per_day),
            (&files.summary, &files2.summary),
            (&files.diagnostics, &files2.diagnostics),
        ] {
            assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
        }
    }

    fn arb_fragment() -> impl Strategy<Value = (Vec<f64>, Vec<u32>)> {
        prop::collection::vec((0.0f64..=1.0, 0u32..=2), 1..40).prop_map(|v| v.into_iter().unzip())
    }

    proptest! {
        #[test]
        fn utility_identities((scores, asks) in arb_fragment()) {
            let u = clarification_utility(&scores, &asks).unwrap();
            prop_assert!((0.0..=1.0).contains(&u.utility));
            prop_assert!((u.utility * (1.0 + u.ask_rate) - u.acc).abs() <= 1e-12);
            let none = vec![0; scores.len()];
            let u0 = clarification_utility(&scores, &none).unwrap();
            prop_assert_eq!(u0.utility, u0.acc);
        }

        #[test]
        fn fewer_questions_dominate((scores, asks) in arb_fragment(), extra in 1u32..5) {
            prop_assume!(scores.iter().sum::<f64>() > 0.0);
            let mut more = asks.clone();
            more[0] += extra;
            let a = clarification_utility(&scores, &asks).unwrap();
            let b = clarification_utility(&scores, &more).unwrap();
            prop_assert!(a.utility > b.utility);
        }

        #[test]
        fn comparison_inequality((sa, qa) in arb_fragment(), (sb, qb) in arb_fragment()) {
            let a = clarification_utility(&sa, &qa).unwrap();
            let b = clarification_utility(&sb, &qb).unwrap();
            let lhs = b.utility > a.utility;
            let rhs = b.acc > a.acc * (1.0 + b.ask_rate) / (1.0 + a.ask_rate);
            // Skip numerically tied pairs.
            prop_assume!((b.utility - a.utility).abs() > 1e-12);
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn f1_bounds(p in prop::collection::btree_set(0u32..10, 0..5), t in prop::collection::btree_set(0u32..10, 0..5)) {
            let (p, t): (BTreeSet<Label>, BTreeSet<Label>) = (p.into_iter().map(Label).collect(), t.into_iter().map(Label).collect());
            let (pr, rc, f) = set_f1(&p, &t);
            for x in [pr, rc, f] {
                prop_assert!((0.0..=1.0).contains(&x));
            }
            if !(p.is_empty() && t.is_empty()) {
                prop_assert_eq!(f == 0.0, p.intersection(&t).count() == 0);
            }
        }
    }
}
