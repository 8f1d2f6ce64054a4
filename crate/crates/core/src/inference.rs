//! Intent and task heads: candidate generation, scoring, filtering, and the
//! update that folds a clarification response into the candidate set.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    AssistanceAction, Candidate, CandidateSet, ClarificationResponse, ClarifyTarget,
    InteractionState, Label, Stage,
};
use crate::world::SceneSpec;

#[derive(Debug, Error, PartialEq)]
pub enum InferenceError {
    #[error("invalid head config: {0}")]
    Config(String),
    #[error("task head needs non-empty conditioning intents")]
    NoConditioning,
    #[error("expected {expected:?} candidate set, got {got:?}")]
    Stage { expected: Stage, got: Stage },
    #[error("response target {response} does not match set target {set}")]
    TargetMismatch {
        set: ClarifyTarget,
        response: ClarifyTarget,
    },
    #[error("observation has {got} features, scene expects {expected}")]
    FeatureDim { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    TopK(usize),
    Threshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub n_candidates: usize,
    pub filter_mode: FilterMode,
    pub softmax_temperature: f64,
    pub prior_weight: f64,
    pub text_boost: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            n_candidates: 5,
            filter_mode: FilterMode::TopK(3),
            softmax_temperature: 1.0,
            prior_weight: 0.3,
            text_boost: 4.0,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<(), InferenceError> {
        let err = |m: &str| Err(InferenceError::Config(m.into()));
        if self.n_candidates == 0 {
            return err("n_candidates must be >= 1");
        }
        match self.filter_mode {
            FilterMode::TopK(k) if k == 0 || k > self.n_candidates => {
                return err("filter k must be in [1, n_candidates]")
            }
            FilterMode::Threshold(t) if !(0.0..=1.0).contains(&t) => {
                return err("filter threshold must be in [0,1]")
            }
            _ => {}
        }
        if !(self.softmax_temperature > 0.0 && self.softmax_temperature.is_finite()) {
            return err("softmax_temperature must be > 0");
        }
        if !(0.0..=1.0).contains(&self.prior_weight) {
            return err("prior_weight must be in [0,1]");
        }
        if !(self.text_boost > 0.0 && self.text_boost.is_finite()) {
            return err("text_boost must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct InferenceContext<'a> {
    pub target: ClarifyTarget,
    pub state: &'a InteractionState,
    /// Final intent set; required for the task head.
    pub conditioning_intents: Option<&'a CandidateSet>,
}

/// Weight of the task at list position `j` given its intent; the first task
/// is the one the robot watched the human do, so it gets none.
fn task_position_weight(j: usize) -> f64 {
    if j == 0 {
        0.0
    } else {
        0.5f64.powi(j as i32 - 1)
    }
}

pub fn generate_and_score(
    ctx: &InferenceContext<'_>,
    scene: &SceneSpec,
    config: &HeadConfig,
) -> Result<CandidateSet, InferenceError> {
    config.validate()?;
    let mut scored = match ctx.target {
        ClarifyTarget::Intent => score_intents(ctx.state, scene, config)?,
        ClarifyTarget::Task => {
            let cond = ctx
                .conditioning_intents
                .filter(|c| !c.is_empty())
                .ok_or(InferenceError::NoConditioning)?;
            score_tasks(cond, scene)
        }
    };
    crate::domain::sort_candidates(&mut scored);
    scored.truncate(config.n_candidates);
    Ok(CandidateSet::new(ctx.target, Stage::Raw, scored))
}

fn score_intents(
    state: &InteractionState,
    scene: &SceneSpec,
    config: &HeadConfig,
) -> Result<Vec<Candidate>, InferenceError> {
    let obs = &state.observation.feature_vector;
    if obs.len() != scene.feature_dim {
        return Err(InferenceError::FeatureDim {
            expected: scene.feature_dim,
            got: obs.len(),
        });
    }
    let m = scene.n_intents();
    let logits: Vec<f64> = scene
        .intents
        .iter()
        .map(|e| {
            let d2: f64 = e.prototype.iter().zip(obs).map(|(p, o)| (p - o).powi(2)).sum();
            -d2 / config.softmax_temperature
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();

    // Memory prior: confirmed-intent counts with a one-count uniform floor.
    let mut counts = vec![1.0; m];
    for r in &state.retrieved_history {
        if let Some(l) = r.confirmed_intent {
            if let Some(c) = counts.get_mut(l.0 as usize) {
                *c += 1.0;
            }
        }
    }
    let total: f64 = counts.iter().sum();

    let mut u: Vec<f64> = (0..m)
        .map(|i| (1.0 - config.prior_weight) * exps[i] / z + config.prior_weight * counts[i] / total)
        .collect();
    if let Some(text) = state.observation.text_label {
        if let Some(x) = u.get_mut(text.0 as usize) {
            *x *= config.text_boost;
        }
    }
    let norm: f64 = u.iter().sum();
    Ok(scene
        .intents
        .iter()
        .zip(u)
        .map(|(e, s)| Candidate::new(e.label, s / norm))
        .collect())
}

fn score_tasks(cond: &CandidateSet, scene: &SceneSpec) -> Vec<Candidate> {
    let mut acc: BTreeMap<Label, f64> = BTreeMap::new();
    for c in cond.candidates() {
        let Some(entry) = scene.intent(c.label) else {
            continue;
        };
        let norm: f64 = (0..entry.tasks.len()).map(task_position_weight).sum();
        if norm <= 0.0 {
            continue;
        }
        for (j, task) in entry.tasks.iter().enumerate().skip(1) {
            *acc.entry(*task).or_insert(0.0) += c.score * task_position_weight(j) / norm;
        }
    }
    acc.into_iter()
        .map(|(l, s)| Candidate::new(l, s.clamp(0.0, 1.0)))
        .collect()
}

pub fn filter(raw: &CandidateSet, config: &HeadConfig) -> Result<CandidateSet, InferenceError> {
    if raw.stage != Stage::Raw {
        return Err(InferenceError::Stage {
            expected: Stage::Raw,
            got: raw.stage,
        });
    }
    let kept: Vec<Candidate> = match config.filter_mode {
        FilterMode::TopK(k) => raw.candidates().iter().take(k).copied().collect(),
        FilterMode::Threshold(t) => raw
            .candidates()
            .iter()
            .filter(|c| c.score >= t)
            .copied()
            .collect(),
    };
    Ok(CandidateSet::from_parts(raw.target, Stage::Filtered, kept))
}

pub fn apply_clarification(
    filtered: &CandidateSet,
    response: &ClarificationResponse,
) -> Result<CandidateSet, InferenceError> {
    if filtered.stage != Stage::Filtered {
        return Err(InferenceError::Stage {
            expected: Stage::Filtered,
            got: filtered.stage,
        });
    }
    if filtered.target != response.target {
        return Err(InferenceError::TargetMismatch {
            set: filtered.target,
            response: response.target,
        });
    }
    Ok(match response.payload {
        Some(label) => CandidateSet::new(
            filtered.target,
            Stage::Final,
            vec![Candidate::new(label, 1.0)],
        ),
        None => filtered.clone().with_stage(Stage::Final),
    })
}

/// Commits to the top intent and top task; an empty set yields the abstain label.
pub fn select_action(final_intents: &CandidateSet, final_tasks: &CandidateSet) -> AssistanceAction {
    let pick = |s: &CandidateSet| s.top().map_or(Label::ABSTAIN, |c| c.label);
    AssistanceAction {
        intent_label: pick(final_intents),
        task_need_label: pick(final_tasks),
    }
}
