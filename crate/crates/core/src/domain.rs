//! Shared domain types for the ask-or-act loop and the per-step history record.
//!
//! Everything here is a plain immutable value. Records are validated with
//! [`validate_history_record`], which reports every violated invariant rather
//! than stopping at the first one.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Number of hourly interaction slots in a simulated day (9 a.m. to 9 p.m.).
pub const HOURS_PER_DAY: u8 = 12;

/// Catalog identifier for an intent or a task need.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub u32);

impl Label {
    /// Reserved label used by the fallback action when a final candidate set is empty.
    pub const ABSTAIN: Label = Label(u32::MAX);

    pub fn is_abstain(self) -> bool {
        self == Self::ABSTAIN
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_abstain() {
            write!(f, "abstain")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HumanId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SceneId(pub u32);

/// Temporal context of one interaction step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timestamp {
    pub day_index: u32,
    /// Hour slot in `0..12`; slot 0 is 9 a.m.
    pub hour_slot: u8,
    pub segment_human: Option<HumanId>,
}

impl Timestamp {
    pub fn new(day_index: u32, hour_slot: u8) -> Self {
        Self {
            day_index,
            hour_slot,
            segment_human: None,
        }
    }

    pub fn with_human(mut self, human: HumanId) -> Self {
        self.segment_human = Some(human);
        self
    }

    pub fn is_valid(&self) -> bool {
        self.hour_slot < HOURS_PER_DAY
    }

    /// Wall-clock hour (24h) of this slot.
    pub fn clock_hour(&self) -> u32 {
        9 + u32::from(self.hour_slot)
    }
}

/// Clarification target. Processing order is always intent, then task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClarifyTarget {
    Intent,
    Task,
}

impl ClarifyTarget {
    pub const ORDER: [ClarifyTarget; 2] = [ClarifyTarget::Intent, ClarifyTarget::Task];

    pub fn as_str(self) -> &'static str {
        match self {
            ClarifyTarget::Intent => "intent",
            ClarifyTarget::Task => "task",
        }
    }
}

impl fmt::Display for ClarifyTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What the robot perceives at a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub feature_vector: Vec<f64>,
    /// Intent label read from a textual description (collaboration type 1 only).
    pub text_label: Option<Label>,
    pub scene_id: SceneId,
}

/// A retrieved memory entry: which record, and how relevant it scored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievedRecord {
    pub insertion_index: u64,
    pub score: f64,
    /// Intent the robot knows was correct at that step (clarified or confirmed by feedback).
    pub confirmed_intent: Option<Label>,
    pub confirmed_task: Option<Label>,
}

/// Robot-observable interaction state: observation, temporal context and retrieved history.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionState {
    pub observation: Observation,
    pub timestamp: Timestamp,
    /// Ordered by non-increasing score.
    pub retrieved_history: Vec<RetrievedRecord>,
    /// Size of the full cross-day history at this step.
    pub history_len: usize,
}

impl InteractionState {
    pub fn digest(&self) -> StateDigest {
        StateDigest {
            timestamp: self.timestamp,
            scene_id: self.observation.scene_id,
            text_label: self.observation.text_label,
            retrieved: self
                .retrieved_history
                .iter()
                .map(|r| (r.insertion_index, r.score))
                .collect(),
        }
    }
}

/// Compact encoding of an [`InteractionState`] stored in history records.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDigest {
    pub timestamp: Timestamp,
    pub scene_id: SceneId,
    pub text_label: Option<Label>,
    /// `(insertion_index, score)` of each retrieved record.
    pub retrieved: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub label: Label,
    pub score: f64,
}

impl Candidate {
    pub fn new(label: Label, score: f64) -> Self {
        Self { label, score }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Raw,
    Filtered,
    Final,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Raw => "raw",
            Stage::Filtered => "filtered",
            Stage::Final => "final",
        }
    }
}

/// Candidates for one target at one pipeline stage, sorted by score
/// descending with ties broken by ascending label.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub target: ClarifyTarget,
    pub stage: Stage,
    candidates: Vec<Candidate>,
}

impl CandidateSet {
    /// Builds a set, sorting candidates into canonical order.
    pub fn new(target: ClarifyTarget, stage: Stage, mut candidates: Vec<Candidate>) -> Self {
        sort_candidates(&mut candidates);
        Self {
            target,
            stage,
            candidates,
        }
    }

    /// Builds a set from candidates exactly as given (used by the decoder so
    /// that ordering violations remain visible to validation).
    pub fn from_parts(target: ClarifyTarget, stage: Stage, candidates: Vec<Candidate>) -> Self {
        Self {
            target,
            stage,
            candidates,
        }
    }

    pub fn empty(target: ClarifyTarget, stage: Stage) -> Self {
        Self::from_parts(target, stage, Vec::new())
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn top(&self) -> Option<&Candidate> {
        self.candidates.first()
    }

    pub fn contains(&self, label: Label) -> bool {
        self.candidates.iter().any(|c| c.label == label)
    }

    pub fn labels(&self) -> impl Iterator<Item = Label> + '_ {
        self.candidates.iter().map(|c| c.label)
    }

    pub fn with_stage(mut self, stage: Stage) -> Self {
        self.stage = stage;
        self
    }

    pub fn is_canonically_ordered(&self) -> bool {
        self.candidates
            .windows(2)
            .all(|w| candidate_order(&w[0], &w[1]) != std::cmp::Ordering::Greater)
    }
}

fn candidate_order(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.label.cmp(&b.label))
}

pub fn sort_candidates(candidates: &mut [Candidate]) {
    candidates.sort_by(candidate_order);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AskDecision {
    pub target: ClarifyTarget,
    pub ask: bool,
    pub budget_before: u32,
}

/// Human answer to a clarification question; `payload` is `None` when no question was asked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClarificationResponse {
    pub target: ClarifyTarget,
    pub payload: Option<Label>,
}

impl ClarificationResponse {
    pub fn absent(target: ClarifyTarget) -> Self {
        Self {
            target,
            payload: None,
        }
    }

    pub fn is_present(&self) -> bool {
        self.payload.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssistanceAction {
    pub intent_label: Label,
    pub task_need_label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub intent_correct: bool,
    pub task_correct: bool,
    pub assistance_score: f64,
}

impl Outcome {
    /// Binary instantiation: full credit iff the task need was met.
    pub fn binary(intent_correct: bool, task_correct: bool) -> Self {
        Self {
            intent_correct,
            task_correct,
            assistance_score: if task_correct { 1.0 } else { 0.0 },
        }
    }
}

/// One appended element of the cross-day history.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRecord {
    pub state_digest: StateDigest,
    pub final_intents: CandidateSet,
    pub final_tasks: CandidateSet,
    pub ask_intent: AskDecision,
    pub ask_task: AskDecision,
    pub response_intent: ClarificationResponse,
    pub response_task: ClarificationResponse,
    pub action: AssistanceAction,
    pub outcome: Outcome,
}

impl HistoryRecord {
    /// Number of clarification questions asked at this step.
    pub fn asks(&self) -> u32 {
        u32::from(self.ask_intent.ask) + u32::from(self.ask_task.ask)
    }

    /// Intent known to be correct from this step: the clarified answer, or the
    /// executed intent when feedback confirmed it.
    pub fn confirmed_intent(&self) -> Option<Label> {
        self.response_intent.payload.or_else(|| {
            (self.outcome.intent_correct && !self.action.intent_label.is_abstain())
                .then_some(self.action.intent_label)
        })
    }

    pub fn confirmed_task(&self) -> Option<Label> {
        self.response_task.payload.or_else(|| {
            (self.outcome.task_correct && !self.action.task_need_label.is_abstain())
                .then_some(self.action.task_need_label)
        })
    }
}

/// A violated record invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation(pub String);

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Checks every record invariant and lists the violated ones (empty when valid).
pub fn validate_history_record(record: &HistoryRecord) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |msg: String| out.push(Violation(msg));

    let ts = &record.state_digest.timestamp;
    if !ts.is_valid() {
        push(format!("hour_slot {} out of range 0..=11", ts.hour_slot));
    }
    let retrieved = &record.state_digest.retrieved;
    if retrieved.iter().any(|(_, s)| !s.is_finite()) {
        push("retrieved score not finite".into());
    }
    if retrieved.windows(2).any(|w| w[0].1 < w[1].1) {
        push("retrieved scores not non-increasing".into());
    }

    for (set, target, name) in [
        (&record.final_intents, ClarifyTarget::Intent, "final_intents"),
        (&record.final_tasks, ClarifyTarget::Task, "final_tasks"),
    ] {
        if set.target != target {
            push(format!("{name} has target {}", set.target));
        }
        if set.stage != Stage::Final {
            push(format!("{name} has stage {}", set.stage.as_str()));
        }
        if set
            .candidates()
            .iter()
            .any(|c| !(0.0..=1.0).contains(&c.score))
        {
            push(format!("{name} candidate score outside [0,1]"));
        }
        if !set.is_canonically_ordered() {
            push(format!("{name} not sorted by score"));
        }
    }

    for (decision, response, target) in [
        (&record.ask_intent, &record.response_intent, ClarifyTarget::Intent),
        (&record.ask_task, &record.response_task, ClarifyTarget::Task),
    ] {
        if decision.target != target {
            push(format!("ask_{target} has target {}", decision.target));
        }
        if response.target != target {
            push(format!("response_{target} has target {}", response.target));
        }
        if decision.ask && decision.budget_before == 0 {
            push(format!("ask requires budget ({target})"));
        }
        match (decision.ask, response.payload) {
            (false, Some(_)) => push(format!("response without ask ({target})")),
            (true, None) => push(format!("ask without response ({target})")),
            _ => {}
        }
    }

    let expected_task_budget = record
        .ask_intent
        .budget_before
        .saturating_sub(u32::from(record.ask_intent.ask));
    if record.ask_task.budget_before != expected_task_budget {
        push(format!(
            "task budget_before {} inconsistent with intent stage (expected {expected_task_budget})",
            record.ask_task.budget_before
        ));
    }

    for (response, set, chosen, name) in [
        (
            &record.response_intent,
            &record.final_intents,
            record.action.intent_label,
            "intent",
        ),
        (
            &record.response_task,
            &record.final_tasks,
            record.action.task_need_label,
            "task",
        ),
    ] {
        if let Some(payload) = response.payload {
            let singleton = set.len() == 1
                && set.candidates()[0].label == payload
                && set.candidates()[0].score == 1.0;
            if !singleton {
                push(format!("clarified {name} set is not the singleton answer"));
            }
        }
        let expected = set.top().map(|c| c.label).unwrap_or(Label::ABSTAIN);
        if chosen != expected {
            push(format!("action {name} label is not the top final candidate"));
        }
    }

    let o = &record.outcome;
    if !(0.0..=1.0).contains(&o.assistance_score) {
        push("assistance_score outside [0,1]".into());
    }
    if o.task_correct && o.assistance_score != 1.0 {
        push("task_correct requires assistance_score 1".into());
    }
    if record.action.intent_label.is_abstain() && o.intent_correct {
        push("abstained intent marked correct".into());
    }
    if record.action.task_need_label.is_abstain() && o.task_correct {
        push("abstained task marked correct".into());
    }
    out
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn record() -> HistoryRecord {
        HistoryRecord {
            state_digest: StateDigest {
                timestamp: Timestamp::new(2, 5).with_human(HumanId(1)),
                scene_id: SceneId(0),
                text_label: Some(Label(7)),
                retrieved: vec![(10, 0.5), (3, 0.25)],
            },
            final_intents: CandidateSet::new(
                ClarifyTarget::Intent,
                Stage::Final,
                vec![Candidate::new(Label(7), 0.8), Candidate::new(Label(3), 0.1)],
            ),
            final_tasks: CandidateSet::new(
                ClarifyTarget::Task,
                Stage::Final,
                vec![Candidate::new(Label(12), 1.0)],
            ),
            ask_intent: AskDecision {
                target: ClarifyTarget::Intent,
                ask: false,
                budget_before: 4,
            },
            ask_task: AskDecision {
                target: ClarifyTarget::Task,
                ask: true,
                budget_before: 4,
            },
            response_intent: ClarificationResponse::absent(ClarifyTarget::Intent),
            response_task: ClarificationResponse {
                target: ClarifyTarget::Task,
                payload: Some(Label(12)),
            },
            action: AssistanceAction {
                intent_label: Label(7),
                task_need_label: Label(12),
            },
            outcome: Outcome::binary(true, true),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::record;
    use super::*;

    #[test]
    fn well_formed_record_passes() {
        assert!(validate_history_record(&record()).is_empty());
    }

    #[test]
    fn ask_without_budget_is_reported() {
        let mut r = record();
        r.ask_intent = AskDecision {
            target: ClarifyTarget::Intent,
            ask: true,
            budget_before: 0,
        };
        r.response_intent.payload = Some(Label(7));
        r.final_intents = CandidateSet::new(
            ClarifyTarget::Intent,
            Stage::Final,
            vec![Candidate::new(Label(7), 1.0)],
        );
        let v = validate_history_record(&r);
        assert!(v.iter().any(|v| v.0.starts_with("ask requires budget")), "{v:?}");
    }

    #[test]
    fn response_without_ask_is_reported() {
        let mut r = record();
        r.ask_task.ask = false;
        r.ask_task.budget_before = 4;
        let v = validate_history_record(&r);
        assert!(v.iter().any(|v| v.0.starts_with("response without ask")), "{v:?}");
    }

    #[test]
    fn multiple_violations_are_all_listed() {
        let mut r = record();
        r.state_digest.timestamp.hour_slot = 12;
        r.outcome.assistance_score = 1.5;
        let v = validate_history_record(&r);
        assert!(v.len() >= 2, "{v:?}");
    }

    #[test]
    fn candidate_set_sorts_with_label_tiebreak() {
        let s = CandidateSet::new(
            ClarifyTarget::Intent,
            Stage::Raw,
            vec![
                Candidate::new(Label(7), 0.5),
                Candidate::new(Label(3), 0.5),
                Candidate::new(Label(9), 0.9),
            ],
        );
        let labels: Vec<_> = s.labels().map(|l| l.0).collect();
        assert_eq!(labels, vec![9, 3, 7]);
    }

    #[test]
    fn confirmed_intent_prefers_response_then_feedback() {
        let mut r = record();
        assert_eq!(r.confirmed_intent(), Some(Label(7)));
        r.outcome.intent_correct = false;
        assert_eq!(r.confirmed_intent(), None);
        assert_eq!(r.confirmed_task(), Some(Label(12)));
    }
}
