//! Reasoner-driven ask strategies with exact call accounting.

mod runners;
mod stub;

pub use runners::{run_proactive_cot, run_single_step, run_tot, run_uot, ProtocolOutcome};
pub use stub::{StubReasoner, StubScript};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{CandidateSet, InteractionState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    SingleDecision,
    SubQuestionSelect,
    SubQuestionSolve,
    Summarize,
    BranchExpand,
    BranchAnalyze,
    BranchScore,
    StepGenerate,
    StepSimulate,
    /// Estimated uncertainty reduction of one simulated step.
    StepEstimate,
    StepExecute,
    StepUpdate,
    Resolve,
}

impl RequestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RequestKind::SingleDecision => "single_decision",
            RequestKind::SubQuestionSelect => "sub_question_select",
            RequestKind::SubQuestionSolve => "sub_question_solve",
            RequestKind::Summarize => "summarize",
            RequestKind::BranchExpand => "branch_expand",
            RequestKind::BranchAnalyze => "branch_analyze",
            RequestKind::BranchScore => "branch_score",
            RequestKind::StepGenerate => "step_generate",
            RequestKind::StepSimulate => "step_simulate",
            RequestKind::StepEstimate => "step_estimate",
            RequestKind::StepExecute => "step_execute",
            RequestKind::StepUpdate => "step_update",
            RequestKind::Resolve => "resolve",
        }
    }

    pub fn expects_decision(self) -> bool {
        matches!(
            self,
            RequestKind::SingleDecision | RequestKind::Summarize | RequestKind::Resolve
        )
    }

    pub fn expects_score(self) -> bool {
        matches!(self, RequestKind::BranchScore | RequestKind::StepEstimate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AskChoice {
    Ask,
    NoAsk,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub context: String,
    pub answer: String,
}

/// The two few-shot demonstrations: one where acting is safe, one where it is not.
pub fn few_shot_exemplars() -> Vec<Exemplar> {
    vec![
        Exemplar {
            context: "time: day 2 10:00\ntarget: intent\ncandidates: 4:0.8600 9:0.0700 1:0.0300\nmargin: 0.7900\nask_count: 1 budget: 6\nhistory: 14 records; recent confirmed: 4,4,4".into(),
            answer: "I do not need to ask a question.".into(),
        },
        Exemplar {
            context: "time: day 2 15:00\ntarget: intent\ncandidates: 6:0.3100 2:0.2900 11:0.2400\nmargin: 0.0200\nask_count: 1 budget: 6\nhistory: 19 records; recent confirmed: 6,2,11".into(),
            answer: "What is your true intent?".into(),
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonerRequest {
    pub kind: RequestKind,
    pub context_digest: String,
    pub exemplars: Vec<Exemplar>,
    /// Earlier reasoning outputs this call builds on, oldest first.
    pub trace: Vec<String>,
    pub turn: usize,
    pub branch: usize,
}

impl ReasonerRequest {
    pub fn new(kind: RequestKind, context_digest: &str) -> Self {
        Self {
            kind,
            context_digest: context_digest.to_owned(),
            exemplars: Vec::new(),
            trace: Vec::new(),
            turn: 0,
            branch: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonerResponse {
    pub text: String,
    pub parsed_decision: Option<AskChoice>,
    pub parsed_score: Option<u8>,
}

impl ReasonerResponse {
    /// Wraps raw text and applies the parser matching the request kind.
    pub fn from_text(kind: RequestKind, text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            parsed_decision: kind.expects_decision().then(|| parse_decision(&text)).flatten(),
            parsed_score: kind.expects_score().then(|| parse_score(&text)).flatten(),
            text,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReasonerError {
    #[error("reasoner timed out")]
    Timeout,
    #[error("reasoner returned status {0}")]
    Status(u16),
    #[error("could not parse reasoner reply: {0}")]
    Parse(String),
    #[error("reasoner transport failure: {0}")]
    Transport(String),
}

pub trait Reasoner {
    fn respond(&mut self, request: &ReasonerRequest) -> Result<ReasonerResponse, ReasonerError>;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("invalid protocol config: {0}")]
    Config(String),
    #[error("reasoner failed on {kind:?}: {source}")]
    Reasoner {
        kind: RequestKind,
        source: ReasonerError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub pcot_turns: usize,
    pub tot_depth: usize,
    pub tot_branching: usize,
    pub uot_turns: usize,
}

impl ProtocolConfig {
    pub const UOT_CANDIDATES_PER_TURN: usize = 3;

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.pcot_turns == 0 || self.tot_depth == 0 || self.tot_branching == 0 || self.uot_turns == 0 {
            return Err(ProtocolError::Config("all protocol sizes must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            pcot_turns: 2,
            tot_depth: 2,
            tot_branching: 2,
            uot_turns: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CallLog {
    /// Request kind and wall-clock latency in milliseconds (0 for in-process reasoners).
    pub calls: Vec<(RequestKind, f64)>,
}

impl CallLog {
    pub fn count(&self) -> usize {
        self.calls.len()
    }

    pub fn kinds(&self) -> Vec<RequestKind> {
        self.calls.iter().map(|(k, _)| *k).collect()
    }
}

fn normalize(text: &str) -> String {
    let mut s = text.to_lowercase();
    for phrase in [
        "do not need to ask",
        "don't need to ask",
        "no need to ask",
        "no_ask",
        "no-ask",
        "no ask",
    ] {
        s = s.replace(phrase, " noask ");
    }
    s
}

fn tokens(s: &str) -> impl Iterator<Item = &str> {
    s.split(|c: char| !c.is_ascii_alphanumeric()).filter(|t| !t.is_empty())
}

/// Which of {Ask, NoAsk} a free-text reply mentions.
pub fn mentioned_choices(text: &str) -> Vec<AskChoice> {
    let s = normalize(text);
    let no_ask = tokens(&s).any(|t| t == "noask");
    let ask = tokens(&s).any(|t| t == "ask" || t == "q1")
        || s.contains("what is your")
        || s.contains("selected sub question:");
    let mut out = Vec::new();
    if ask {
        out.push(AskChoice::Ask);
    }
    if no_ask {
        out.push(AskChoice::NoAsk);
    }
    out
}

/// An unambiguous ask-or-act decision, if the text contains exactly one.
pub fn parse_decision(text: &str) -> Option<AskChoice> {
    match mentioned_choices(text).as_slice() {
        [one] => Some(*one),
        _ => None,
    }
}

/// The first integer in the text, if it is 0, 1 or 2.
pub fn parse_score(text: &str) -> Option<u8> {
    let first = text
        .split(|c: char| !c.is_ascii_digit())
        .find(|t| !t.is_empty())?;
    match first.parse::<u64>().ok()? {
        n @ 0..=2 => Some(n as u8),
        _ => None,
    }
}

/// Deterministic text rendering of the pre-ask state for one target.
pub fn context_digest(
    state: &InteractionState,
    filtered: &CandidateSet,
    ask_count: u32,
    daily_budget: u32,
) -> String {
    let ts = &state.timestamp;
    let mut s = String::new();
    writeln!(s, "time: day {} {:02}:00", ts.day_index, ts.clock_hour()).unwrap();
    writeln!(s, "target: {}", filtered.target).unwrap();
    s.push_str("candidates:");
    for c in filtered.candidates() {
        write!(s, " {}:{:.4}", c.label, c.score).unwrap();
    }
    s.push('\n');
    let c = filtered.candidates();
    let margin = match c {
        [] => 0.0,
        [a] => a.score,
        [a, b, ..] => a.score - b.score,
    };
    writeln!(s, "margin: {margin:.4}").unwrap();
    writeln!(s, "ask_count: {ask_count} budget: {daily_budget}").unwrap();
    let recent: Vec<String> = state
        .retrieved_history
        .iter()
        .filter_map(|r| r.confirmed_intent.map(|l| l.to_string()))
        .collect();
    write!(
        s,
        "history: {} records; recent confirmed: {}",
        state.history_len,
        if recent.is_empty() { "none".into() } else { recent.join(",") }
    )
    .unwrap();
    s
}

/// Reads the margin line back out of a digest.
pub fn digest_margin(digest: &str) -> Option<f64> {
    digest
        .lines()
        .find_map(|l| l.strip_prefix("margin: "))
        .and_then(|v| v.trim().parse().ok())
}
