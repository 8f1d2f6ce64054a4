//! Canonical single-line encoding of [`HistoryRecord`]s.
//!
//! Lines are JSON objects with a fixed field order. Floats are written in
//! scientific notation with 17 significant digits, so equal records always
//! produce byte-identical lines and every `f64` survives the round trip.

use std::fmt::Write as _;

use serde::Deserialize;
use thiserror::Error;

use crate::domain::{
    validate_history_record, AskDecision, AssistanceAction, Candidate, CandidateSet,
    ClarificationResponse, ClarifyTarget, HistoryRecord, HumanId, Label, Outcome, SceneId, Stage,
    StateDigest, Timestamp, Violation,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unsupported schema_version {0}")]
    Schema(u32),
    #[error("invalid record: {}", join(.0))]
    Invalid(Vec<Violation>),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|v| v.0.as_str()).collect::<Vec<_>>().join("; ")
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn push_label(out: &mut String, label: Option<Label>) {
    match label {
        Some(l) => write!(out, "{}", l.0).unwrap(),
        None => out.push_str("null"),
    }
}

fn push_set(out: &mut String, set: &CandidateSet) {
    write!(
        out,
        "{{\"target\":\"{}\",\"stage\":\"{}\",\"candidates\":[",
        set.target.as_str(),
        set.stage.as_str()
    )
    .unwrap();
    for (i, c) in set.candidates().iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "[{},{}]", c.label.0, fmt_f64(c.score)).unwrap();
    }
    out.push_str("]}");
}

fn push_decision(out: &mut String, d: &AskDecision) {
    write!(
        out,
        "{{\"target\":\"{}\",\"ask\":{},\"budget_before\":{}}}",
        d.target.as_str(),
        d.ask,
        d.budget_before
    )
    .unwrap();
}

fn push_response(out: &mut String, r: &ClarificationResponse) {
    write!(out, "{{\"target\":\"{}\",\"payload\":", r.target.as_str()).unwrap();
    push_label(out, r.payload);
    out.push('}');
}

/// Encodes a valid record as one canonical line (no trailing newline).
pub fn encode_trace_record(record: &HistoryRecord) -> Result<String, CodecError> {
    let violations = validate_history_record(record);
    if !violations.is_empty() {
        return Err(CodecError::Invalid(violations));
    }
    let mut out = String::with_capacity(512);
    let s = &record.state_digest;
    write!(
        out,
        "{{\"schema_version\":{SCHEMA_VERSION},\"state\":{{\"day\":{},\"hour\":{},\"human\":",
        s.timestamp.day_index, s.timestamp.hour_slot
    )
    .unwrap();
    match s.timestamp.segment_human {
        Some(h) => write!(out, "{}", h.0).unwrap(),
        None => out.push_str("null"),
    }
    write!(out, ",\"scene\":{},\"text_label\":", s.scene_id.0).unwrap();
    push_label(&mut out, s.text_label);
    out.push_str(",\"retrieved\":[");
    for (i, (idx, score)) in s.retrieved.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "[{idx},{}]", fmt_f64(*score)).unwrap();
    }
    out.push_str("]},\"final_intents\":");
    push_set(&mut out, &record.final_intents);
    out.push_str(",\"final_tasks\":");
    push_set(&mut out, &record.final_tasks);
    out.push_str(",\"ask_intent\":");
    push_decision(&mut out, &record.ask_intent);
    out.push_str(",\"ask_task\":");
    push_decision(&mut out, &record.ask_task);
    out.push_str(",\"response_intent\":");
    push_response(&mut out, &record.response_intent);
    out.push_str(",\"response_task\":");
    push_response(&mut out, &record.response_task);
    write!(
        out,
        ",\"action\":{{\"intent\":{},\"task\":{}}}",
        record.action.intent_label.0, record.action.task_need_label.0
    )
    .unwrap();
    let o = &record.outcome;
    write!(
        out,
        ",\"outcome\":{{\"intent_correct\":{},\"task_correct\":{},\"assistance_score\":{}}}}}",
        o.intent_correct,
        o.task_correct,
        fmt_f64(o.assistance_score)
    )
    .unwrap();
    Ok(out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRecord {
    schema_version: u32,
    state: WireState,
    final_intents: WireSet,
    final_tasks: WireSet,
    ask_intent: WireDecision,
    ask_task: WireDecision,
    response_intent: WireResponse,
    response_task: WireResponse,
    action: WireAction,
    outcome: Outcome,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireState {
    day: u32,
    hour: u8,
    human: Option<u32>,
    scene: u32,
    text_label: Option<u32>,
    retrieved: Vec<(u64, f64)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireSet {
    target: ClarifyTarget,
    stage: Stage,
    candidates: Vec<(u32, f64)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireDecision {
    target: ClarifyTarget,
    ask: bool,
    budget_before: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireResponse {
    target: ClarifyTarget,
    payload: Option<u32>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireAction {
    intent: u32,
    task: u32,
}

impl From<WireSet> for CandidateSet {
    fn from(w: WireSet) -> Self {
        CandidateSet::from_parts(
            w.target,
            w.stage,
            w.candidates
                .into_iter()
                .map(|(l, s)| Candidate::new(Label(l), s))
                .collect(),
        )
    }
}

impl From<WireDecision> for AskDecision {
    fn from(w: WireDecision) -> Self {
        AskDecision {
            target: w.target,
            ask: w.ask,
            budget_before: w.budget_before,
        }
    }
}

impl From<WireResponse> for ClarificationResponse {
    fn from(w: WireResponse) -> Self {
        ClarificationResponse {
            target: w.target,
            payload: w.payload.map(Label),
        }
    }
}

/// Parses one line back into a record and validates it.
pub fn decode_trace_record(line: &str) -> Result<HistoryRecord, CodecError> {
    let wire: WireRecord = serde_json::from_str(line).map_err(|e| CodecError::Parse {
        offset: byte_offset(line, e.line(), e.column()),
        message: e.to_string(),
    })?;
    if wire.schema_version != SCHEMA_VERSION {
        return Err(CodecError::Schema(wire.schema_version));
    }
    let s = wire.state;
    let record = HistoryRecord {
        state_digest: StateDigest {
            timestamp: Timestamp {
                day_index: s.day,
                hour_slot: s.hour,
                segment_human: s.human.map(HumanId),
            },
            scene_id: SceneId(s.scene),
            text_label: s.text_label.map(Label),
            retrieved: s.retrieved,
        },
        final_intents: wire.final_intents.into(),
        final_tasks: wire.final_tasks.into(),
        ask_intent: wire.ask_intent.into(),
        ask_task: wire.ask_task.into(),
        response_intent: wire.response_intent.into(),
        response_task: wire.response_task.into(),
        action: AssistanceAction {
            intent_label: Label(wire.action.intent),
            task_need_label: Label(wire.action.task),
        },
        outcome: wire.outcome,
    };
    let violations = validate_history_record(&record);
    if violations.is_empty() {
        Ok(record)
    } else {
        Err(CodecError::Invalid(violations))
    }
}

// serde_json reports 1-based line and column; column 0 means "before the first byte".
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}
