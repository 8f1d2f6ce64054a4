use std::collections::VecDeque;

use super::{
    digest_margin, AskChoice, Reasoner, ReasonerError, ReasonerRequest, ReasonerResponse,
    RequestKind,
};

const ASK_TEXT: &str = "What is your true intent?";
const NO_ASK_TEXT: &str = "I do not need to ask a question.";

/// Overrides for the stub's default behavior.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StubScript {
    /// Fixed reply for every decision-bearing request.
    pub decision_text: Option<String>,
    /// On this UoT turn, the update narrows the set to the given choice.
    pub reduce_on_turn: Option<(usize, AskChoice)>,
    /// Replies to successive score requests; falls back to hashing when drained.
    pub scores: VecDeque<String>,
    /// Reply "???" to every request.
    pub garbage: bool,
    /// Margin below which the default rule asks.
    pub margin_threshold: Option<f64>,
}

/// Deterministic in-process reasoner used by tests and offline runs.
#[derive(Debug, Clone, Default)]
pub struct StubReasoner {
    pub script: StubScript,
}

fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

impl StubReasoner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn scripted(script: StubScript) -> Self {
        Self { script }
    }

    fn text_for(&mut self, req: &ReasonerRequest) -> String {
        if self.script.garbage {
            return "???".into();
        }
        let threshold = self.script.margin_threshold.unwrap_or(0.3);
        let default_decision = || match digest_margin(&req.context_digest) {
            Some(m) if m < threshold => ASK_TEXT.to_owned(),
            _ => NO_ASK_TEXT.to_owned(),
        };
        match req.kind {
            k if k.expects_decision() => self
                .script
                .decision_text
                .clone()
                .unwrap_or_else(default_decision),
            RequestKind::BranchScore | RequestKind::StepEstimate => {
                self.script.scores.pop_front().unwrap_or_else(|| {
                    let key = format!("{:?}|{}|{}|{}|{}", req.kind, req.turn, req.branch, req.trace.join("/"), req.context_digest);
                    (fnv(&key) % 3).to_string()
                })
            }
            RequestKind::StepUpdate => match self.script.reduce_on_turn {
                Some((turn, choice)) if turn == req.turn => {
                    format!("Remaining: {}", if choice == AskChoice::Ask { "Ask" } else { "NoAsk" })
                }
                _ => "Remaining: Ask, NoAsk".into(),
            },
            RequestKind::SubQuestionSelect => {
                format!("Selected sub question: Q{}: which candidate fits the hour?", req.turn + 1)
            }
            RequestKind::StepGenerate => "1. compare top scores 2. check routine 3. check budget".into(),
            other => format!("{} turn {} branch {}", other.as_str(), req.turn, req.branch),
        }
    }
}

impl Reasoner for StubReasoner {
    fn respond(&mut self, request: &ReasonerRequest) -> Result<ReasonerResponse, ReasonerError> {
        let text = self.text_for(request);
        Ok(ReasonerResponse::from_text(request.kind, text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn digest(margin: f64) -> String {
        format!("time: day 0 09:00\ntarget: intent\ncandidates: 1:0.5000\nmargin: {margin:.4}\nask_count: 0 budget: 6\nhistory: 0 records; recent confirmed: none")
    }

    #[test]
    fn same_request_same_response() {
        let req = ReasonerRequest::new(RequestKind::BranchScore, &digest(0.5));
        let mut s = StubReasoner::new();
        assert_eq!(s.respond(&req).unwrap(), s.respond(&req).unwrap());
    }

    #[test]
    fn low_margin_asks() {
        let mut s = StubReasoner::new();
        let r = s.respond(&ReasonerRequest::new(RequestKind::SingleDecision, &digest(0.1))).unwrap();
        assert_eq!(r.parsed_decision, Some(AskChoice::Ask));
        let r = s.respond(&ReasonerRequest::new(RequestKind::SingleDecision, &digest(0.6))).unwrap();
        assert_eq!(r.parsed_decision, Some(AskChoice::NoAsk));
    }

    #[test]
    fn scores_are_in_range() {
        let mut s = StubReasoner::new();
        for b in 0..50 {
            let mut req = ReasonerRequest::new(RequestKind::BranchScore, &digest(0.2));
            req.branch = b;
            assert!(s.respond(&req).unwrap().parsed_score.unwrap() <= 2);
        }
    }
}
