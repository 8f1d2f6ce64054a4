use std::time::Instant;

use log::warn;

use super::{
    few_shot_exemplars, mentioned_choices, AskChoice, CallLog, ProtocolConfig, ProtocolError,
    Reasoner, ReasonerRequest, ReasonerResponse, RequestKind,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolOutcome {
    pub decision: AskChoice,
    pub calls: CallLog,
    pub warnings: Vec<String>,
}

struct Session<'a, R: Reasoner + ?Sized> {
    reasoner: &'a mut R,
    digest: &'a str,
    log: CallLog,
    warnings: Vec<String>,
}

impl<'a, R: Reasoner + ?Sized> Session<'a, R> {
    fn new(reasoner: &'a mut R, digest: &'a str) -> Self {
        Self {
            reasoner,
            digest,
            log: CallLog::default(),
            warnings: Vec::new(),
        }
    }

    fn call(
        &mut self,
        kind: RequestKind,
        trace: &[String],
        turn: usize,
        branch: usize,
    ) -> Result<ReasonerResponse, ProtocolError> {
        let mut req = ReasonerRequest::new(kind, self.digest);
        req.trace = trace.to_vec();
        req.turn = turn;
        req.branch = branch;
        self.send(req)
    }

    fn send(&mut self, req: ReasonerRequest) -> Result<ReasonerResponse, ProtocolError> {
        let start = Instant::now();
        let out = self.reasoner.respond(&req);
        self.log
            .calls
            .push((req.kind, start.elapsed().as_secs_f64() * 1e3));
        out.map_err(|source| ProtocolError::Reasoner {
            kind: req.kind,
            source,
        })
    }

    fn decision_of(&mut self, resp: &ReasonerResponse) -> AskChoice {
        resp.parsed_decision.unwrap_or_else(|| {
            let msg = format!("unparseable decision {:?}; defaulting to NoAsk", resp.text);
            warn!("{msg}");
            self.warnings.push(msg);
            AskChoice::NoAsk
        })
    }

    fn score_of(&mut self, resp: &ReasonerResponse) -> u8 {
        resp.parsed_score.unwrap_or_else(|| {
            let msg = format!("score {:?} outside 0..=2; treated as 0", resp.text);
            warn!("{msg}");
            self.warnings.push(msg);
            0
        })
    }

    fn finish(self, decision: AskChoice) -> ProtocolOutcome {
        ProtocolOutcome {
            decision,
            calls: self.log,
            warnings: self.warnings,
        }
    }
}

/// One reasoner call; few-shot prepends one acting and one asking demonstration.
pub fn run_single_step<R: Reasoner + ?Sized>(
    reasoner: &mut R,
    digest: &str,
    few_shot: bool,
) -> Result<ProtocolOutcome, ProtocolError> {
    let mut s = Session::new(reasoner, digest);
    let mut req = ReasonerRequest::new(RequestKind::SingleDecision, digest);
    if few_shot {
        req.exemplars = few_shot_exemplars();
    }
    let resp = s.send(req)?;
    let d = s.decision_of(&resp);
    Ok(s.finish(d))
}

/// `turns` rounds of select-then-solve a sub-question, then one summary.
pub fn run_proactive_cot<R: Reasoner + ?Sized>(
    reasoner: &mut R,
    digest: &str,
    turns: usize,
) -> Result<ProtocolOutcome, ProtocolError> {
    if turns == 0 {
        return Err(ProtocolError::Config("turns must be >= 1".into()));
    }
    let mut s = Session::new(reasoner, digest);
    let mut trace = Vec::new();
    for t in 0..turns {
        let q = s.call(RequestKind::SubQuestionSelect, &trace, t, 0)?;
        trace.push(q.text);
        let a = s.call(RequestKind::SubQuestionSolve, &trace, t, 0)?;
        trace.push(a.text);
    }
    let resp = s.call(RequestKind::Summarize, &trace, turns, 0)?;
    let d = s.decision_of(&resp);
    Ok(s.finish(d))
}

/// Breadth-`branching` search kept to its best branch per level, `depth` levels.
pub fn run_tot<R: Reasoner + ?Sized>(
    reasoner: &mut R,
    digest: &str,
    depth: usize,
    branching: usize,
) -> Result<ProtocolOutcome, ProtocolError> {
    if depth == 0 || branching == 0 {
        return Err(ProtocolError::Config("depth and branching must be >= 1".into()));
    }
    let mut s = Session::new(reasoner, digest);
    let mut path: Vec<String> = Vec::new();
    for d in 0..depth {
        let mut best: Option<(u8, String)> = None;
        for b in 0..branching {
            let expansion = s.call(RequestKind::BranchExpand, &path, d, b)?.text;
            let mut branch_path = path.clone();
            branch_path.push(expansion.clone());
            let analysis = s.call(RequestKind::BranchAnalyze, &branch_path, d, b)?.text;
            branch_path.push(analysis);
            let resp = s.call(RequestKind::BranchScore, &branch_path, d, b)?;
            let score = s.score_of(&resp);
            if best.as_ref().is_none_or(|(bs, _)| score > *bs) {
                best = Some((score, expansion));
            }
        }
        path.push(best.expect("branching >= 1").1);
    }
    let resp = s.call(RequestKind::Summarize, &path, depth, 0)?;
    let d = s.decision_of(&resp);
    Ok(s.finish(d))
}

/// Uncertainty-driven narrowing of {Ask, NoAsk}; stops as soon as one remains.
pub fn run_uot<R: Reasoner + ?Sized>(
    reasoner: &mut R,
    digest: &str,
    turns: usize,
) -> Result<ProtocolOutcome, ProtocolError> {
    if turns == 0 {
        return Err(ProtocolError::Config("turns must be >= 1".into()));
    }
    let mut s = Session::new(reasoner, digest);
    let mut remaining = vec![AskChoice::Ask, AskChoice::NoAsk];
    let mut trace = Vec::new();
    for t in 0..turns {
        let plan = s.call(RequestKind::StepGenerate, &trace, t, 0)?.text;
        trace.push(plan);
        let mut best: Option<(u8, usize, String)> = None;
        for c in 0..ProtocolConfig::UOT_CANDIDATES_PER_TURN {
            let sim = s.call(RequestKind::StepSimulate, &trace, t, c)?.text;
            let mut sim_trace = trace.clone();
            sim_trace.push(sim.clone());
            let resp = s.call(RequestKind::StepEstimate, &sim_trace, t, c)?;
            let gain = s.score_of(&resp);
            if best.as_ref().is_none_or(|(bg, _, _)| gain > *bg) {
                best = Some((gain, c, sim));
            }
        }
        let (_, chosen, sim) = best.expect("three candidate steps");
        trace.push(sim);
        let executed = s.call(RequestKind::StepExecute, &trace, t, chosen)?.text;
        trace.push(executed);
        let update = s.call(RequestKind::StepUpdate, &trace, t, chosen)?;
        let found = mentioned_choices(&update.text);
        let narrowed: Vec<AskChoice> = remaining.iter().copied().filter(|c| found.contains(c)).collect();
        if narrowed.is_empty() {
            let msg = format!("update {:?} names no remaining option; set unchanged", update.text);
            warn!("{msg}");
            s.warnings.push(msg);
        } else {
            remaining = narrowed;
        }
        trace.push(update.text);
        if let [only] = remaining.as_slice() {
            let only = *only;
            return Ok(s.finish(only));
        }
    }
    let resp = s.call(RequestKind::Resolve, &trace, turns, 0)?;
    let d = s.decision_of(&resp);
    Ok(s.finish(d))
}
