//! The per-step ask-or-act loop, the 12-step day, end-of-day training and
//! the four multi-day human/scene settings.

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    AskDecision, ClarificationResponse, ClarifyTarget, HistoryRecord, HumanId, InteractionState,
    Outcome, RetrievedRecord, SceneId, Timestamp, HOURS_PER_DAY,
};
use crate::inference::{
    apply_clarification, filter, generate_and_score, select_action, HeadConfig, InferenceContext,
    InferenceError,
};
use crate::memory::{embed, query_digest, MemoryError, MemoryStore, RetrievalQuery};
use crate::policy::{
    decide, extract_features, fit_supervised, gae_advantages, ppo_update, rl_reward, AskFeatures,
    DecideMode, FeatureContext, L2dConfig, LinearAskPolicy, Objective, PolicyError, PolicyKind,
    RlConfig, SupervisedExample, Transition,
};
use crate::protocols::{
    context_digest, run_proactive_cot, run_single_step, run_tot, run_uot, AskChoice,
    ProtocolConfig, Reasoner, StubReasoner,
};
use crate::world::{
    answer_clarification, judge, render_observation, sample_latent_state, stream, CollabConfig,
    JudgeLabels, LatentHumanState, SceneSpec, World, WorldError, WorldParams,
};

const LATENT_STREAM: u64 = 0x1a7e;
const AGENT_STREAM: u64 = 0xa9e7;
const WORLD_STREAM: u64 = 0x3081d;

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("invalid setting: {0}")]
    Setting(String),
    #[error("unknown {what} {id}")]
    Unknown { what: &'static str, id: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SettingId {
    #[serde(rename = "S1")]
    S1SameHumanSameScene,
    #[serde(rename = "S2")]
    S2SameHumanDiffScene,
    #[serde(rename = "S3")]
    S3DiffHumanSameScene,
    #[serde(rename = "S4")]
    S4DiffHumanDiffScene,
}

impl SettingId {
    pub const ALL: [SettingId; 4] = [
        SettingId::S1SameHumanSameScene,
        SettingId::S2SameHumanDiffScene,
        SettingId::S3DiffHumanSameScene,
        SettingId::S4DiffHumanDiffScene,
    ];

    pub fn short(self) -> &'static str {
        match self {
            SettingId::S1SameHumanSameScene => "S1",
            SettingId::S2SameHumanDiffScene => "S2",
            SettingId::S3DiffHumanSameScene => "S3",
            SettingId::S4DiffHumanDiffScene => "S4",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|id| id.short().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingSpec {
    pub setting_id: SettingId,
    pub num_days: u32,
    pub human_schedule: Vec<HumanId>,
    pub scene_schedule: Vec<SceneId>,
    pub collab: CollabConfig,
}

impl SettingSpec {
    /// Humans 1, 2, 3 rotate in S3/S4; S1/S2 keep human 1.
    pub fn standard(setting_id: SettingId, collab: CollabConfig) -> Self {
        let (num_days, human, scene): (u32, fn(u32) -> u32, fn(u32) -> u32) = match setting_id {
            SettingId::S1SameHumanSameScene => (5, |_| 1, |_| 0),
            SettingId::S2SameHumanDiffScene => (5, |_| 1, |d| d),
            SettingId::S3DiffHumanSameScene => (9, |d| 1 + d % 3, |_| 0),
            SettingId::S4DiffHumanDiffScene => (9, |d| 1 + d % 3, |d| d / 3),
        };
        Self {
            setting_id,
            num_days,
            human_schedule: (0..num_days).map(|d| HumanId(human(d))).collect(),
            scene_schedule: (0..num_days).map(|d| SceneId(scene(d))).collect(),
            collab,
        }
    }

    pub fn validate(&self) -> Result<(), RolloutError> {
        let n = self.num_days as usize;
        if n == 0 || self.human_schedule.len() != n || self.scene_schedule.len() != n {
            return Err(RolloutError::Setting(
                "schedules must have one entry per day and num_days >= 1".into(),
            ));
        }
        let distinct = |v: &[u32]| {
            let mut v = v.to_vec();
            v.sort_unstable();
            v.dedup();
            v.len()
        };
        let humans: Vec<u32> = self.human_schedule.iter().map(|h| h.0).collect();
        let scenes: Vec<u32> = self.scene_schedule.iter().map(|s| s.0).collect();
        let ok = match self.setting_id {
            SettingId::S1SameHumanSameScene => distinct(&humans) == 1 && distinct(&scenes) == 1,
            SettingId::S2SameHumanDiffScene => distinct(&humans) == 1 && distinct(&scenes) > 1,
            SettingId::S3DiffHumanSameScene => distinct(&humans) > 1 && distinct(&scenes) == 1,
            SettingId::S4DiffHumanDiffScene => distinct(&humans) > 1 && distinct(&scenes) > 1,
        };
        if !ok {
            return Err(RolloutError::Setting(format!(
                "schedules do not match {}",
                self.setting_id.short()
            )));
        }
        self.collab.validate()?;
        Ok(())
    }

    /// Day `d` of the rollout, wrapping past the schedule for evaluation days.
    pub fn day_assignment(&self, d: u32) -> (HumanId, SceneId) {
        let i = d as usize % self.human_schedule.len();
        (self.human_schedule[i], self.scene_schedule[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    ZeroShot,
    FewShot,
    ProactiveCot,
    Tot,
    Uot,
}

/// Every ask strategy the agent can run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Never,
    Always,
    Margin { theta: f64 },
    Sft,
    L2d,
    Rl,
    Protocol(ProtocolKind),
}

impl StrategyKind {
    pub fn name(&self) -> String {
        match self {
            StrategyKind::Never => "never".into(),
            StrategyKind::Always => "always".into(),
            StrategyKind::Margin { .. } => "margin".into(),
            StrategyKind::Sft => "sft".into(),
            StrategyKind::L2d => "l2d".into(),
            StrategyKind::Rl => "rl".into(),
            StrategyKind::Protocol(p) => match p {
                ProtocolKind::ZeroShot => "zero_shot",
                ProtocolKind::FewShot => "few_shot",
                ProtocolKind::ProactiveCot => "proactive_cot",
                ProtocolKind::Tot => "tot",
                ProtocolKind::Uot => "uot",
            }
            .into(),
        }
    }

    /// Parses a policy name; `margin` takes its threshold separately.
    pub fn parse(name: &str, margin_theta: f64) -> Option<Self> {
        Some(match name {
            "never" => StrategyKind::Never,
            "always" => StrategyKind::Always,
            "margin" => StrategyKind::Margin { theta: margin_theta },
            "sft" => StrategyKind::Sft,
            "l2d" => StrategyKind::L2d,
            "rl" => StrategyKind::Rl,
            "zero_shot" => StrategyKind::Protocol(ProtocolKind::ZeroShot),
            "few_shot" => StrategyKind::Protocol(ProtocolKind::FewShot),
            "proactive_cot" => StrategyKind::Protocol(ProtocolKind::ProactiveCot),
            "tot" => StrategyKind::Protocol(ProtocolKind::Tot),
            "uot" => StrategyKind::Protocol(ProtocolKind::Uot),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub head: HeadConfig,
    pub retrieval_k: usize,
    pub decay_lambda: f64,
    pub daily_budget: u32,
    pub rl: RlConfig,
    pub l2d: L2dConfig,
    pub protocol: ProtocolConfig,
    pub reset_memory_on_switch: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            head: HeadConfig::default(),
            retrieval_k: 5,
            decay_lambda: 0.95,
            daily_budget: 6,
            rl: RlConfig::default(),
            l2d: L2dConfig::default(),
            protocol: ProtocolConfig::default(),
            reset_memory_on_switch: false,
        }
    }
}

/// Everything the robot carries between steps and days.
pub struct Agent {
    pub config: AgentConfig,
    pub strategy: StrategyKind,
    /// Independent intent and task policies (policy strategies only).
    pub policies: Option<[LinearAskPolicy; 2]>,
    reasoner: Option<Box<dyn Reasoner + Send>>,
    pub memory: MemoryStore,
}

impl Agent {
    /// Protocol strategies get the in-process stub reasoner.
    pub fn new(strategy: StrategyKind, config: AgentConfig) -> Result<Self, RolloutError> {
        Self::with_reasoner(strategy, config, Box::new(StubReasoner::new()))
    }

    pub fn with_reasoner(
        strategy: StrategyKind,
        config: AgentConfig,
        reasoner: Box<dyn Reasoner + Send>,
    ) -> Result<Self, RolloutError> {
        config.head.validate()?;
        config.rl.validate()?;
        config.l2d.validate()?;
        config
            .protocol
            .validate()
            .map_err(|e| RolloutError::Setting(e.to_string()))?;
        if config.retrieval_k == 0 || !(config.decay_lambda > 0.0 && config.decay_lambda <= 1.0) {
            return Err(RolloutError::Setting(
                "retrieval_k must be >= 1 and decay_lambda in (0,1]".into(),
            ));
        }
        let kind = match strategy {
            StrategyKind::Never => Some(PolicyKind::NeverAsk),
            StrategyKind::Always => Some(PolicyKind::AlwaysAsk),
            StrategyKind::Margin { theta } => Some(PolicyKind::MarginThreshold { theta }),
            StrategyKind::Sft => Some(PolicyKind::Sft),
            StrategyKind::L2d => Some(PolicyKind::L2d {
                c_ask: config.l2d.c_ask,
                c_err: config.l2d.c_err,
            }),
            StrategyKind::Rl => Some(PolicyKind::Rl),
            StrategyKind::Protocol(_) => None,
        };
        Ok(Self {
            config,
            strategy,
            policies: kind.map(|k| [LinearAskPolicy::new(k), LinearAskPolicy::new(k)]),
            reasoner: matches!(strategy, StrategyKind::Protocol(_)).then_some(reasoner),
            memory: MemoryStore::new(),
        })
    }

    fn retrieve(&self, state_obs: &crate::domain::Observation, ts: &Timestamp) -> Result<Vec<RetrievedRecord>, RolloutError> {
        if self.memory.is_empty() {
            return Ok(Vec::new());
        }
        let query = RetrievalQuery {
            embedding: embed(&query_digest(state_obs, ts)),
            k: self.config.retrieval_k,
            decay_lambda: self.config.decay_lambda,
        };
        Ok(self
            .memory
            .retrieve(&query, self.memory.next_index())?
            .into_iter()
            .map(|(e, score)| RetrievedRecord {
                insertion_index: e.insertion_index,
                score,
                confirmed_intent: e.record.confirmed_intent(),
                confirmed_task: e.record.confirmed_task(),
            })
            .collect())
    }
}

fn target_index(t: ClarifyTarget) -> usize {
    match t {
        ClarifyTarget::Intent => 0,
        ClarifyTarget::Task => 1,
    }
}

/// One target's ask decision with what training and diagnostics need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetStep {
    pub features: AskFeatures,
    pub decision: AskDecision,
    /// Decision made with zero budget; excluded from training.
    pub forced: bool,
    pub log_prob: Option<f64>,
    pub reward: Option<f64>,
    pub protocol_calls: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub record: HistoryRecord,
    pub judge: JudgeLabels,
    pub latent: LatentHumanState,
    pub intent: TargetStep,
    pub task: TargetStep,
    pub warnings: Vec<String>,
}

impl StepResult {
    pub fn target(&self, t: ClarifyTarget) -> &TargetStep {
        match t {
            ClarifyTarget::Intent => &self.intent,
            ClarifyTarget::Task => &self.task,
        }
    }
}

/// Scene and collaboration settings the step runs in.
#[derive(Debug, Clone, Copy)]
pub struct StepWorld<'a> {
    pub scene: &'a SceneSpec,
    pub collab: &'a CollabConfig,
}

fn decide_target<R: Rng + ?Sized>(
    agent: &mut Agent,
    state: &InteractionState,
    filtered: &crate::domain::CandidateSet,
    features: &AskFeatures,
    budget: u32,
    mode: DecideMode,
    rng: &mut R,
    warnings: &mut Vec<String>,
) -> (AskDecision, Option<f64>, usize) {
    let target = filtered.target;
    if let Some(policies) = &agent.policies {
        let policy = &policies[target_index(target)];
        let d = decide(policy, target, features, budget, mode, rng);
        let lp = (policy.kind == PolicyKind::Rl).then(|| policy.log_prob(features, d.ask));
        return (d, lp, 0);
    }
    let no = AskDecision {
        target,
        ask: false,
        budget_before: budget,
    };
    if budget == 0 {
        return (no, None, 0);
    }
    let StrategyKind::Protocol(kind) = agent.strategy else {
        return (no, None, 0);
    };
    let cfg = agent.config.protocol;
    let digest = context_digest(state, filtered, agent.config.daily_budget - budget.min(agent.config.daily_budget), agent.config.daily_budget);
    let reasoner = agent.reasoner.as_mut().expect("protocol agent has a reasoner");
    let out = match kind {
        ProtocolKind::ZeroShot => run_single_step(reasoner.as_mut(), &digest, false),
        ProtocolKind::FewShot => run_single_step(reasoner.as_mut(), &digest, true),
        ProtocolKind::ProactiveCot => run_proactive_cot(reasoner.as_mut(), &digest, cfg.pcot_turns),
        ProtocolKind::Tot => run_tot(reasoner.as_mut(), &digest, cfg.tot_depth, cfg.tot_branching),
        ProtocolKind::Uot => run_uot(reasoner.as_mut(), &digest, cfg.uot_turns),
    };
    match out {
        Ok(o) => {
            warnings.extend(o.warnings);
            (
                AskDecision {
                    ask: o.decision == AskChoice::Ask,
                    ..no
                },
                None,
                o.calls.count(),
            )
        }
        Err(e) => {
            let msg = format!("protocol failed ({e}); acting without asking");
            warn!("{msg}");
            warnings.push(msg);
            (no, None, 0)
        }
    }
}

/// Runs one interaction step and appends its record to the agent's memory.
/// Returns the result and the remaining budget.
pub fn run_step<R: Rng + ?Sized>(
    world: StepWorld<'_>,
    agent: &mut Agent,
    latent: &LatentHumanState,
    state: &InteractionState,
    budget: u32,
    mode: DecideMode,
    rng: &mut R,
) -> Result<(StepResult, u32), RolloutError> {
    let head = agent.config.head;
    let fctx = FeatureContext {
        daily_budget: agent.config.daily_budget,
        collab_type: world.collab.collab_type,
    };
    let mut budget = budget;
    let mut warnings = Vec::new();
    let mut finals = Vec::with_capacity(2);
    let mut filtered_sets = Vec::with_capacity(2);
    let mut decisions = Vec::with_capacity(2);
    let mut responses = Vec::with_capacity(2);
    let mut target_steps = Vec::with_capacity(2);

    for target in ClarifyTarget::ORDER {
        let ctx = InferenceContext {
            target,
            state,
            conditioning_intents: finals.first(),
        };
        let raw = generate_and_score(&ctx, world.scene, &head)?;
        let filtered = filter(&raw, &head)?;
        let features = extract_features(state, &filtered, budget, &fctx);
        let (decision, log_prob, calls) =
            decide_target(agent, state, &filtered, &features, budget, mode, rng, &mut warnings);
        let response = if decision.ask {
            budget -= 1;
            answer_clarification(latent, target)
        } else {
            ClarificationResponse::absent(target)
        };
        finals.push(apply_clarification(&filtered, &response)?);
        target_steps.push(TargetStep {
            features,
            decision,
            forced: decision.budget_before == 0,
            log_prob,
            reward: None,
            protocol_calls: calls,
        });
        filtered_sets.push(filtered);
        decisions.push(decision);
        responses.push(response);
    }

    let action = select_action(&finals[0], &finals[1]);
    let outcome = Outcome::binary(
        action.intent_label == latent.true_intent,
        action.task_need_label == latent.required_task(),
    );
    let labels = judge(&filtered_sets[0], &filtered_sets[1], &action, latent)?;
    if agent.strategy == StrategyKind::Rl {
        for (t, step) in ClarifyTarget::ORDER.into_iter().zip(target_steps.iter_mut()) {
            step.reward = Some(rl_reward(
                step.decision.ask,
                labels.need_ask(t),
                agent.config.rl.c_ask,
            )?);
        }
    }
    let mut finals = finals.into_iter();
    let record = HistoryRecord {
        state_digest: state.digest(),
        final_intents: finals.next().expect("intent set"),
        final_tasks: finals.next().expect("task set"),
        ask_intent: decisions[0],
        ask_task: decisions[1],
        response_intent: responses[0],
        response_task: responses[1],
        action,
        outcome,
    };
    agent.memory.append(record.clone())?;
    let mut steps = target_steps.into_iter();
    Ok((
        StepResult {
            record,
            judge: labels,
            latent: latent.clone(),
            intent: steps.next().expect("intent step"),
            task: steps.next().expect("task step"),
            warnings,
        },
        budget,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayTrace {
    pub day_index: u32,
    pub human: HumanId,
    pub scene: SceneId,
    pub evaluation: bool,
    pub steps: Vec<StepResult>,
}

impl DayTrace {
    pub fn asks(&self) -> u32 {
        self.steps.iter().map(|s| s.record.asks()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DayPlan {
    pub day_index: u32,
    pub ask_budget: u32,
}

/// Twelve hourly steps. World randomness is keyed by (seed, day) only, so
/// agents run on the same seed face identical humans and observations.
pub fn run_day(
    world: &World,
    agent: &mut Agent,
    plan: DayPlan,
    human: HumanId,
    scene_id: SceneId,
    master_seed: u64,
    mode: DecideMode,
) -> Result<DayTrace, RolloutError> {
    let scene = world.scene(scene_id).ok_or(RolloutError::Unknown {
        what: "scene",
        id: scene_id.0,
    })?;
    // Intent labels are shared by all scenes, so one routine serves every scene.
    let profile = world.profile(human).ok_or(RolloutError::Unknown {
        what: "human",
        id: human.0,
    })?;
    let day = u64::from(plan.day_index);
    let mut world_rng = stream(master_seed, &[LATENT_STREAM, day]);
    let mut agent_rng = stream(master_seed, &[AGENT_STREAM, day]);
    let step_world = StepWorld {
        scene,
        collab: &world.collab,
    };
    let mut budget = plan.ask_budget;
    let mut prev: Option<LatentHumanState> = None;
    let mut steps = Vec::with_capacity(usize::from(HOURS_PER_DAY));
    for hour in 0..HOURS_PER_DAY {
        let ts = Timestamp::new(plan.day_index, hour).with_human(human);
        let latent = sample_latent_state(profile, scene, prev.as_ref(), ts, &mut world_rng)?;
        let observation = render_observation(&latent, scene, &world.collab, &mut world_rng);
        let retrieved = agent.retrieve(&observation, &ts)?;
        let state = InteractionState {
            observation,
            timestamp: ts,
            retrieved_history: retrieved,
            history_len: agent.memory.len(),
        };
        let (result, left) = run_step(step_world, agent, &latent, &state, budget, mode, &mut agent_rng)?;
        budget = left;
        prev = Some(latent);
        steps.push(result);
    }
    Ok(DayTrace {
        day_index: plan.day_index,
        human,
        scene: scene_id,
        evaluation: mode == DecideMode::Eval,
        steps,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UpdateReport {
    pub messages: Vec<String>,
}

fn supervised_examples(days: &[DayTrace], t: ClarifyTarget) -> Vec<SupervisedExample> {
    days.iter()
        .filter(|d| !d.evaluation)
        .flat_map(|d| &d.steps)
        .filter(|s| !s.target(t).forced)
        .map(|s| SupervisedExample {
            features: s.target(t).features,
            label: s.judge.need_ask(t),
        })
        .collect()
}

fn rl_batch(day: &DayTrace, t: ClarifyTarget, policy: &LinearAskPolicy, cfg: &RlConfig) -> Result<Vec<Transition>, PolicyError> {
    let steps: Vec<&TargetStep> = day
        .steps
        .iter()
        .map(|s| s.target(t))
        .filter(|s| !s.forced)
        .collect();
    if steps.is_empty() {
        return Ok(Vec::new());
    }
    let rewards: Vec<f64> = steps.iter().map(|s| s.reward.unwrap_or(0.0)).collect();
    let values: Vec<f64> = steps.iter().map(|s| policy.value(&s.features)).collect();
    let (adv, ret) = gae_advantages(&rewards, &values, cfg.gamma, cfg.gae_lambda)?;
    Ok(steps
        .iter()
        .zip(adv.iter().zip(&ret))
        .map(|(s, (a, r))| Transition {
            features: s.features,
            action: s.decision.ask,
            old_log_prob: s.log_prob.unwrap_or_else(|| policy.log_prob(&s.features, s.decision.ask)),
            advantage: *a,
            ret: *r,
        })
        .collect())
}

/// Trains the agent's policies on the days completed so far. Failures keep
/// the prior policy and are listed in the report.
pub fn end_of_day_update(agent: &mut Agent, days: &[DayTrace]) -> UpdateReport {
    let mut report = UpdateReport::default();
    let Some(policies) = agent.policies.as_mut() else {
        return report;
    };
    for t in ClarifyTarget::ORDER {
        let i = target_index(t);
        let result = match agent.strategy {
            StrategyKind::Sft => fit_supervised(&supervised_examples(days, t), Objective::CrossEntropy),
            StrategyKind::L2d => fit_supervised(
                &supervised_examples(days, t),
                Objective::L2dSurrogate(agent.config.l2d),
            ),
            StrategyKind::Rl => {
                let Some(day) = days.iter().rev().find(|d| !d.evaluation) else {
                    continue;
                };
                rl_batch(day, t, &policies[i], &agent.config.rl)
                    .and_then(|batch| ppo_update(&policies[i], &batch, &agent.config.rl))
            }
            _ => continue,
        };
        match result {
            Ok(p) => policies[i] = p,
            Err(e) => {
                let msg = format!("{t} policy kept: {e}");
                warn!("{msg}");
                report.messages.push(msg);
            }
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutTrace {
    pub setting: SettingSpec,
    pub strategy: String,
    pub master_seed: u64,
    pub days: Vec<DayTrace>,
    pub updates: Vec<UpdateReport>,
}

impl RolloutTrace {
    pub fn records(&self) -> impl Iterator<Item = &HistoryRecord> {
        self.days.iter().flat_map(|d| d.steps.iter().map(|s| &s.record))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RolloutOptions {
    pub world: WorldParams,
    /// Extra greedy-mode days after the schedule, without training.
    pub eval_days: u32,
}

pub fn generate_world(setting: &SettingSpec, params: WorldParams, master_seed: u64) -> Result<World, RolloutError> {
    Ok(World::generate(
        params,
        setting.collab,
        crate::world::derive_seed(master_seed, &[WORLD_STREAM]),
    )?)
}

/// Runs a whole setting; memory persists across days unless the agent's
/// config asks for a reset when the human or scene changes.
pub fn run_setting(
    setting: &SettingSpec,
    mut agent: Agent,
    master_seed: u64,
    options: &RolloutOptions,
) -> Result<(RolloutTrace, Agent), RolloutError> {
    setting.validate()?;
    let world = generate_world(setting, options.world, master_seed)?;
    let mut days = Vec::new();
    let mut updates = Vec::new();
    let mut last: Option<(HumanId, SceneId)> = None;
    for d in 0..setting.num_days + options.eval_days {
        let (human, scene) = setting.day_assignment(d);
        if agent.config.reset_memory_on_switch && last.is_some_and(|l| l != (human, scene)) {
            agent.memory = MemoryStore::starting_at(agent.memory.next_index());
        }
        last = Some((human, scene));
        let training = d < setting.num_days;
        let plan = DayPlan {
            day_index: d,
            ask_budget: agent.config.daily_budget,
        };
        let mode = if training { DecideMode::Train } else { DecideMode::Eval };
        let trace = run_day(&world, &mut agent, plan, human, scene, master_seed, mode)?;
        days.push(trace);
        if training {
            updates.push(end_of_day_update(&mut agent, &days));
        }
    }
    Ok((
        RolloutTrace {
            setting: setting.clone(),
            strategy: agent.strategy.name(),
            master_seed,
            days,
            updates,
        },
        agent,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::validate_history_record;
    use crate::world::CollabType;

    fn collab(sigma: f64) -> CollabConfig {
        CollabConfig {
            collab_type: CollabType::Type2,
            observation_noise_sigma: sigma,
            text_corruption_prob: 0.0,
        }
    }

    fn run(kind: StrategyKind, id: SettingId, sigma: f64, seed: u64, budget: u32) -> RolloutTrace {
        let cfg = AgentConfig {
            daily_budget: budget,
            ..AgentConfig::default()
        };
        let agent = Agent::new(kind, cfg).unwrap();
        run_setting(
            &SettingSpec::standard(id, collab(sigma)),
            agent,
            seed,
            &RolloutOptions::default(),
        )
        .unwrap()
        .0
    }

    #[test]
    fn standard_settings_follow_the_rotation() {
        let s3 = SettingSpec::standard(SettingId::S3DiffHumanSameScene, collab(0.1));
        assert_eq!(s3.num_days, 9);
        let humans: Vec<u32> = s3.human_schedule.iter().map(|h| h.0).collect();
        assert_eq!(humans, [1, 2, 3, 1, 2, 3, 1, 2, 3]);
        let s4 = SettingSpec::standard(SettingId::S4DiffHumanDiffScene, collab(0.1));
        let mut scenes: Vec<u32> = s4.scene_schedule.iter().map(|s| s.0).collect();
        scenes.dedup();
        assert_eq!(scenes.len(), 3);
        for id in SettingId::ALL {
            SettingSpec::standard(id, collab(0.1)).validate().unwrap();
        }
    }

    #[test]
    fn s1_produces_sixty_valid_records() {
        let t = run(StrategyKind::Never, SettingId::S1SameHumanSameScene, 0.3, 1, 6);
        assert_eq!(t.records().count(), 60);
        assert!(t.records().all(|r| validate_history_record(r).is_empty()));
        for r in t.records() {
            assert_eq!(r.asks(), 0);
            assert!(!r.response_intent.is_present() && !r.response_task.is_present());
        }
    }

    #[test]
    fn zero_budget_always_ask_never_asks() {
        let t = run(StrategyKind::Always, SettingId::S1SameHumanSameScene, 0.3, 2, 0);
        assert_eq!(t.records().map(HistoryRecord::asks).sum::<u32>(), 0);
    }

    #[test]
    fn budget_exhaustion_and_clarification_dominance() {
        let t = run(StrategyKind::Always, SettingId::S1SameHumanSameScene, 0.8, 3, 3);
        for day in &t.days {
            assert_eq!(day.asks(), 3);
            for s in &day.steps {
                if s.record.ask_intent.ask && s.record.ask_task.ask {
                    assert!(s.record.outcome.intent_correct && s.record.outcome.task_correct);
                }
            }
            // 3 asks: both at hour 0, intent only at hour 1.
            assert!(day.steps[1].record.ask_intent.ask && !day.steps[1].record.ask_task.ask);
            assert!(day.steps[2..].iter().all(|s| s.record.asks() == 0));
        }
    }

    #[test]
    fn same_seed_same_trace() {
        for kind in [StrategyKind::Rl, StrategyKind::Protocol(ProtocolKind::Uot)] {
            let a = run(kind, SettingId::S4DiffHumanDiffScene, 0.4, 9, 6);
            let b = run(kind, SettingId::S4DiffHumanDiffScene, 0.4, 9, 6);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn paired_runs_share_latent_sequences() {
        let a = run(StrategyKind::Never, SettingId::S2SameHumanDiffScene, 0.4, 4, 6);
        let b = run(StrategyKind::Always, SettingId::S2SameHumanDiffScene, 0.4, 4, 6);
        for (da, db) in a.days.iter().zip(&b.days) {
            for (sa, sb) in da.steps.iter().zip(&db.steps) {
                assert_eq!(sa.latent, sb.latent);
            }
        }
    }

    #[test]
    fn fixed_policies_are_untouched_by_updates() {
        let mut agent = Agent::new(StrategyKind::Never, AgentConfig::default()).unwrap();
        let before = agent.policies.clone();
        let setting = SettingSpec::standard(SettingId::S1SameHumanSameScene, collab(0.3));
        let world = generate_world(&setting, WorldParams::default(), 0).unwrap();
        let day = run_day(&world, &mut agent, DayPlan { day_index: 0, ask_budget: 6 }, HumanId(1), SceneId(0), 0, DecideMode::Train).unwrap();
        let report = end_of_day_update(&mut agent, &[day]);
        assert_eq!(agent.policies, before);
        assert!(report.messages.is_empty());
    }

    #[test]
    fn sft_with_no_examples_keeps_policy() {
        let cfg = AgentConfig {
            daily_budget: 0,
            ..AgentConfig::default()
        };
        let mut agent = Agent::new(StrategyKind::Sft, cfg).unwrap();
        let setting = SettingSpec::standard(SettingId::S1SameHumanSameScene, collab(0.3));
        let world = generate_world(&setting, WorldParams::default(), 0).unwrap();
        let day = run_day(&world, &mut agent, DayPlan { day_index: 0, ask_budget: 0 }, HumanId(1), SceneId(0), 0, DecideMode::Train).unwrap();
        let before = agent.policies.clone();
        let report = end_of_day_update(&mut agent, &[day]);
        assert_eq!(agent.policies, before);
        assert_eq!(report.messages.len(), 2);
    }

    #[test]
    fn rl_update_raises_ask_probability_after_missed_needs() {
        let mut agent = Agent::new(StrategyKind::Rl, AgentConfig::default()).unwrap();
        let setting = SettingSpec::standard(SettingId::S1SameHumanSameScene, collab(0.3));
        let world = generate_world(&setting, WorldParams::default(), 0).unwrap();
        let mut day = run_day(&world, &mut agent, DayPlan { day_index: 0, ask_budget: 6 }, HumanId(1), SceneId(0), 0, DecideMode::Train).unwrap();
        // Rewrite the day as all (NoAsk, needed).
        let policy = agent.policies.as_ref().unwrap()[0].clone();
        for s in &mut day.steps {
            s.intent.decision.ask = false;
            s.intent.forced = false;
            s.intent.log_prob = Some(policy.log_prob(&s.intent.features, false));
            s.intent.reward = Some(-1.0);
        }
        end_of_day_update(&mut agent, std::slice::from_ref(&day));
        let after = &agent.policies.as_ref().unwrap()[0];
        for s in &day.steps {
            assert!(after.prob_ask(&s.intent.features) > policy.prob_ask(&s.intent.features));
        }
    }

    #[test]
    fn memory_reset_flag_clears_history_on_switch() {
        let cfg = AgentConfig {
            reset_memory_on_switch: true,
            ..AgentConfig::default()
        };
        let agent = Agent::new(StrategyKind::Never, cfg).unwrap();
        let setting = SettingSpec::standard(SettingId::S3DiffHumanSameScene, collab(0.3));
        let (trace, agent) = run_setting(&setting, agent, 5, &RolloutOptions::default()).unwrap();
        assert_eq!(trace.records().count(), 108);
        assert_eq!(agent.memory.len(), 12);
        assert_eq!(agent.memory.entries()[0].insertion_index, 96);
    }
}
