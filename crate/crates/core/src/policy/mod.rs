//! Ask-or-act policies over a small hand-built feature vector.

mod rl;
mod supervised;

pub use rl::{
    gae_advantages, ppo_gradient, ppo_objective, ppo_update, rl_reward, RlConfig, Transition,
};
pub use supervised::{fit_supervised, l2d_loss, L2dConfig, Objective, SupervisedExample};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AskDecision, CandidateSet, ClarifyTarget, InteractionState, HOURS_PER_DAY};
use crate::world::CollabType;

pub const N_FEATURES: usize = 10;

/// Day count used to scale `day_index_norm`.
const DAY_SCALE: f64 = 10.0;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("invalid policy config: {0}")]
    Config(String),
    #[error("rewards ({rewards}) and values ({values}) differ in length")]
    LengthMismatch { rewards: usize, values: usize },
    #[error("empty training batch")]
    Empty,
    #[error("non-finite gradient; update skipped")]
    NonFiniteGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AskFeatures {
    pub top_score: f64,
    pub margin: f64,
    pub set_size: usize,
    pub budget_fraction: f64,
    pub hour_norm: f64,
    pub day_index_norm: f64,
    pub history_size_norm: f64,
    pub target_is_task: bool,
    pub collab_type2: bool,
}

impl AskFeatures {
    pub fn to_vec(&self) -> [f64; N_FEATURES] {
        [
            self.top_score,
            self.margin,
            self.set_size as f64,
            self.budget_fraction,
            self.hour_norm,
            self.day_index_norm,
            self.history_size_norm,
            f64::from(u8::from(self.target_is_task)),
            f64::from(u8::from(self.collab_type2)),
            1.0,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureContext {
    pub daily_budget: u32,
    pub collab_type: CollabType,
}

pub fn extract_features(
    state: &InteractionState,
    filtered: &CandidateSet,
    budget: u32,
    ctx: &FeatureContext,
) -> AskFeatures {
    let c = filtered.candidates();
    let top = c.first().map_or(0.0, |c| c.score);
    let second = c.get(1).map_or(0.0, |c| c.score);
    let ts = &state.timestamp;
    AskFeatures {
        top_score: top,
        margin: if c.is_empty() { 0.0 } else { top - second },
        set_size: c.len(),
        budget_fraction: if ctx.daily_budget == 0 {
            0.0
        } else {
            (f64::from(budget) / f64::from(ctx.daily_budget)).min(1.0)
        },
        hour_norm: f64::from(ts.hour_slot) / f64::from(HOURS_PER_DAY - 1),
        day_index_norm: f64::from(ts.day_index) / DAY_SCALE,
        history_size_norm: state.history_len as f64 / (DAY_SCALE * f64::from(HOURS_PER_DAY)),
        target_is_task: filtered.target == ClarifyTarget::Task,
        collab_type2: ctx.collab_type == CollabType::Type2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PolicyKind {
    NeverAsk,
    AlwaysAsk,
    MarginThreshold { theta: f64 },
    Sft,
    L2d { c_ask: f64, c_err: f64 },
    Rl,
}

impl PolicyKind {
    pub fn is_trainable(self) -> bool {
        matches!(self, PolicyKind::Sft | PolicyKind::L2d { .. } | PolicyKind::Rl)
    }
}

/// Whether stochastic policies sample (training days) or act greedily.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecideMode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearAskPolicy {
    pub kind: PolicyKind,
    pub weights: [f64; N_FEATURES],
    pub value_weights: [f64; N_FEATURES],
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn dot(a: &[f64; N_FEATURES], b: &[f64; N_FEATURES]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LinearAskPolicy {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            weights: [0.0; N_FEATURES],
            value_weights: [0.0; N_FEATURES],
        }
    }

    pub fn logit(&self, f: &AskFeatures) -> f64 {
        dot(&self.weights, &f.to_vec())
    }

    pub fn prob_ask(&self, f: &AskFeatures) -> f64 {
        sigmoid(self.logit(f))
    }

    pub fn value(&self, f: &AskFeatures) -> f64 {
        dot(&self.value_weights, &f.to_vec())
    }

    pub fn log_prob(&self, f: &AskFeatures, ask: bool) -> f64 {
        log_prob_from_logit(self.logit(f), ask)
    }
}

/// `ln σ(z)` or `ln(1 − σ(z))` without overflow.
pub(crate) fn log_prob_from_logit(z: f64, ask: bool) -> f64 {
    let s = if ask { z } else { -z };
    // ln σ(s) = -ln(1 + e^{-s})
    if s >= 0.0 {
        -(-s).exp().ln_1p()
    } else {
        s - s.exp().ln_1p()
    }
}

/// The ask decision for one target. A spent budget always yields no ask.
pub fn decide<R: Rng + ?Sized>(
    policy: &LinearAskPolicy,
    target: ClarifyTarget,
    features: &AskFeatures,
    budget: u32,
    mode: DecideMode,
    rng: &mut R,
) -> AskDecision {
    let ask = budget > 0
        && match policy.kind {
            PolicyKind::NeverAsk => false,
            PolicyKind::AlwaysAsk => true,
            PolicyKind::MarginThreshold { theta } => features.margin < theta,
            PolicyKind::Sft => policy.prob_ask(features) > 0.5,
            PolicyKind::L2d { c_ask, c_err } => policy.prob_ask(features) > c_ask / c_err,
            PolicyKind::Rl => {
                let p = policy.prob_ask(features);
                match mode {
                    DecideMode::Train => rng.gen::<f64>() < p,
                    DecideMode::Eval => p > 0.5,
                }
            }
        };
    AskDecision {
        target,
        ask,
        budget_before: budget,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Candidate, Label, Observation, SceneId, Stage, Timestamp};
    use crate::world::stream;
    use proptest::prelude::*;

    fn state(hour: u8, day: u32, history_len: usize) -> InteractionState {
        InteractionState {
            observation: Observation {
                feature_vector: vec![],
                text_label: None,
                scene_id: SceneId(0),
            },
            timestamp: Timestamp::new(day, hour),
            retrieved_history: vec![],
            history_len,
        }
    }

    const CTX: FeatureContext = FeatureContext {
        daily_budget: 6,
        collab_type: CollabType::Type1,
    };

    fn feats(margin: f64) -> AskFeatures {
        AskFeatures {
            top_score: 0.5,
            margin,
            set_size: 3,
            budget_fraction: 1.0,
            hour_norm: 0.0,
            day_index_norm: 0.0,
            history_size_norm: 0.0,
            target_is_task: false,
            collab_type2: false,
        }
    }

    #[test]
    fn degenerate_sets_featurize_to_zero() {
        let empty = CandidateSet::empty(ClarifyTarget::Intent, Stage::Filtered);
        let f = extract_features(&state(0, 0, 0), &empty, 6, &CTX);
        assert_eq!((f.top_score, f.margin, f.set_size), (0.0, 0.0, 0));
        assert_eq!(f.budget_fraction, 1.0);
        let single = CandidateSet::new(
            ClarifyTarget::Task,
            Stage::Filtered,
            vec![Candidate::new(Label(7), 0.6)],
        );
        let f = extract_features(&state(11, 3, 24), &single, 3, &CTX);
        assert_eq!(f.margin, 0.6);
        assert_eq!(f.budget_fraction, 0.5);
        assert_eq!(f.hour_norm, 1.0);
        assert!(f.target_is_task);
        assert_eq!(f.to_vec()[N_FEATURES - 1], 1.0);
    }

    #[test]
    fn decide_rules() {
        let mut rng = stream(0, &[]);
        let d = |p: &LinearAskPolicy, m: f64, b: u32, rng: &mut _| {
            decide(p, ClarifyTarget::Intent, &feats(m), b, DecideMode::Eval, rng).ask
        };
        assert!(!d(&LinearAskPolicy::new(PolicyKind::AlwaysAsk), 0.0, 0, &mut rng));
        assert!(d(&LinearAskPolicy::new(PolicyKind::AlwaysAsk), 0.0, 1, &mut rng));
        let margin = LinearAskPolicy::new(PolicyKind::MarginThreshold { theta: 0.3 });
        assert!(!d(&margin, 0.5, 4, &mut rng));
        assert!(d(&margin, 0.1, 4, &mut rng));

        // Bias weight alone sets the logit to ln(0.3/0.7), i.e. P(ask) = 0.3.
        let mut l2d = LinearAskPolicy::new(PolicyKind::L2d {
            c_ask: 0.2,
            c_err: 1.0,
        });
        l2d.weights[N_FEATURES - 1] = (0.3f64 / 0.7).ln();
        assert!((l2d.prob_ask(&feats(0.5)) - 0.3).abs() < 1e-12);
        assert!(d(&l2d, 0.5, 4, &mut rng));
        let sft = LinearAskPolicy {
            kind: PolicyKind::Sft,
            ..l2d.clone()
        };
        assert!(!d(&sft, 0.5, 4, &mut rng));
    }

    #[test]
    fn rl_samples_in_training_and_is_greedy_in_eval() {
        let mut p = LinearAskPolicy::new(PolicyKind::Rl);
        p.weights[N_FEATURES - 1] = (0.3f64 / 0.7).ln();
        let mut rng = stream(1, &[]);
        let n = 20_000;
        let asks = (0..n)
            .filter(|_| {
                decide(&p, ClarifyTarget::Task, &feats(0.2), 6, DecideMode::Train, &mut rng).ask
            })
            .count();
        let rate = asks as f64 / n as f64;
        assert!((rate - 0.3).abs() < 0.015, "{rate}");
        assert!(!decide(&p, ClarifyTarget::Task, &feats(0.2), 6, DecideMode::Eval, &mut rng).ask);
    }

    #[test]
    fn log_prob_is_stable_and_consistent() {
        for z in [-800.0, -3.0, 0.0, 2.5, 800.0] {
            let (a, n) = (log_prob_from_logit(z, true), log_prob_from_logit(z, false));
            assert!(a.is_finite() && n.is_finite());
            assert!((a.exp() + n.exp() - 1.0).abs() < 1e-12);
        }
        assert!((log_prob_from_logit(0.0, true) - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn policy_serializes_round_trip() {
        let mut p = LinearAskPolicy::new(PolicyKind::L2d {
            c_ask: 0.2,
            c_err: 1.0,
        });
        p.weights[2] = 0.1;
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<LinearAskPolicy>(&s).unwrap(), p);
    }

    fn arb_kind() -> impl Strategy<Value = PolicyKind> {
        prop_oneof![
            Just(PolicyKind::NeverAsk),
            Just(PolicyKind::AlwaysAsk),
            (-1.0f64..2.0).prop_map(|theta| PolicyKind::MarginThreshold { theta }),
            Just(PolicyKind::Sft),
            (0.01f64..0.99).prop_map(|c_ask| PolicyKind::L2d { c_ask, c_err: 1.0 }),
            Just(PolicyKind::Rl),
        ]
    }

    proptest! {
        #[test]
        fn spent_budget_never_asks(
            kind in arb_kind(),
            w in prop::array::uniform10(-50.0f64..50.0),
            margin in -1.0f64..1.0,
            top in 0.0f64..1.0,
            seed in any::<u64>(),
            train in any::<bool>(),
        ) {
            let p = LinearAskPolicy { kind, weights: w, value_weights: [0.0; N_FEATURES] };
            let f = AskFeatures { top_score: top, ..feats(margin) };
            let mode = if train { DecideMode::Train } else { DecideMode::Eval };
            let mut rng = stream(seed, &[]);
            for target in ClarifyTarget::ORDER {
                prop_assert!(!decide(&p, target, &f, 0, mode, &mut rng).ask);
            }
        }
    }
}
