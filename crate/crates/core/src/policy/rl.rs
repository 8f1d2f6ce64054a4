//! Ask reward, generalized advantage estimation and clipped PPO for the
//! linear-logistic ask policy with a linear critic.

use serde::{Deserialize, Serialize};

use super::{dot, log_prob_from_logit, sigmoid, AskFeatures, LinearAskPolicy, PolicyError, N_FEATURES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub c_ask: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub learning_rate: f64,
    pub epochs_per_update: usize,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            c_ask: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            learning_rate: 0.01,
            epochs_per_update: 4,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: &str| Err(PolicyError::Config(m.into()));
        if !(self.c_ask > 0.0 && self.c_ask < 1.0) {
            return bad("c_ask must be in (0,1)");
        }
        if !(self.clip_epsilon > 0.0) {
            return bad("clip_epsilon must be > 0");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must be in [0,1]");
        }
        if !(self.learning_rate > 0.0) || self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return bad("learning_rate must be > 0 and coefficients >= 0");
        }
        Ok(())
    }
}

pub fn rl_reward(asked: bool, needed: bool, c_ask: f64) -> Result<f64, PolicyError> {
    if !(c_ask > 0.0 && c_ask < 1.0) {
        return Err(PolicyError::Config(format!("c_ask {c_ask} outside (0,1)")));
    }
    Ok(match (asked, needed) {
        (false, false) => 1.0,
        (true, true) => 1.0 - c_ask,
        (false, true) => -1.0,
        (true, false) => -c_ask,
    })
}

/// Backward GAE recursion with a terminal bootstrap of zero.
/// Returns `(advantages, returns)` with `returns = advantages + values`.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    gamma: f64,
    gae_lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), PolicyError> {
    if rewards.len() != values.len() {
        return Err(PolicyError::LengthMismatch {
            rewards: rewards.len(),
            values: values.len(),
        });
    }
    if rewards.is_empty() {
        return Err(PolicyError::Empty);
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_v = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next_v - values[t];
        running = delta + gamma * gae_lambda * running;
        adv[t] = running;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub features: AskFeatures,
    pub action: bool,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

/// Summed PPO objective (to be maximized): clipped surrogate minus weighted
/// value error plus weighted entropy.
pub fn ppo_objective(policy: &LinearAskPolicy, batch: &[Transition], cfg: &RlConfig) -> f64 {
    batch
        .iter()
        .map(|t| {
            let f = t.features.to_vec();
            let z = dot(&policy.weights, &f);
            let p = sigmoid(z);
            let r = (log_prob_from_logit(z, t.action) - t.old_log_prob).exp();
            let clipped = r.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
            let surrogate = (r * t.advantage).min(clipped * t.advantage);
            let v = dot(&policy.value_weights, &f);
            let entropy = -(xlnx(p) + xlnx(1.0 - p));
            surrogate - cfg.value_coef * (v - t.ret).powi(2) + cfg.entropy_coef * entropy
        })
        .sum()
}

fn xlnx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Analytic gradient of [`ppo_objective`] with respect to the ask weights and
/// the value weights.
pub fn ppo_gradient(
    policy: &LinearAskPolicy,
    batch: &[Transition],
    cfg: &RlConfig,
) -> ([f64; N_FEATURES], [f64; N_FEATURES]) {
    let mut gw = [0.0; N_FEATURES];
    let mut gv = [0.0; N_FEATURES];
    for t in batch {
        let f = t.features.to_vec();
        let z = dot(&policy.weights, &f);
        let p = sigmoid(z);
        let a = f64::from(u8::from(t.action));
        let r = (log_prob_from_logit(z, t.action) - t.old_log_prob).exp();
        let clipped = r.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
        let unclipped_active = r * t.advantage <= clipped * t.advantage;
        let surrogate = if unclipped_active { r * t.advantage * (a - p) } else { 0.0 };
        let entropy = -p * (1.0 - p) * z;
        let coef = surrogate + cfg.entropy_coef * entropy;
        let v = dot(&policy.value_weights, &f);
        let vcoef = -2.0 * cfg.value_coef * (v - t.ret);
        for k in 0..N_FEATURES {
            gw[k] += coef * f[k];
            gv[k] += vcoef * f[k];
        }
    }
    (gw, gv)
}

/// Runs `epochs_per_update` full-batch gradient-ascent steps. A non-finite
/// gradient aborts the whole update and leaves the caller's policy untouched.
pub fn ppo_update(
    policy: &LinearAskPolicy,
    batch: &[Transition],
    cfg: &RlConfig,
) -> Result<LinearAskPolicy, PolicyError> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(PolicyError::Empty);
    }
    let mut next = policy.clone();
    for _ in 0..cfg.epochs_per_update {
        let (gw, gv) = ppo_gradient(&next, batch, cfg);
        if gw.iter().chain(&gv).any(|g| !g.is_finite()) {
            return Err(PolicyError::NonFiniteGradient);
        }
        for k in 0..N_FEATURES {
            next.weights[k] += cfg.learning_rate * gw[k];
            next.value_weights[k] += cfg.learning_rate * gv[k];
        }
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyKind;
    use crate::world::stream;
    use proptest::prelude::*;
    use rand::Rng;

    fn feats_from(x: &[f64]) -> AskFeatures {
        AskFeatures {
            top_score: x[0],
            margin: x[1],
            set_size: 3,
            budget_fraction: x[2],
            hour_norm: x[3],
            day_index_norm: x[4],
            history_size_norm: x[5],
            target_is_task: x[6] > 0.5,
            collab_type2: x[7] > 0.5,
        }
    }

    #[test]
    fn reward_table() {
        assert_eq!(rl_reward(false, false, 0.2).unwrap(), 1.0);
        assert!((rl_reward(true, true, 0.2).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(rl_reward(false, true, 0.2).unwrap(), -1.0);
        assert_eq!(rl_reward(true, false, 0.2).unwrap(), -0.2);
        assert!(rl_reward(true, false, 1.0).is_err());
        assert!(rl_reward(true, false, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn reward_ordering(c in 1e-6f64..(1.0 - 1e-6)) {
            let r = |a, n| rl_reward(a, n, c).unwrap();
            prop_assert!(r(false, false) > r(true, true));
            prop_assert!(r(true, true) > r(true, false));
            prop_assert!(r(true, false) > r(false, true));
        }

        #[test]
        fn gae_matches_explicit_expansion(
            pairs in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..=10),
            gamma in 0.0f64..=1.0,
            lambda in 0.0f64..=1.0,
        ) {
            let (r, v): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let (adv, ret) = gae_advantages(&r, &v, gamma, lambda).unwrap();
            let n = r.len();
            let vv = |t: usize| if t < n { v[t] } else { 0.0 };
            for t in 0..n {
                let mut expected = 0.0;
                for l in 0..(n - t) {
                    let delta = r[t + l] + gamma * vv(t + l + 1) - vv(t + l);
                    expected += (gamma * lambda).powi(l as i32) * delta;
                }
                prop_assert!((adv[t] - expected).abs() < 1e-9);
                prop_assert!((ret[t] - (adv[t] + v[t])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gae_special_cases() {
        let r = [1.0, -0.5, 2.0, 0.25];
        let (adv, _) = gae_advantages(&r, &[0.0; 4], 1.0, 1.0).unwrap();
        assert_eq!(adv, vec![2.75, 1.75, 2.25, 0.25]);
        let v = [0.3, -0.1, 0.7, 0.2];
        let (adv, _) = gae_advantages(&r, &v, 0.9, 0.0).unwrap();
        for t in 0..4 {
            let next = if t < 3 { v[t + 1] } else { 0.0 };
            assert!((adv[t] - (r[t] + 0.9 * next - v[t])).abs() < 1e-12);
        }
        assert!(matches!(
            gae_advantages(&r, &v[..3], 0.9, 0.9),
            Err(PolicyError::LengthMismatch { .. })
        ));
    }

    fn random_case(seed: u64) -> (LinearAskPolicy, Vec<Transition>) {
        let mut rng = stream(seed, &[7]);
        let mut p = LinearAskPolicy::new(PolicyKind::Rl);
        for k in 0..N_FEATURES {
            p.weights[k] = rng.gen_range(-1.0..1.0);
            p.value_weights[k] = rng.gen_range(-1.0..1.0);
        }
        let batch = (0..12)
            .map(|_| {
                let x: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..1.0)).collect();
                let features = feats_from(&x);
                let action = rng.gen_bool(0.5);
                // Old log-prob drawn around the current one so ratios span both clip sides.
                let old_log_prob = p.log_prob(&features, action) + rng.gen_range(-0.6..0.6);
                Transition {
                    features,
                    action,
                    old_log_prob,
                    advantage: rng.gen_range(-2.0..2.0),
                    ret: rng.gen_range(-2.0..2.0),
                }
            })
            .collect();
        (p, batch)
    }

    fn central_difference(
        p: &LinearAskPolicy,
        batch: &[Transition],
        cfg: &RlConfig,
        value: bool,
        k: usize,
    ) -> f64 {
        let h = 1e-6;
        let mut plus = p.clone();
        let mut minus = p.clone();
        if value {
            plus.value_weights[k] += h;
            minus.value_weights[k] -= h;
        } else {
            plus.weights[k] += h;
            minus.weights[k] -= h;
        }
        (ppo_objective(&plus, batch, cfg) - ppo_objective(&minus, batch, cfg)) / (2.0 * h)
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let cfg = RlConfig {
            entropy_coef: 0.05,
            ..RlConfig::default()
        };
        for seed in 0..20 {
            let (p, batch) = random_case(seed);
            let (gw, gv) = ppo_gradient(&p, &batch, &cfg);
            for k in 0..N_FEATURES {
                for (analytic, value) in [(gw[k], false), (gv[k], true)] {
                    let fd = central_difference(&p, &batch, &cfg, value, k);
                    let rel = (analytic - fd).abs() / fd.abs().max(1.0);
                    assert!(rel < 1e-5, "seed {seed} k {k} value {value}: {analytic} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn clipped_branch_has_zero_surrogate_gradient() {
        let cfg = RlConfig {
            entropy_coef: 0.0,
            value_coef: 0.0,
            ..RlConfig::default()
        };
        let p = LinearAskPolicy::new(PolicyKind::Rl);
        let features = feats_from(&[0.4, 0.1, 1.0, 0.5, 0.2, 0.1, 0.0, 0.0]);
        // Ratio = exp(0.5) > 1.2 with a positive advantage.
        let t = Transition {
            features,
            action: true,
            old_log_prob: p.log_prob(&features, true) - 0.5,
            advantage: 1.5,
            ret: 0.0,
        };
        let (gw, _) = ppo_gradient(&p, &[t], &cfg);
        for k in 0..N_FEATURES {
            let fd = central_difference(&p, &[t], &cfg, false, k);
            assert!(gw[k].abs() < 1e-12 && fd.abs() < 1e-5, "{k}: {} {fd}", gw[k]);
        }
    }

    #[test]
    fn zero_advantage_leaves_ask_weights_unchanged() {
        let cfg = RlConfig {
            entropy_coef: 0.0,
            ..RlConfig::default()
        };
        let (p, mut batch) = random_case(3);
        batch.iter_mut().for_each(|t| t.advantage = 0.0);
        let next = ppo_update(&p, &batch, &cfg).unwrap();
        assert_eq!(next.weights, p.weights);
        assert_ne!(next.value_weights, p.value_weights);
    }

    #[test]
    fn positive_advantage_on_asks_raises_ask_probability() {
        let p = LinearAskPolicy::new(PolicyKind::Rl);
        let batch: Vec<Transition> = (0..8)
            .map(|i| {
                let features = feats_from(&[0.3, 0.05 * i as f64, 1.0, i as f64 / 11.0, 0.0, 0.0, 0.0, 0.0]);
                Transition {
                    features,
                    action: true,
                    old_log_prob: p.log_prob(&features, true),
                    advantage: 0.8,
                    ret: 0.8,
                }
            })
            .collect();
        let next = ppo_update(&p, &batch, &RlConfig::default()).unwrap();
        for t in &batch {
            assert!(next.prob_ask(&t.features) > p.prob_ask(&t.features));
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let (p, mut batch) = random_case(5);
        batch[0].ret = f64::NAN;
        assert_eq!(
            ppo_update(&p, &batch, &RlConfig::default()),
            Err(PolicyError::NonFiniteGradient)
        );
        assert_eq!(ppo_update(&p, &[], &RlConfig::default()), Err(PolicyError::Empty));
    }
}
