//! Simulated household: scenes, profile-conditioned humans, observation
//! rendering, the clarification responder and the offline judge.
//!
//! All randomness flows through explicitly passed ChaCha generators whose
//! seeds are derived with [`derive_seed`], so independent streams (per
//! rollout, per day, per agent) never interfere with each other.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    AssistanceAction, CandidateSet, ClarificationResponse, ClarifyTarget, HumanId, Label,
    Observation, SceneId, Stage, Timestamp, HOURS_PER_DAY,
};

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("hour_slot {0} out of range 0..=11")]
    HourOutOfRange(u8),
    #[error("judge expects {expected} candidate sets, got {got}")]
    StageMismatch { expected: &'static str, got: &'static str },
    #[error("unknown intent {0}")]
    UnknownIntent(Label),
}

/// SplitMix64 finalizer used to derive independent stream seeds.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a path of stream tags.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix(master), |acc, &t| splitmix(acc ^ splitmix(t)))
}

const PROFILE_STREAM: u64 = 1;

pub fn stream(master: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tags))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollabType {
    /// Three pick-and-place tasks per intent; the observation carries a text label.
    Type1,
    /// Five free-form tasks per intent; no text guidance.
    Type2,
}

impl CollabType {
    pub fn tasks_per_intent(self) -> usize {
        match self {
            CollabType::Type1 => 3,
            CollabType::Type2 => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollabConfig {
    pub collab_type: CollabType,
    pub observation_noise_sigma: f64,
    /// Probability that the text label names a distractor (type 1 only).
    pub text_corruption_prob: f64,
}

pub const HIGH_NOISE_SIGMA: f64 = 1.5;
pub const LOW_NOISE_SIGMA: f64 = 0.05;

impl CollabConfig {
    pub fn high_noise(collab_type: CollabType) -> Self {
        Self {
            collab_type,
            observation_noise_sigma: HIGH_NOISE_SIGMA,
            text_corruption_prob: if collab_type == CollabType::Type1 { 0.3 } else { 0.0 },
        }
    }

    pub fn low_noise(collab_type: CollabType) -> Self {
        Self {
            collab_type,
            observation_noise_sigma: LOW_NOISE_SIGMA,
            text_corruption_prob: if collab_type == CollabType::Type1 { 0.05 } else { 0.0 },
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if !(self.observation_noise_sigma >= 0.0 && self.observation_noise_sigma.is_finite()) {
            return Err(WorldError::Config(
                "observation_noise_sigma must be finite and >= 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.text_corruption_prob) {
            return Err(WorldError::Config(
                "text_corruption_prob must lie in [0,1]".into(),
            ));
        }
        Ok(())
    }
}

/// Sizes of the generated world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldParams {
    pub n_scenes: usize,
    pub n_profiles: usize,
    pub n_intents: usize,
    pub feature_dim: usize,
    /// Number of distinct task needs that intents draw their decompositions from.
    pub task_pool: usize,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            n_scenes: 5,
            n_profiles: 10,
            n_intents: 24,
            feature_dim: 16,
            task_pool: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentEntry {
    pub label: Label,
    /// Unit-norm prototype feature vector.
    pub prototype: Vec<f64>,
    /// Ordered task decomposition; index 0 is the task the human performs first.
    pub tasks: Vec<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scene_id: SceneId,
    pub collab_type: CollabType,
    pub feature_dim: usize,
    /// Indexed by intent label.
    pub intents: Vec<IntentEntry>,
    pub distractor_labels: Vec<Label>,
}

impl SceneSpec {
    /// Generates a scene. Intent labels `0..n_intents` are shared across
    /// scenes; prototypes and task decompositions are scene-specific.
    pub fn generate(
        scene_id: SceneId,
        seed: u64,
        collab_type: CollabType,
        params: &WorldParams,
    ) -> Result<Self, WorldError> {
        let per_intent = collab_type.tasks_per_intent();
        if params.n_intents == 0 {
            return Err(WorldError::Config("intent catalog is empty".into()));
        }
        if params.feature_dim == 0 {
            return Err(WorldError::Config("feature_dim must be >= 1".into()));
        }
        if params.task_pool < per_intent {
            return Err(WorldError::Config(format!(
                "task_pool {} smaller than {per_intent} tasks per intent",
                params.task_pool
            )));
        }
        let mut rng = stream(seed, &[0x5ce9e, u64::from(scene_id.0)]);
        let intents = (0..params.n_intents)
            .map(|i| {
                let mut prototype: Vec<f64> = (0..params.feature_dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                let norm = prototype.iter().map(|x| x * x).sum::<f64>().sqrt();
                prototype.iter_mut().for_each(|x| *x /= norm);
                let tasks = sample(&mut rng, params.task_pool, per_intent)
                    .into_iter()
                    .map(|t| Label(t as u32))
                    .collect();
                IntentEntry {
                    label: Label(i as u32),
                    prototype,
                    tasks,
                }
            })
            .collect();
        Ok(Self {
            scene_id,
            collab_type,
            feature_dim: params.feature_dim,
            intents,
            distractor_labels: (0..params.n_intents as u32).map(Label).collect(),
        })
    }

    pub fn intent(&self, label: Label) -> Option<&IntentEntry> {
        self.intents.get(label.0 as usize).filter(|e| e.label == label)
    }

    pub fn n_intents(&self) -> usize {
        self.intents.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanProfile {
    pub human_id: HumanId,
    /// Big-Five analog traits in `[0,1]`.
    pub traits: [f64; 5],
    /// 12 x M row-stochastic matrix: hour slot -> intent distribution.
    pub routine: Vec<Vec<f64>>,
    /// Probability of continuing the previous intent within a day.
    pub persistence: f64,
    pub seed: u64,
}

/// Generates a profile deterministically from `seed`.
///
/// Traits are uniform on `[0,1]^5`. Persistence maps the conscientiousness
/// analog (trait index 3) onto `[0.3, 0.8]`. Routine rows are softmaxes of an
/// hour-autocorrelated Gaussian field whose sharpness shrinks with openness
/// (trait index 0).
pub fn generate_profile(
    human_id: HumanId,
    seed: u64,
    scene: &SceneSpec,
    config: &CollabConfig,
) -> Result<HumanProfile, WorldError> {
    config.validate()?;
    let m = scene.n_intents();
    if m == 0 {
        return Err(WorldError::Config("intent catalog is empty".into()));
    }
    let mut rng = stream(seed, &[PROFILE_STREAM]);
    let mut traits = [0.0; 5];
    for t in traits.iter_mut() {
        *t = rng.gen::<f64>();
    }
    let sharpness = 1.5 + 2.5 * (1.0 - traits[0]);
    let mut field: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut routine = Vec::with_capacity(usize::from(HOURS_PER_DAY));
    for _ in 0..HOURS_PER_DAY {
        for z in field.iter_mut() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            *z = 0.6 * *z + 0.8 * eps;
        }
        routine.push(softmax(field.iter().map(|z| sharpness * z)));
    }
    Ok(HumanProfile {
        human_id,
        traits,
        routine,
        persistence: 0.3 + 0.5 * traits[3],
        seed,
    })
}

fn softmax(logits: impl Iterator<Item = f64> + Clone) -> Vec<f64> {
    let max = logits.clone().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Ground truth the robot never sees directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentHumanState {
    pub true_intent: Label,
    pub true_tasks: Vec<Label>,
    /// Task the robot observes being performed (always the first).
    pub revealed_task_index: usize,
    pub timestamp: Timestamp,
}

impl LatentHumanState {
    /// The task need the robot must supply: the first task it has not observed.
    pub fn required_task(&self) -> Label {
        self.true_tasks
            .get(self.revealed_task_index + 1)
            .copied()
            .unwrap_or(Label::ABSTAIN)
    }
}

/// Samples the human's latent state for the step at `ts`.
///
/// Within a day the previous intent persists with probability equal to the
/// profile's persistence; otherwise the intent is drawn from the routine row
/// for the hour. The first slot of a day ignores `prev`.
pub fn sample_latent_state<R: Rng + ?Sized>(
    profile: &HumanProfile,
    scene: &SceneSpec,
    prev: Option<&LatentHumanState>,
    ts: Timestamp,
    rng: &mut R,
) -> Result<LatentHumanState, WorldError> {
    if !ts.is_valid() {
        return Err(WorldError::HourOutOfRange(ts.hour_slot));
    }
    let carried = prev.filter(|p| ts.hour_slot > 0 && p.timestamp.day_index == ts.day_index);
    let true_intent = match carried {
        Some(p) if rng.gen::<f64>() < profile.persistence => p.true_intent,
        _ => {
            let row = &profile.routine[usize::from(ts.hour_slot)];
            Label(sample_categorical(row, rng) as u32)
        }
    };
    let entry = scene
        .intent(true_intent)
        .ok_or(WorldError::UnknownIntent(true_intent))?;
    Ok(LatentHumanState {
        true_intent,
        true_tasks: entry.tasks.clone(),
        revealed_task_index: 0,
        timestamp: ts,
    })
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Renders the noisy observation of the human's ongoing behavior.
pub fn render_observation<R: Rng + ?Sized>(
    latent: &LatentHumanState,
    scene: &SceneSpec,
    config: &CollabConfig,
    rng: &mut R,
) -> Observation {
    let entry = scene
        .intent(latent.true_intent)
        .expect("latent intent comes from the scene catalog");
    let feature_vector = if config.observation_noise_sigma > 0.0 {
        let noise = Normal::new(0.0, config.observation_noise_sigma).expect("finite sigma");
        entry
            .prototype
            .iter()
            .map(|x| x + noise.sample(rng))
            .collect()
    } else {
        entry.prototype.clone()
    };
    let text_label = match config.collab_type {
        CollabType::Type2 => None,
        CollabType::Type1 => {
            let corrupt = rng.gen::<f64>() < config.text_corruption_prob;
            let others: Vec<Label> = scene
                .distractor_labels
                .iter()
                .copied()
                .filter(|l| *l != latent.true_intent)
                .collect();
            if corrupt && !others.is_empty() {
                Some(others[rng.gen_range(0..others.len())])
            } else {
                Some(latent.true_intent)
            }
        }
    };
    Observation {
        feature_vector,
        text_label,
        scene_id: scene.scene_id,
    }
}

/// The simulated human's answer to a clarification question.
pub fn answer_clarification(latent: &LatentHumanState, target: ClarifyTarget) -> ClarificationResponse {
    let payload = match target {
        ClarifyTarget::Intent => latent.true_intent,
        ClarifyTarget::Task => latent.required_task(),
    };
    ClarificationResponse {
        target,
        payload: Some(payload),
    }
}

/// Offline supervision produced after each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeLabels {
    pub intent_approved: bool,
    pub task_approved: bool,
    pub need_ask_intent: bool,
    pub need_ask_task: bool,
}

impl JudgeLabels {
    pub fn need_ask(&self, target: ClarifyTarget) -> bool {
        match target {
            ClarifyTarget::Intent => self.need_ask_intent,
            ClarifyTarget::Task => self.need_ask_task,
        }
    }
}

/// Labels a step from the pre-clarification filtered sets and the executed action.
pub fn judge(
    filtered_intents: &CandidateSet,
    filtered_tasks: &CandidateSet,
    final_action: &AssistanceAction,
    latent: &LatentHumanState,
) -> Result<JudgeLabels, WorldError> {
    for set in [filtered_intents, filtered_tasks] {
        if set.stage != Stage::Filtered {
            return Err(WorldError::StageMismatch {
                expected: Stage::Filtered.as_str(),
                got: set.stage.as_str(),
            });
        }
    }
    let required = latent.required_task();
    Ok(JudgeLabels {
        intent_approved: final_action.intent_label == latent.true_intent,
        task_approved: final_action.task_need_label == required,
        need_ask_intent: !filtered_intents.contains(latent.true_intent),
        need_ask_task: !filtered_tasks.contains(required),
    })
}

/// Scenes and humans for one rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub params: WorldParams,
    pub collab: CollabConfig,
    pub scenes: Vec<SceneSpec>,
    pub profiles: Vec<HumanProfile>,
}

impl World {
    pub fn generate(params: WorldParams, collab: CollabConfig, seed: u64) -> Result<Self, WorldError> {
        collab.validate()?;
        if params.n_scenes == 0 || params.n_profiles == 0 {
            return Err(WorldError::Config(
                "world needs at least one scene and one profile".into(),
            ));
        }
        let scenes = (0..params.n_scenes as u32)
            .map(|s| SceneSpec::generate(SceneId(s), seed, collab.collab_type, &params))
            .collect::<Result<Vec<_>, _>>()?;
        let profiles = (0..params.n_profiles as u32)
            .map(|h| {
                generate_profile(
                    HumanId(h),
                    derive_seed(seed, &[0x4u64, u64::from(h)]),
                    &scenes[0],
                    &collab,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            params,
            collab,
            scenes,
            profiles,
        })
    }

    pub fn scene(&self, id: SceneId) -> Option<&SceneSpec> {
        self.scenes.get(id.0 as usize)
    }

    pub fn profile(&self, id: HumanId) -> Option<&HumanProfile> {
        self.profiles.get(id.0 as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Candidate;

    fn collab(t: CollabType, sigma: f64, corruption: f64) -> CollabConfig {
        CollabConfig {
            collab_type: t,
            observation_noise_sigma: sigma,
            text_corruption_prob: corruption,
        }
    }

    fn scene(t: CollabType) -> SceneSpec {
        SceneSpec::generate(SceneId(0), 11, t, &WorldParams::default()).unwrap()
    }

    #[test]
    fn scene_shapes_follow_collaboration_type() {
        for t in [CollabType::Type1, CollabType::Type2] {
            let s = scene(t);
            assert_eq!(s.n_intents(), 24);
            for e in &s.intents {
                assert_eq!(e.tasks.len(), t.tasks_per_intent());
                assert_eq!(e.prototype.len(), 16);
                let n: f64 = e.prototype.iter().map(|x| x * x).sum();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn profiles_are_deterministic_and_stochastic() {
        let s = scene(CollabType::Type2);
        let c = collab(CollabType::Type2, 0.1, 0.0);
        let a = generate_profile(HumanId(0), 42, &s, &c).unwrap();
        let b = generate_profile(HumanId(0), 42, &s, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.routine.len(), 12);
        for row in &a.routine {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|p| *p >= 0.0));
        }
        assert!((0.3..=0.8).contains(&a.persistence));
    }

    #[test]
    fn empty_catalog_is_a_configuration_error() {
        let mut s = scene(CollabType::Type1);
        s.intents.clear();
        let c = collab(CollabType::Type1, 0.1, 0.0);
        assert!(matches!(
            generate_profile(HumanId(0), 1, &s, &c),
            Err(WorldError::Config(_))
        ));
    }

    #[test]
    fn trait_spread_across_ten_profiles() {
        let s = scene(CollabType::Type1);
        let c = collab(CollabType::Type1, 0.1, 0.0);
        let profiles: Vec<_> = (0..10)
            .map(|seed| generate_profile(HumanId(seed as u32), seed, &s, &c).unwrap())
            .collect();
        for k in 0..5 {
            let xs: Vec<f64> = profiles.iter().map(|p| p.traits[k]).collect();
            let mean = xs.iter().sum::<f64>() / 10.0;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 9.0;
            assert!(var.sqrt() > 0.15, "trait {k} sd {}", var.sqrt());
        }
    }

    #[test]
    fn full_persistence_keeps_previous_intent() {
        let s = scene(CollabType::Type1);
        let c = collab(CollabType::Type1, 0.1, 0.0);
        let mut p = generate_profile(HumanId(0), 3, &s, &c).unwrap();
        p.persistence = 1.0;
        let mut rng = stream(5, &[]);
        let first = sample_latent_state(&p, &s, None, Timestamp::new(0, 0), &mut rng).unwrap();
        let mut prev = first.clone();
        for h in 1..12 {
            let next = sample_latent_state(&p, &s, Some(&prev), Timestamp::new(0, h), &mut rng).unwrap();
            assert_eq!(next.true_intent, first.true_intent);
            assert_eq!(next.true_tasks, s.intent(first.true_intent).unwrap().tasks);
            prev = next;
        }
    }

    #[test]
    fn zero_persistence_follows_routine_row() {
        let s = scene(CollabType::Type1);
        let c = collab(CollabType::Type1, 0.1, 0.0);
        let mut p = generate_profile(HumanId(0), 9, &s, &c).unwrap();
        p.persistence = 0.0;
        let mut rng = stream(77, &[]);
        let prev = sample_latent_state(&p, &s, None, Timestamp::new(0, 3), &mut rng).unwrap();
        let n = 10_000;
        let mut counts = vec![0usize; s.n_intents()];
        for _ in 0..n {
            let l = sample_latent_state(&p, &s, Some(&prev), Timestamp::new(0, 4), &mut rng).unwrap();
            counts[l.true_intent.0 as usize] += 1;
        }
        let tv: f64 = counts
            .iter()
            .zip(&p.routine[4])
            .map(|(c, q)| (*c as f64 / n as f64 - q).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.03, "total variation {tv}");
    }

    #[test]
    fn hour_twelve_is_rejected() {
        let s = scene(CollabType::Type1);
        let c = collab(CollabType::Type1, 0.1, 0.0);
        let p = generate_profile(HumanId(0), 1, &s, &c).unwrap();
        let mut rng = stream(1, &[]);
        assert_eq!(
            sample_latent_state(&p, &s, None, Timestamp::new(0, 12), &mut rng),
            Err(WorldError::HourOutOfRange(12))
        );
    }

    #[test]
    fn noiseless_type1_render_is_exact() {
        let s = scene(CollabType::Type1);
        let c = collab(CollabType::Type1, 0.0, 0.0);
        let p = generate_profile(HumanId(0), 1, &s, &c).unwrap();
        let mut rng = stream(2, &[]);
        let latent = sample_latent_state(&p, &s, None, Timestamp::new(0, 0), &mut rng).unwrap();
        let obs = render_observation(&latent, &s, &c, &mut rng);
        assert_eq!(obs.feature_vector, s.intent(latent.true_intent).unwrap().prototype);
        assert_eq!(obs.text_label, Some(latent.true_intent));
    }

    #[test]
    fn type2_never_carries_text() {
        let s = scene(CollabType::Type2);
        let c = collab(CollabType::Type2, 0.3, 0.5);
        let p = generate_profile(HumanId(0), 1, &s, &c).unwrap();
        let mut rng = stream(3, &[]);
        for h in 0..1000u32 {
            let ts = Timestamp::new(h / 12, (h % 12) as u8);
            let latent = sample_latent_state(&p, &s, None, ts, &mut rng).unwrap();
            assert!(render_observation(&latent, &s, &c, &mut rng).text_label.is_none());
        }
    }

    #[test]
    fn full_corruption_always_names_a_distractor() {
        let s = scene(CollabType::Type1);
        let c = collab(CollabType::Type1, 0.0, 1.0);
        let p = generate_profile(HumanId(0), 1, &s, &c).unwrap();
        let mut rng = stream(4, &[]);
        for _ in 0..200 {
            let latent = sample_latent_state(&p, &s, None, Timestamp::new(0, 0), &mut rng).unwrap();
            let label = render_observation(&latent, &s, &c, &mut rng).text_label.unwrap();
            assert_ne!(label, latent.true_intent);
            assert!(s.intent(label).is_some());
        }
    }

    #[test]
    fn noise_magnitude_matches_chi_mean() {
        // E||N(0, s^2 I_d)|| = s * sqrt(2) * Gamma((d+1)/2) / Gamma(d/2); for d = 16
        // the gamma ratio is Gamma(8.5)/Gamma(8) = (15!! / 2^8) sqrt(pi) / 7!.
        let s = scene(CollabType::Type2);
        let sigma = 0.5;
        let c = collab(CollabType::Type2, sigma, 0.0);
        let p = generate_profile(HumanId(0), 1, &s, &c).unwrap();
        let double_fact_15 = (1..=15).step_by(2).product::<u64>() as f64;
        let gamma_ratio = double_fact_15 / 256.0 * std::f64::consts::PI.sqrt() / 5040.0;
        let expected = sigma * 2f64.sqrt() * gamma_ratio;
        let mut rng = stream(6, &[]);
        let latent = sample_latent_state(&p, &s, None, Timestamp::new(0, 0), &mut rng).unwrap();
        let proto = &s.intent(latent.true_intent).unwrap().prototype;
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|_| {
                let o = render_observation(&latent, &s, &c, &mut rng);
                o.feature_vector
                    .iter()
                    .zip(proto)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean - expected).abs() / expected < 0.05, "{mean} vs {expected}");
    }

    #[test]
    fn clarification_reveals_ground_truth() {
        let latent = LatentHumanState {
            true_intent: Label(7),
            true_tasks: vec![Label(1), Label(2), Label(3)],
            revealed_task_index: 0,
            timestamp: Timestamp::new(0, 0),
        };
        assert_eq!(
            answer_clarification(&latent, ClarifyTarget::Intent).payload,
            Some(Label(7))
        );
        assert_eq!(
            answer_clarification(&latent, ClarifyTarget::Task).payload,
            Some(Label(2))
        );
        assert_eq!(
            answer_clarification(&latent, ClarifyTarget::Task),
            answer_clarification(&latent, ClarifyTarget::Task)
        );
    }

    #[test]
    fn judge_containment_rules() {
        let latent = LatentHumanState {
            true_intent: Label(7),
            true_tasks: vec![Label(1), Label(2), Label(3)],
            revealed_task_index: 0,
            timestamp: Timestamp::new(0, 0),
        };
        let intents = CandidateSet::new(
            ClarifyTarget::Intent,
            Stage::Filtered,
            vec![Candidate::new(Label(7), 0.5)],
        );
        let empty_tasks = CandidateSet::empty(ClarifyTarget::Task, Stage::Filtered);
        let action = AssistanceAction {
            intent_label: Label(7),
            task_need_label: Label(2),
        };
        let j = judge(&intents, &empty_tasks, &action, &latent).unwrap();
        assert!(!j.need_ask_intent);
        assert!(j.need_ask_task);
        assert!(j.intent_approved && j.task_approved);

        let raw = intents.clone().with_stage(Stage::Raw);
        assert!(matches!(
            judge(&raw, &empty_tasks, &action, &latent),
            Err(WorldError::StageMismatch { .. })
        ));
    }

    #[test]
    fn world_generation_is_seed_deterministic() {
        let c = collab(CollabType::Type2, 0.2, 0.0);
        let a = World::generate(WorldParams::default(), c, 5).unwrap();
        let b = World::generate(WorldParams::default(), c, 5).unwrap();
        let d = World::generate(WorldParams::default(), c, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, d);
    }
}
