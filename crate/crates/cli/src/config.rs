//! TOML run configuration with one table per subsystem.

use std::path::Path;

use pact_bridge::BridgeConfig;
use pact_core::inference::HeadConfig;
use pact_core::policy::{L2dConfig, RlConfig};
use pact_core::protocols::ProtocolConfig;
use pact_core::rollout::{AgentConfig, SettingId, SettingSpec, StrategyKind};
use pact_core::world::{CollabConfig, CollabType, WorldParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const POLICY_NAMES: &[&str] = &[
    "never", "always", "margin", "sft", "l2d", "rl", "zero_shot", "few_shot", "proactive_cot", "tot", "uot",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePreset {
    High,
    Low,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    pub collab_type: CollabType,
    pub noise: NoisePreset,
    /// Overrides the preset.
    pub observation_noise_sigma: Option<f64>,
    pub text_corruption_prob: Option<f64>,
    pub sizes: WorldParams,
}

impl Default for WorldSection {
    fn default() -> Self {
        Self {
            collab_type: CollabType::Type2,
            noise: NoisePreset::High,
            observation_noise_sigma: None,
            text_corruption_prob: None,
            sizes: WorldParams::default(),
        }
    }
}

impl WorldSection {
    pub fn collab(&self) -> CollabConfig {
        let base = match self.noise {
            NoisePreset::High => CollabConfig::high_noise(self.collab_type),
            NoisePreset::Low => CollabConfig::low_noise(self.collab_type),
        };
        CollabConfig {
            observation_noise_sigma: self.observation_noise_sigma.unwrap_or(base.observation_noise_sigma),
            text_corruption_prob: self.text_corruption_prob.unwrap_or(base.text_corruption_prob),
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    /// Policy for `run`.
    pub name: String,
    /// Policies for `sweep`; empty means `[name]`.
    pub names: Vec<String>,
    pub margin_theta: f64,
    pub rl: RlConfig,
    pub l2d: L2dConfig,
    pub protocol: ProtocolConfig,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            name: "l2d".into(),
            names: Vec::new(),
            margin_theta: 0.3,
            rl: RlConfig::default(),
            l2d: L2dConfig::default(),
            protocol: ProtocolConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutSection {
    pub setting: String,
    /// Settings for `sweep`; empty means `[setting]`.
    pub settings: Vec<String>,
    pub seeds: u32,
    pub base_seed: u64,
    pub daily_budget: u32,
    pub retrieval_k: usize,
    pub decay_lambda: f64,
    pub eval_days: u32,
    pub reset_memory_on_human_switch: bool,
}

impl Default for RolloutSection {
    fn default() -> Self {
        let agent = AgentConfig::default();
        Self {
            setting: "S1".into(),
            settings: Vec::new(),
            seeds: 1,
            base_seed: 0,
            daily_budget: agent.daily_budget,
            retrieval_k: agent.retrieval_k,
            decay_lambda: agent.decay_lambda,
            eval_days: 0,
            reset_memory_on_human_switch: false,
        }
    }
}

/// `enabled` plus the client fields, all in one flat `[bridge]` table.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "toml::Table")]
pub struct BridgeSection {
    pub enabled: bool,
    #[serde(flatten)]
    pub client: BridgeConfig,
}

impl TryFrom<toml::Table> for BridgeSection {
    type Error = String;

    fn try_from(mut table: toml::Table) -> Result<Self, String> {
        let enabled = match table.remove("enabled") {
            None => false,
            Some(toml::Value::Boolean(b)) => b,
            Some(other) => return Err(format!("bridge.enabled must be a boolean, got {other}")),
        };
        let client = BridgeConfig::deserialize(table).map_err(|e| format!("bridge: {}", e.message()))?;
        Ok(Self { enabled, client })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub out_dir: String,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self { out_dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub world: WorldSection,
    pub inference: HeadConfig,
    pub policy: PolicySection,
    pub rollout: RolloutSection,
    pub bridge: BridgeSection,
    pub report: ReportSection,
}

/// A validated config, expanded into what the runner needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub strategies: Vec<StrategyKind>,
    pub settings: Vec<SettingSpec>,
    pub seeds: Vec<u64>,
    pub agent: AgentConfig,
    pub world: WorldParams,
    pub eval_days: u32,
    pub bridge: Option<BridgeConfig>,
    pub config_hash: String,
}

fn field(field: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.into(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config {
            field: e.span().map_or_else(|| "?".into(), |s| locate(text, s.start)),
            message: e.message().to_owned(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Hash of everything that shapes outcomes apart from which policies,
    /// settings and seeds were chosen, so cells from separate invocations
    /// under the same conditions can be merged.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.policy.name.clear();
        c.policy.names.clear();
        c.rollout.setting.clear();
        c.rollout.settings.clear();
        c.rollout.seeds = 0;
        c.rollout.base_seed = 0;
        c.report = ReportSection::default();
        let canonical = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn resolve(&self, seed_offset: u64) -> Result<Resolved, CliError> {
        let names = if self.policy.names.is_empty() {
            vec![self.policy.name.clone()]
        } else {
            self.policy.names.clone()
        };
        let key = if self.policy.names.is_empty() { "policy.name" } else { "policy.names" };
        let strategies = names
            .iter()
            .map(|n| {
                StrategyKind::parse(n, self.policy.margin_theta).ok_or_else(|| {
                    field(key, format!("unknown policy {n:?}; expected one of {}", POLICY_NAMES.join(", ")))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;

        let collab = self.world.collab();
        collab.validate().map_err(|e| field("world", e.to_string()))?;
        let setting_names = if self.rollout.settings.is_empty() {
            vec![self.rollout.setting.clone()]
        } else {
            self.rollout.settings.clone()
        };
        let key = if self.rollout.settings.is_empty() { "rollout.setting" } else { "rollout.settings" };
        let settings = setting_names
            .iter()
            .map(|s| {
                SettingId::parse(s)
                    .map(|id| SettingSpec::standard(id, collab))
                    .ok_or_else(|| field(key, format!("unknown setting {s:?}; expected S1, S2, S3 or S4")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        for s in &settings {
            let (n_humans, n_scenes) = (0..s.num_days).map(|d| s.day_assignment(d)).fold((0, 0), |(h, c), (hu, sc)| {
                (h.max(hu.0 as usize + 1), c.max(sc.0 as usize + 1))
            });
            if n_humans > self.world.sizes.n_profiles || n_scenes > self.world.sizes.n_scenes {
                return Err(field(
                    "world.sizes",
                    format!("{} needs {n_humans} profiles and {n_scenes} scenes", s.setting_id.short()),
                ));
            }
        }

        if self.rollout.seeds == 0 {
            return Err(field("rollout.seeds", "must be >= 1"));
        }
        let first = self.rollout.base_seed.checked_add(seed_offset).ok_or_else(|| field("rollout.base_seed", "overflows with --seed-offset"))?;
        let seeds = (0..u64::from(self.rollout.seeds)).map(|i| first.wrapping_add(i)).collect();

        let agent = AgentConfig {
            head: self.inference,
            retrieval_k: self.rollout.retrieval_k,
            decay_lambda: self.rollout.decay_lambda,
            daily_budget: self.rollout.daily_budget,
            rl: self.policy.rl,
            l2d: self.policy.l2d,
            protocol: self.policy.protocol,
            reset_memory_on_switch: self.rollout.reset_memory_on_human_switch,
        };
        agent.head.validate().map_err(|e| field("inference", e.to_string()))?;
        agent.rl.validate().map_err(|e| field("policy.rl", e.to_string()))?;
        agent.l2d.validate().map_err(|e| field("policy.l2d", e.to_string()))?;
        agent.protocol.validate().map_err(|e| field("policy.protocol", e.to_string()))?;
        if agent.retrieval_k == 0 {
            return Err(field("rollout.retrieval_k", "must be >= 1"));
        }
        if !(agent.decay_lambda > 0.0 && agent.decay_lambda <= 1.0) {
            return Err(field("rollout.decay_lambda", "must lie in (0,1]"));
        }
        let bridge = if self.bridge.enabled {
            self.bridge.client.validate().map_err(|e| field("bridge", e.to_string()))?;
            Some(self.bridge.client.clone())
        } else {
            None
        };
        Ok(Resolved {
            strategies,
            settings,
            seeds,
            agent,
            world: self.world.sizes,
            eval_days: self.rollout.eval_days,
            bridge,
            config_hash: self.config_hash(),
        })
    }
}

/// Dotted table path and line of a byte offset, for diagnostics.
fn locate(text: &str, offset: usize) -> String {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let table = before
        .lines()
        .rev()
        .find_map(|l| l.trim().strip_prefix('[').and_then(|l| l.strip_suffix(']')))
        .unwrap_or("(top level)");
    let key = text[offset.min(text.len())..]
        .split(['=', '\n'])
        .next()
        .unwrap_or("")
        .trim();
    if key.is_empty() {
        format!("{table} (line {line})")
    } else {
        format!("{table}.{key} (line {line})")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        let r = c.resolve(0).unwrap();
        assert_eq!(r.strategies, vec![StrategyKind::L2d]);
        assert_eq!(r.seeds, vec![0]);
        assert_eq!(r.settings[0].num_days, 5);
        assert!(r.bridge.is_none());
    }

    #[test]
    fn unknown_policy_names_the_field() {
        let c = RunConfig::from_toml("[policy]\nname = \"oracle\"\n").unwrap();
        let err = c.resolve(0).unwrap_err().to_string();
        assert!(err.contains("policy.name"), "{err}");
        assert!(err.contains("oracle"), "{err}");
    }

    #[test]
    fn unknown_key_is_located() {
        let err = RunConfig::from_toml("[rollout]\nseeds = 2\nbudget = 3\n").unwrap_err().to_string();
        assert!(err.contains("rollout.budget"), "{err}");
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn bridge_table_is_flat() {
        let c = RunConfig::from_toml("[bridge]\nenabled = true\nbase_url = \"http://x:1/v1\"\ntimeout_ms = 5\n").unwrap();
        let r = c.resolve(0).unwrap();
        assert_eq!(r.bridge.unwrap().timeout_ms, 5);
        assert!(RunConfig::from_toml("[bridge]\nbogus = 1\n").is_err());
    }

    #[test]
    fn hash_ignores_selection_but_not_conditions() {
        let a = RunConfig::from_toml("[policy]\nname = \"rl\"\n[rollout]\nseeds = 3\n").unwrap();
        let b = RunConfig::from_toml("[policy]\nname = \"never\"\n").unwrap();
        let c = RunConfig::from_toml("[rollout]\ndaily_budget = 2\n").unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn seed_offset_shifts_seeds() {
        let c = RunConfig::from_toml("[rollout]\nseeds = 2\nbase_seed = 10\n").unwrap();
        assert_eq!(c.resolve(5).unwrap().seeds, vec![15, 16]);
    }

    #[test]
    fn noise_override() {
        let c = RunConfig::from_toml("[world]\nnoise = \"low\"\nobservation_noise_sigma = 0.7\n").unwrap();
        assert_eq!(c.world.collab().observation_noise_sigma, 0.7);
    }
}
