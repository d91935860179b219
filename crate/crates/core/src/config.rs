//! Run configuration: built-in defaults, then a TOML file, then `key=value`
//! overrides. Keys are dotted, e.g. `trainer.actor_lr = 1e-5`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::TransformerConfig;
use crate::reward::RewardConfig;
use crate::trainer::{BoundsMode, CurriculumSchedule, TrainerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub clip_eps: f64,
    pub batch_size: usize,
    pub buffer_m: usize,
    pub discount: f64,
    pub seed: u64,
    pub grad_clip: f64,
}

impl Default for TrainerSection {
    fn default() -> Self {
        let t = TrainerConfig::default();
        Self {
            actor_lr: t.actor_lr,
            critic_lr: t.critic_lr,
            clip_eps: t.clip_eps,
            batch_size: t.batch_size,
            buffer_m: t.buffer_capacity,
            discount: t.discount,
            seed: t.seed,
            grad_clip: t.grad_clip,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumSection {
    pub psi: f64,
    pub t_max: Vec<usize>,
    pub epochs: Vec<usize>,
    /// `false` freezes every band at the first stage's starting band.
    pub hierarchical: bool,
}

impl Default for CurriculumSection {
    fn default() -> Self {
        let s = CurriculumSchedule::default();
        Self {
            psi: s.psi,
            t_max: s.t_max_per_stage,
            epochs: s.epochs_per_stage,
            hierarchical: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub p_s: f64,
    pub p_l: f64,
}

impl Default for RewardSection {
    fn default() -> Self {
        let r = RewardConfig::default();
        Self {
            alpha: r.alpha,
            beta: r.beta,
            gamma: r.gamma,
            p_s: r.p_s,
            p_l: r.p_l,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringSection {
    pub ngram_order: usize,
    pub ngram_k: f64,
    pub n_gen: usize,
    pub vocab_size: usize,
}

impl Default for ScoringSection {
    fn default() -> Self {
        Self {
            ngram_order: 2,
            ngram_k: 0.1,
            n_gen: 32,
            vocab_size: 8192,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let e = TransformerConfig::reference(1);
        Self {
            d_model: e.d_model,
            n_heads: e.n_heads,
            n_layers: e.n_layers,
            d_ff: e.d_ff,
            max_len: e.max_len,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub trainer: TrainerSection,
    pub curriculum: CurriculumSection,
    pub reward: RewardSection,
    pub scoring: ScoringSection,
    pub encoder: EncoderSection,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Overrides one dotted key. `value` is parsed as a TOML value, falling
    /// back to a bare string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let mut root = toml::Table::try_from(&*self).map_err(|e| Error::config(e.to_string()))?;
        let mut parts = key.split('.').peekable();
        let mut table = &mut root;
        while let Some(part) = parts.next() {
            if parts.peek().is_none() {
                let slot = table
                    .get_mut(part)
                    .ok_or_else(|| Error::config(format!("unknown config key `{key}`")))?;
                // Integers are accepted where floats are expected.
                *slot = match (&*slot, parsed) {
                    (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
                    (_, v) => v,
                };
                break;
            }
            table = table
                .get_mut(part)
                .and_then(|v| v.as_table_mut())
                .ok_or_else(|| Error::config(format!("unknown config key `{key}`")))?;
        }
        *self = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(format!("`{key}`: {}", e.message())))?;
        Ok(())
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        let t = &self.trainer;
        TrainerConfig {
            actor_lr: t.actor_lr,
            critic_lr: t.critic_lr,
            clip_eps: t.clip_eps,
            batch_size: t.batch_size,
            buffer_capacity: t.buffer_m,
            discount: t.discount,
            seed: t.seed,
            grad_clip: t.grad_clip,
        }
    }

    pub fn schedule(&self) -> CurriculumSchedule {
        CurriculumSchedule {
            psi: self.curriculum.psi,
            t_max_per_stage: self.curriculum.t_max.clone(),
            epochs_per_stage: self.curriculum.epochs.clone(),
            mode: if self.curriculum.hierarchical {
                BoundsMode::Hierarchical
            } else {
                BoundsMode::Fixed
            },
        }
    }

    /// Band fields hold the first stage's starting band; training replaces
    /// them step by step.
    pub fn reward_config(&self) -> Result<RewardConfig> {
        let r = &self.reward;
        let (c_s, c_l) = self.schedule().bounds(1, 0)?;
        Ok(RewardConfig {
            alpha: r.alpha,
            beta: r.beta,
            gamma: r.gamma,
            c_s,
            c_l,
            p_s: r.p_s,
            p_l: r.p_l,
        })
    }

    pub fn encoder_config(&self, vocab_size: usize) -> TransformerConfig {
        let e = &self.encoder;
        TransformerConfig {
            vocab_size,
            d_model: e.d_model,
            n_heads: e.n_heads,
            n_layers: e.n_layers,
            d_ff: e.d_ff,
            max_len: e.max_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.trainer_config().validate()?;
        self.schedule().validate()?;
        self.reward_config()?.validate()?;
        self.encoder_config(1).validate()?;
        if self.scoring.ngram_order == 0 || self.scoring.n_gen == 0 || self.scoring.vocab_size < 2 {
            return Err(Error::config(
                "scoring.ngram_order and scoring.n_gen must be >= 1, scoring.vocab_size >= 2",
            ));
        }
        if !(self.scoring.ngram_k > 0.0) {
            return Err(Error::config("scoring.ngram_k must be positive"));
        }
        Ok(())
    }
}

/// Everything needed to reproduce one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    /// Command-specific settings not covered by `config`.
    pub settings: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn dotted_keys_and_overrides() {
        let mut c = RunConfig::from_toml_str("trainer.actor_lr = 0.001\ncurriculum.t_max = [3, 2, 1]\n").unwrap();
        assert_eq!(c.trainer.actor_lr, 1e-3);
        assert_eq!(c.curriculum.t_max, vec![3, 2, 1]);
        assert_eq!(c.trainer.critic_lr, 1e-6);
        c.set("curriculum.psi", "0.05").unwrap();
        c.set("reward.alpha", "0").unwrap();
        c.set("trainer.seed", "9").unwrap();
        assert_eq!((c.curriculum.psi, c.reward.alpha, c.trainer.seed), (0.05, 0.0, 9));
        assert!(c.set("trainer.nope", "1").is_err());
        assert!(c.set("trainer.seed", "\"x\"").is_err());
        assert!(RunConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn fixed_mode_reward_band() {
        let mut c = RunConfig::default();
        c.set("curriculum.hierarchical", "false").unwrap();
        let r = c.reward_config().unwrap();
        assert!((r.c_s - 0.5).abs() < 1e-12 && (r.c_l - 0.9).abs() < 1e-12);
    }
}
