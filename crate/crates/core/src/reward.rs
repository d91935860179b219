//! Per-step compression reward.
//!
//! ```text
//! r = α/ρ + β·D(s0, st) − γ·KL − [ρ < c_s]·P_s − [ρ > c_l]·P_l
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::{output_distribution_kl, ProxyLM, RetentionScorer};
use crate::tokenizer::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Lower bound of the target compression-rate band.
    pub c_s: f64,
    /// Upper bound of the target compression-rate band.
    pub c_l: f64,
    pub p_s: f64,
    pub p_l: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            c_s: 0.5,
            c_l: 0.9,
            p_s: 200.0,
            p_l: 100.0,
        }
    }
}

impl RewardConfig {
    pub fn with_bounds(self, c_s: f64, c_l: f64) -> Self {
        Self { c_s, c_l, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("p_s", self.p_s),
            ("p_l", self.p_l),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("reward.{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(0.0 < self.c_s && self.c_s < self.c_l && self.c_l <= 1.0) {
            return Err(Error::config(format!(
                "compression band must satisfy 0 < c_s < c_l <= 1, got [{}, {}]",
                self.c_s, self.c_l
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub ratio_term: f64,
    pub retention_term: f64,
    pub kl_term: f64,
    pub penalty: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    Below,
    Inside,
    Above,
}

/// Strict comparisons: the band edges themselves are inside.
pub fn in_band(rho: f64, cfg: &RewardConfig) -> Band {
    if rho < cfg.c_s {
        Band::Below
    } else if rho > cfg.c_l {
        Band::Above
    } else {
        Band::Inside
    }
}

/// Combines precomputed ρ, retention and KL into the reward.
pub fn assemble_reward(rho: f64, retention: f64, kl: f64, cfg: &RewardConfig) -> Result<RewardBreakdown> {
    cfg.validate()?;
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidArgument(format!("compression rate {rho} outside (0, 1]")));
    }
    let ratio_term = cfg.alpha / rho;
    let retention_term = cfg.beta * retention;
    let kl_term = cfg.gamma * kl;
    let penalty = match in_band(rho, cfg) {
        Band::Below => cfg.p_s,
        Band::Above => cfg.p_l,
        Band::Inside => 0.0,
    };
    Ok(RewardBreakdown {
        ratio_term,
        retention_term,
        kl_term,
        penalty,
        total: ratio_term + retention_term - kl_term - penalty,
    })
}

/// Reward of compressed `st` against the episode's original `s0`.
pub fn compute_reward(
    s0: &[TokenId],
    st: &[TokenId],
    cfg: &RewardConfig,
    retention: &dyn RetentionScorer,
    lm: &dyn ProxyLM,
    reference: &[TokenId],
) -> Result<RewardBreakdown> {
    if s0.is_empty() || st.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    cfg.validate()?;
    let rho = st.len() as f64 / s0.len() as f64;
    let d = retention.score(s0, st)?;
    let kl = output_distribution_kl(lm, s0, st, reference)?;
    assemble_reward(rho, d, kl, cfg)
}
