//! Reference compressors: identity, random deletion, self-information, and
//! the trained policy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{apply_action, compression_rate, reset};
use crate::error::{Error, Result};
use crate::nn::SequenceEncoder;
use crate::policy::{greedy_actions, policy_forward, Actor};
use crate::scoring::ProxyLM;
use crate::tokenizer::{TokenId, TokenSequence};
use crate::trainer::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionResult {
    pub original: TokenSequence,
    pub compressed: TokenSequence,
    /// Indices of the kept tokens in `original`, ascending.
    pub kept_positions: Vec<usize>,
    pub rho: f64,
    pub method: String,
}

impl CompressionResult {
    fn from_positions(original: &[TokenId], kept_positions: Vec<usize>, method: &str) -> Self {
        let compressed: TokenSequence = kept_positions.iter().map(|&i| original[i]).collect();
        Self {
            rho: compressed.len() as f64 / original.len() as f64,
            original: TokenSequence::new(original.to_vec()),
            compressed,
            kept_positions,
            method: method.to_string(),
        }
    }
}

/// `max(1, round(rho · len))`, capped at `len`.
pub fn keep_count(len: usize, rho_target: f64) -> usize {
    ((rho_target * len as f64).round() as usize).clamp(1, len.max(1))
}

fn check(seq: &[TokenId], rho_target: f64) -> Result<()> {
    if seq.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    if !(rho_target > 0.0 && rho_target <= 1.0) {
        return Err(Error::InvalidArgument(format!("target rate {rho_target} outside (0, 1]")));
    }
    Ok(())
}

/// Keeps a uniformly random subset of `keep_count` tokens in order.
pub fn random_compress(seq: &[TokenId], rho_target: f64, seed: u64) -> Result<CompressionResult> {
    check(seq, rho_target)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = rand::seq::index::sample(&mut rng, seq.len(), keep_count(seq.len(), rho_target)).into_vec();
    kept.sort_unstable();
    Ok(CompressionResult::from_positions(seq, kept, "random"))
}

/// `−ln P(token_i | tokens before i)` for every position.
pub fn self_information(seq: &[TokenId], lm: &dyn ProxyLM) -> Vec<f64> {
    (0..seq.len())
        .map(|i| {
            let p = lm.next_token_dist(&seq[..i]).probs()[seq[i] as usize];
            -p.ln()
        })
        .collect()
}

/// Keeps the most surprising tokens; ties keep the earlier token.
pub fn selfinfo_compress(seq: &[TokenId], lm: &dyn ProxyLM, rho_target: f64) -> Result<CompressionResult> {
    check(seq, rho_target)?;
    if let Some(&bad) = seq.iter().find(|&&t| t as usize >= lm.vocab_size()) {
        return Err(Error::IdOutOfRange {
            id: bad,
            size: lm.vocab_size(),
        });
    }
    let scores = self_information(seq, lm);
    let mut order: Vec<usize> = (0..seq.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = order[..keep_count(seq.len(), rho_target)].to_vec();
    kept.sort_unstable();
    Ok(CompressionResult::from_positions(seq, kept, "selfinfo"))
}

/// Applies greedy policy actions for `steps` rounds.
pub fn policy_compress<E: SequenceEncoder>(
    actor: &Actor<E>,
    seq: &[TokenId],
    steps: usize,
    drop_budget: usize,
) -> Result<CompressionResult> {
    let mut state = reset(&TokenSequence::new(seq.to_vec()))?;
    let mut positions: Vec<usize> = (0..seq.len()).collect();
    for _ in 0..steps {
        let out = policy_forward(actor, &state)?;
        let action = greedy_actions(&out, drop_budget);
        positions = positions
            .iter()
            .zip(action.labels())
            .filter(|(_, &l)| l == 1)
            .map(|(&p, _)| p)
            .collect();
        state = apply_action(&state, &action)?;
    }
    let mut r = CompressionResult::from_positions(seq, positions, "policy");
    r.rho = compression_rate(&state);
    Ok(r)
}

/// A named compression method applied prompt by prompt.
pub trait Compressor: Send + Sync {
    fn name(&self) -> &str;

    /// `index` is the prompt's position in the evaluated corpus.
    fn compress(&self, seq: &[TokenId], index: usize) -> Result<CompressionResult>;
}

pub struct Identity;

impl Compressor for Identity {
    fn name(&self) -> &str {
        "identity"
    }

    fn compress(&self, seq: &[TokenId], _: usize) -> Result<CompressionResult> {
        check(seq, 1.0)?;
        Ok(CompressionResult::from_positions(seq, (0..seq.len()).collect(), "identity"))
    }
}

pub struct RandomDeletion {
    pub rho: f64,
    pub seed: u64,
}

impl Compressor for RandomDeletion {
    fn name(&self) -> &str {
        "random"
    }

    fn compress(&self, seq: &[TokenId], index: usize) -> Result<CompressionResult> {
        random_compress(seq, self.rho, derive_seed(self.seed, &[index as u64]))
    }
}

pub struct SelfInformation<'a> {
    pub lm: &'a dyn ProxyLM,
    pub rho: f64,
}

impl Compressor for SelfInformation<'_> {
    fn name(&self) -> &str {
        "selfinfo"
    }

    fn compress(&self, seq: &[TokenId], _: usize) -> Result<CompressionResult> {
        selfinfo_compress(seq, self.lm, self.rho)
    }
}

pub struct PolicyCompressor<'a, E: SequenceEncoder> {
    pub actor: &'a Actor<E>,
    pub steps: usize,
    pub drop_budget: usize,
}

impl<E: SequenceEncoder> Compressor for PolicyCompressor<'_, E> {
    fn name(&self) -> &str {
        "policy"
    }

    fn compress(&self, seq: &[TokenId], _: usize) -> Result<CompressionResult> {
        policy_compress(self.actor, seq, self.steps, self.drop_budget)
    }
}
