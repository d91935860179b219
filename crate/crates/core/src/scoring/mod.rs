//! Reward ingredients: key-information retention and output-distribution KL.

mod ngram;
mod retention;

pub use ngram::{fit_ngram_lm, NgramLm, NGRAM_SCHEMA_VERSION};
pub use retention::{idf_retention_score, IdfRetention, RetentionScorer};

use crate::error::{Error, Result};
use crate::tokenizer::TokenId;

pub const KL_EPSILON: f64 = 1e-10;
const NORMALIZATION_TOL: f64 = 1e-9;

/// A probability vector over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct NextTokenDistribution(Vec<f64>);

impl NextTokenDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidArgument("empty distribution".into()));
        }
        if let Some(&p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidArgument(format!("invalid probability {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidArgument(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        Ok(Self(probs))
    }

    /// Skips validation; callers guarantee normalization.
    pub(crate) fn new_unchecked(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn uniform(size: usize) -> Self {
        Self(vec![1.0 / size as f64; size])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Most probable token, lowest id on ties.
    pub fn argmax(&self) -> TokenId {
        crate::env::argmax_lowest(&self.0) as TokenId
    }
}

/// Stand-in for the target model's output distribution.
pub trait ProxyLM: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn next_token_dist(&self, context: &[TokenId]) -> NextTokenDistribution;

    /// Greedy continuation of `context` for `n` tokens.
    fn greedy_continue(&self, context: &[TokenId], n: usize) -> Vec<TokenId> {
        let mut ctx = context.to_vec();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let next = self.next_token_dist(&ctx).argmax();
            ctx.push(next);
            out.push(next);
        }
        out
    }
}

/// KL(P || Q) in nats. Q is floored at `KL_EPSILON` and renormalized first;
/// identical inputs skip the floor and score exactly 0.
pub fn kl_divergence(p: &NextTokenDistribution, q: &NextTokenDistribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    if p == q {
        return Ok(0.0);
    }
    let q_sum: f64 = q.probs().iter().map(|&x| x.max(KL_EPSILON)).sum();
    let mut kl = 0.0;
    for (&pi, &qi) in p.probs().iter().zip(q.probs()) {
        if pi > 0.0 {
            let qi = qi.max(KL_EPSILON) / q_sum;
            kl += pi * (pi / qi).ln();
        }
    }
    Ok(kl.max(0.0))
}

pub fn generate_reference(lm: &dyn ProxyLM, s0: &[TokenId], n_gen: usize) -> Result<Vec<TokenId>> {
    if n_gen == 0 {
        return Err(Error::InvalidArgument("n_gen must be at least 1".into()));
    }
    Ok(lm.greedy_continue(s0, n_gen))
}

/// Mean teacher-forced KL between the compressed-context and
/// original-context next-token distributions along `reference`.
pub fn output_distribution_kl(
    lm: &dyn ProxyLM,
    s0: &[TokenId],
    st: &[TokenId],
    reference: &[TokenId],
) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    if s0 == st {
        return Ok(0.0);
    }
    let mut ctx_t = st.to_vec();
    let mut ctx_0 = s0.to_vec();
    let mut total = 0.0;
    for &tok in reference {
        let p = lm.next_token_dist(&ctx_t);
        let q = lm.next_token_dist(&ctx_0);
        total += kl_divergence(&p, &q)?;
        ctx_t.push(tok);
        ctx_0.push(tok);
    }
    Ok(total / reference.len() as f64)
}
