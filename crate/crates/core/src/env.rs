//! Token-deletion environment: keep/drop actions over the current sequence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::TokenSequence;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressionState {
    original: TokenSequence,
    current: TokenSequence,
    step: usize,
}

impl CompressionState {
    pub fn original(&self) -> &TokenSequence {
        &self.original
    }

    pub fn current(&self) -> &TokenSequence {
        &self.current
    }

    pub fn step(&self) -> usize {
        self.step
    }
}

/// Per-token labels for the current sequence: `1` keeps, `0` drops.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionVector(Vec<u8>);

impl ActionVector {
    /// Labels must be 0 or 1.
    pub fn new(labels: Vec<u8>) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidArgument(format!("action label {bad} is not 0 or 1")));
        }
        Ok(Self(labels))
    }

    pub fn from_keep(keep: impl IntoIterator<Item = bool>) -> Self {
        Self(keep.into_iter().map(u8::from).collect())
    }

    pub fn all_keep(len: usize) -> Self {
        Self(vec![1; len])
    }

    pub fn labels(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn kept(&self) -> usize {
        self.0.iter().filter(|&&l| l == 1).count()
    }

    pub fn is_all_drop(&self) -> bool {
        self.0.iter().all(|&l| l == 0)
    }

    /// If every label is 0, flips the label of the token with the highest
    /// keep probability (lowest index on ties) to 1.
    pub fn with_force_keep(mut self, keep_probs: &[f64]) -> Self {
        if !self.0.is_empty() && self.is_all_drop() {
            let idx = argmax_lowest(keep_probs);
            self.0[idx] = 1;
        }
        self
    }
}

pub(crate) fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub max_steps: usize,
}

impl EpisodeConfig {
    pub fn new(max_steps: usize) -> Result<Self> {
        if max_steps == 0 {
            return Err(Error::config("max_steps must be at least 1"));
        }
        Ok(Self { max_steps })
    }
}

pub fn reset(prompt: &TokenSequence) -> Result<CompressionState> {
    if prompt.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    Ok(CompressionState {
        original: prompt.clone(),
        current: prompt.clone(),
        step: 0,
    })
}

/// Keeps exactly the tokens labelled 1. An all-zero action keeps the first
/// token; callers holding keep probabilities should repair the action with
/// [`ActionVector::with_force_keep`] first.
pub fn apply_action(state: &CompressionState, action: &ActionVector) -> Result<CompressionState> {
    if action.len() != state.current.len() {
        return Err(Error::LengthMismatch {
            action: action.len(),
            sequence: state.current.len(),
        });
    }
    let mut kept: Vec<_> = state
        .current
        .iter()
        .zip(action.labels())
        .filter(|(_, &l)| l == 1)
        .map(|(&id, _)| id)
        .collect();
    if kept.is_empty() {
        kept.push(state.current[0]);
    }
    Ok(CompressionState {
        original: state.original.clone(),
        current: TokenSequence::new(kept),
        step: state.step + 1,
    })
}

/// ρ = |current| / |original|.
pub fn compression_rate(state: &CompressionState) -> f64 {
    state.current.len() as f64 / state.original.len() as f64
}

pub fn is_terminal(state: &CompressionState, cfg: &EpisodeConfig) -> bool {
    state.step >= cfg.max_steps
}

/// True when `sub` is an order-preserving subsequence of `full`.
pub fn is_subsequence<T: PartialEq>(sub: &[T], full: &[T]) -> bool {
    let mut it = full.iter();
    sub.iter().all(|x| it.any(|y| y == x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq(ids: &[u32]) -> TokenSequence {
        TokenSequence::new(ids.to_vec())
    }

    #[test]
    fn reset_contract() {
        let s = reset(&seq(&[1, 2, 3])).unwrap();
        assert_eq!(s.current().ids(), &[1, 2, 3]);
        assert_eq!(s.step(), 0);
        assert_eq!(s, reset(&seq(&[1, 2, 3])).unwrap());
        let long: Vec<u32> = (0..100).collect();
        assert_eq!(compression_rate(&reset(&seq(&long)).unwrap()), 1.0);
        assert_eq!(reset(&seq(&[])).unwrap_err().to_string(), "empty prompt");
    }

    #[test]
    fn apply_keeps_labelled_tokens() {
        let s = reset(&seq(&[10, 11, 12])).unwrap();
        let next = apply_action(&s, &ActionVector::new(vec![1, 0, 1]).unwrap()).unwrap();
        assert_eq!(next.current().ids(), &[10, 12]);
        assert_eq!(next.step(), 1);
        assert_eq!(next.original(), s.original());
        let same = apply_action(&s, &ActionVector::all_keep(3)).unwrap();
        assert_eq!(same.current(), s.current());
        assert_eq!(same.step(), 1);
    }

    #[test]
    fn length_mismatch() {
        let s = reset(&seq(&[1, 2])).unwrap();
        let err = apply_action(&s, &ActionVector::all_keep(3)).unwrap_err();
        assert!(err.to_string().contains("action/sequence length mismatch"));
    }

    #[test]
    fn all_drop_force_keeps() {
        let s = reset(&seq(&[5, 6, 7])).unwrap();
        let a = ActionVector::new(vec![0, 0, 0]).unwrap();
        assert_eq!(apply_action(&s, &a).unwrap().current().ids(), &[5]);
        let repaired = a.with_force_keep(&[0.1, 0.4, 0.4]);
        assert_eq!(repaired.labels(), &[0, 1, 0]);
        assert_eq!(apply_action(&s, &repaired).unwrap().current().ids(), &[6]);
    }

    #[test]
    fn rate_and_terminal() {
        let orig: Vec<u32> = (0..100).collect();
        let s = reset(&seq(&orig)).unwrap();
        let a = ActionVector::from_keep((0..100).map(|i| i % 2 == 0));
        let half = apply_action(&s, &a).unwrap();
        assert_eq!(compression_rate(&half), 0.5);
        let cfg2 = EpisodeConfig::new(2).unwrap();
        let cfg1 = EpisodeConfig::new(1).unwrap();
        assert!(!is_terminal(&s, &cfg1));
        let two = apply_action(&half, &ActionVector::all_keep(50)).unwrap();
        assert!(is_terminal(&two, &cfg2));
        assert!(EpisodeConfig::new(0).is_err());
    }

    #[test]
    fn episode_terminates_once_at_end() {
        let cfg = EpisodeConfig::new(4).unwrap();
        let mut s = reset(&seq(&[1, 2, 3, 4, 5, 6])).unwrap();
        let mut trace = vec![is_terminal(&s, &cfg)];
        while !is_terminal(&s, &cfg) {
            s = apply_action(&s, &ActionVector::all_keep(s.current().len())).unwrap();
            trace.push(is_terminal(&s, &cfg));
        }
        assert_eq!(trace, vec![false, false, false, false, true]);
    }

    #[test]
    fn fuzz_against_filter_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10_000 {
            let len = rng.gen_range(1..40);
            let ids: Vec<u32> = (0..len).map(|_| rng.gen_range(0..20)).collect();
            let labels: Vec<u8> = (0..len).map(|_| rng.gen_range(0..2)).collect();
            let s = reset(&seq(&ids)).unwrap();
            let next = apply_action(&s, &ActionVector::new(labels.clone()).unwrap()).unwrap();
            let mut expected = Vec::new();
            for i in 0..len {
                if labels[i] == 1 {
                    expected.push(ids[i]);
                }
            }
            if expected.is_empty() {
                expected.push(ids[0]);
            }
            assert_eq!(next.current().ids(), expected.as_slice());
            let oracle_rate = expected.len() as f64 / len as f64;
            assert_eq!(compression_rate(&next), oracle_rate);
        }
    }

    proptest! {
        #[test]
        fn episodes_preserve_invariants(ids in prop::collection::vec(0u32..50, 1..60),
                                        seeds in prop::collection::vec(any::<u64>(), 1..6)) {
            let mut s = reset(&TokenSequence::new(ids)).unwrap();
            let before = s.clone();
            let mut prev_rate = compression_rate(&s);
            for seed in seeds {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = ActionVector::from_keep((0..s.current().len()).map(|_| rng.gen_bool(0.6)));
                let next = apply_action(&s, &a).unwrap();
                prop_assert!(is_subsequence(next.current(), s.current()));
                prop_assert!(is_subsequence(next.current(), next.original()));
                let rate = compression_rate(&next);
                prop_assert!(rate > 0.0 && rate <= prev_rate);
                prev_rate = rate;
                s = next;
            }
            prop_assert_eq!(before.step(), 0);
        }
    }
}
