//! Overlap metrics between generated and reference sequences.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub const ZERO: Prf = Prf {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };

    fn from_counts(overlap: usize, candidate: usize, reference: usize) -> Self {
        let precision = if candidate == 0 { 0.0 } else { overlap as f64 / candidate as f64 };
        let recall = if reference == 0 { 0.0 } else { overlap as f64 / reference as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf { precision, recall, f1 }
    }
}

/// Lowercased, trimmed, whitespace collapsed.
pub fn normalize_answer(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// 1.0 when the normalized strings agree, else 0.0.
pub fn exact_match(predicted: &str, reference: &str) -> f64 {
    if normalize_answer(predicted) == normalize_answer(reference) {
        1.0
    } else {
        0.0
    }
}

fn counts<T: Eq + Hash + Clone>(items: impl IntoIterator<Item = T>) -> HashMap<T, usize> {
    let mut m = HashMap::new();
    for x in items {
        *m.entry(x).or_insert(0) += 1;
    }
    m
}

fn clipped_overlap<T: Eq + Hash>(a: &HashMap<T, usize>, b: &HashMap<T, usize>) -> usize {
    a.iter().map(|(k, &n)| n.min(b.get(k).copied().unwrap_or(0))).sum()
}

/// Bag-of-tokens F1; two empty sequences score 1.
pub fn token_f1<T: Eq + Hash + Clone>(candidate: &[T], reference: &[T]) -> f64 {
    if candidate.is_empty() && reference.is_empty() {
        return 1.0;
    }
    let overlap = clipped_overlap(&counts(candidate.iter().cloned()), &counts(reference.iter().cloned()));
    Prf::from_counts(overlap, candidate.len(), reference.len()).f1
}

pub fn rouge_n<T: Eq + Hash + Clone>(candidate: &[T], reference: &[T], n: usize) -> Result<Prf> {
    if n == 0 {
        return Err(Error::InvalidArgument("ROUGE-N needs n >= 1".into()));
    }
    let grams = |s: &[T]| counts(s.windows(n).map(|w| w.to_vec()));
    let (c, r) = (grams(candidate), grams(reference));
    let total = |m: &HashMap<Vec<T>, usize>| m.values().sum::<usize>();
    Ok(Prf::from_counts(clipped_overlap(&c, &r), total(&c), total(&r)))
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> Prf {
    Prf::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}
