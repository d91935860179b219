use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NextTokenDistribution, ProxyLM};
use crate::corpus::PromptRecord;
use crate::error::{Error, Result};
use crate::tokenizer::{tokenize, TokenId, Vocabulary};

pub const NGRAM_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: HashMap<TokenId, u64>,
}

/// Add-k smoothed n-gram model. Contexts never seen in training back off to
/// the longest observed suffix, down to the unigram distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramLm {
    order: usize,
    k: f64,
    vocab_size: usize,
    /// `tables[m]` holds contexts of length `m`.
    tables: Vec<HashMap<Vec<TokenId>, ContextCounts>>,
}

pub fn fit_ngram_lm(
    corpus: &[Vec<TokenId>],
    vocab_size: usize,
    order: usize,
    k: f64,
) -> Result<NgramLm> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if order == 0 {
        return Err(Error::InvalidArgument("n-gram order must be at least 1".into()));
    }
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::InvalidArgument(format!("smoothing k must be positive, got {k}")));
    }
    if vocab_size == 0 {
        return Err(Error::InvalidArgument("vocabulary is empty".into()));
    }
    let mut tables = vec![HashMap::<Vec<TokenId>, ContextCounts>::new(); order];
    for seq in corpus {
        if let Some(&bad) = seq.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(Error::IdOutOfRange {
                id: bad,
                size: vocab_size,
            });
        }
        for (pos, &tok) in seq.iter().enumerate() {
            for (m, table) in tables.iter_mut().enumerate() {
                if m > pos {
                    break;
                }
                let entry = table.entry(seq[pos - m..pos].to_vec()).or_default();
                entry.total += 1;
                *entry.next.entry(tok).or_default() += 1;
            }
        }
    }
    Ok(NgramLm {
        order,
        k,
        vocab_size,
        tables,
    })
}

impl NgramLm {
    pub fn fit_records(
        records: &[PromptRecord],
        vocab: &Vocabulary,
        order: usize,
        k: f64,
    ) -> Result<Self> {
        let seqs: Vec<Vec<TokenId>> = records
            .iter()
            .map(|r| tokenize(&r.text, vocab).into_ids())
            .collect();
        fit_ngram_lm(&seqs, vocab.size(), order, k)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> f64 {
        self.k
    }

    fn dist_from(&self, counts: Option<&ContextCounts>) -> Vec<f64> {
        let v = self.vocab_size as f64;
        let total = counts.map_or(0, |c| c.total) as f64;
        let denom = total + self.k * v;
        let mut probs = vec![self.k / denom; self.vocab_size];
        if let Some(c) = counts {
            for (&tok, &n) in &c.next {
                probs[tok as usize] = (n as f64 + self.k) / denom;
            }
        }
        probs
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, &NgramFile::from(self))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let raw: NgramFile = serde_json::from_reader(BufReader::new(file))?;
        raw.try_into()
    }
}

impl ProxyLM for NgramLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_token_dist(&self, context: &[TokenId]) -> NextTokenDistribution {
        for m in (1..self.order).rev() {
            if context.len() < m {
                continue;
            }
            if let Some(c) = self.tables[m].get(&context[context.len() - m..]) {
                if c.total > 0 {
                    return NextTokenDistribution::new_unchecked(self.dist_from(Some(c)));
                }
            }
        }
        NextTokenDistribution::new_unchecked(self.dist_from(self.tables[0].get(&[][..])))
    }
}

#[derive(Serialize, Deserialize)]
struct NgramFile {
    schema_version: u32,
    order: usize,
    k: f64,
    vocab_size: usize,
    /// Per context length: context → sorted (token, count) pairs.
    tables: Vec<BTreeMap<String, Vec<(TokenId, u64)>>>,
}

fn context_key(ctx: &[TokenId]) -> String {
    ctx.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
}

impl From<&NgramLm> for NgramFile {
    fn from(lm: &NgramLm) -> Self {
        let tables = lm
            .tables
            .iter()
            .map(|t| {
                t.iter()
                    .map(|(ctx, c)| {
                        let mut next: Vec<_> = c.next.iter().map(|(&a, &b)| (a, b)).collect();
                        next.sort_unstable();
                        (context_key(ctx), next)
                    })
                    .collect()
            })
            .collect();
        NgramFile {
            schema_version: NGRAM_SCHEMA_VERSION,
            order: lm.order,
            k: lm.k,
            vocab_size: lm.vocab_size,
            tables,
        }
    }
}

impl TryFrom<NgramFile> for NgramLm {
    type Error = Error;

    fn try_from(f: NgramFile) -> Result<Self> {
        if f.schema_version != NGRAM_SCHEMA_VERSION {
            return Err(Error::VersionMismatch {
                found: f.schema_version,
                expected: NGRAM_SCHEMA_VERSION,
            });
        }
        if f.tables.len() != f.order || f.order == 0 {
            return Err(Error::CorruptCheckpoint {
                field: "tables".into(),
                message: format!("{} tables for order {}", f.tables.len(), f.order),
            });
        }
        let mut tables = Vec::with_capacity(f.order);
        for (m, t) in f.tables.into_iter().enumerate() {
            let mut table = HashMap::with_capacity(t.len());
            for (key, next) in t {
                let ctx: Vec<TokenId> = key
                    .split_whitespace()
                    .map(|s| s.parse::<TokenId>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::CorruptCheckpoint {
                        field: format!("tables[{m}]"),
                        message: e.to_string(),
                    })?;
                if ctx.len() != m || next.iter().any(|&(t, _)| t as usize >= f.vocab_size) {
                    return Err(Error::CorruptCheckpoint {
                        field: format!("tables[{m}]"),
                        message: format!("bad entry for context {key:?}"),
                    });
                }
                let counts = ContextCounts {
                    total: next.iter().map(|&(_, c)| c).sum(),
                    next: next.into_iter().collect(),
                };
                table.insert(ctx, counts);
            }
            tables.push(table);
        }
        Ok(NgramLm {
            order: f.order,
            k: f.k,
            vocab_size: f.vocab_size,
            tables,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::build_vocabulary;

    fn abab() -> (NgramLm, Vocabulary) {
        let corpus = [PromptRecord::new("x", "a b a b")];
        let vocab = build_vocabulary(&corpus, 8).unwrap();
        (NgramLm::fit_records(&corpus, &vocab, 2, 0.1).unwrap(), vocab)
    }

    #[test]
    fn add_k_bigram_probability() {
        let (lm, vocab) = abab();
        let (a, b) = (vocab.id("a").unwrap(), vocab.id("b").unwrap());
        let v = vocab.size() as f64;
        let k = 0.1;
        let p = lm.next_token_dist(&[a]);
        assert!((p.probs()[b as usize] - (2.0 + k) / (2.0 + k * v)).abs() < 1e-15);
    }

    #[test]
    fn unseen_context_backs_off() {
        let (lm, vocab) = abab();
        let unk = vocab.unknown_id();
        let backed = lm.next_token_dist(&[unk]);
        let unigram = lm.next_token_dist(&[]);
        assert_eq!(backed, unigram);
        // Unigram: a and b each seen twice in 4 tokens.
        let a = vocab.id("a").unwrap() as usize;
        let v = vocab.size() as f64;
        assert!((unigram.probs()[a] - 2.1 / (4.0 + 0.1 * v)).abs() < 1e-15);
    }

    #[test]
    fn all_distributions_normalized() {
        let corpus = crate::corpus::make_synthetic_corpus(2, 30, 0.5).unwrap();
        let vocab = build_vocabulary(&corpus, 64).unwrap();
        for order in 1..=3 {
            let lm = NgramLm::fit_records(&corpus, &vocab, order, 0.1).unwrap();
            for a in 0..vocab.size() as TokenId {
                for b in 0..vocab.size() as TokenId {
                    let s: f64 = lm.next_token_dist(&[a, b]).probs().iter().sum();
                    assert!((s - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn fit_preconditions() {
        assert!(fit_ngram_lm(&[], 4, 2, 0.1).is_err());
        assert!(fit_ngram_lm(&[vec![0]], 4, 0, 0.1).is_err());
        assert!(fit_ngram_lm(&[vec![0]], 4, 2, 0.0).is_err());
        assert!(fit_ngram_lm(&[vec![9]], 4, 2, 0.1).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let corpus = crate::corpus::make_synthetic_corpus(4, 20, 0.5).unwrap();
        let vocab = build_vocabulary(&corpus, 128).unwrap();
        let lm = NgramLm::fit_records(&corpus, &vocab, 3, 0.25).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lm.json");
        lm.save(&p).unwrap();
        assert_eq!(NgramLm::load(&p).unwrap(), lm);

        let mut raw: serde_json::Value =
            serde_json::from_reader(File::open(&p).unwrap()).unwrap();
        raw["schema_version"] = 99.into();
        serde_json::to_writer(File::create(&p).unwrap(), &raw).unwrap();
        assert!(matches!(NgramLm::load(&p), Err(Error::VersionMismatch { found: 99, .. })));
    }
}
