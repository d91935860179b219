use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, Vocabulary};

/// Scores how much of `s0`'s key information survives in `st`, in [0, 1].
pub trait RetentionScorer: Send + Sync {
    fn score(&self, s0: &[TokenId], st: &[TokenId]) -> Result<f64>;
}

/// IDF-weighted multiset recall of `s0` tokens in `st`. Ids without a weight
/// count 1. An original whose total weight is zero retains everything (1.0).
pub fn idf_retention_score(
    s0: &[TokenId],
    st: &[TokenId],
    idf: &HashMap<TokenId, f64>,
) -> Result<f64> {
    if s0.is_empty() {
        return Err(Error::UndefinedRetention);
    }
    let weight = |t: &TokenId| idf.get(t).copied().unwrap_or(1.0);
    let mut remaining: HashMap<TokenId, usize> = HashMap::new();
    for &t in st {
        *remaining.entry(t).or_default() += 1;
    }
    let mut total = 0.0;
    let mut kept = 0.0;
    for t in s0 {
        let w = weight(t);
        total += w;
        if let Some(n) = remaining.get_mut(t) {
            if *n > 0 {
                *n -= 1;
                kept += w;
            }
        }
    }
    if total <= 0.0 {
        return Ok(1.0);
    }
    Ok((kept / total).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdfRetention {
    idf: HashMap<TokenId, f64>,
}

#[derive(Serialize, Deserialize)]
struct IdfLine {
    token: String,
    weight: f64,
}

impl IdfRetention {
    pub fn new(idf: HashMap<TokenId, f64>) -> Result<Self> {
        if let Some((t, w)) = idf.iter().find(|(_, w)| !(**w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument(format!("idf weight {w} for token {t}")));
        }
        Ok(Self { idf })
    }

    /// idf(t) = ln((N + 1) / (df(t) + 1)) over the documents in `docs`.
    pub fn fit(docs: &[Vec<TokenId>]) -> Self {
        let mut df: HashMap<TokenId, usize> = HashMap::new();
        for doc in docs {
            let mut seen: Vec<TokenId> = doc.clone();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *df.entry(t).or_default() += 1;
            }
        }
        let n = docs.len() as f64;
        let idf = df
            .into_iter()
            .map(|(t, d)| (t, ((n + 1.0) / (d as f64 + 1.0)).ln()))
            .collect();
        Self { idf }
    }

    pub fn weights(&self) -> &HashMap<TokenId, f64> {
        &self.idf
    }

    /// Reads a JSONL table of `{token, weight}`; surfaces absent from the
    /// vocabulary are ignored.
    pub fn load(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut idf = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: IdfLine = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: i + 1,
                message: e.to_string(),
            })?;
            if let Some(id) = vocab.id(&entry.token) {
                idf.insert(id, entry.weight);
            }
        }
        Self::new(idf)
    }

    pub fn save(&self, path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut entries: Vec<_> = self.idf.iter().collect();
        entries.sort_by_key(|(t, _)| **t);
        for (&t, &weight) in entries {
            let token = vocab
                .surface(t)
                .ok_or(Error::IdOutOfRange { id: t, size: vocab.size() })?
                .to_string();
            serde_json::to_writer(&mut w, &IdfLine { token, weight })?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

impl RetentionScorer for IdfRetention {
    fn score(&self, s0: &[TokenId], st: &[TokenId]) -> Result<f64> {
        idf_retention_score(s0, st, &self.idf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_scores_one() {
        let idf = HashMap::from([(1, 2.0), (2, 0.5)]);
        assert_eq!(idf_retention_score(&[1, 2, 3], &[1, 2, 3], &idf).unwrap(), 1.0);
    }

    #[test]
    fn single_kept_token() {
        let idf = HashMap::from([(1, 2.0), (2, 0.5), (3, 1.5)]);
        let s = idf_retention_score(&[1, 2, 3], &[3], &idf).unwrap();
        assert!((s - 1.5 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn empty_original_errors() {
        let err = idf_retention_score(&[], &[], &HashMap::new()).unwrap_err();
        assert!(err.to_string().contains("undefined retention"));
    }

    #[test]
    fn zero_weight_original() {
        let idf = HashMap::from([(1, 0.0)]);
        assert_eq!(idf_retention_score(&[1, 1], &[1], &idf).unwrap(), 1.0);
    }

    #[test]
    fn matches_brute_force_intersection() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let s0: Vec<TokenId> = (0..30).map(|_| rng.gen_range(0..12)).collect();
            let st: Vec<TokenId> = s0.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
            let idf: HashMap<TokenId, f64> =
                (0..10).map(|t| (t, rng.gen_range(0.0..3.0))).collect();
            let w = |t: TokenId| *idf.get(&t).unwrap_or(&1.0);
            // Multiset intersection: min of counts per distinct id.
            let mut num = 0.0;
            let mut den = 0.0;
            for t in 0..12u32 {
                let c0 = s0.iter().filter(|&&x| x == t).count();
                let ct = st.iter().filter(|&&x| x == t).count();
                num += c0.min(ct) as f64 * w(t);
                den += c0 as f64 * w(t);
            }
            let got = idf_retention_score(&s0, &st, &idf).unwrap();
            assert!((got - num / den).abs() < 1e-12);
        }
    }

    #[test]
    fn fit_gives_ubiquitous_tokens_zero_weight() {
        let docs = vec![vec![0, 1], vec![0, 2], vec![0, 3]];
        let r = IdfRetention::fit(&docs);
        assert_eq!(r.weights()[&0], 0.0);
        assert!((r.weights()[&1] - 2.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn idf_file_round_trip() {
        let vocab = Vocabulary::from_surfaces(
            vec!["<unk>".into(), "a".into(), "b".into()],
            0,
        )
        .unwrap();
        let r = IdfRetention::new(HashMap::from([(1, 0.25), (2, 3.0)])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("idf.jsonl");
        r.save(&p, &vocab).unwrap();
        assert_eq!(IdfRetention::load(&p, &vocab).unwrap(), r);
        assert!(IdfRetention::new(HashMap::from([(1, -1.0)])).is_err());
    }
}
