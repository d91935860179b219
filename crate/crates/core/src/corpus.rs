//! JSONL prompt corpora and the seeded synthetic key/filler corpus.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::pretokenize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    #[serde(default)]
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_output: Option<String>,
    /// `true` marks a planted filler token. Synthetic corpora only.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "mask01")]
    pub filler_mask: Option<Vec<bool>>,
}

impl PromptRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            reference_output: None,
            filler_mask: None,
        }
    }
}

mod mask01 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(mask: &Option<Vec<bool>>, s: S) -> Result<S::Ok, S::Error> {
        match mask {
            Some(m) => s.collect_seq(m.iter().map(|&b| b as u8)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<bool>>, D::Error> {
        let raw: Option<Vec<u8>> = Option::deserialize(d)?;
        raw.map(|v| {
            v.into_iter()
                .map(|x| match x {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(serde::de::Error::custom(format!(
                        "filler_mask entries must be 0 or 1, got {other}"
                    ))),
                })
                .collect()
        })
        .transpose()
    }
}

/// Parses a JSONL corpus. Blank lines are skipped; records without an `id`
/// are named after their line number.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<PromptRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn parse_corpus(reader: impl BufRead) -> Result<Vec<PromptRecord>> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<corpus>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut record: PromptRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
        if record.id.is_empty() {
            record.id = format!("line-{line_no}");
        }
        if let Some(mask) = &record.filler_mask {
            let n = pretokenize(&record.text).len();
            if mask.len() != n {
                return Err(Error::MalformedLine {
                    line: line_no,
                    message: format!("filler_mask has {} entries for {n} tokens", mask.len()),
                });
            }
        }
        records.push(record);
    }
    Ok(records)
}

pub fn write_corpus(records: &[PromptRecord], out: impl Write) -> Result<()> {
    let mut w = BufWriter::new(out);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io("<corpus>", e))?;
    }
    w.flush().map_err(|e| Error::io("<corpus>", e))
}

const FILLER_LEXICON: &[&str] = &[
    "um", "uh", "like", "basically", "actually", "just", "really", "so",
];

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "m", "n", "p", "r", "t", "v", "z"];
const NUCLEI: &[&str] = &["a", "e", "i", "o"];
const CODAS: &[&str] = &["x", "q"];

/// Content words: CV-CV-C pseudo-words. Codas `x`/`q` never end an English
/// filler, so the two lexicons are disjoint.
pub fn key_lexicon() -> Vec<String> {
    let mut words = Vec::new();
    for (i, on) in ONSETS.iter().enumerate() {
        for nu in NUCLEI {
            for co in CODAS {
                let second = ONSETS[(i * 5 + 3) % ONSETS.len()];
                words.push(format!("{on}{nu}{second}{nu}{co}"));
            }
        }
    }
    words
}

pub fn filler_lexicon() -> Vec<String> {
    FILLER_LEXICON.iter().map(|s| s.to_string()).collect()
}

const MIN_LEN: usize = 64;
const MAX_LEN: usize = 96;

/// Seeded corpus of key tokens interleaved with filler tokens.
///
/// Each prompt has between 64 and 96 tokens; `round(filler_fraction * len)`
/// positions are fillers, chosen uniformly. The key tokens in order form
/// `reference_output`.
pub fn make_synthetic_corpus(
    seed: u64,
    n_prompts: usize,
    filler_fraction: f64,
) -> Result<Vec<PromptRecord>> {
    if n_prompts == 0 {
        return Err(Error::InvalidArgument("n_prompts must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&filler_fraction) {
        return Err(Error::InvalidArgument(format!(
            "filler_fraction must lie in [0, 1], got {filler_fraction}"
        )));
    }
    let keys = key_lexicon();
    let fillers = filler_lexicon();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_prompts);
    for i in 0..n_prompts {
        let len = rng.gen_range(MIN_LEN..=MAX_LEN);
        let n_fill = (filler_fraction * len as f64).round() as usize;
        let mut mask: Vec<bool> = (0..len).map(|j| j < n_fill).collect();
        mask.shuffle(&mut rng);
        let mut words = Vec::with_capacity(len);
        let mut key_words = Vec::new();
        for &is_filler in &mask {
            if is_filler {
                words.push(fillers[rng.gen_range(0..fillers.len())].as_str());
            } else {
                let w = keys[rng.gen_range(0..keys.len())].as_str();
                words.push(w);
                key_words.push(w);
            }
        }
        out.push(PromptRecord {
            id: format!("syn-{i:05}"),
            text: words.join(" "),
            reference_output: Some(key_words.join(" ")),
            filler_mask: Some(mask),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use std::io::Cursor;

    #[test]
    fn lexicons_are_disjoint() {
        let keys: HashSet<String> = key_lexicon().into_iter().collect();
        assert_eq!(keys.len(), key_lexicon().len());
        assert!(filler_lexicon().iter().all(|f| !keys.contains(f)));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_corpus(&make_synthetic_corpus(7, 50, 0.5).unwrap(), &mut a).unwrap();
        write_corpus(&make_synthetic_corpus(7, 50, 0.5).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_filler_fraction() {
        for r in make_synthetic_corpus(1, 20, 0.0).unwrap() {
            assert!(r.filler_mask.unwrap().iter().all(|&m| !m));
        }
    }

    #[test]
    fn filler_share_matches_fraction() {
        let corpus = make_synthetic_corpus(5, 100, 0.5).unwrap();
        let (mut fill, mut total) = (0, 0);
        for r in &corpus {
            let mask = r.filler_mask.as_ref().unwrap();
            assert_eq!(mask.len(), pretokenize(&r.text).len());
            fill += mask.iter().filter(|&&m| m).count();
            total += mask.len();
        }
        let share = fill as f64 / total as f64;
        assert!((share - 0.5).abs() <= 0.05, "share {share}");
    }

    #[test]
    fn bad_fraction_rejected() {
        assert!(make_synthetic_corpus(1, 1, 1.5).is_err());
        assert!(make_synthetic_corpus(1, 1, -0.1).is_err());
        assert!(make_synthetic_corpus(1, 0, 0.5).is_err());
    }

    #[test]
    fn parse_three_lines() {
        let src = r#"{"id":"a","text":"x y"}
{"id":"b","text":"z","reference_output":"z"}
{"text":"w","filler_mask":[1]}
"#;
        let recs = parse_corpus(Cursor::new(src)).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].reference_output, None);
        assert_eq!(recs[0].filler_mask, None);
        assert_eq!(recs[1].reference_output.as_deref(), Some("z"));
        assert_eq!(recs[2].id, "line-3");
        assert_eq!(recs[2].filler_mask, Some(vec![true]));
    }

    #[test]
    fn malformed_line_is_named() {
        let src = "{\"text\":\"a\"}\n{not json\n{\"text\":\"b\"}\n";
        let err = parse_corpus(Cursor::new(src)).unwrap_err();
        assert!(err.to_string().starts_with("line 2"), "{err}");
    }

    #[test]
    fn mask_length_checked() {
        let src = "{\"text\":\"a b\",\"filler_mask\":[0]}\n";
        assert!(parse_corpus(Cursor::new(src)).is_err());
    }

    #[test]
    fn large_file_preserves_order() {
        let corpus = make_synthetic_corpus(9, 2048, 0.4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        write_corpus(&corpus, File::create(&path).unwrap()).unwrap();
        let loaded = load_corpus(&path).unwrap();
        assert_eq!(loaded.len(), 2048);
        for i in [0, 1, 777, 2047] {
            assert_eq!(loaded[i], corpus[i]);
        }
    }
}
