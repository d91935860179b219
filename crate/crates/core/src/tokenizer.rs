//! Whitespace/punctuation tokenization over a closed vocabulary.
//!
//! Word runs (alphanumerics, `_`, `'`) form one token each; every other
//! non-whitespace character is a token on its own. Detokenization joins
//! surfaces with single spaces, so round trips hold up to [`normalize_text`].

use std::collections::HashMap;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::corpus::PromptRecord;
use crate::error::{Error, Result};

pub type TokenId = u32;

pub const UNKNOWN_SURFACE: &str = "<unk>";

/// Ordered token ids. Immutable once built.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<TokenId>);

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn into_ids(self) -> Vec<TokenId> {
        self.0
    }

    /// `self` followed by `suffix`.
    pub fn concat(&self, suffix: &[TokenId]) -> TokenSequence {
        let mut ids = Vec::with_capacity(self.0.len() + suffix.len());
        ids.extend_from_slice(&self.0);
        ids.extend_from_slice(suffix);
        TokenSequence(ids)
    }
}

impl Deref for TokenSequence {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }
}

impl FromIterator<TokenId> for TokenSequence {
    fn from_iter<I: IntoIterator<Item = TokenId>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    surface_of: Vec<String>,
    id_of: HashMap<String, TokenId>,
    unknown_id: TokenId,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    surfaces: Vec<String>,
    unknown_id: TokenId,
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = Error;

    fn try_from(repr: VocabularyRepr) -> Result<Self> {
        Vocabulary::from_surfaces(repr.surfaces, repr.unknown_id)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            surfaces: v.surface_of,
            unknown_id: v.unknown_id,
        }
    }
}

impl Vocabulary {
    /// Builds a vocabulary from id-ordered surfaces. Surfaces must be unique.
    pub fn from_surfaces(surfaces: Vec<String>, unknown_id: TokenId) -> Result<Self> {
        if unknown_id as usize >= surfaces.len() {
            return Err(Error::IdOutOfRange {
                id: unknown_id,
                size: surfaces.len(),
            });
        }
        let mut id_of = HashMap::with_capacity(surfaces.len());
        for (i, s) in surfaces.iter().enumerate() {
            if id_of.insert(s.clone(), i as TokenId).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate vocabulary surface {s:?}"
                )));
            }
        }
        Ok(Self {
            surface_of: surfaces,
            id_of,
            unknown_id,
        })
    }

    pub fn size(&self) -> usize {
        self.surface_of.len()
    }

    pub fn unknown_id(&self) -> TokenId {
        self.unknown_id
    }

    pub fn id(&self, surface: &str) -> Option<TokenId> {
        self.id_of.get(surface).copied()
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.surface_of.get(id as usize).map(String::as_str)
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.surface_of.iter().map(String::as_str)
    }

    pub fn contains_id(&self, id: TokenId) -> bool {
        (id as usize) < self.surface_of.len()
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '\''
}

/// Splits text into surface tokens.
pub fn pretokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut start: Option<usize> = None;
        for (i, c) in chunk.char_indices() {
            if is_word_char(c) {
                start.get_or_insert(i);
            } else {
                if let Some(s) = start.take() {
                    out.push(&chunk[s..i]);
                }
                out.push(&chunk[i..i + c.len_utf8()]);
            }
        }
        if let Some(s) = start {
            out.push(&chunk[s..]);
        }
    }
    out
}

/// Canonical spacing: surfaces joined by single spaces.
pub fn normalize_text(text: &str) -> String {
    pretokenize(text).join(" ")
}

/// Keeps the `max_size - 1` most frequent surfaces plus `<unk>` (id 0).
/// Frequency ties are broken by lexicographic surface order.
pub fn build_vocabulary(corpus: &[PromptRecord], max_size: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if max_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "vocabulary max_size must be at least 2, got {max_size}"
        )));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for record in corpus {
        for tok in pretokenize(&record.text) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|(s, _)| *s != UNKNOWN_SURFACE)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut surfaces = vec![UNKNOWN_SURFACE.to_string()];
    surfaces.extend(ranked.into_iter().take(max_size - 1).map(|(s, _)| s.to_string()));
    Vocabulary::from_surfaces(surfaces, 0)
}

pub fn tokenize(text: &str, vocab: &Vocabulary) -> TokenSequence {
    pretokenize(text)
        .into_iter()
        .map(|s| vocab.id(s).unwrap_or(vocab.unknown_id))
        .collect()
}

pub fn detokenize(seq: &[TokenId], vocab: &Vocabulary) -> Result<String> {
    let mut parts = Vec::with_capacity(seq.len());
    for &id in seq {
        let s = vocab.surface(id).ok_or(Error::IdOutOfRange {
            id,
            size: vocab.size(),
        })?;
        parts.push(s);
    }
    Ok(parts.join(" "))
}

/// Checks every id of `seq` against the vocabulary bound.
pub fn validate_sequence(seq: &[TokenId], vocab: &Vocabulary) -> Result<()> {
    match seq.iter().find(|&&id| !vocab.contains_id(id)) {
        Some(&id) => Err(Error::IdOutOfRange {
            id,
            size: vocab.size(),
        }),
        None => Ok(()),
    }
}
