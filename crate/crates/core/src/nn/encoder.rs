use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{uniform, xavier, Matrix, ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tokenizer::TokenId;

/// Maps a token sequence to one feature row per token.
///
/// Encoders register their parameters in the owning model's [`ParamStore`]
/// and express the forward pass on a [`Tape`], so any implementation is
/// trainable by the policy optimizer.
pub trait SequenceEncoder: Clone + Send + Sync {
    fn dim(&self) -> usize;

    /// Returns an `L × dim` matrix variable.
    fn encode(&self, tape: &mut Tape<'_>, ids: &[TokenId]) -> Result<Var>;
}

/// Evaluation-mode features of `ids`.
pub fn encode_features<E: SequenceEncoder>(
    encoder: &E,
    params: &ParamStore,
    ids: &[TokenId],
) -> Result<Matrix> {
    let mut tape = Tape::new(params);
    let out = encoder.encode(&mut tape, ids)?;
    Ok(tape.value(out).clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl TransformerConfig {
    pub fn reference(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 64,
            n_heads: 2,
            n_layers: 2,
            d_ff: 128,
            max_len: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.d_model == 0 || self.n_heads == 0 || self.max_len == 0 {
            return Err(Error::config("encoder dimensions must be positive"));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::config(format!(
                "encoder.d_model {} is not divisible by encoder.n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct LayerParams {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Pre-norm bidirectional self-attention encoder with learned positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformerEncoder {
    cfg: TransformerConfig,
    tok_emb: ParamId,
    pos_emb: ParamId,
    layers: Vec<LayerParams>,
    lnf_g: ParamId,
    lnf_b: ParamId,
}

const EMBED_SCALE: f64 = 0.1;

impl TransformerEncoder {
    pub fn new(
        cfg: TransformerConfig,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let ones = || Array2::ones((1, d));
        let zeros = |n: usize| Array2::zeros((1, n));
        let tok_emb = store.add(
            format!("{prefix}.tok_emb"),
            uniform(cfg.vocab_size, d, EMBED_SCALE, rng),
        );
        let pos_emb = store.add(
            format!("{prefix}.pos_emb"),
            uniform(cfg.max_len, d, EMBED_SCALE, rng),
        );
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = format!("{prefix}.layer{l}");
            layers.push(LayerParams {
                ln1_g: store.add(format!("{p}.ln1_g"), ones()),
                ln1_b: store.add(format!("{p}.ln1_b"), zeros(d)),
                wq: store.add(format!("{p}.wq"), xavier(d, d, rng)),
                bq: store.add(format!("{p}.bq"), zeros(d)),
                wk: store.add(format!("{p}.wk"), xavier(d, d, rng)),
                bk: store.add(format!("{p}.bk"), zeros(d)),
                wv: store.add(format!("{p}.wv"), xavier(d, d, rng)),
                bv: store.add(format!("{p}.bv"), zeros(d)),
                wo: store.add(format!("{p}.wo"), xavier(d, d, rng)),
                bo: store.add(format!("{p}.bo"), zeros(d)),
                ln2_g: store.add(format!("{p}.ln2_g"), ones()),
                ln2_b: store.add(format!("{p}.ln2_b"), zeros(d)),
                w1: store.add(format!("{p}.w1"), xavier(d, cfg.d_ff, rng)),
                b1: store.add(format!("{p}.b1"), zeros(cfg.d_ff)),
                w2: store.add(format!("{p}.w2"), xavier(cfg.d_ff, d, rng)),
                b2: store.add(format!("{p}.b2"), zeros(d)),
            });
        }
        Ok(Self {
            cfg,
            tok_emb,
            pos_emb,
            layers,
            lnf_g: store.add(format!("{prefix}.lnf_g"), ones()),
            lnf_b: store.add(format!("{prefix}.lnf_b"), zeros(d)),
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.cfg
    }

    fn affine(tape: &mut Tape<'_>, x: Var, w: ParamId, b: ParamId) -> Var {
        let w = tape.param(w);
        let b = tape.param(b);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }

    fn norm(tape: &mut Tape<'_>, x: Var, g: ParamId, b: ParamId) -> Var {
        let g = tape.param(g);
        let b = tape.param(b);
        tape.layer_norm(x, g, b)
    }
}

impl SequenceEncoder for TransformerEncoder {
    fn dim(&self) -> usize {
        self.cfg.d_model
    }

    fn encode(&self, tape: &mut Tape<'_>, ids: &[TokenId]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        if ids.len() > self.cfg.max_len {
            return Err(Error::InvalidArgument(format!(
                "sequence of {} tokens exceeds encoder max_len {}",
                ids.len(),
                self.cfg.max_len
            )));
        }
        let rows: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.cfg.vocab_size) {
            return Err(Error::IdOutOfRange {
                id: bad as TokenId,
                size: self.cfg.vocab_size,
            });
        }
        let positions: Vec<usize> = (0..ids.len()).collect();
        let tok = tape.embed(self.tok_emb, &rows);
        let pos = tape.embed(self.pos_emb, &positions);
        let mut x = tape.add(tok, pos);

        let head_dim = self.cfg.d_model / self.cfg.n_heads;
        let inv_sqrt = 1.0 / (head_dim as f64).sqrt();
        for layer in &self.layers {
            let a = Self::norm(tape, x, layer.ln1_g, layer.ln1_b);
            let q = Self::affine(tape, a, layer.wq, layer.bq);
            let k = Self::affine(tape, a, layer.wk, layer.bk);
            let v = Self::affine(tape, a, layer.wv, layer.bv);
            let mut heads = Vec::with_capacity(self.cfg.n_heads);
            for h in 0..self.cfg.n_heads {
                let start = h * head_dim;
                let qh = tape.slice_cols(q, start, head_dim);
                let kh = tape.slice_cols(k, start, head_dim);
                let vh = tape.slice_cols(v, start, head_dim);
                let scores = tape.matmul_t(qh, kh);
                let scores = tape.scale(scores, inv_sqrt);
                let attn = tape.softmax_rows(scores);
                heads.push(tape.matmul(attn, vh));
            }
            let merged = tape.concat_cols(&heads);
            let o = Self::affine(tape, merged, layer.wo, layer.bo);
            x = tape.add(x, o);

            let f = Self::norm(tape, x, layer.ln2_g, layer.ln2_b);
            let f = Self::affine(tape, f, layer.w1, layer.b1);
            let f = tape.gelu(f);
            let f = Self::affine(tape, f, layer.w2, layer.b2);
            x = tape.add(x, f);
        }
        Ok(Self::norm(tape, x, self.lnf_g, self.lnf_b))
    }
}

/// Context-free encoder: each token's feature row is its embedding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingEncoder {
    table: ParamId,
    vocab_size: usize,
    dim: usize,
}

impl EmbeddingEncoder {
    pub fn new(store: &mut ParamStore, name: &str, table: Matrix) -> Self {
        let (vocab_size, dim) = table.dim();
        Self {
            table: store.add(name, table),
            vocab_size,
            dim,
        }
    }
}

impl SequenceEncoder for EmbeddingEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, tape: &mut Tape<'_>, ids: &[TokenId]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        let rows: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.vocab_size) {
            return Err(Error::IdOutOfRange {
                id: bad as TokenId,
                size: self.vocab_size,
            });
        }
        Ok(tape.embed(self.table, &rows))
    }
}
