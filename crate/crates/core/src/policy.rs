//! Keep/drop actor and state-value critic.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{ActionVector, CompressionState};
use crate::error::{Error, Result};
use crate::nn::{
    uniform, xavier, Grads, Matrix, ParamId, ParamStore, SequenceEncoder, Tape, TransformerConfig,
    TransformerEncoder, Var,
};
use crate::tokenizer::TokenId;

/// Keep probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]`.
pub const PROB_FLOOR: f64 = 1e-6;
const DROP: usize = 0;
const KEEP: usize = 1;
const HEAD_INIT_SCALE: f64 = 0.01;

fn log_floor() -> (f64, f64) {
    (PROB_FLOOR.ln(), (1.0 - PROB_FLOOR).ln())
}

/// Per-token keep/drop classifier: encoder features through an affine
/// `d → 2` head and a two-way softmax.
#[derive(Debug, Clone)]
pub struct Actor<E = TransformerEncoder> {
    params: ParamStore,
    encoder: E,
    head_w: ParamId,
    head_b: ParamId,
}

impl Actor<TransformerEncoder> {
    pub fn reference(cfg: TransformerConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = TransformerEncoder::new(cfg, &mut params, "actor.enc", &mut rng)?;
        let head_w = uniform(cfg.d_model, 2, HEAD_INIT_SCALE, &mut rng);
        Actor::with_encoder(params, encoder, head_w, Array2::zeros((1, 2)))
    }
}

impl<E: SequenceEncoder> Actor<E> {
    /// `params` must already hold the encoder's parameters.
    pub fn with_encoder(mut params: ParamStore, encoder: E, head_w: Matrix, head_b: Matrix) -> Result<Self> {
        let d = encoder.dim();
        if head_w.dim() != (d, 2) || head_b.dim() != (1, 2) {
            return Err(Error::InvalidArgument(format!(
                "actor head must be {d}x2 and 1x2, got {:?} and {:?}",
                head_w.dim(),
                head_b.dim()
            )));
        }
        let head_w = params.add("actor.head_w", head_w);
        let head_b = params.add("actor.head_b", head_b);
        Ok(Self {
            params,
            encoder,
            head_w,
            head_b,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn encoder(&self) -> &E {
        &self.encoder
    }

    /// Clamped per-token log-probabilities, `L × 2` (drop, keep).
    fn log_probs_on(&self, tape: &mut Tape<'_>, ids: &[TokenId]) -> Result<Var> {
        let h = self.encoder.encode(tape, ids)?;
        let w = tape.param(self.head_w);
        let b = tape.param(self.head_b);
        let logits = tape.matmul(h, w);
        let logits = tape.add_row(logits, b);
        let lp = tape.log_softmax_rows(logits);
        let (lo, hi) = log_floor();
        Ok(tape.clamp(lp, lo, hi))
    }

    fn action_tape<'a>(&'a self, ids: &[TokenId], action: &ActionVector) -> Result<(Tape<'a>, Var)> {
        if action.len() != ids.len() {
            return Err(Error::LengthMismatch {
                action: action.len(),
                sequence: ids.len(),
            });
        }
        let mut tape = Tape::new(&self.params);
        let lp = self.log_probs_on(&mut tape, ids)?;
        let cols: Vec<usize> = action.labels().iter().map(|&l| l as usize).collect();
        let picked = tape.pick(lp, &cols);
        let total = tape.sum(picked);
        Ok((tape, total))
    }

    /// Summed log-probability of `action` on `ids`.
    pub fn action_log_prob(&self, ids: &[TokenId], action: &ActionVector) -> Result<f64> {
        let (tape, total) = self.action_tape(ids, action)?;
        Ok(tape.scalar(total))
    }

    /// Like [`Actor::action_log_prob`], and accumulates `coef(log_prob) · ∇`
    /// into `grads`.
    pub fn action_log_prob_grad(
        &self,
        ids: &[TokenId],
        action: &ActionVector,
        grads: &mut Grads,
        coef: impl FnOnce(f64) -> Result<f64>,
    ) -> Result<f64> {
        let (tape, total) = self.action_tape(ids, action)?;
        let lp = tape.scalar(total);
        let c = coef(lp)?;
        if c != 0.0 {
            tape.backward(total, c, grads);
        }
        Ok(lp)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    /// Probability of label 1, within `[PROB_FLOOR, 1 - PROB_FLOOR]`.
    pub keep_probs: Vec<f64>,
    /// Clamped `(drop, keep)` log-probabilities per token.
    pub log_probs: Vec<[f64; 2]>,
}

impl PolicyOutput {
    pub fn len(&self) -> usize {
        self.keep_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep_probs.is_empty()
    }

    pub fn drop_prob(&self, i: usize) -> f64 {
        1.0 - self.keep_probs[i]
    }

    /// Summed log-probability of the labels in `action`.
    pub fn log_prob_of(&self, action: &ActionVector) -> Result<f64> {
        if action.len() != self.len() {
            return Err(Error::LengthMismatch {
                action: action.len(),
                sequence: self.len(),
            });
        }
        Ok(self
            .log_probs
            .iter()
            .zip(action.labels())
            .fold(0.0, |acc, (lp, &l)| acc + lp[l as usize]))
    }
}

pub fn policy_forward<E: SequenceEncoder>(actor: &Actor<E>, state: &CompressionState) -> Result<PolicyOutput> {
    let ids = state.current();
    if ids.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    let mut tape = Tape::new(&actor.params);
    let lp = actor.log_probs_on(&mut tape, ids)?;
    let m = tape.value(lp);
    let log_probs: Vec<[f64; 2]> = m.rows().into_iter().map(|r| [r[DROP], r[KEEP]]).collect();
    let keep_probs = log_probs
        .iter()
        .map(|lp| lp[KEEP].exp().clamp(PROB_FLOOR, 1.0 - PROB_FLOOR))
        .collect();
    Ok(PolicyOutput {
        keep_probs,
        log_probs,
    })
}

/// Draws every label independently; returns the action and its summed
/// log-probability.
pub fn sample_actions(output: &PolicyOutput, rng_seed: u64) -> (ActionVector, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let action = ActionVector::from_keep(output.keep_probs.iter().map(|&p| rng.gen::<f64>() < p));
    let lp = output.log_prob_of(&action).expect("lengths agree");
    (action, lp)
}

/// Budget 0 thresholds keep probabilities at 0.5. A positive budget drops
/// the `min(budget, L - 1)` least-kept tokens, higher index first on ties.
/// Never returns an all-drop action.
pub fn greedy_actions(output: &PolicyOutput, drop_budget: usize) -> ActionVector {
    let n = output.len();
    if n == 0 {
        return ActionVector::all_keep(0);
    }
    if drop_budget == 0 {
        return ActionVector::from_keep(output.keep_probs.iter().map(|&p| p >= 0.5))
            .with_force_keep(&output.keep_probs);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        output.keep_probs[a]
            .total_cmp(&output.keep_probs[b])
            .then(b.cmp(&a))
    });
    let mut keep = vec![true; n];
    for &i in order.iter().take(drop_budget.min(n - 1)) {
        keep[i] = false;
    }
    ActionVector::from_keep(keep)
}

/// State-value estimator: mean-pooled encoder features through two affine
/// layers with a tanh between them.
#[derive(Debug, Clone)]
pub struct Critic<E = TransformerEncoder> {
    params: ParamStore,
    encoder: E,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl Critic<TransformerEncoder> {
    pub fn reference(cfg: TransformerConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = TransformerEncoder::new(cfg, &mut params, "critic.enc", &mut rng)?;
        let d = cfg.d_model;
        let w1 = xavier(d, d, &mut rng);
        let w2 = xavier(d, 1, &mut rng);
        Critic::with_encoder(params, encoder, w1, Array2::zeros((1, d)), w2, Array2::zeros((1, 1)))
    }
}

impl<E: SequenceEncoder> Critic<E> {
    pub fn with_encoder(
        mut params: ParamStore,
        encoder: E,
        w1: Matrix,
        b1: Matrix,
        w2: Matrix,
        b2: Matrix,
    ) -> Result<Self> {
        let d = encoder.dim();
        let hidden = w1.ncols();
        if w1.nrows() != d || b1.dim() != (1, hidden) || w2.dim() != (hidden, 1) || b2.dim() != (1, 1) {
            return Err(Error::InvalidArgument(format!(
                "critic head shapes {:?} {:?} {:?} {:?} do not fit feature dim {d}",
                w1.dim(),
                b1.dim(),
                w2.dim(),
                b2.dim()
            )));
        }
        let w1 = params.add("critic.w1", w1);
        let b1 = params.add("critic.b1", b1);
        let w2 = params.add("critic.w2", w2);
        let b2 = params.add("critic.b2", b2);
        Ok(Self {
            params,
            encoder,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn encoder(&self) -> &E {
        &self.encoder
    }

    fn value_tape<'a>(&'a self, ids: &[TokenId]) -> Result<(Tape<'a>, Var)> {
        let mut tape = Tape::new(&self.params);
        let h = self.encoder.encode(&mut tape, ids)?;
        let pooled = tape.mean_rows(h);
        let w1 = tape.param(self.w1);
        let b1 = tape.param(self.b1);
        let z = tape.matmul(pooled, w1);
        let z = tape.add_row(z, b1);
        let z = tape.tanh(z);
        let w2 = tape.param(self.w2);
        let b2 = tape.param(self.b2);
        let v = tape.matmul(z, w2);
        let v = tape.add_row(v, b2);
        let value = tape.scalar(v);
        if !value.is_finite() {
            return Err(Error::NonFinite { what: "critic value", value });
        }
        Ok((tape, v))
    }

    pub fn value(&self, ids: &[TokenId]) -> Result<f64> {
        let (tape, v) = self.value_tape(ids)?;
        Ok(tape.scalar(v))
    }

    /// Like [`Critic::value`], and accumulates `coef(value) · ∇V` into `grads`.
    pub fn value_grad(&self, ids: &[TokenId], grads: &mut Grads, coef: impl FnOnce(f64) -> f64) -> Result<f64> {
        let (tape, v) = self.value_tape(ids)?;
        let value = tape.scalar(v);
        let c = coef(value);
        if c != 0.0 {
            tape.backward(v, c, grads);
        }
        Ok(value)
    }
}

pub fn value_forward<E: SequenceEncoder>(critic: &Critic<E>, state: &CompressionState) -> Result<f64> {
    if state.current().is_empty() {
        return Err(Error::EmptyPrompt);
    }
    critic.value(state.current())
}
