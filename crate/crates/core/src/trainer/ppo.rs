use rayon::prelude::*;

use super::buffer::TrajectoryStep;
use crate::error::{Error, Result};
use crate::nn::{Grads, SequenceEncoder};
use crate::policy::{Actor, Critic};

/// Clipped surrogate term `min(δ·A, clip(δ, 1−ε, 1+ε)·A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage;
    unclipped.min(clipped)
}

/// δ = exp(new − old), rejected when it is not finite.
pub fn policy_ratio(new_log_prob: f64, old_log_prob: f64) -> Result<f64> {
    let log_ratio = new_log_prob - old_log_prob;
    let ratio = log_ratio.exp();
    if !ratio.is_finite() || !log_ratio.is_finite() {
        return Err(Error::DegeneratePolicyRatio { log_ratio });
    }
    Ok(ratio)
}

fn check_batch(batch: &[&TrajectoryStep], clip_eps: f64) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty update batch".into()));
    }
    if !(clip_eps > 0.0 && clip_eps < 1.0) {
        return Err(Error::config(format!("clip_eps must lie in (0, 1), got {clip_eps}")));
    }
    if let Some(s) = batch.iter().find(|s| !s.old_log_prob.is_finite()) {
        return Err(Error::NonFinite {
            what: "old log-probability",
            value: s.old_log_prob,
        });
    }
    Ok(())
}

/// Mean clipped surrogate of `actor` over `batch`.
pub fn ppo_objective<E: SequenceEncoder>(
    batch: &[&TrajectoryStep],
    actor: &Actor<E>,
    clip_eps: f64,
) -> Result<f64> {
    check_batch(batch, clip_eps)?;
    let terms = batch
        .par_iter()
        .map(|s| {
            let lp = actor.action_log_prob(s.state.current(), &s.action)?;
            Ok(clipped_surrogate(policy_ratio(lp, s.old_log_prob)?, s.advantage, clip_eps))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(terms.iter().sum::<f64>() / batch.len() as f64)
}

/// Objective and the gradient of its negation, ready for a minimizing step.
pub fn ppo_loss_grad<E: SequenceEncoder>(
    batch: &[&TrajectoryStep],
    actor: &Actor<E>,
    clip_eps: f64,
) -> Result<(f64, Grads)> {
    check_batch(batch, clip_eps)?;
    let n = batch.len() as f64;
    let parts = batch
        .par_iter()
        .map(|s| {
            let mut g = Grads::zeros(actor.params());
            let mut term = 0.0;
            actor.action_log_prob_grad(s.state.current(), &s.action, &mut g, |lp| {
                let ratio = policy_ratio(lp, s.old_log_prob)?;
                let a = s.advantage;
                term = clipped_surrogate(ratio, a, clip_eps);
                // Only the unclipped branch carries gradient.
                Ok(if ratio * a <= term { -a * ratio / n } else { 0.0 })
            })?;
            Ok((term, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grads = Grads::zeros(actor.params());
    let mut total = 0.0;
    for (term, g) in &parts {
        total += term;
        grads.add_assign(g);
    }
    Ok((total / n, grads))
}

/// δ_t = G_t − V(s_t).
pub fn td_error(g: f64, v: f64) -> f64 {
    g - v
}

/// Mean squared TD error of `critic` over `batch`.
pub fn critic_loss<E: SequenceEncoder>(batch: &[&TrajectoryStep], critic: &Critic<E>) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty update batch".into()));
    }
    let sq = batch
        .par_iter()
        .map(|s| Ok(td_error(s.return_to_go, critic.value(s.state.current())?).powi(2)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(sq.iter().sum::<f64>() / batch.len() as f64)
}

pub fn critic_loss_grad<E: SequenceEncoder>(
    batch: &[&TrajectoryStep],
    critic: &Critic<E>,
) -> Result<(f64, Grads)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty update batch".into()));
    }
    let n = batch.len() as f64;
    let parts = batch
        .par_iter()
        .map(|s| {
            let mut g = Grads::zeros(critic.params());
            let v = critic.value_grad(s.state.current(), &mut g, |v| {
                -2.0 * td_error(s.return_to_go, v) / n
            })?;
            Ok((td_error(s.return_to_go, v).powi(2), g))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grads = Grads::zeros(critic.params());
    let mut total = 0.0;
    for (sq, g) in &parts {
        total += sq;
        grads.add_assign(g);
    }
    Ok((total / n, grads))
}
