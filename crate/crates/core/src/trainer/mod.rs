//! Hierarchical-curriculum actor-critic training.

mod buffer;
mod checkpoint;
mod curriculum;
mod ppo;

pub use buffer::{returns_from, ReplayBuffer, Trajectory, TrajectoryStep};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use curriculum::{curriculum_bounds, BoundsMode, CurriculumSchedule, MIN_LOWER_BOUND};
pub use ppo::{
    clipped_surrogate, critic_loss, critic_loss_grad, policy_ratio, ppo_loss_grad, ppo_objective,
    td_error,
};

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{apply_action, compression_rate, reset, ActionVector, CompressionState};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, SequenceEncoder, TransformerConfig, TransformerEncoder};
use crate::policy::{greedy_actions, policy_forward, sample_actions, Actor, Critic};
use crate::reward::{compute_reward, RewardBreakdown, RewardConfig};
use crate::scoring::{generate_reference, ProxyLM, RetentionScorer};
use crate::tokenizer::TokenSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub clip_eps: f64,
    pub batch_size: usize,
    /// Trajectories collected before each update round.
    pub buffer_capacity: usize,
    pub discount: f64,
    pub seed: u64,
    /// Global gradient-norm ceiling for both models.
    pub grad_clip: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            actor_lr: 1e-5,
            critic_lr: 1e-6,
            clip_eps: 0.15,
            batch_size: 4,
            buffer_capacity: 16,
            discount: 1.0,
            seed: 0,
            grad_clip: 1.0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::config(format!("trainer.{name} must be positive, got {lr}")));
            }
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::config(format!(
                "trainer.clip_eps must lie in (0, 1), got {}",
                self.clip_eps
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("trainer.batch_size must be at least 1"));
        }
        if self.buffer_capacity < self.batch_size {
            return Err(Error::config(format!(
                "trainer.buffer_m ({}) must be at least trainer.batch_size ({})",
                self.buffer_capacity, self.batch_size
            )));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::config(format!(
                "trainer.discount must lie in (0, 1], got {}",
                self.discount
            )));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::config("trainer.grad_clip must be positive"));
        }
        Ok(())
    }
}

/// Reward components shared by collection and evaluation.
#[derive(Clone, Copy)]
pub struct Scorers<'a> {
    pub retention: &'a dyn RetentionScorer,
    pub lm: &'a dyn ProxyLM,
    /// Length of the greedy reference continuation.
    pub n_gen: usize,
}

/// Mixes `tags` into `base` (splitmix64 finalizer per tag).
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut z = base;
    for &t in tags {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(t.wrapping_mul(0xD1B5_4A32_D192_ED03));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

const TAG_ACTOR: u64 = 1;
const TAG_CRITIC: u64 = 2;
const TAG_SHUFFLE: u64 = 3;
const TAG_COLLECT: u64 = 4;
const TAG_UPDATE: u64 = 5;

/// Frozen models and settings used to roll out episodes.
pub struct Rollout<'a, E: SequenceEncoder> {
    pub actor: &'a Actor<E>,
    pub critic: &'a Critic<E>,
    pub schedule: &'a CurriculumSchedule,
    pub reward: &'a RewardConfig,
    pub scorers: Scorers<'a>,
    pub discount: f64,
}

impl<E: SequenceEncoder> Rollout<'_, E> {
    /// One sampled episode of `stage`'s length on `prompt`.
    pub fn collect(&self, prompt: &TokenSequence, stage: usize, seed: u64) -> Result<Vec<TrajectoryStep>> {
        let s0 = reset(prompt)?;
        let reference = generate_reference(self.scorers.lm, s0.original(), self.scorers.n_gen)?;
        let mut state = s0;
        let mut steps = Vec::with_capacity(self.schedule.t_max(stage));
        for t in 0..self.schedule.t_max(stage) {
            let (c_s, c_l) = self.schedule.bounds(stage, t)?;
            let cfg = self.reward.with_bounds(c_s, c_l);
            let out = policy_forward(self.actor, &state)?;
            let (action, _) = sample_actions(&out, derive_seed(seed, &[t as u64]));
            let action = action.with_force_keep(&out.keep_probs);
            let old_log_prob = self.actor.action_log_prob(state.current(), &action)?;
            let value = self.critic.value(state.current())?;
            let next = apply_action(&state, &action)?;
            let r = self.reward_of(&next, &cfg, &reference)?;
            steps.push(TrajectoryStep {
                state,
                action,
                old_log_prob,
                reward: r.total,
                value,
                advantage: r.total - value,
                return_to_go: 0.0,
                rho: compression_rate(&next),
                bounds: (c_s, c_l),
            });
            state = next;
        }
        let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
        for (t, step) in steps.iter_mut().enumerate() {
            step.return_to_go = returns_from(&rewards, t, self.discount)?;
        }
        Ok(steps)
    }

    fn reward_of(
        &self,
        state: &CompressionState,
        cfg: &RewardConfig,
        reference: &[u32],
    ) -> Result<RewardBreakdown> {
        compute_reward(
            state.original(),
            state.current(),
            cfg,
            self.scorers.retention,
            self.scorers.lm,
            reference,
        )
    }

    /// Runs one episode of `stage` without storing training data, tracking
    /// which original positions survive.
    pub fn episode(&self, prompt: &TokenSequence, stage: usize, mode: EpisodeMode) -> Result<EvalEpisode> {
        let s0 = reset(prompt)?;
        let reference = generate_reference(self.scorers.lm, s0.original(), self.scorers.n_gen)?;
        let mut state = s0;
        let mut positions: Vec<usize> = (0..prompt.len()).collect();
        let mut rewards = Vec::new();
        for t in 0..self.schedule.t_max(stage) {
            let (c_s, c_l) = self.schedule.bounds(stage, t)?;
            let out = policy_forward(self.actor, &state)?;
            let action = match mode {
                EpisodeMode::Greedy => greedy_actions(&out, 0),
                EpisodeMode::ExpectedCount => {
                    let expected_drops: f64 = out.keep_probs.iter().map(|p| 1.0 - p).sum();
                    greedy_actions(&out, expected_drops.round() as usize)
                }
                EpisodeMode::Sample(seed) => sample_actions(&out, derive_seed(seed, &[t as u64]))
                    .0
                    .with_force_keep(&out.keep_probs),
            };
            positions = keep_positions(&positions, &action);
            state = apply_action(&state, &action)?;
            rewards.push(self.reward_of(&state, &self.reward.with_bounds(c_s, c_l), &reference)?);
        }
        Ok(EvalEpisode {
            rho: compression_rate(&state),
            compressed: state.current().clone(),
            kept_positions: positions,
            rewards,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeMode {
    /// Keep every token whose keep probability is at least 0.5.
    Greedy,
    /// Drop the `round(Σ (1 − p_keep))` least-kept tokens: the policy's
    /// expected drop count, taken deterministically.
    ExpectedCount,
    /// Sample as during collection, from the given seed.
    Sample(u64),
}

fn keep_positions(positions: &[usize], action: &ActionVector) -> Vec<usize> {
    positions
        .iter()
        .zip(action.labels())
        .filter(|(_, &l)| l == 1)
        .map(|(&p, _)| p)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEpisode {
    pub compressed: TokenSequence,
    /// Indices into the original prompt of the surviving tokens.
    pub kept_positions: Vec<usize>,
    pub rho: f64,
    /// Per-step rewards under the stage's bands.
    pub rewards: Vec<RewardBreakdown>,
}

impl EvalEpisode {
    pub fn final_reward(&self) -> f64 {
        self.rewards.last().map_or(0.0, |r| r.total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub round: usize,
    pub stage: usize,
    pub epoch: usize,
    pub trajectories: usize,
    pub steps: usize,
    /// Surrogate objective averaged over the round's iterations.
    pub objective: f64,
    pub critic_loss: f64,
    pub mean_reward: f64,
    pub mean_rho: f64,
    /// Bands of each step of the stage.
    pub bounds: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<UpdateRecord>,
}

impl TrainingLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            writeln!(out).map_err(|e| Error::io("<training log>", e))?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }
}

/// Training state: live and frozen models, optimizers and progress.
#[derive(Debug, Clone)]
pub struct Trainer<E: SequenceEncoder = TransformerEncoder> {
    pub cfg: TrainerConfig,
    pub schedule: CurriculumSchedule,
    pub reward: RewardConfig,
    actor: Actor<E>,
    critic: Critic<E>,
    actor_old: Actor<E>,
    critic_old: Critic<E>,
    actor_opt: Adam,
    critic_opt: Adam,
    completed_stages: usize,
    log: TrainingLog,
}

impl Trainer<TransformerEncoder> {
    /// Fresh reference-architecture models seeded from `cfg.seed`.
    pub fn reference(
        cfg: TrainerConfig,
        schedule: CurriculumSchedule,
        reward: RewardConfig,
        encoder: TransformerConfig,
    ) -> Result<Self> {
        let actor = Actor::reference(encoder, derive_seed(cfg.seed, &[TAG_ACTOR]))?;
        let critic = Critic::reference(encoder, derive_seed(cfg.seed, &[TAG_CRITIC]))?;
        Trainer::new(cfg, schedule, reward, actor, critic)
    }
}

impl<E: SequenceEncoder> Trainer<E> {
    pub fn new(
        cfg: TrainerConfig,
        schedule: CurriculumSchedule,
        reward: RewardConfig,
        actor: Actor<E>,
        critic: Critic<E>,
    ) -> Result<Self> {
        cfg.validate()?;
        schedule.validate()?;
        reward.validate()?;
        let actor_opt = Adam::new(AdamConfig::with_lr(cfg.actor_lr), actor.params());
        let critic_opt = Adam::new(AdamConfig::with_lr(cfg.critic_lr), critic.params());
        Ok(Self {
            cfg,
            schedule,
            reward,
            actor_old: actor.clone(),
            critic_old: critic.clone(),
            actor,
            critic,
            actor_opt,
            critic_opt,
            completed_stages: 0,
            log: TrainingLog::default(),
        })
    }

    pub fn actor(&self) -> &Actor<E> {
        &self.actor
    }

    pub fn critic(&self) -> &Critic<E> {
        &self.critic
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    pub fn completed_stages(&self) -> usize {
        self.completed_stages
    }

    pub fn into_parts(self) -> (Actor<E>, Critic<E>, TrainingLog) {
        (self.actor, self.critic, self.log)
    }

    pub fn rollout<'a>(&'a self, scorers: Scorers<'a>) -> Rollout<'a, E> {
        Rollout {
            actor: &self.actor,
            critic: &self.critic,
            schedule: &self.schedule,
            reward: &self.reward,
            scorers,
            discount: self.cfg.discount,
        }
    }

    /// Runs every remaining stage.
    pub fn train(
        &mut self,
        corpus: &[TokenSequence],
        scorers: Scorers<'_>,
        on_update: &mut dyn FnMut(&UpdateRecord),
    ) -> Result<()> {
        while self.completed_stages < self.schedule.n_stages() {
            self.train_stage(corpus, scorers, on_update)?;
        }
        Ok(())
    }

    /// Runs the next stage's epochs and flushes the buffer at its end.
    pub fn train_stage(
        &mut self,
        corpus: &[TokenSequence],
        scorers: Scorers<'_>,
        on_update: &mut dyn FnMut(&UpdateRecord),
    ) -> Result<()> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let stage = self.completed_stages + 1;
        if stage > self.schedule.n_stages() {
            return Err(Error::InvalidArgument("all curriculum stages are complete".into()));
        }
        let seed = self.cfg.seed;
        let mut buffer = ReplayBuffer::new(self.cfg.buffer_capacity)?;
        let mut last_epoch = 0;
        for epoch in 0..self.schedule.epochs(stage) {
            last_epoch = epoch;
            let mut order: Vec<usize> = (0..corpus.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                &[TAG_SHUFFLE, stage as u64, epoch as u64],
            ));
            order.shuffle(&mut rng);
            let mut cursor = 0;
            while cursor < order.len() {
                let chunk = &order[cursor..(cursor + buffer.free()).min(order.len())];
                cursor += chunk.len();
                let trajectories = {
                    let rollout = Rollout {
                        actor: &self.actor_old,
                        critic: &self.critic_old,
                        schedule: &self.schedule,
                        reward: &self.reward,
                        scorers,
                        discount: self.cfg.discount,
                    };
                    chunk
                        .par_iter()
                        .map(|&i| {
                            let s = derive_seed(seed, &[TAG_COLLECT, stage as u64, epoch as u64, i as u64]);
                            Ok(Trajectory {
                                prompt_index: i,
                                steps: rollout.collect(&corpus[i], stage, s)?,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?
                };
                for t in trajectories {
                    buffer.push(t)?;
                }
                if buffer.is_full() {
                    self.update_round(&mut buffer, stage, epoch, on_update)?;
                }
            }
        }
        if !buffer.is_empty() {
            self.update_round(&mut buffer, stage, last_epoch, on_update)?;
        }
        self.completed_stages = stage;
        Ok(())
    }

    fn update_round(
        &mut self,
        buffer: &mut ReplayBuffer,
        stage: usize,
        epoch: usize,
        on_update: &mut dyn FnMut(&UpdateRecord),
    ) -> Result<()> {
        let round = self.log.len();
        let iterations = buffer.len();
        let mut objective = 0.0;
        let mut critic_loss = 0.0;
        for it in 0..iterations {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                self.cfg.seed,
                &[TAG_UPDATE, round as u64, it as u64],
            ));
            let batch = buffer.sample_steps(self.cfg.batch_size, &mut rng);
            let (obj, mut ga) = ppo_loss_grad(&batch, &self.actor, self.cfg.clip_eps)?;
            let (loss, mut gc) = critic_loss_grad(&batch, &self.critic)?;
            for (what, value) in [("surrogate objective", obj), ("critic loss", loss)] {
                if !value.is_finite() {
                    return Err(Error::NonFinite { what, value });
                }
            }
            if !ga.is_finite() || !gc.is_finite() {
                return Err(Error::NonFinite {
                    what: "gradient",
                    value: f64::NAN,
                });
            }
            ga.clip_norm(self.cfg.grad_clip);
            gc.clip_norm(self.cfg.grad_clip);
            self.actor_opt.step(self.actor.params_mut(), &ga);
            self.critic_opt.step(self.critic.params_mut(), &gc);
            objective += obj;
            critic_loss += loss;
        }
        let steps: Vec<&TrajectoryStep> = buffer.trajectories().iter().flat_map(|t| &t.steps).collect();
        let n = steps.len().max(1) as f64;
        let record = UpdateRecord {
            round,
            stage,
            epoch,
            trajectories: buffer.len(),
            steps: steps.len(),
            objective: objective / iterations as f64,
            critic_loss: critic_loss / iterations as f64,
            mean_reward: steps.iter().map(|s| s.reward).sum::<f64>() / n,
            mean_rho: steps.iter().map(|s| s.rho).sum::<f64>() / n,
            bounds: (0..self.schedule.t_max(stage))
                .map(|t| self.schedule.bounds(stage, t))
                .collect::<Result<_>>()?,
        };
        on_update(&record);
        self.log.records.push(record);
        buffer.clear();
        self.actor_old = self.actor.clone();
        self.critic_old = self.critic.clone();
        Ok(())
    }
}

/// Full curriculum run from freshly initialized reference models.
pub fn hpc_train(
    corpus: &[TokenSequence],
    cfg: TrainerConfig,
    schedule: CurriculumSchedule,
    reward: RewardConfig,
    encoder: TransformerConfig,
    scorers: Scorers<'_>,
) -> Result<(Actor, Critic, TrainingLog)> {
    let mut trainer = Trainer::reference(cfg, schedule, reward, encoder)?;
    trainer.train(corpus, scorers, &mut |_| {})?;
    Ok(trainer.into_parts())
}
