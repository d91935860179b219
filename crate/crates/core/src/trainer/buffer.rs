use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ActionVector, CompressionState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    /// State `s_t` the action was taken in.
    pub state: CompressionState,
    pub action: ActionVector,
    pub old_log_prob: f64,
    pub reward: f64,
    /// `V_old(s_t)`.
    pub value: f64,
    /// One-step advantage `reward − value`.
    pub advantage: f64,
    /// Discounted return from this step to the end of the episode.
    pub return_to_go: f64,
    /// Compression rate after the action.
    pub rho: f64,
    pub bounds: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub prompt_index: usize,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn final_rho(&self) -> f64 {
        self.steps.last().map_or(1.0, |s| s.rho)
    }
}

/// G_t = Σ_{k≥t} discount^(k−t) · r_k.
pub fn returns_from(rewards: &[f64], t: usize, discount: f64) -> Result<f64> {
    if t >= rewards.len() {
        return Err(Error::InvalidArgument(format!(
            "step {t} outside trajectory of length {}",
            rewards.len()
        )));
    }
    Ok(rewards[t..]
        .iter()
        .rev()
        .fold(0.0, |acc, &r| r + discount * acc))
}

/// Bounded trajectory store, drained after every update round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    trajectories: Vec<Trajectory>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("buffer capacity must be at least 1"));
        }
        Ok(Self {
            capacity,
            trajectories: Vec::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.trajectories.len() == self.capacity
    }

    pub fn free(&self) -> usize {
        self.capacity - self.trajectories.len()
    }

    pub fn push(&mut self, t: Trajectory) -> Result<()> {
        if self.is_full() {
            return Err(Error::InvalidArgument("replay buffer is full".into()));
        }
        self.trajectories.push(t);
        Ok(())
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    /// Uniformly samples `n` trajectories with replacement and flattens
    /// their steps.
    pub fn sample_steps(&self, n: usize, rng: &mut impl Rng) -> Vec<&TrajectoryStep> {
        let mut out = Vec::new();
        if self.trajectories.is_empty() {
            return out;
        }
        for _ in 0..n {
            let t = &self.trajectories[rng.gen_range(0..self.trajectories.len())];
            out.extend(t.steps.iter());
        }
        out
    }

    pub fn clear(&mut self) {
        self.trajectories.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn returns_hand_sums() {
        assert_eq!(returns_from(&[1.0, 2.0], 0, 1.0).unwrap(), 3.0);
        assert_eq!(returns_from(&[1.0, 2.0], 1, 1.0).unwrap(), 2.0);
        assert_eq!(returns_from(&[1.0, 2.0, 4.0], 0, 0.5).unwrap(), 3.0);
        assert!(returns_from(&[1.0], 1, 1.0).is_err());
    }

    fn traj(i: usize) -> Trajectory {
        Trajectory {
            prompt_index: i,
            steps: Vec::new(),
        }
    }

    #[test]
    fn capacity_enforced() {
        let mut b = ReplayBuffer::new(2).unwrap();
        b.push(traj(0)).unwrap();
        b.push(traj(1)).unwrap();
        assert!(b.is_full());
        assert!(b.push(traj(2)).is_err());
        b.clear();
        assert!(b.is_empty());
        assert!(ReplayBuffer::new(0).is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let mut b = ReplayBuffer::new(4).unwrap();
        for i in 0..4 {
            b.push(traj(i)).unwrap();
        }
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(b.sample_steps(3, &mut r1), b.sample_steps(3, &mut r2));
    }
}
