use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to the lower band edge so it stays positive.
pub const MIN_LOWER_BOUND: f64 = 0.05;

/// Target compression band for `stage` (1-based) at episode step `t`:
///
/// ```text
/// c_s = 0.6 − (stage + t/t_max)·ψ
/// c_l = 1.0 − (stage + t/t_max)·ψ
/// ```
///
/// `c_s` is floored at [`MIN_LOWER_BOUND`].
pub fn curriculum_bounds(stage: usize, t: usize, t_max: usize, psi: f64) -> Result<(f64, f64)> {
    if stage == 0 {
        return Err(Error::InvalidArgument("curriculum stages are numbered from 1".into()));
    }
    if t_max == 0 || t > t_max {
        return Err(Error::InvalidArgument(format!(
            "curriculum step {t} outside 0..={t_max}"
        )));
    }
    if !(psi >= 0.0 && psi.is_finite()) {
        return Err(Error::InvalidArgument(format!("psi must be finite and >= 0, got {psi}")));
    }
    let progress = (stage as f64 + t as f64 / t_max as f64) * psi;
    let c_s = (0.6 - progress).max(MIN_LOWER_BOUND);
    let c_l = 1.0 - progress;
    if c_l <= c_s {
        return Err(Error::InvalidArgument(format!(
            "compression band collapsed at stage {stage}, step {t} (psi {psi})"
        )));
    }
    Ok((c_s, c_l))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundsMode {
    /// Bands tighten with stage and step.
    Hierarchical,
    /// Every step of every stage uses the stage-1, step-0 band.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub psi: f64,
    pub t_max_per_stage: Vec<usize>,
    pub epochs_per_stage: Vec<usize>,
    pub mode: BoundsMode,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        Self {
            psi: 0.1,
            t_max_per_stage: vec![2, 2, 1],
            epochs_per_stage: vec![1, 1, 2],
            mode: BoundsMode::Hierarchical,
        }
    }
}

impl CurriculumSchedule {
    pub fn n_stages(&self) -> usize {
        self.t_max_per_stage.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_max_per_stage.is_empty() {
            return Err(Error::config("curriculum needs at least one stage"));
        }
        if self.t_max_per_stage.len() != self.epochs_per_stage.len() {
            return Err(Error::config(format!(
                "curriculum.t_max has {} entries but curriculum.epochs has {}",
                self.t_max_per_stage.len(),
                self.epochs_per_stage.len()
            )));
        }
        if self.t_max_per_stage.iter().chain(&self.epochs_per_stage).any(|&x| x == 0) {
            return Err(Error::config("curriculum entries must be at least 1"));
        }
        for stage in 1..=self.n_stages() {
            for t in 0..self.t_max(stage) {
                self.bounds(stage, t).map_err(|e| Error::config(e.to_string()))?;
            }
        }
        Ok(())
    }

    /// Episode length of a 1-based stage.
    pub fn t_max(&self, stage: usize) -> usize {
        self.t_max_per_stage[stage - 1]
    }

    pub fn epochs(&self, stage: usize) -> usize {
        self.epochs_per_stage[stage - 1]
    }

    /// Band used for the reward of step `t` (0-based) in `stage`.
    pub fn bounds(&self, stage: usize, t: usize) -> Result<(f64, f64)> {
        match self.mode {
            BoundsMode::Hierarchical => curriculum_bounds(stage, t, self.t_max(stage), self.psi),
            BoundsMode::Fixed => curriculum_bounds(1, 0, self.t_max(1), self.psi),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_evaluated_points() {
        let close = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12;
        assert!(close(curriculum_bounds(1, 0, 2, 0.1).unwrap(), (0.5, 0.9)));
        assert!(close(curriculum_bounds(3, 1, 1, 0.1).unwrap(), (0.2, 0.6)));
        assert!(close(curriculum_bounds(2, 1, 2, 0.1).unwrap(), (0.35, 0.75)));
    }

    #[test]
    fn invalid_arguments() {
        assert!(curriculum_bounds(0, 0, 2, 0.1).is_err());
        assert!(curriculum_bounds(1, 3, 2, 0.1).is_err());
        assert!(curriculum_bounds(1, 0, 0, 0.1).is_err());
        assert!(curriculum_bounds(1, 0, 1, -0.1).is_err());
        assert!(curriculum_bounds(3, 1, 1, 0.3).is_err());
    }

    #[test]
    fn lower_bound_floor() {
        let (c_s, c_l) = curriculum_bounds(3, 1, 1, 0.2).unwrap();
        assert_eq!(c_s, MIN_LOWER_BOUND);
        assert!((c_l - 0.2).abs() < 1e-12);
    }

    #[test]
    fn monotone_with_constant_width() {
        let mut prev = (f64::INFINITY, f64::INFINITY);
        for stage in 1..=3 {
            for t in 0..=2 {
                let (c_s, c_l) = curriculum_bounds(stage, t, 2, 0.1).unwrap();
                assert!(c_s <= prev.0 && c_l <= prev.1);
                assert!((c_l - c_s - 0.4).abs() < 1e-12);
                prev = (c_s, c_l);
            }
        }
    }

    #[test]
    fn fixed_mode_is_constant() {
        let s = CurriculumSchedule {
            mode: BoundsMode::Fixed,
            ..Default::default()
        };
        let first = s.bounds(1, 0).unwrap();
        for stage in 1..=3 {
            for t in 0..s.t_max(stage) {
                assert_eq!(s.bounds(stage, t).unwrap(), first);
            }
        }
    }

    #[test]
    fn schedule_validation() {
        assert!(CurriculumSchedule::default().validate().is_ok());
        let bad = CurriculumSchedule {
            epochs_per_stage: vec![1, 1],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let zero = CurriculumSchedule {
            t_max_per_stage: vec![2, 0, 1],
            ..Default::default()
        };
        assert!(zero.validate().is_err());
    }
}
