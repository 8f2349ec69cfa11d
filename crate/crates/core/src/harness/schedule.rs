use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear warm-up followed by step decay.
///
/// For `iteration < warmup_iters` the rate ramps linearly from `base` to
/// `warmup_target`. Afterwards it is `warmup_target` multiplied by the factor
/// of every milestone epoch already reached.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup_iters: u64,
    pub warmup_target: f64,
    /// Epochs at which the rate is multiplied by the matching factor.
    pub milestones: Vec<u64>,
    pub factors: Vec<f64>,
}

impl Default for LrSchedule {
    /// 0 -> 1e-3 over 500 iterations, x0.1 after epochs 8 and 11.
    fn default() -> Self {
        LrSchedule {
            base: 0.0,
            warmup_iters: 500,
            warmup_target: 1e-3,
            milestones: vec![8, 11],
            factors: vec![0.1, 0.1],
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.base >= 0.0 && self.base.is_finite()) {
            return Err(Error::invalid("lr base", "must be finite and >= 0"));
        }
        if !(self.warmup_target > 0.0 && self.warmup_target.is_finite()) {
            return Err(Error::invalid("lr warmup_target", "must be positive"));
        }
        if self.milestones.len() != self.factors.len() {
            return Err(Error::LengthMismatch {
                expected: self.milestones.len(),
                found: self.factors.len(),
            });
        }
        if !self.milestones.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid(
                "lr milestones",
                "must be strictly ascending",
            ));
        }
        if !self.factors.iter().all(|f| *f > 0.0 && *f <= 1.0) {
            return Err(Error::invalid("lr factors", "must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn lr_at(&self, iteration: u64, epoch: u64) -> f64 {
        if iteration < self.warmup_iters {
            let t = iteration as f64 / self.warmup_iters as f64;
            return self.base + (self.warmup_target - self.base) * t;
        }
        self.milestones
            .iter()
            .zip(&self.factors)
            .filter(|(m, _)| epoch >= **m)
            .fold(self.warmup_target, |lr, (_, f)| lr * f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_examples() {
        let s = LrSchedule::default();
        assert_eq!(s.lr_at(0, 0), 0.0);
        assert_eq!(s.lr_at(500, 0), 1e-3);
        assert_eq!(s.lr_at(250, 0), 5e-4);
    }

    #[test]
    fn decays_after_milestones() {
        let s = LrSchedule::default();
        assert_eq!(s.lr_at(10_000, 7), 1e-3);
        assert!((s.lr_at(10_000, 8) - 1e-4).abs() < 1e-18);
        assert!((s.lr_at(10_000, 11) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn continuous_at_boundary_and_non_increasing_after() {
        let s = LrSchedule {
            base: 0.002,
            warmup_iters: 40,
            warmup_target: 0.05,
            milestones: vec![2, 3],
            factors: vec![0.1, 0.5],
        };
        let just_before = s.lr_at(39, 0);
        let at = s.lr_at(40, 0);
        assert!((at - just_before) <= (s.warmup_target - s.base) / 40.0 + 1e-15);
        let mut prev = at;
        for it in 40..200u64 {
            let lr = s.lr_at(it, it / 40);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn zero_warmup_starts_at_target() {
        let s = LrSchedule {
            warmup_iters: 0,
            ..LrSchedule::default()
        };
        assert_eq!(s.lr_at(0, 0), 1e-3);
    }

    #[test]
    fn rejects_mismatched_factors() {
        let s = LrSchedule {
            factors: vec![0.1],
            ..LrSchedule::default()
        };
        assert!(s.validate().is_err());
        let s = LrSchedule {
            factors: vec![0.1, 2.0],
            ..LrSchedule::default()
        };
        assert!(s.validate().is_err());
    }
}
