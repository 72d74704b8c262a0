//! Decay schedule for the auxiliary loss weights.
//!
//! Both weights start at 1 and reach exactly 0 after `t2_total`
//! fine-tuning steps. Two decay shapes are supported:
//!
//! * [`ScheduleMode::Linear`]: `max(0, 1 - t2 / T2)`.
//! * [`ScheduleMode::Compound`]: the running product of the per-step
//!   factors `(1 - t / T2)` for `t = 1..=t2`, which front-loads the
//!   decay (for `T2 = 4` the sequence is 0.75, 0.375, 0.09375, 0).

use autodiff::Real;

use super::{ObjResult, ObjectiveError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    Linear,
    Compound,
}

/// Maps a fine-tuning step counter to the pair `(alpha, beta)`. Both
/// weights follow the same curve.
#[derive(Debug, Clone, Copy)]
pub struct Schedule {
    t2_total: usize,
    mode: ScheduleMode,
}

impl Schedule {
    pub fn new(t2_total: usize, mode: ScheduleMode) -> ObjResult<Self> {
        if t2_total == 0 {
            return Err(ObjectiveError::BadSchedule(
                "decay span must be at least one step".into(),
            ));
        }
        Ok(Schedule { t2_total, mode })
    }

    pub fn mode(&self) -> ScheduleMode {
        self.mode
    }

    pub fn t2_total(&self) -> usize {
        self.t2_total
    }

    /// Weights at step counter `t2`. `weights(0)` is `(1, 1)`; every
    /// `t2 >= t2_total` yields `(0, 0)`; the curve never increases.
    pub fn weights(&self, t2: usize) -> (Real, Real) {
        let w = match self.mode {
            ScheduleMode::Linear => {
                if t2 >= self.t2_total {
                    0.0
                } else {
                    1.0 - t2 as Real / self.t2_total as Real
                }
            }
            ScheduleMode::Compound => {
                if t2 >= self.t2_total {
                    0.0
                } else {
                    let mut w = 1.0;
                    for t in 1..=t2 {
                        w *= 1.0 - t as Real / self.t2_total as Real;
                    }
                    w
                }
            }
        };
        (w, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_start_at_one_and_end_at_zero() {
        for mode in [ScheduleMode::Linear, ScheduleMode::Compound] {
            let s = Schedule::new(7, mode).unwrap();
            assert_eq!(s.weights(0), (1.0, 1.0));
            assert_eq!(s.weights(7), (0.0, 0.0));
            assert_eq!(s.weights(8), (0.0, 0.0));
            assert_eq!(s.weights(1000), (0.0, 0.0));
        }
    }

    #[test]
    fn both_modes_never_increase() {
        for mode in [ScheduleMode::Linear, ScheduleMode::Compound] {
            let s = Schedule::new(23, mode).unwrap();
            let mut last = 1.0;
            for t2 in 0..=30 {
                let (alpha, beta) = s.weights(t2);
                assert_eq!(alpha, beta);
                assert!(alpha <= last, "{mode:?} rose at t2={t2}");
                assert!((0.0..=1.0).contains(&alpha));
                last = alpha;
            }
        }
    }

    #[test]
    fn linear_hits_the_midpoint() {
        let s = Schedule::new(4, ScheduleMode::Linear).unwrap();
        assert_eq!(s.weights(1).0, 0.75);
        assert_eq!(s.weights(2).0, 0.5);
        assert_eq!(s.weights(3).0, 0.25);
    }

    #[test]
    fn compound_unrolls_the_recurrence_exactly() {
        // By hand for T2 = 4: factors 3/4, 2/4, 1/4, 0/4 compounded.
        let s = Schedule::new(4, ScheduleMode::Compound).unwrap();
        assert_eq!(s.weights(0).0, 1.0);
        assert_eq!(s.weights(1).0, 0.75);
        assert_eq!(s.weights(2).0, 0.375);
        assert_eq!(s.weights(3).0, 0.09375);
        assert_eq!(s.weights(4).0, 0.0);
    }

    #[test]
    fn compound_decays_faster_than_linear_after_the_first_step() {
        let lin = Schedule::new(10, ScheduleMode::Linear).unwrap();
        let cmp = Schedule::new(10, ScheduleMode::Compound).unwrap();
        assert_eq!(cmp.weights(1), lin.weights(1));
        for t2 in 2..10 {
            assert!(cmp.weights(t2).0 < lin.weights(t2).0);
        }
    }

    #[test]
    fn zero_length_schedule_is_rejected() {
        assert!(matches!(
            Schedule::new(0, ScheduleMode::Linear),
            Err(ObjectiveError::BadSchedule(_))
        ));
    }
}
