use crate::error::{Error, Result};

/// Triangular cyclic learning rate: rises linearly from `base_lr` to `max_lr`
/// over `cycle_steps`, falls back over the next `cycle_steps`, repeats.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CyclicLr {
    pub base_lr: f64,
    pub max_lr: f64,
    pub cycle_steps: u64,
}

impl CyclicLr {
    pub fn new(base_lr: f64, max_lr: f64, cycle_steps: u64) -> Result<Self> {
        if !(base_lr >= 0.0 && max_lr >= base_lr) || cycle_steps == 0 {
            return Err(Error::config(alloc::format!(
                "cyclic schedule needs 0 <= base ({base_lr}) <= max ({max_lr}) and a positive half-period"
            )));
        }
        Ok(CyclicLr {
            base_lr,
            max_lr,
            cycle_steps,
        })
    }

    /// Max defaults to ten times the base rate.
    pub fn with_base(base_lr: f64, cycle_steps: u64) -> Result<Self> {
        Self::new(base_lr, 10.0 * base_lr, cycle_steps)
    }

    pub fn period(&self) -> u64 {
        2 * self.cycle_steps
    }

    pub fn lr(&self, step: u64) -> f64 {
        let x = step % self.period();
        let rise = if x <= self.cycle_steps {
            x
        } else {
            self.period() - x
        };
        self.base_lr + (self.max_lr - self.base_lr) * rise as f64 / self.cycle_steps as f64
    }
}
