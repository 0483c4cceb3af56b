use crate::error::{Error, Result};

pub const MAX_LR_DROPS: u32 = 3;
pub const DEFAULT_PATIENCE: usize = 10;
pub const DEFAULT_MIN_DELTA: f64 = 1e-4;

/// Divides the learning rate by 10 when validation loss stops improving,
/// at most `max_drops` times.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    pub lr0: f64,
    pub max_drops: u32,
    pub patience: usize,
    pub min_delta: f64,
    drops: u32,
    best: f64,
    stall: usize,
    observed: usize,
}

impl PlateauSchedule {
    pub fn new(lr0: f64, patience: usize, min_delta: f64) -> Self {
        PlateauSchedule {
            lr0,
            max_drops: MAX_LR_DROPS,
            patience,
            min_delta,
            drops: 0,
            best: f64::INFINITY,
            stall: 0,
            observed: 0,
        }
    }

    /// `lr0 / 10^drops`.
    pub fn lr(&self) -> f64 {
        self.lr0 / 10f64.powi(self.drops as i32)
    }

    pub fn drops(&self) -> u32 {
        self.drops
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn stall(&self) -> usize {
        self.stall
    }

    pub fn observed(&self) -> usize {
        self.observed
    }

    /// All drops used and the final rate has plateaued too.
    pub fn exhausted(&self) -> bool {
        self.drops >= self.max_drops && self.stall >= self.patience
    }

    /// Feeds one epoch's validation loss; returns true when the rate dropped.
    pub fn observe(&mut self, val_loss: f64) -> Result<bool> {
        if val_loss.is_nan() {
            return Err(Error::NanLoss {
                what: "validation",
                epoch: self.observed,
            });
        }
        self.observed += 1;
        if val_loss < self.best - self.min_delta {
            self.best = val_loss;
            self.stall = 0;
            return Ok(false);
        }
        self.stall += 1;
        if self.stall >= self.patience && self.drops < self.max_drops {
            self.drops += 1;
            self.stall = 0;
            return Ok(true);
        }
        Ok(false)
    }

    pub(crate) fn to_parts(&self) -> (u32, f64, usize, usize) {
        (self.drops, self.best, self.stall, self.observed)
    }

    pub(crate) fn from_parts(
        lr0: f64,
        max_drops: u32,
        patience: usize,
        min_delta: f64,
        (drops, best, stall, observed): (u32, f64, usize, usize),
    ) -> Result<Self> {
        if drops > max_drops || max_drops > MAX_LR_DROPS {
            return Err(Error::Format(format!("schedule has {drops} of {max_drops} drops")));
        }
        Ok(PlateauSchedule {
            lr0,
            max_drops,
            patience,
            min_delta,
            drops,
            best,
            stall,
            observed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decreasing_losses_never_drop() {
        let mut s = PlateauSchedule::new(0.1, 2, 1e-4);
        for i in 0..50 {
            assert!(!s.observe(10.0 - i as f64 * 0.1).unwrap());
        }
        assert_eq!(s.lr(), 0.1);
    }

    #[test]
    fn drop_on_third_flat_epoch() {
        let mut s = PlateauSchedule::new(0.1, 2, 1e-4);
        assert!(!s.observe(1.0).unwrap());
        assert!(!s.observe(1.0).unwrap());
        assert!(s.observe(1.0).unwrap());
        assert_eq!(s.lr(), 0.1 / 10.0);
    }

    #[test]
    fn capped_at_three_drops() {
        let mut s = PlateauSchedule::new(0.1, 1, 0.0);
        s.observe(1.0).unwrap();
        for _ in 0..103 {
            s.observe(1.0).unwrap();
        }
        assert_eq!(s.drops(), 3);
        assert_eq!(s.lr(), 0.1 / 1000.0);
        assert!((s.lr() - 1e-4).abs() < 1e-18);
        assert!(s.exhausted());
    }

    #[test]
    fn nan_aborts() {
        let mut s = PlateauSchedule::new(0.1, 2, 0.0);
        assert!(matches!(s.observe(f64::NAN), Err(Error::NanLoss { .. })));
    }
}
