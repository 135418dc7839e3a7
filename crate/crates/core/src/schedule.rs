//! Epoch-indexed learning-rate and weight-decay rules.
//!
//! Epochs are numbered from 1. A milestone `(e, lr)` means `lr` is in force
//! from the start of epoch `e`; "lower the rate at the end of epoch 18" is the
//! milestone `(19, lr)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSchedule {
    /// `(first epoch, learning rate)`, epochs strictly increasing from 1,
    /// rates strictly decreasing.
    pub milestones: Vec<(usize, f64)>,
    pub weight_decay: f64,
    /// Last epoch with weight decay; zero afterwards.
    pub decay_until: usize,
    pub momentum: f64,
    pub total_epochs: usize,
    pub batch_size: usize,
    /// Mini-batches per epoch; a full pass over the training set when absent.
    #[serde(default)]
    pub batches_per_epoch: Option<usize>,
    /// Random horizontal flips of training images.
    #[serde(default)]
    pub flip: bool,
}

impl TrainingSchedule {
    /// The 55-epoch rule used for the large-scale reference experiments.
    pub fn overfeat() -> Self {
        TrainingSchedule {
            milestones: vec![(1, 1e-2), (19, 5e-3), (30, 1e-3), (44, 5e-4), (53, 1e-4)],
            weight_decay: 1e-4,
            decay_until: 29,
            momentum: 0.9,
            total_epochs: 55,
            batch_size: 128,
            batches_per_epoch: Some(10_000),
            flip: false,
        }
    }

    /// Twelve-epoch rule for the 32x32 reference network on a few thousand
    /// images: rate drops at epochs 7 and 10, decay throughout.
    pub fn desk() -> Self {
        TrainingSchedule {
            milestones: vec![(1, 5e-2), (7, 1e-2), (10, 2e-3)],
            weight_decay: 1e-4,
            decay_until: 12,
            momentum: 0.9,
            total_epochs: 12,
            batch_size: 32,
            batches_per_epoch: None,
            flip: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Schedule(m));
        match self.milestones.first() {
            None => return bad("no milestones".into()),
            Some(&(e, _)) if e != 1 => return bad(format!("first milestone is epoch {e}, must be 1")),
            _ => {}
        }
        for w in self.milestones.windows(2) {
            let ((e0, r0), (e1, r1)) = (w[0], w[1]);
            if e1 <= e0 {
                return bad(format!("milestone epochs {e0}, {e1} not increasing"));
            }
            if r1 >= r0 {
                return bad(format!("rates {r0}, {r1} not decreasing"));
            }
        }
        if let Some(&(_, r)) = self.milestones.iter().find(|(_, r)| !(*r > 0.0) || !r.is_finite()) {
            return bad(format!("learning rate {r} must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight decay {} is negative", self.weight_decay));
        }
        if self.batch_size == 0 || self.batches_per_epoch == Some(0) {
            return bad("batch size and batches per epoch must be positive".into());
        }
        Ok(())
    }

    /// Rule at any epoch >= 1, ignoring the configured horizon.
    pub fn rule_at(&self, epoch: usize) -> (f64, f64) {
        let lr = self
            .milestones
            .iter()
            .take_while(|(e, _)| *e <= epoch)
            .last()
            .map_or(self.milestones[0].1, |&(_, r)| r);
        let wd = if epoch <= self.decay_until {
            self.weight_decay
        } else {
            0.0
        };
        (lr, wd)
    }

    /// `(learning rate, weight decay)` for `1 <= epoch <= total_epochs`.
    pub fn lr_at(&self, epoch: usize) -> Result<(f64, f64)> {
        if epoch == 0 || epoch > self.total_epochs {
            return Err(Error::Schedule(format!(
                "epoch {epoch} outside 1..={}",
                self.total_epochs
            )));
        }
        Ok(self.rule_at(epoch))
    }

    /// First milestone epoch after `epoch` that lies within the horizon.
    pub fn next_milestone(&self, epoch: usize) -> Option<usize> {
        self.milestones
            .iter()
            .map(|&(e, _)| e)
            .find(|&e| e > epoch && e <= self.total_epochs)
    }

    /// FNV-1a hash of the schedule's settings.
    pub fn fingerprint(&self) -> u64 {
        let text = format!("{self:?}");
        text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}
