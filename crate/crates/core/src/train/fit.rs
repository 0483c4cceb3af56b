use crate::data::{ClipSample, TrainingData};
use crate::error::{Error, Result};
use crate::layers::softmax_cross_entropy;
use crate::resnet::{ArchSpec, Network};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::schedule::{PlateauSchedule, DEFAULT_MIN_DELTA, DEFAULT_PATIENCE, MAX_LR_DROPS};
use super::sgd::{Sgd, DEFAULT_LR, DEFAULT_MOMENTUM, DEFAULT_WEIGHT_DECAY};

pub const DEFAULT_BATCH_SIZE: usize = 256;
pub const DEFAULT_MAX_EPOCHS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_batchnorm: bool,
    pub batch_size: usize,
    pub max_lr_drops: u32,
    pub plateau_patience: usize,
    pub plateau_min_delta: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: DEFAULT_LR,
            momentum: DEFAULT_MOMENTUM,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            decay_batchnorm: true,
            batch_size: DEFAULT_BATCH_SIZE,
            max_lr_drops: MAX_LR_DROPS,
            plateau_patience: DEFAULT_PATIENCE,
            plateau_min_delta: DEFAULT_MIN_DELTA,
            max_epochs: DEFAULT_MAX_EPOCHS,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// `lr0 = 0` is accepted as a dry run that leaves parameters untouched.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(self.lr0.is_finite() && self.lr0 >= 0.0) {
            return bad(format!("lr must be finite and non-negative, got {}", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.plateau_patience == 0 {
            return bad("batch size, max epochs and patience must be positive".into());
        }
        if self.max_lr_drops != MAX_LR_DROPS {
            return bad(format!("max_lr_drops is fixed at {MAX_LR_DROPS}"));
        }
        if !(self.plateau_min_delta.is_finite() && self.plateau_min_delta >= 0.0) {
            return bad(format!(
                "min_delta must be non-negative, got {}",
                self.plateau_min_delta
            ));
        }
        Ok(())
    }

    pub fn schedule(&self) -> PlateauSchedule {
        PlateauSchedule::new(self.lr0, self.plateau_patience, self.plateau_min_delta)
    }
}

/// Everything needed to continue training bit-for-bit.
#[derive(Debug, Clone)]
pub struct TrainState<T: Scalar> {
    pub net: Network<T>,
    pub opt: Sgd<T>,
    pub schedule: PlateauSchedule,
    pub rng: Rng,
    /// Completed epochs.
    pub epoch: usize,
}

impl<T: Scalar> TrainState<T> {
    /// Weights are drawn from the run seed; the same generator then drives
    /// data order and augmentation.
    pub fn new(spec: &ArchSpec, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(config.seed);
        let net = Network::build(spec, &mut rng)?;
        let opt = Sgd::new(&net, config.momentum, config.weight_decay, config.decay_batchnorm);
        Ok(TrainState {
            net,
            opt,
            schedule: config.schedule(),
            rng,
            epoch: 0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Rate used during this epoch.
    pub lr: f64,
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn count_correct<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count()
}

/// One pass over `data`: returns clip-weighted mean loss and clip accuracy.
pub fn train_epoch<T: Scalar>(
    net: &mut Network<T>,
    data: &dyn TrainingData,
    opt: &mut Sgd<T>,
    lr: f64,
    batch_size: usize,
    rng: &mut Rng,
    epoch: usize,
) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
    for (b, batch) in data.epoch(batch_size, rng).enumerate() {
        let batch = batch?;
        let wrap = |e: Error| Error::Batch {
            batch: b,
            videos: batch.videos.clone(),
            source: Box::new(e),
        };
        let x: Tensor<T> = batch.clips.cast();
        let logits = net.forward_train(&x).map_err(wrap)?;
        let out = softmax_cross_entropy(&logits, &batch.labels).map_err(wrap)?;
        if !out.loss.is_finite() {
            net.clear_cache();
            return Err(Error::NanLoss {
                what: "training",
                epoch,
            });
        }
        let grads = net.backward(&out.grad).map_err(wrap)?;
        net.clear_cache();
        opt.step(net, &grads, lr)?;
        loss_sum += out.loss * batch.len() as f64;
        correct += count_correct(&logits, &batch.labels);
        seen += batch.len();
    }
    Ok((loss_sum / seen as f64, correct as f64 / seen as f64))
}

/// Eval-mode mean loss and accuracy over fixed clips.
pub fn evaluate_clips<T: Scalar>(net: &Network<T>, clips: &[ClipSample], batch_size: usize) -> Result<(f64, f64)> {
    if clips.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    let (mut loss_sum, mut correct) = (0.0, 0usize);
    for chunk in clips.chunks(batch_size.max(1)) {
        let batch = crate::data::make_batch(chunk)?;
        let logits = net.forward_eval(&batch.clips.cast::<T>())?;
        loss_sum += softmax_cross_entropy(&logits, &batch.labels)?.loss * chunk.len() as f64;
        correct += count_correct(&logits, &batch.labels);
    }
    Ok((loss_sum / clips.len() as f64, correct as f64 / clips.len() as f64))
}

/// Train one epoch, validate, and feed the schedule.
pub fn run_epoch<T: Scalar>(
    state: &mut TrainState<T>,
    config: &TrainConfig,
    train: &dyn TrainingData,
    val: &[ClipSample],
) -> Result<EpochStats> {
    let lr = state.schedule.lr();
    let epoch = state.epoch + 1;
    let (train_loss, train_acc) = train_epoch(
        &mut state.net,
        train,
        &mut state.opt,
        lr,
        config.batch_size,
        &mut state.rng,
        epoch,
    )?;
    let (val_loss, val_acc) = evaluate_clips(&state.net, val, config.batch_size)?;
    state.schedule.observe(val_loss).map_err(|_| Error::NanLoss {
        what: "validation",
        epoch,
    })?;
    state.epoch = epoch;
    Ok(EpochStats {
        epoch,
        train_loss,
        train_acc,
        val_loss,
        val_acc,
        lr,
    })
}

/// Runs epochs until `max_epochs`, schedule exhaustion, or `on_epoch`
/// returns `false`.
pub fn fit<T: Scalar>(
    state: &mut TrainState<T>,
    config: &TrainConfig,
    train: &dyn TrainingData,
    val: &[ClipSample],
    mut on_epoch: impl FnMut(&EpochStats, &TrainState<T>) -> Result<bool>,
) -> Result<Vec<EpochStats>> {
    config.validate()?;
    let mut history = Vec::new();
    while state.epoch < config.max_epochs && !state.schedule.exhausted() {
        let stats = run_epoch(state, config, train, val)?;
        history.push(stats);
        if !on_epoch(&stats, state)? {
            break;
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lower_index() {
        assert_eq!(argmax(&[1.0f32, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0f64]), 0);
    }

    #[test]
    fn config_checks() {
        TrainConfig::default().validate().unwrap();
        for c in [
            TrainConfig {
                lr0: -0.1,
                ..Default::default()
            },
            TrainConfig {
                momentum: 1.0,
                ..Default::default()
            },
            TrainConfig {
                weight_decay: -1.0,
                ..Default::default()
            },
            TrainConfig {
                max_lr_drops: 4,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
