//! The epoch loop, resize-and-continue, and the extra-training controller.
//!
//! Each epoch shuffles the training set with the run's ChaCha8 stream, takes
//! SGD steps, then measures top-1 accuracy on the test set. The stream
//! position travels in every checkpoint, so a resumed run replays exactly
//! the shuffles an uninterrupted run would have drawn.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::arch::ArchitectureSpec;
use crate::data::{Checkpoint, CsvLog, Dataset, Phase, RngState, TrainLogRecord};
use crate::engine::{mix_seed, SgdState};
use crate::error::{Error, Result};
use crate::network::{InitRule, Network};
use crate::schedule::TrainingSchedule;
use crate::surgery::{resize_checkpoint, ScalePlan};
use crate::tensor::Tensor;

pub trait LogSink {
    fn record(&mut self, r: &TrainLogRecord) -> Result<()>;
}

impl LogSink for Vec<TrainLogRecord> {
    fn record(&mut self, r: &TrainLogRecord) -> Result<()> {
        self.push(*r);
        Ok(())
    }
}

impl LogSink for CsvLog {
    fn record(&mut self, r: &TrainLogRecord) -> Result<()> {
        self.write(r)
    }
}

impl<S: LogSink + ?Sized> LogSink for &mut S {
    fn record(&mut self, r: &TrainLogRecord) -> Result<()> {
        (**self).record(r)
    }
}

/// Discards records.
pub struct NullSink;

impl LogSink for NullSink {
    fn record(&mut self, _: &TrainLogRecord) -> Result<()> {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub phase: Phase,
    /// Epochs after which a copy of the checkpoint is kept.
    pub snapshot_epochs: Vec<usize>,
    /// Stop after this epoch instead of the schedule's last.
    pub stop_epoch: Option<usize>,
    /// Stop early once [`plateau_stop`] holds for `(window, epsilon)`.
    pub plateau: Option<(usize, f64)>,
    /// Samples per forward pass during evaluation.
    pub eval_chunk: usize,
    /// Initialisation used by [`train_from_scratch`].
    pub init: InitRule,
}

impl RunOptions {
    pub fn new(phase: Phase) -> Self {
        RunOptions {
            phase,
            snapshot_epochs: Vec::new(),
            stop_epoch: None,
            plateau: None,
            eval_chunk: 250,
            init: InitRule::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub snapshots: Vec<Checkpoint>,
    pub log: Vec<TrainLogRecord>,
    /// Controller state when the run used extra training.
    pub extra: Option<ExtraTrainState>,
}

/// Top-1 accuracy in percent.
pub fn accuracy(net: &Network, data: &Dataset, chunk: usize) -> Result<f64> {
    let pred = net.predict(&data.images, chunk)?;
    let correct = pred.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * correct as f64 / data.len().max(1) as f64)
}

fn check_data(arch: &ArchitectureSpec, data: &Dataset) -> Result<()> {
    let (c, h, w) = data.image_shape();
    let inp = arch.input;
    if (c, h, w) != (inp.channels, inp.height, inp.width) {
        return Err(Error::shape(
            "dataset",
            format!(
                "{:?} images are {c}x{h}x{w}, '{}' expects {}x{}x{}",
                data.split, arch.name, inp.channels, inp.height, inp.width
            ),
        ));
    }
    let classes = arch.classes()?;
    if data.classes > classes {
        return Err(Error::shape(
            "dataset",
            format!("{} classes, '{}' outputs {classes}", data.classes, arch.name),
        ));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument(format!("{:?} set is empty", data.split)));
    }
    Ok(())
}

struct Trainer<'a> {
    net: Network,
    sgd: SgdState,
    rng: ChaCha8Rng,
    wall_s: f64,
    fingerprint: u64,
    schedule: &'a TrainingSchedule,
    train: &'a Dataset,
    test: &'a Dataset,
    eval_chunk: usize,
}

impl<'a> Trainer<'a> {
    fn new(
        ckpt: Checkpoint,
        schedule: &'a TrainingSchedule,
        train: &'a Dataset,
        test: &'a Dataset,
        eval_chunk: usize,
    ) -> Result<Self> {
        schedule.validate()?;
        check_data(ckpt.network.arch(), train)?;
        check_data(ckpt.network.arch(), test)?;
        let (lr, wd) = schedule.rule_at(ckpt.epoch.max(1));
        let mut sgd = ckpt
            .network
            .sgd_state(schedule.momentum as f32, wd as f32, lr as f32)?;
        if ckpt.velocity.len() != sgd.velocity.len()
            || ckpt.velocity.iter().zip(&sgd.velocity).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Corrupt("velocity does not match the network".into()));
        }
        sgd.velocity = ckpt.velocity;
        Ok(Trainer {
            net: ckpt.network,
            sgd,
            rng: ckpt.rng.restore(),
            wall_s: ckpt.wall_s,
            fingerprint: ckpt.schedule_fingerprint,
            schedule,
            train,
            test,
            eval_chunk,
        })
    }

    fn epoch(&mut self, epoch: usize, (lr, wd): (f64, f64), phase: Phase) -> Result<TrainLogRecord> {
        let start = Instant::now();
        self.sgd.lr = lr as f32;
        self.sgd.weight_decay = wd as f32;
        let n = self.train.len();
        let bs = self.schedule.batch_size;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        let batches = self.schedule.batches_per_epoch.unwrap_or(n.div_ceil(bs));
        let (mut correct, mut seen) = (0usize, 0usize);
        for j in 0..batches {
            let idx: Vec<usize> = match self.schedule.batches_per_epoch {
                Some(_) => (0..bs).map(|t| order[(j * bs + t) % n]).collect(),
                None => order[j * bs..((j + 1) * bs).min(n)].to_vec(),
            };
            let mut x = self.train.images.gather_batch(&idx)?;
            if self.schedule.flip {
                let flips: Vec<bool> = idx.iter().map(|_| self.rng.random_bool(0.5)).collect();
                flip_rows(&mut x, &flips);
            }
            let labels: Vec<usize> = idx.iter().map(|&i| self.train.labels[i]).collect();
            let stats = self.net.train_step(&x, &labels, &mut self.sgd)?;
            correct += stats.correct;
            seen += stats.batch;
        }
        let test_acc = accuracy(&self.net, self.test, self.eval_chunk)?;
        self.wall_s += start.elapsed().as_secs_f64();
        Ok(TrainLogRecord {
            epoch,
            phase,
            wall_s: self.wall_s,
            train_acc: 100.0 * correct as f64 / seen.max(1) as f64,
            test_acc,
            lr,
            wd,
        })
    }

    fn checkpoint(&self, epoch: usize) -> Checkpoint {
        Checkpoint {
            network: self.net.clone(),
            velocity: self.sgd.velocity.clone(),
            epoch,
            rng: RngState::capture(&self.rng),
            schedule_fingerprint: self.fingerprint,
            wall_s: self.wall_s,
        }
    }
}

/// Mirrors the selected images left to right.
fn flip_rows(x: &mut Tensor, flips: &[bool]) {
    let s = x.shape().to_vec();
    let (w, per) = (s[3], s[1] * s[2] * s[3]);
    for (img, &f) in x.data_mut().chunks_mut(per).zip(flips) {
        if f {
            for row in img.chunks_mut(w) {
                row.reverse();
            }
        }
    }
}

/// Trains from `start.epoch + 1` through the schedule's last epoch (or
/// `opts.stop_epoch`), logging one record per epoch.
pub fn run_training(
    start: Checkpoint,
    schedule: &TrainingSchedule,
    train: &Dataset,
    test: &Dataset,
    opts: &RunOptions,
    mut sink: impl LogSink,
) -> Result<TrainOutcome> {
    if start.epoch > 0 && start.schedule_fingerprint != schedule.fingerprint() {
        return Err(Error::Schedule(format!(
            "checkpoint at epoch {} was trained under a different schedule",
            start.epoch
        )));
    }
    let first = start.epoch + 1;
    let last = opts.stop_epoch.unwrap_or(schedule.total_epochs).min(schedule.total_epochs);
    let mut t = Trainer::new(start, schedule, train, test, opts.eval_chunk)?;
    let mut log = Vec::new();
    let mut snapshots = Vec::new();
    let mut epoch = first - 1;
    for e in first..=last {
        let rec = t.epoch(e, schedule.lr_at(e)?, opts.phase)?;
        sink.record(&rec)?;
        log.push(rec);
        epoch = e;
        if opts.snapshot_epochs.contains(&e) {
            snapshots.push(t.checkpoint(e));
        }
        if let Some((window, eps)) = opts.plateau {
            if plateau_stop(&log, window, eps) {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        checkpoint: t.checkpoint(epoch),
        snapshots,
        log,
        extra: None,
    })
}

/// Seed of the shuffle stream for a run seeded with `seed`; kept apart from
/// the weight-initialisation seeds.
pub fn stream_seed(seed: u64) -> u64 {
    mix_seed(seed, u64::MAX)
}

/// Fresh weights for `arch`, then [`run_training`].
pub fn train_from_scratch(
    arch: &ArchitectureSpec,
    schedule: &TrainingSchedule,
    train: &Dataset,
    test: &Dataset,
    seed: u64,
    opts: &RunOptions,
    sink: impl LogSink,
) -> Result<TrainOutcome> {
    let net = Network::init_with(arch, seed, opts.init)?;
    let start = Checkpoint::fresh(net, stream_seed(seed), schedule.fingerprint());
    run_training(start, schedule, train, test, opts, sink)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContinueMode {
    /// Resume at `e + 1` exactly as if training had never paused.
    Scheduled,
    /// Hold the rule of epoch `e` until test accuracy drops below the best
    /// since resize (or `max_hold` non-dropping epochs pass), then jump to the
    /// next milestone; the horizon extends by the same shift.
    Extra { max_hold: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtraMode {
    Holding,
    Resumed,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtraTrainState {
    pub mode: ExtraMode,
    pub resize_epoch: usize,
    pub best_test_acc: f64,
    /// Epochs whose accuracy did not drop while holding.
    pub epochs_held: usize,
    pub max_hold: usize,
    /// `(actual epoch, schedule epoch)` of the first epoch after the drop.
    pub resumed_at: Option<(usize, usize)>,
}

impl ExtraTrainState {
    pub fn new(resize_epoch: usize, max_hold: usize) -> Self {
        ExtraTrainState {
            mode: ExtraMode::Holding,
            resize_epoch,
            best_test_acc: f64::NEG_INFINITY,
            epochs_held: 0,
            max_hold: max_hold.max(1),
            resumed_at: None,
        }
    }

    /// Schedule epoch whose rule applies at actual epoch `actual`.
    pub fn schedule_epoch(&self, actual: usize) -> usize {
        match self.resumed_at {
            None => self.resize_epoch.max(1),
            Some((a0, s0)) => s0 + (actual - a0),
        }
    }

    /// Feeds the test accuracy of actual epoch `actual`; returns true when the
    /// controller fires.
    pub fn observe(&mut self, actual: usize, test_acc: f64, schedule: &TrainingSchedule) -> bool {
        if self.mode == ExtraMode::Resumed {
            return false;
        }
        let dropped = test_acc < self.best_test_acc;
        if !dropped {
            self.best_test_acc = test_acc;
            self.epochs_held += 1;
        }
        if dropped || self.epochs_held >= self.max_hold {
            let next = schedule
                .next_milestone(self.resize_epoch)
                .unwrap_or(self.resize_epoch + 1);
            self.mode = ExtraMode::Resumed;
            self.resumed_at = Some((actual + 1, next));
            return true;
        }
        false
    }

    /// Actual epoch at which training ends, once known.
    pub fn last_epoch(&self, schedule: &TrainingSchedule) -> Option<usize> {
        self.resumed_at
            .map(|(a0, s0)| (a0 + schedule.total_epochs).saturating_sub(s0).max(a0 - 1))
    }
}

/// Resizes a pre-train checkpoint to `target` and keeps training at full
/// resolution. `train` and `test` are target-resolution datasets.
#[allow(clippy::too_many_arguments)]
pub fn resize_and_continue(
    pretrain: &Checkpoint,
    target: &ArchitectureSpec,
    plan: &ScalePlan,
    schedule: &TrainingSchedule,
    mode: ContinueMode,
    train: &Dataset,
    test: &Dataset,
    opts: &RunOptions,
    mut sink: impl LogSink,
) -> Result<TrainOutcome> {
    let e = pretrain.epoch;
    if e >= schedule.total_epochs {
        return Err(Error::Schedule(format!(
            "resize epoch {e} leaves nothing of a {}-epoch schedule",
            schedule.total_epochs
        )));
    }
    let start = Instant::now();
    let mut resized = resize_checkpoint(pretrain, target, plan)?;
    resized.wall_s += start.elapsed().as_secs_f64();
    let mut t = Trainer::new(resized, schedule, train, test, opts.eval_chunk)?;
    let mut log = Vec::new();
    let mut snapshots = Vec::new();
    let mut extra = match mode {
        ContinueMode::Scheduled => None,
        ContinueMode::Extra { max_hold } => Some(ExtraTrainState::new(e, max_hold)),
    };
    let mut actual = e;
    loop {
        let last = match &extra {
            None => Some(schedule.total_epochs),
            Some(st) => st.last_epoch(schedule),
        };
        if last.is_some_and(|l| actual >= l) {
            break;
        }
        if opts.stop_epoch.is_some_and(|s| actual >= s) {
            break;
        }
        actual += 1;
        let (rule, phase) = match &extra {
            None => (schedule.lr_at(actual)?, Phase::ResizedContinue),
            Some(st) => {
                let phase = if st.mode == ExtraMode::Holding {
                    Phase::Extra
                } else {
                    Phase::ResizedContinue
                };
                (schedule.rule_at(st.schedule_epoch(actual)), phase)
            }
        };
        let rec = t.epoch(actual, rule, phase)?;
        sink.record(&rec)?;
        log.push(rec);
        if let Some(st) = &mut extra {
            st.observe(actual, rec.test_acc, schedule);
        }
        if opts.snapshot_epochs.contains(&actual) {
            snapshots.push(t.checkpoint(actual));
        }
    }
    Ok(TrainOutcome {
        checkpoint: t.checkpoint(actual),
        snapshots,
        log,
        extra,
    })
}

/// True when the best test accuracy of the last `window` records beats the
/// best of all earlier records by less than `epsilon` (absolute).
pub fn plateau_stop(log: &[TrainLogRecord], window: usize, epsilon: f64) -> bool {
    if window < 2 || log.len() <= window {
        return false;
    }
    let (before, recent) = log.split_at(log.len() - window);
    let best = |rs: &[TrainLogRecord]| rs.iter().map(|r| r.test_acc).fold(f64::NEG_INFINITY, f64::max);
    best(recent) - best(before) < epsilon
}
