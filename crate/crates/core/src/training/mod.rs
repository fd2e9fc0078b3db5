//! Adam, learning-rate schedule, clipping and the early-stopping loop.

pub mod optim;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::model::Model;
use crate::scalar::Scalar;
use crate::tensor::{ParamId, Tape, Tensor, Var};

pub use optim::{clip_grad_norm, lr_at, Adam, TrainConfig};

/// Whether larger validation values are better.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Maximize,
    Minimize,
}

impl Direction {
    /// Strict improvement; ties never count.
    pub fn improves(self, candidate: f64, best: f64) -> bool {
        match self {
            Direction::Maximize => candidate > best,
            Direction::Minimize => candidate < best,
        }
    }
}

/// What the training loop needs from a task.
pub trait TrainingTask<T: Scalar> {
    fn train_len(&self) -> usize;
    fn val_len(&self) -> usize;
    /// Mean loss over the training examples at `indices`.
    fn batch_loss(&self, model: &Model<T>, tape: &mut Tape<T>, indices: &[usize]) -> Result<Var>;
    /// Validation metric of the current weights.
    fn validate(&self, model: &Model<T>) -> Result<f64>;
    fn direction(&self) -> Direction;
}

/// Patience counter over a sequence of validation values.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    patience: usize,
    direction: Direction,
    best: Option<(usize, f64)>,
    stale: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Stale,
    Stop,
}

impl EarlyStopper {
    pub fn new(patience: usize, direction: Direction) -> Self {
        Self {
            patience,
            direction,
            best: None,
            stale: 0,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> Verdict {
        match self.best {
            Some((_, b)) if !self.direction.improves(metric, b) => {
                self.stale += 1;
                if self.stale >= self.patience {
                    Verdict::Stop
                } else {
                    Verdict::Stale
                }
            }
            _ => {
                self.best = Some((epoch, metric));
                self.stale = 0;
                Verdict::Improved
            }
        }
    }
}

/// Snapshot of the trainable parameters at the best validation epoch.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub epoch: usize,
    pub val_metric: f64,
    snapshot: Vec<(ParamId, Tensor<T>)>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn capture(model: &Model<T>, epoch: usize, val_metric: f64) -> Self {
        let snapshot = model
            .params
            .trainable_ids()
            .into_iter()
            .map(|id| (id, model.params.value(id).clone()))
            .collect();
        Self {
            epoch,
            val_metric,
            snapshot,
        }
    }

    pub fn restore(&self, model: &mut Model<T>) {
        for (id, value) in &self.snapshot {
            *model.params.value_mut(*id) = value.clone();
        }
    }

    pub fn len(&self) -> usize {
        self.snapshot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshot.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub best: Checkpoint<T>,
    pub curve: Vec<EpochRecord>,
    pub stopped_early: bool,
    pub steps: usize,
}

/// Fixed-order mini-batches of one epoch, shuffled by a generator keyed on
/// `(seed, epoch)` only.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn as_divergence(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite { op } => Error::Divergence(format!("non-finite value in {op} during epoch {epoch}")),
        e => e,
    }
}

/// Trains until `max_epochs` or until `patience` epochs pass without a
/// strict validation improvement, then restores the best checkpoint.
pub fn train_with_early_stopping<T: Scalar>(
    model: &mut Model<T>,
    task: &dyn TrainingTask<T>,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if task.train_len() == 0 || task.val_len() == 0 {
        return config_err("training and validation splits must be nonempty");
    }
    let mut adam = Adam::new(config);
    let mut stopper = EarlyStopper::new(config.patience, task.direction());
    let mut best: Option<Checkpoint<T>> = None;
    let mut curve = Vec::new();
    let mut steps = 0;
    let mut stopped_early = false;
    let clip = T::of(config.grad_clip);

    for epoch in 1..=config.max_epochs {
        let mut total = 0.0;
        let batches = epoch_batches(task.train_len(), config.batch_size, config.seed, epoch);
        for batch in &batches {
            let mut tape = Tape::new();
            let loss = task
                .batch_loss(model, &mut tape, batch)
                .map_err(|e| as_divergence(e, epoch))?;
            total += tape.value(loss).item().as_f64() * batch.len() as f64;
            let mut grads = tape.backward(loss)?;
            clip_grad_norm(&mut grads, clip);
            steps += 1;
            adam.step(&mut model.params, &grads, lr_at(steps, config))?;
        }
        let val = task.validate(model).map_err(|e| as_divergence(e, epoch))?;
        if !val.is_finite() {
            return Err(Error::Divergence(format!("validation metric is {val} at epoch {epoch}")));
        }
        curve.push(EpochRecord {
            epoch,
            train_loss: total / task.train_len() as f64,
            val_metric: val,
        });
        match stopper.observe(epoch, val) {
            Verdict::Improved => best = Some(Checkpoint::capture(model, epoch, val)),
            Verdict::Stale => {}
            Verdict::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    let best = best.expect("first epoch always improves");
    best.restore(model);
    Ok(TrainOutcome {
        best,
        curve,
        stopped_early,
        steps,
    })
}
