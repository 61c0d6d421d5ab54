//! Adam, a reduce-on-plateau learning-rate schedule, and the epoch loop.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::field::{Architecture, NeuralField};
use crate::sampling::stream_rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(parameter_count: usize) -> Self {
        Self {
            first_moment: vec![0.0; parameter_count],
            second_moment: vec![0.0; parameter_count],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    for len in [grads.len(), state.first_moment.len(), state.second_moment.len()] {
        if len != params.len() {
            return Err(Error::ShapeMismatch {
                expected: params.len(),
                found: len,
            });
        }
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { epoch: 0, batch: 0 });
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        let m = b1 * state.first_moment[i] + (1.0 - b1) * g;
        let v = b2 * state.second_moment[i] + (1.0 - b2) * g * g;
        state.first_moment[i] = m;
        state.second_moment[i] = v;
        params[i] -= lr * (m / c1) / ((v / c2).sqrt() + state.epsilon);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub initial_lr: f64,
    pub min_lr: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    /// Relative improvement an epoch must make over the best loss so far.
    pub plateau_threshold: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 50,
            batches_per_epoch: 1000,
            initial_lr: 1e-4,
            min_lr: 1e-8,
            plateau_patience: 2,
            plateau_factor: 0.1,
            plateau_threshold: 1e-4,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_lr > 0.0 && self.min_lr <= self.initial_lr) {
            return Err(Error::ConfigInvalid("0 < min_lr ≤ initial_lr".into()));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::ConfigInvalid("0 < plateau_factor < 1".into()));
        }
        if self.epochs == 0 || self.batches_per_epoch == 0 {
            return Err(Error::ConfigInvalid("epochs and batches_per_epoch must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Network shape, optimizer schedule and per-batch sample counts of one
/// training stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub architecture: Architecture,
    pub schedule: TrainSchedule,
    pub volume_samples: usize,
    /// Cloud points per batch; the full cloud when it has fewer points.
    pub surface_samples: usize,
}

/// Stateful reduce-on-plateau rule (minimization, relative threshold, no
/// cooldown).
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub lr: f64,
    best: f64,
    bad_epochs: usize,
    patience: usize,
    factor: f64,
    min_lr: f64,
    threshold: f64,
}

impl PlateauScheduler {
    pub fn new(lr: f64, patience: usize, factor: f64, min_lr: f64, threshold: f64) -> Self {
        Self {
            lr,
            best: f64::INFINITY,
            bad_epochs: 0,
            patience,
            factor,
            min_lr,
            threshold,
        }
    }

    pub fn from_schedule(s: &TrainSchedule) -> Self {
        Self::new(s.initial_lr, s.plateau_patience, s.plateau_factor, s.min_lr, s.plateau_threshold)
    }

    pub fn observe(&mut self, epoch_loss: f64) -> f64 {
        if epoch_loss < self.best * (1.0 - self.threshold) || self.best == f64::INFINITY {
            self.best = epoch_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.bad_epochs > self.patience {
            self.lr = (self.lr * self.factor).max(self.min_lr);
            self.bad_epochs = 0;
        }
        self.lr
    }
}

/// Learning rate after replaying `history` (epoch losses, oldest first)
/// through the plateau rule starting from `lr`.
pub fn plateau_update(history: &[f64], lr: f64, patience: usize, factor: f64, min_lr: f64) -> f64 {
    let mut s = PlateauScheduler::new(lr, patience, factor, min_lr, 1e-4);
    for &loss in history {
        s.observe(loss);
    }
    s.lr
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Learning rate used during each epoch.
    pub learning_rates: Vec<f64>,
    pub steps: u64,
}

/// Runs `epochs × batches_per_epoch` Adam steps.
///
/// `batch_loss(field, rng)` must return `(loss, ∂loss/∂θ)` and draw all of
/// its randomness from `rng`, which is the ChaCha stream `(seed, k)` for the
/// global batch index `k`. `on_epoch` is called after every epoch.
pub fn train<L, E>(
    mut field: NeuralField,
    schedule: &TrainSchedule,
    seed: u64,
    mut batch_loss: L,
    mut on_epoch: E,
) -> Result<(NeuralField, TrainTrace)>
where
    L: FnMut(&NeuralField, &mut ChaCha8Rng) -> Result<(f64, Vec<f64>)>,
    E: FnMut(usize, &NeuralField, &TrainTrace) -> Result<()>,
{
    schedule.validate()?;
    let mut adam = AdamState::new(field.parameter_count());
    let mut plateau = PlateauScheduler::from_schedule(schedule);
    let mut trace = TrainTrace::default();
    for epoch in 0..schedule.epochs {
        let lr = plateau.lr;
        let mut sum = 0.0;
        for batch in 0..schedule.batches_per_epoch {
            let k = (epoch * schedule.batches_per_epoch + batch) as u64;
            let mut rng = stream_rng(seed, k);
            let (loss, grad) = batch_loss(&field, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteGradient { epoch, batch });
            }
            adam_step(&mut field.parameters, &grad, &mut adam, lr).map_err(|e| match e {
                Error::NonFiniteGradient { .. } => Error::NonFiniteGradient { epoch, batch },
                other => other,
            })?;
            sum += loss;
        }
        let mean = sum / schedule.batches_per_epoch as f64;
        trace.epoch_losses.push(mean);
        trace.learning_rates.push(lr);
        trace.steps = adam.step_count;
        plateau.observe(mean);
        log::info!("epoch {:>3}: loss {:.6e}, lr {:.1e}", epoch + 1, mean, lr);
        on_epoch(epoch, &field, &trace)?;
    }
    Ok((field, trace))
}
