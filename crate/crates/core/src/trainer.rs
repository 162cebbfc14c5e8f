//! Adam with decoupled weight decay, early stopping on validation MAE.

use serde::{Deserialize, Serialize};
use steerlab_autodiff::{ParamStore, Tensor};

use crate::data::FrameSet;
use crate::error::{ensure, Error, Result};
use crate::metrics;
use crate::model::Model;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Frames per step, drawn with replacement. At least the training set size
    /// means every step uses the whole set (pair batches excepted).
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Mini-batches per epoch; `0` means one pass worth of frames.
    pub batches_per_epoch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Epochs without validation improvement before stopping; `0` disables early stopping.
    pub patience: usize,
    /// Abort when validation MAE exceeds this multiple of its initial value ...
    pub divergence_factor: f64,
    /// ... for this many consecutive epochs.
    pub divergence_epochs: usize,
    /// Reload the best-validation parameters at the end; `false` keeps the last ones.
    pub restore_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            max_epochs: 200,
            batches_per_epoch: 0,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
            patience: 10,
            divergence_factor: 10.0,
            divergence_epochs: 3,
            restore_best: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size >= 1, Config, "batch size must be at least 1");
        ensure!(self.max_epochs >= 1, Config, "max epochs must be at least 1");
        ensure!(self.lr > 0.0, Config, "learning rate must be positive");
        ensure!(
            (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2),
            Config,
            "Adam betas must be in [0, 1)"
        );
        ensure!(self.weight_decay >= 0.0, Config, "weight decay must be non-negative");
        Ok(())
    }
}

/// Per-parameter Adam moments.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    skipped: usize,
}

impl AdamW {
    pub fn new(store: &ParamStore, cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            m: store.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: store.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            step: 0,
            skipped: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates skipped because a gradient was non-finite.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// Applies one update from the store's gradients; returns `false` if skipped.
    pub fn step(&mut self, store: &mut ParamStore) -> bool {
        if !store.iter().all(|p| p.grad.is_finite()) {
            self.skipped += 1;
            return false;
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data();
            let w = p.value.data_mut();
            for (((w, &g), m), v) in w.iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *w -= self.lr * (mh / (vh.sqrt() + self.eps) + self.weight_decay * *w);
            }
        }
        true
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

#[derive(Clone, Debug)]
pub struct EarlyStop {
    pub best: f64,
    pub since: usize,
    pub patience: usize,
}

impl EarlyStop {
    pub fn new(patience: usize) -> Self {
        Self {
            best: f64::INFINITY,
            since: 0,
            patience,
        }
    }

    pub fn update(&mut self, val: f64) -> StopDecision {
        if val < self.best {
            self.best = val;
            self.since = 0;
            StopDecision::Improved
        } else {
            self.since += 1;
            if self.patience > 0 && self.since >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Epoch 0 is the untrained model.
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub stopped_early: bool,
    pub skipped_steps: usize,
}

/// Validation MAE using each head's own inference rule.
pub fn validation_mae(model: &Model, set: &FrameSet) -> Result<f64> {
    let mut preds = Vec::with_capacity(set.len());
    for batch in set.chunks(1024) {
        let batch = batch?;
        preds.extend(model.infer_normalized(&batch.features)?.into_iter().map(|o| o.command));
    }
    metrics::mae(&preds, set.labels())
}

/// Trains `model` in place and leaves it at its best-validation parameters,
/// or its last ones when `restore_best` is off.
pub fn fit(model: &mut Model, train: &FrameSet, val: &FrameSet, cfg: &TrainConfig, rng: &mut Rng) -> Result<FitReport> {
    cfg.validate()?;
    ensure!(!train.is_empty(), Training, "empty training set");
    ensure!(!val.is_empty(), Training, "empty validation set");
    let pairs = model.head.wants_pairs();
    let batches = if cfg.batches_per_epoch > 0 {
        cfg.batches_per_epoch
    } else {
        train.len().div_ceil(cfg.batch_size)
    };
    let full_batch = cfg.batch_size >= train.len();
    let mut opt = AdamW::new(&model.store, cfg);
    let initial = validation_mae(model, val)?;
    let mut curve = vec![EpochRecord {
        epoch: 0,
        train_loss: f64::NAN,
        val_mae: initial,
    }];
    let mut stop = EarlyStop::new(cfg.patience);
    stop.update(initial);
    let mut best = model.store.clone();
    let mut best_epoch = 0;
    let mut diverging = 0;
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        let mut total = 0.0;
        for _ in 0..batches {
            let batch = if pairs {
                train.sample_pairs((cfg.batch_size / 2).max(1), rng)?
            } else if full_batch {
                train.gather(&(0..train.len()).collect::<Vec<_>>())?
            } else {
                train.sample_frames(cfg.batch_size, rng)?
            };
            total += model.loss_and_grad(&batch, rng)?;
            opt.step(&mut model.store);
        }
        let val_mae = validation_mae(model, val)?;
        curve.push(EpochRecord {
            epoch,
            train_loss: total / batches as f64,
            val_mae,
        });
        log::debug!("{} epoch {epoch}: loss {:.4} val MAE {val_mae:.3}", model.spec.head, total / batches as f64);
        if !val_mae.is_finite() || val_mae > cfg.divergence_factor * initial {
            diverging += 1;
            if diverging >= cfg.divergence_epochs {
                return Err(Error::Training(format!(
                    "{} diverged: validation MAE {val_mae:.3} vs initial {initial:.3} for {diverging} epochs",
                    model.spec.head
                )));
            }
        } else {
            diverging = 0;
        }
        match stop.update(val_mae) {
            StopDecision::Improved => {
                best = model.store.clone();
                best_epoch = epoch;
            }
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    if cfg.restore_best {
        model.store.load_values(&best)?;
    }
    Ok(FitReport {
        best_val_mae: curve[best_epoch].val_mae,
        curve,
        best_epoch,
        stopped_early,
        skipped_steps: opt.skipped(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(vals: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::vector(vals)).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut s = store(vec![1.0, -2.0, 0.5]);
        s.iter_mut().next().unwrap().grad = Tensor::vector(vec![3.0, -0.01, 1e3]);
        let mut opt = AdamW::new(&s, &cfg);
        assert!(opt.step(&mut s));
        let w = s.iter().next().unwrap().value.data().to_vec();
        for (after, (before, g)) in w.iter().zip([(1.0, 3.0), (-2.0, -0.01), (0.5, 1e3)]) {
            let expect = before - 1e-3 * f64::signum(g);
            assert!((after - expect).abs() < 1e-8, "{after} vs {expect}");
        }
    }

    #[test]
    fn zero_grad_without_decay_is_a_no_op() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut s = store(vec![1.0, -2.0]);
        let mut opt = AdamW::new(&s, &cfg);
        opt.step(&mut s);
        assert_eq!(s.iter().next().unwrap().value.data(), &[1.0, -2.0]);
    }

    #[test]
    fn zero_grad_with_decay_shrinks() {
        let cfg = TrainConfig::default();
        let mut s = store(vec![1.0, -2.0]);
        let mut opt = AdamW::new(&s, &cfg);
        opt.step(&mut s);
        let f = 1.0 - 1e-3 * 1e-2;
        let w = s.iter().next().unwrap().value.data().to_vec();
        assert!((w[0] - f).abs() < 1e-15 && (w[1] + 2.0 * f).abs() < 1e-15);
    }

    #[test]
    fn non_finite_grads_are_skipped() {
        let mut s = store(vec![1.0]);
        s.iter_mut().next().unwrap().grad = Tensor::vector(vec![f64::NAN]);
        let mut opt = AdamW::new(&s, &TrainConfig::default());
        assert!(!opt.step(&mut s));
        assert_eq!(opt.skipped(), 1);
        assert_eq!(opt.steps(), 0);
        assert_eq!(s.iter().next().unwrap().value.data(), &[1.0]);
    }

    #[test]
    fn early_stop_fires_after_patience_flat_epochs() {
        let mut e = EarlyStop::new(10);
        for v in [5.0, 4.0, 3.0] {
            assert_eq!(e.update(v), StopDecision::Improved);
        }
        for i in 1..=10 {
            let d = e.update(3.0);
            assert_eq!(d == StopDecision::Stop, i == 10, "epoch {i}");
        }
    }
}
