//! Losses, Adam, the early-stopping rule and the epoch loop.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::WindowSample;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::math;
use crate::model::{Model, TextQueries};
use crate::params::{Binder, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

/// Samples per tape. Fixed so gradient sums do not depend on thread count.
pub const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum LossKind {
    #[default]
    Mse,
    Mae,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Stop once consecutive validation losses differ by less than this.
    pub early_stop_delta: f64,
    /// Consecutive sub-delta changes required to stop; 1 is the plain rule.
    pub patience: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub batch_size: usize,
    pub loss_kind: LossKind,
    /// Shuffling seed. Run configs set it from their root seed, so it is
    /// not read from or written to config files.
    #[cfg_attr(feature = "serde", serde(skip))]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 100,
            early_stop_delta: 1e-4,
            patience: 1,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            batch_size: 64,
            loss_kind: LossKind::Mse,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs < 1 {
            return Err(Error::config("train.max_epochs", "must be at least 1"));
        }
        if !(self.early_stop_delta > 0.0 && self.early_stop_delta.is_finite()) {
            return Err(Error::config("train.early_stop_delta", "must be positive"));
        }
        if self.patience < 1 {
            return Err(Error::config("train.patience", "must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.lr", "must be positive"));
        }
        for (k, b) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(k, "must lie in [0, 1)"));
            }
        }
        if !(self.eps_adam > 0.0 && self.eps_adam.is_finite()) {
            return Err(Error::config("train.eps_adam", "must be positive"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        Ok(())
    }
}

/// Elementwise loss summed (not averaged) over `pred - target`.
fn loss_sum(tape: &mut Tape, pred: Var, target: Var, kind: LossKind) -> Result<Var> {
    let diff = tape.sub(pred, target)?;
    let per = match kind {
        LossKind::Mse => tape.mul(diff, diff)?,
        LossKind::Mae => tape.abs(diff),
    };
    Ok(tape.sum(per))
}

/// Mean squared or mean absolute error over all elements, as a scalar node.
pub fn compute_loss(tape: &mut Tape, pred: Var, target: Var, kind: LossKind) -> Result<Var> {
    let (ps, ts) = (tape.value(pred).shape(), tape.value(target).shape());
    if ps != ts {
        return Err(TensorError::Shape {
            op: "compute_loss",
            lhs: ps.to_vec(),
            rhs: ts.to_vec(),
        }
        .into());
    }
    let n = tape.value(pred).len() as f64;
    let s = loss_sum(tape, pred, target, kind)?;
    Ok(tape.scale(s, 1.0 / n))
}

/// First and second Adam moments per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Number of steps taken.
    pub t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        AdamState {
            m: store.zeros_like(),
            v: store.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based).
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    moments: &mut AdamState,
    cfg: &TrainConfig,
    t: u64,
) {
    debug_assert!(t >= 1);
    let bc1 = 1.0 - math::powi(cfg.beta1, t as f64);
    let bc2 = 1.0 - math::powi(cfg.beta2, t as f64);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut moments.m)
        .zip(&mut moments.v)
    {
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *pi -= cfg.lr * m_hat / (math::sqrt(v_hat) + cfg.eps_adam);
        }
    }
    moments.t = t;
}

/// Early-stopping rule: the last two validation losses differ by less than
/// `delta`. Never fires on a single entry.
pub fn should_stop(val_history: &[f64], delta: f64) -> bool {
    should_stop_with_patience(val_history, delta, 1)
}

/// The last `patience` consecutive changes are all below `delta`.
pub fn should_stop_with_patience(val_history: &[f64], delta: f64, patience: usize) -> bool {
    let patience = patience.max(1);
    if val_history.len() < patience + 1 {
        return false;
    }
    val_history[val_history.len() - patience - 1..]
        .windows(2)
        .all(|w| (w[1] - w[0]).abs() < delta)
}

/// Summed loss and summed parameter gradients over a set of windows.
#[derive(Debug, Clone)]
pub struct GradSum {
    pub loss: f64,
    pub grads: Vec<Tensor>,
}

fn query_for<'q>(queries: Option<&'q TextQueries>, s: &WindowSample) -> Option<&'q [f64]> {
    queries.and_then(|q| q.get(s.channel_index))
}

/// Forward + backward over `samples` on one tape.
pub fn chunk_gradients(
    model: &Model,
    samples: &[&WindowSample],
    queries: Option<&TextQueries>,
    kind: LossKind,
) -> Result<GradSum> {
    let mut tape = Tape::new();
    let mut binder = Binder::new(&model.store);
    let mut preds = Vec::with_capacity(samples.len());
    let mut targets = Vec::with_capacity(samples.len() * model.cfg.horizon);
    for s in samples {
        preds.push(model.forward(&mut tape, &mut binder, s, query_for(queries, s))?);
        targets.extend(model.model_target(s));
    }
    let pred = tape.concat_rows(&preds)?;
    let target = tape.constant(Tensor::matrix(samples.len(), model.cfg.horizon, targets)?);
    let loss = loss_sum(&mut tape, pred, target, kind)?;
    let loss_value = tape.value(loss).data()[0];
    tape.backward(loss)?;
    Ok(GradSum {
        loss: loss_value,
        grads: binder.grads(&tape),
    })
}

/// Mean loss over `samples` (model scale), fanned out over chunks.
pub fn mean_loss<E: Executor>(
    model: &Model,
    samples: &[WindowSample],
    queries: Option<&TextQueries>,
    kind: LossKind,
    exec: &E,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data("cannot compute a loss over zero windows".into()));
    }
    let n_chunks = samples.len().div_ceil(CHUNK);
    let parts = exec.map(n_chunks, &|c| -> Result<f64> {
        let mut sum = 0.0;
        for s in &samples[c * CHUNK..((c + 1) * CHUNK).min(samples.len())] {
            let pred = model.predict_model_scale(s, query_for(queries, s))?;
            let target = model.model_target(s);
            sum += pred
                .iter()
                .zip(&target)
                .map(|(p, t)| match kind {
                    LossKind::Mse => (p - t) * (p - t),
                    LossKind::Mae => (p - t).abs(),
                })
                .sum::<f64>();
        }
        Ok(sum)
    });
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total / (samples.len() * model.cfg.horizon) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Observer over the epoch loop. The returned value replaces the computed
/// validation loss, which lets tests script plateau sequences.
pub trait TrainHook {
    fn on_epoch(&mut self, _epoch: usize, val_loss: f64) -> f64 {
        val_loss
    }
}

/// Default hook: observes nothing.
pub struct NoHook;

impl TrainHook for NoHook {}

/// Trained model plus everything needed to resume or audit the run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Best-validation parameters.
    pub model: Model,
    pub train_cfg: TrainConfig,
    pub adam: AdamState,
    /// Number of epochs run.
    pub epoch: usize,
    pub val_history: Vec<f64>,
    /// 1-based epoch whose parameters `model` holds.
    pub best_epoch: usize,
}

impl Checkpoint {
    pub fn best_val_loss(&self) -> f64 {
        self.val_history[self.best_epoch - 1]
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub stopped_early: bool,
}

/// Trains `model` in place and returns the best-validation checkpoint.
///
/// Each epoch shuffles the training windows with a generator seeded from
/// `cfg.seed`, takes one Adam step per batch, evaluates the validation loss
/// and applies the early-stopping rule.
pub fn train<E: Executor, H: TrainHook>(
    mut model: Model,
    train_set: &[WindowSample],
    val_set: &[WindowSample],
    queries: Option<&TextQueries>,
    cfg: &TrainConfig,
    exec: &E,
    hook: &mut H,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data("training and validation sets must be nonempty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut adam = AdamState::new(&model.store);
    let mut history = Vec::new();
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut stopped_early = false;
    let horizon = model.cfg.horizon;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<&WindowSample> = batch.iter().map(|&i| &train_set[i]).collect();
            let n_chunks = samples.len().div_ceil(CHUNK);
            let model_ref = &model;
            let parts = exec.map(n_chunks, &|c| {
                let end = ((c + 1) * CHUNK).min(samples.len());
                chunk_gradients(model_ref, &samples[c * CHUNK..end], queries, cfg.loss_kind)
            });
            let mut grads = model.store.zeros_like();
            let mut loss = 0.0;
            for part in parts {
                let part = part?;
                loss += part.loss;
                for (g, pg) in grads.iter_mut().zip(&part.grads) {
                    g.data_mut().iter_mut().zip(pg.data()).for_each(|(a, b)| *a += b);
                }
            }
            let scale = 1.0 / (samples.len() * horizon) as f64;
            loss *= scale;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
            let t = adam.t + 1;
            adam_step(model.store.tensors_mut(), &grads, &mut adam, cfg, t);
            epoch_loss += loss * samples.len() as f64;
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val = mean_loss(&model, val_set, queries, cfg.loss_kind, exec)?;
        let val = hook.on_epoch(epoch, val);
        if !val.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: 0,
                loss: val,
            });
        }
        history.push(val);
        log.push(EpochLog {
            epoch,
            train_loss,
            val_loss: val,
        });
        if best.as_ref().is_none_or(|(b, _, _)| val < *b) {
            best = Some((val, epoch, model.store.clone()));
        }
        if should_stop_with_patience(&history, cfg.early_stop_delta, cfg.patience) {
            stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }

    let epochs_run = history.len();
    let (_, best_epoch, best_store) = best.expect("at least one epoch");
    model.store = best_store;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model,
            train_cfg: *cfg,
            adam,
            epoch: epochs_run,
            val_history: history,
            best_epoch,
        },
        log,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn loss_examples() {
        for kind in [LossKind::Mse, LossKind::Mae] {
            let mut t = Tape::new();
            let p = t.constant(Tensor::vector(vec![0.5, -2.0]).unwrap());
            let l = compute_loss(&mut t, p, p, kind).unwrap();
            assert_eq!(t.value(l).data()[0], 0.0);
        }
        let mut t = Tape::new();
        let p = t.constant(Tensor::vector(vec![0.0, 2.0]).unwrap());
        let y = t.constant(Tensor::vector(vec![1.0, 1.0]).unwrap());
        let mae = compute_loss(&mut t, p, y, LossKind::Mae).unwrap();
        let mse = compute_loss(&mut t, p, y, LossKind::Mse).unwrap();
        assert_eq!(t.value(mae).data()[0], 1.0);
        assert_eq!(t.value(mse).data()[0], 1.0);

        let z = t.constant(Tensor::vector(vec![1.0, 1.0, 1.0]).unwrap());
        assert!(compute_loss(&mut t, p, z, LossKind::Mse).is_err());
    }

    #[test]
    fn adam_zero_grad_is_noop() {
        let cfg = TrainConfig::default();
        let mut params = vec![Tensor::vector(vec![0.3, -1.2]).unwrap()];
        let before = params.clone();
        let grads = vec![Tensor::zeros(&[2])];
        let mut st = AdamState {
            m: grads.clone(),
            v: grads.clone(),
            t: 0,
        };
        adam_step(&mut params, &grads, &mut st, &cfg, 1);
        assert_eq!(params, before);
    }

    #[test]
    fn adam_first_step_closed_form() {
        // from zero moments: m̂ = g, v̂ = g², step = -lr·g/(|g| + eps)
        let cfg = TrainConfig {
            lr: 1e-3,
            ..Default::default()
        };
        let g = [0.5, -3.0, 1e-3];
        let mut params = vec![Tensor::vector(vec![1.0, 1.0, 1.0]).unwrap()];
        let grads = vec![Tensor::vector(g.to_vec()).unwrap()];
        let mut st = AdamState {
            m: vec![Tensor::zeros(&[3])],
            v: vec![Tensor::zeros(&[3])],
            t: 0,
        };
        adam_step(&mut params, &grads, &mut st, &cfg, 1);
        for (p, gi) in params[0].data().iter().zip(g) {
            let expect = 1.0 - 1e-3 * gi / (gi.abs() + 1e-8);
            assert!((p - expect).abs() < 1e-15);
            assert!(((1.0 - p) / 1e-3 - gi.signum()).abs() < 1e-4);
        }
        assert_eq!(st.t, 1);
    }

    #[test]
    fn stop_rule_examples() {
        assert!(!should_stop(&[0.5], 1e-4));
        assert!(should_stop(&[0.5, 0.49995], 1e-4));
        assert!(!should_stop(&[0.5, 0.4], 1e-4));
        assert!(!should_stop(&[0.5, 0.4989], 1e-4));
        // rising loss counts as a change too
        assert!(!should_stop(&[0.4, 0.5], 1e-4));

        assert!(!should_stop_with_patience(&[0.5, 0.49995], 1e-4, 2));
        assert!(should_stop_with_patience(&[0.5, 0.49995, 0.49991], 1e-4, 2));
        assert!(!should_stop_with_patience(&[0.6, 0.5, 0.49995], 1e-4, 2));
    }

    #[test]
    fn config_validation_names_keys() {
        let bad = TrainConfig {
            max_epochs: 0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { key, .. }) if key == "train.max_epochs"));
        let bad = TrainConfig {
            early_stop_delta: 0.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { key, .. }) if key == "train.early_stop_delta"));
    }
}
