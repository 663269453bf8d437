//! Relative L2 loss, batch gradients, Adam and the train/evaluate loops.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{rng_for, tag};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::grid::Field;
use crate::neuralop::Gso;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-4,
            batch: 20,
            epochs: 100,
            seed: 0,
            n_train: 900,
            n_test: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.batch == 0 || self.batch > self.n_train {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= batch ({}) <= n_train ({})",
                self.batch, self.n_train
            )));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) || !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("lr and weight decay must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// `|pred - truth| / |truth|` in the grid L2 norm (the cell weight cancels).
pub fn relative_l2_loss<T: Real>(pred: &Field<T>, truth: &Field<T>) -> Result<T> {
    Ok(relative_l2_with_grad(pred, truth, false)?.0)
}

/// Loss and, when asked, its gradient with respect to `pred`:
/// `(pred - truth) / (|pred - truth| |truth|)`, taken as zero at a perfect
/// prediction.
pub fn relative_l2_with_grad<T: Real>(pred: &Field<T>, truth: &Field<T>, grad: bool) -> Result<(T, Option<Field<T>>)> {
    if !pred.same_shape(truth) {
        return Err(Error::ShapeMismatch("prediction and truth differ in shape".into()));
    }
    let tn = truth.data().iter().map(|v| *v * *v).sum::<T>().sqrt();
    if tn == T::zero() {
        return Err(Error::ZeroNorm);
    }
    let diff: Vec<T> = pred.data().iter().zip(truth.data()).map(|(p, t)| *p - *t).collect();
    let dn = diff.iter().map(|v| *v * *v).sum::<T>().sqrt();
    let loss = dn / tn;
    if !grad {
        return Ok((loss, None));
    }
    let scale = if dn == T::zero() { T::zero() } else { T::one() / (dn * tn) };
    let g = diff.into_iter().map(|v| v * scale).collect();
    Ok((loss, Some(Field::from_vec(pred.grid(), pred.channels(), g)?)))
}

/// One training example borrowed from a dataset.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a, T> {
    pub input: &'a Field<T>,
    pub epsilon: Option<T>,
    pub output: &'a Field<T>,
}

impl<T: Real> Dataset<T> {
    pub fn sample(&self, i: usize) -> Sample<'_, T> {
        Sample {
            input: &self.inputs[i],
            epsilon: self.epsilon(i),
            output: &self.outputs[i],
        }
    }
}

fn sample_gradient<T: Real>(model: &Gso<T>, s: &Sample<'_, T>) -> Result<(T, Vec<T>)> {
    let (pred, cache) = model.forward_cached(s.input, s.epsilon)?;
    let (loss, g) = relative_l2_with_grad(&pred, s.output, true)?;
    let grad = model.backward(&cache, &g.expect("gradient requested"))?;
    Ok((loss, grad))
}

/// Mean loss and its exact gradient over a batch. Samples run in parallel;
/// the per-sample results are summed in batch order, so the result does not
/// depend on the thread count.
pub fn batch_gradient<T: Real>(model: &Gso<T>, batch: &[Sample<'_, T>]) -> Result<(T, Vec<T>)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch has no samples".into()));
    }
    let parts: Vec<(T, Vec<T>)> = batch.par_iter().map(|s| sample_gradient(model, s)).collect::<Result<_>>()?;
    let inv = T::one() / T::lit(batch.len() as f64);
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); model.n_params()];
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((loss * inv, grad))
}

/// Adam moments and step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One Adam update with coupled L2 decay (`g + wd * theta` enters the
/// moments).
pub fn adam_step<T: Real>(params: &mut [T], grads: &[T], state: &mut AdamState<T>, lr: f64, weight_decay: f64) {
    assert_eq!(params.len(), grads.len(), "gradient length differs from parameters");
    assert_eq!(params.len(), state.m.len(), "optimizer state length differs from parameters");
    state.t += 1;
    let (b1, b2) = (T::lit(ADAM_BETA1), T::lit(ADAM_BETA2));
    let c1 = T::one() - T::lit(ADAM_BETA1.powi(state.t as i32));
    let c2 = T::one() - T::lit(ADAM_BETA2.powi(state.t as i32));
    let (lr, wd, eps) = (T::lit(lr), T::lit(weight_decay), T::lit(ADAM_EPS));
    for i in 0..params.len() {
        let g = grads[i] + wd * params[i];
        state.m[i] = b1 * state.m[i] + (T::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (T::one() - b2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= lr * mh / (vh.sqrt() + eps);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean relative error on the test split; `None` without a test split.
    pub test_error: Option<f64>,
    pub wall_seconds: f64,
}

/// CSV with header `epoch,train_loss,test_error,wall_seconds`.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,test_error,wall_seconds\n");
    for r in history {
        let test = r.test_error.map_or_else(String::new, |e| format!("{e:.17e}"));
        s.push_str(&format!("{},{:.17e},{},{:.3}\n", r.epoch, r.train_loss, test, r.wall_seconds));
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mean: f64,
    pub per_sample: Vec<f64>,
}

/// Mean relative L2 error over samples `range` of a dataset.
pub fn evaluate<T: Real>(model: &Gso<T>, data: &Dataset<T>, range: std::ops::Range<usize>) -> Result<EvalReport> {
    if range.is_empty() {
        return Err(Error::Empty("evaluation split is empty".into()));
    }
    if range.end > data.len() {
        return Err(Error::InvalidArgument(format!(
            "evaluation range {range:?} outside dataset of {} samples",
            data.len()
        )));
    }
    let per_sample: Vec<f64> = range
        .into_par_iter()
        .map(|i| {
            let s = data.sample(i);
            let pred = model.forward(s.input, s.epsilon)?;
            Ok(relative_l2_loss(&pred, s.output)?.as_f64())
        })
        .collect::<Result<_>>()?;
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok(EvalReport { mean, per_sample })
}

/// Training progress after a run, enough to resume it.
#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub history: Vec<EpochRecord>,
    pub state: AdamState<T>,
    pub epochs_done: usize,
}

/// Trains on samples `[0, n_train)` and reports the test error on
/// `[n_train, n_train + n_test)` after every epoch.
pub fn train<T: Real>(model: &mut Gso<T>, data: &Dataset<T>, cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    let state = AdamState::new(model.n_params());
    train_from(model, data, cfg, state, 0, |_| {})
}

/// Continues training from `state` at epoch `start`; `on_epoch` sees every
/// record as it is produced.
pub fn train_from<T: Real>(
    model: &mut Gso<T>,
    data: &Dataset<T>,
    cfg: &TrainConfig,
    mut state: AdamState<T>,
    start: usize,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    data.validate()?;
    if cfg.n_train + cfg.n_test > data.len() {
        return Err(Error::InvalidArgument(format!(
            "split {} + {} exceeds dataset of {} samples",
            cfg.n_train,
            cfg.n_test,
            data.len()
        )));
    }
    if state.m.len() != model.n_params() {
        return Err(Error::ShapeMismatch("optimizer state does not match the model".into()));
    }
    let clock = Instant::now();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..cfg.n_train).collect();
    let batches = cfg.n_train / cfg.batch;
    for epoch in start..start + cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_for(cfg.seed, epoch as u64, tag::SHUFFLE));
        let mut total = 0.0;
        for b in 0..batches {
            let batch: Vec<Sample<'_, T>> = order[b * cfg.batch..(b + 1) * cfg.batch].iter().map(|&i| data.sample(i)).collect();
            let (loss, grad) = batch_gradient(model, &batch).map_err(|e| match e {
                Error::NonFinite { .. } => Error::Diverged { epoch, batch: b },
                e => e,
            })?;
            let loss = loss.as_f64();
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, batch: b });
            }
            total += loss;
            adam_step(model.params_mut(), &grad, &mut state, cfg.lr, cfg.weight_decay);
        }
        let test_error = if cfg.n_test > 0 {
            Some(evaluate(model, data, cfg.n_train..cfg.n_train + cfg.n_test)?.mean)
        } else {
            None
        };
        let rec = EpochRecord {
            epoch,
            train_loss: total / batches as f64,
            test_error,
            wall_seconds: clock.elapsed().as_secs_f64(),
        };
        on_epoch(&rec);
        history.push(rec);
    }
    Ok(TrainOutcome {
        history,
        state,
        epochs_done: start + cfg.epochs,
    })
}
