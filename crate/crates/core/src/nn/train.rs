//! Mini-batch training loop.

use std::time::Instant;

use super::adam::{AdamConfig, AdamState};
use super::dropout::{sample_masks, DropoutMasks};
use super::model::{check_grad, loss, loss_denominator, LossKind, Model, ModelParams};
use super::tensor::Tensor;
use crate::rng::SplitMix64;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub loss: LossKind,
    /// Worker threads for per-batch gradient evaluation. `1` is the
    /// deterministic reference path.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 256,
            adam: AdamConfig::default(),
            seed: 0,
            loss: LossKind::Mse,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches (dropout active).
    pub train_loss: f64,
    /// Eval-mode loss on the validation set; NaN when it is empty.
    pub val_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,wall_seconds\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{:e},{:e},{:.3}\n",
                e.epoch, e.train_loss, e.val_loss, e.wall_seconds
            ));
        }
        s
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Eval-mode loss of `model` on `set`.
pub fn evaluate(model: &Model, set: &Tensor, kind: LossKind) -> Result<f64> {
    if set.is_empty() {
        return Ok(f64::NAN);
    }
    let pred = model.reconstruct(set)?;
    loss(&pred, set, kind)
}

fn batch_of(data: &Tensor, rows: &[usize], row_len: usize) -> Tensor {
    let mut shape = data.shape().to_vec();
    shape[0] = rows.len();
    let mut out = Vec::with_capacity(rows.len() * row_len);
    for &r in rows {
        out.extend_from_slice(&data.data()[r * row_len..(r + 1) * row_len]);
    }
    Tensor::from_vec(&shape, out).expect("batch shape")
}

fn batch_gradient(
    model: &Model,
    batch: &Tensor,
    masks: &[DropoutMasks],
    kind: LossKind,
    threads: usize,
) -> Result<(f64, ModelParams)> {
    if threads <= 1 {
        return model.loss_and_gradient(batch, Some(masks), kind);
    }
    let row_len = model.config.timesteps * model.config.features;
    let denom = loss_denominator(batch.data(), kind);
    let rows: Vec<&[f64]> = batch.data().chunks_exact(row_len).collect();
    let chunk = rows.len().div_ceil(threads);
    let parts: Vec<Result<(f64, ModelParams)>> = std::thread::scope(|s| {
        let handles: Vec<_> = rows
            .chunks(chunk)
            .zip(masks.chunks(chunk))
            .map(|(rs, ms)| {
                s.spawn(move || {
                    let mut g = model.params.zeros_like();
                    let mut l = 0.0;
                    for (x, m) in rs.iter().zip(ms) {
                        l += model.sequence_gradient(x, Some(m), kind, denom, &mut g)?;
                    }
                    Ok((l, g))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut total = 0.0;
    let mut grad = model.params.zeros_like();
    for p in parts {
        let (l, g) = p?;
        total += l;
        grad.add_assign(&g);
    }
    check_grad(&grad)?;
    Ok((total, grad))
}

/// Trains `model` in place. `on_epoch` runs after every epoch (e.g. to
/// write a checkpoint); returning an error stops training.
///
/// On a non-finite loss or gradient the parameters are rolled back to the
/// end of the last completed epoch and [`Error::Diverged`] is returned.
pub fn train<F>(
    model: &mut Model,
    train_set: &Tensor,
    val_set: &Tensor,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainingHistory>
where
    F: FnMut(&Model, &EpochRecord) -> Result<()>,
{
    cfg.validate()?;
    model.validate()?;
    let row_len = model.config.timesteps * model.config.features;
    let n = train_set.shape()[0];
    if n == 0 {
        return Err(Error::Data("training set is empty".into()));
    }
    for (name, t) in [("training", train_set), ("validation", val_set)] {
        let s = t.shape();
        if s.len() != 3 || s[1] != model.config.timesteps || s[2] != model.config.features {
            return Err(Error::Data(format!("{name} set has shape {s:?}")));
        }
    }

    let mut rng = SplitMix64::new(cfg.seed);
    let mut adam = AdamState::for_params(cfg.adam, &model.params);
    let mut history = TrainingHistory::default();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let last_good = model.params.clone();
        rng.shuffle(&mut order);
        let mut weighted = 0.0;
        let outcome: Result<()> = (|| {
            for rows in order.chunks(cfg.batch_size) {
                let batch = batch_of(train_set, rows, row_len);
                let masks: Vec<DropoutMasks> = rows.iter().map(|_| sample_masks(&model.config, &mut rng)).collect();
                let (l, grad) = batch_gradient(model, &batch, &masks, cfg.loss, cfg.threads)?;
                if !l.is_finite() {
                    return Err(Error::NonFinite {
                        context: "batch loss".into(),
                    });
                }
                weighted += l * rows.len() as f64;
                adam.update(&mut model.params, &grad);
            }
            Ok(())
        })();
        if let Err(e) = outcome {
            model.params = last_good;
            return Err(if e.is_numeric() {
                Error::Diverged {
                    epoch,
                    reason: e.to_string(),
                }
            } else {
                e
            });
        }
        let val_loss = match evaluate(model, val_set, cfg.loss) {
            Ok(v) => v,
            Err(e) => {
                model.params = last_good;
                return Err(Error::Diverged {
                    epoch,
                    reason: e.to_string(),
                });
            }
        };
        let record = EpochRecord {
            epoch,
            train_loss: weighted / n as f64,
            val_loss,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(model, &record)?;
        history.epochs.push(record);
    }
    Ok(history)
}
