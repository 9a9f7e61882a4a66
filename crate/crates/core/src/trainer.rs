//! Training loop: validation split, learning-rate halving on plateaus, early
//! stopping and restoration of the best weights.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::EncodedTable;
use crate::error::{Error, Result};
use crate::kernel::{Adam, AdamConfig, ParamStore, Scalar};
use crate::model::seq::SeqWindow;
use crate::model::{FlatModel, Permutation, SeqModel};

pub const MIN_UNITS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    /// Epochs without improvement before stopping (N).
    pub early_stop_patience: usize,
    /// Epochs without improvement before halving the learning rate (K).
    pub lr_patience: usize,
    pub val_fraction: f64,
    pub max_epochs: usize,
    pub max_seq_window: usize,
    pub seed: u64,
    /// Required decrease of the validation loss to count as improvement.
    pub min_delta: f64,
    /// Restart the stopping counter whenever the learning rate is halved.
    pub reset_stop_on_halve: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            initial_lr: 1e-3,
            early_stop_patience: 5,
            lr_patience: 3,
            val_fraction: 0.1,
            max_epochs: 200,
            max_seq_window: 100,
            seed: 0,
            min_delta: 1e-5,
            reset_stop_on_halve: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.val_fraction > 0.0 && self.val_fraction < 0.5) {
            return bad("val_fraction must lie in (0, 0.5)");
        }
        if self.lr_patience == 0 || self.early_stop_patience == 0 {
            return bad("patience values must be at least 1");
        }
        if self.lr_patience > self.early_stop_patience {
            return bad("lr_patience must not exceed early_stop_patience");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.max_seq_window == 0 {
            return bad("batch_size, max_epochs and max_seq_window must be at least 1");
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) || !(self.min_delta >= 0.0) {
            return bad("initial_lr must be positive and min_delta non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStopping,
    MaxEpochs,
    NonFiniteLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub improved: bool,
    /// The learning rate was halved after this epoch.
    pub halved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
    pub n_train: usize,
    pub n_val: usize,
    /// Not serialised so that stored reports are reproducible.
    #[serde(skip)]
    pub wall_time: Duration,
}

impl TrainReport {
    pub fn epoch_log(&self) -> String {
        let mut s = String::new();
        for e in &self.epochs {
            s.push_str(&format!(
                "epoch {:>3}  train {:.6}  val {:.6}  lr {:.3e}{}{}\n",
                e.epoch,
                e.train_loss,
                e.val_loss,
                e.lr,
                if e.improved { "  *" } else { "" },
                if e.halved { "  lr/2" } else { "" },
            ));
        }
        s.push_str(&format!(
            "stopped: {:?}; best epoch {} (val {:.6})\n",
            self.stop_reason, self.best_epoch, self.best_val_loss
        ));
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Observation {
    pub improved: bool,
    pub halve: bool,
    pub stop: bool,
}

/// Patience bookkeeping. Both counters measure epochs since the last
/// improvement; the halving counter also restarts after each halving.
#[derive(Debug, Clone)]
pub struct PlateauTracker {
    pub best: f64,
    since_best: usize,
    since_halve: usize,
    lr_patience: usize,
    stop_patience: usize,
    min_delta: f64,
    reset_stop_on_halve: bool,
}

impl PlateauTracker {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            best: f64::INFINITY,
            since_best: 0,
            since_halve: 0,
            lr_patience: cfg.lr_patience,
            stop_patience: cfg.early_stop_patience,
            min_delta: cfg.min_delta,
            reset_stop_on_halve: cfg.reset_stop_on_halve,
        }
    }

    pub fn observe(&mut self, val: f64) -> Observation {
        if val < self.best - self.min_delta {
            self.best = val;
            self.since_best = 0;
            self.since_halve = 0;
            return Observation {
                improved: true,
                ..Observation::default()
            };
        }
        self.since_best += 1;
        self.since_halve += 1;
        if self.since_best >= self.stop_patience {
            return Observation {
                stop: true,
                ..Observation::default()
            };
        }
        if self.since_halve >= self.lr_patience {
            self.since_halve = 0;
            if self.reset_stop_on_halve {
                self.since_best = 0;
            }
            return Observation {
                halve: true,
                ..Observation::default()
            };
        }
        Observation::default()
    }
}

/// Seeded split of `n` units into sorted `(train, validation)` index lists.
pub fn split(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < MIN_UNITS {
        return Err(Error::TooFewRows {
            found: n,
            required: MIN_UNITS,
        });
    }
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val = ids[..n_val].to_vec();
    let mut train = ids[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// A model bundled with its training data; units are rows or sequences.
pub trait Trainable {
    type T: Scalar;
    fn n_units(&self) -> usize;
    fn train_batch(&mut self, units: &[usize], adam: &mut Adam<Self::T>, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<f64>;
    /// Inference-mode loss under the canonical order.
    fn eval_loss(&self, units: &[usize], batch_size: usize) -> Result<f64>;
    fn params(&self) -> &ParamStore<Self::T>;
    fn params_mut(&mut self) -> &mut ParamStore<Self::T>;
}

pub struct FlatTask<'a, T> {
    pub model: &'a mut FlatModel<T>,
    pub data: &'a EncodedTable,
}

impl<T: Scalar> FlatTask<'_, T> {
    fn rows(&self, units: &[usize]) -> Vec<u32> {
        units.iter().flat_map(|&r| self.data.row(r).iter().copied()).collect()
    }
}

impl<T: Scalar> Trainable for FlatTask<'_, T> {
    type T = T;

    fn n_units(&self) -> usize {
        self.data.n_rows
    }

    fn train_batch(&mut self, units: &[usize], adam: &mut Adam<T>, _cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
        let rows = self.rows(units);
        self.model.train_batch(adam, &rows, rng)
    }

    fn eval_loss(&self, units: &[usize], batch_size: usize) -> Result<f64> {
        let sigma = Permutation::identity(self.model.width());
        let mut total = 0.0;
        for chunk in units.chunks(batch_size.max(1)) {
            total += self.model.loss(&self.rows(chunk), &sigma)? * chunk.len() as f64;
        }
        Ok(total / units.len().max(1) as f64)
    }

    fn params(&self) -> &ParamStore<T> {
        self.model.params()
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        self.model.params_mut()
    }
}

/// Sequential training data: an augmented, grouped table and optionally one
/// context row per group.
pub struct SeqTask<'a, T> {
    pub model: &'a mut SeqModel<T>,
    pub data: &'a EncodedTable,
    pub context: Option<&'a EncodedTable>,
}

impl<T: Scalar> SeqTask<'_, T> {
    fn sequence(&self, g: usize) -> &[u32] {
        let groups = self.data.groups.as_ref().expect("grouped data");
        let r = groups.range(g);
        let w = self.data.width();
        &self.data.data[r.start * w..r.end * w]
    }

    fn context_rows(&self, units: &[usize]) -> Option<Vec<u32>> {
        self.context
            .map(|c| units.iter().flat_map(|&g| c.row(g).iter().copied()).collect())
    }
}

impl<T: Scalar> Trainable for SeqTask<'_, T> {
    type T = T;

    fn n_units(&self) -> usize {
        self.data.groups.as_ref().map_or(0, |g| g.len())
    }

    fn train_batch(&mut self, units: &[usize], adam: &mut Adam<T>, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
        let seqs: Vec<&[u32]> = units.iter().map(|&g| self.sequence(g)).collect();
        let seqs: Vec<Vec<u32>> = seqs.into_iter().map(<[u32]>::to_vec).collect();
        let refs: Vec<&[u32]> = seqs.iter().map(Vec::as_slice).collect();
        let ctx = self.context_rows(units);
        self.model.train_batch(adam, &refs, ctx.as_deref(), cfg.max_seq_window, rng)
    }

    fn eval_loss(&self, units: &[usize], batch_size: usize) -> Result<f64> {
        let sigma = self.model.canonical_order();
        let w = self.data.width();
        let mut total = 0.0;
        let mut weight = 0usize;
        for chunk in units.chunks(batch_size.max(1)) {
            let windows: Vec<SeqWindow<'_>> = chunk
                .iter()
                .map(|&g| SeqWindow {
                    rows: self.sequence(g),
                    from_start: true,
                })
                .collect();
            let n_rows: usize = windows.iter().map(|s| s.rows.len() / w).sum();
            let ctx = self.context_rows(chunk);
            total += self.model.loss(&windows, ctx.as_deref(), &sigma)? * n_rows as f64;
            weight += n_rows;
        }
        Ok(total / weight.max(1) as f64)
    }

    fn params(&self) -> &ParamStore<T> {
        self.model.params()
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        self.model.params_mut()
    }
}

/// Runs the epoch loop and leaves the best weights in the model.
pub fn fit<M: Trainable>(task: &mut M, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    let (mut train, val) = split(task.n_units(), cfg.val_fraction, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut lr = cfg.initial_lr;
    let mut adam = Adam::new(
        task.params(),
        AdamConfig {
            lr,
            ..AdamConfig::default()
        },
    );
    let mut tracker = PlateauTracker::new(cfg);
    let mut best_params = task.params().clone();
    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stop_reason: StopReason::MaxEpochs,
        n_train: train.len(),
        n_val: val.len(),
        wall_time: Duration::ZERO,
    };
    for epoch in 1..=cfg.max_epochs {
        train.shuffle(&mut rng);
        let mut total = 0.0;
        let mut finite = true;
        for batch in train.chunks(cfg.batch_size) {
            match task.train_batch(batch, &mut adam, cfg, &mut rng) {
                Ok(loss) if loss.is_finite() => total += loss * batch.len() as f64,
                Ok(_) | Err(Error::NonFiniteValue(_)) => {
                    finite = false;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let val_loss = if finite {
            match task.eval_loss(&val, cfg.batch_size) {
                Ok(v) if v.is_finite() => Some(v),
                Ok(_) | Err(Error::NonFiniteValue(_)) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        let Some(val_loss) = val_loss else {
            log::warn!("non-finite loss in epoch {epoch}; keeping the best weights so far");
            report.stop_reason = StopReason::NonFiniteLoss;
            break;
        };
        let obs = tracker.observe(val_loss);
        if obs.improved {
            best_params.clone_from(task.params());
            report.best_epoch = epoch;
            report.best_val_loss = val_loss;
        }
        report.epochs.push(EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss,
            lr,
            improved: obs.improved,
            halved: obs.halve,
        });
        log::info!(
            "epoch {epoch}: train {:.5} val {val_loss:.5} lr {lr:.2e}",
            total / train.len() as f64
        );
        if obs.stop {
            report.stop_reason = StopReason::EarlyStopping;
            break;
        }
        if obs.halve {
            lr *= 0.5;
            adam.set_lr(lr);
        }
    }
    task.params_mut().load(&best_params)?;
    report.wall_time = start.elapsed();
    Ok(report)
}
