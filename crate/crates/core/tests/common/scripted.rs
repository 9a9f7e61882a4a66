//! A stand-in training task that replays scripted validation losses.

use std::cell::Cell;

use rand_chacha::ChaCha8Rng;
use synthtab::kernel::{Adam, Matrix, ParamStore};
use synthtab::trainer::{TrainConfig, Trainable};
use synthtab::Result;

/// Replays a fixed validation-loss script. Training stamps the epoch number
/// into the single parameter so restored weights reveal their epoch.
pub struct Scripted {
    params: ParamStore<f64>,
    script: Vec<f64>,
    epoch: Cell<usize>,
}

impl Scripted {
    pub fn new(script: &[f64]) -> Self {
        let mut params = ParamStore::new();
        params.add("w", Matrix::zeros(1, 1));
        Self {
            params,
            script: script.to_vec(),
            epoch: Cell::new(0),
        }
    }

    pub fn stamp(&self) -> f64 {
        self.params.values()[0].data[0]
    }
}

impl Trainable for Scripted {
    type T = f64;

    fn n_units(&self) -> usize {
        20
    }

    fn train_batch(&mut self, _: &[usize], _: &mut Adam<f64>, _: &TrainConfig, _: &mut ChaCha8Rng) -> Result<f64> {
        self.epoch.set(self.epoch.get() + 1);
        self.params.values_mut()[0].data[0] = self.epoch.get() as f64;
        Ok(1.0)
    }

    fn eval_loss(&self, _: &[usize], _: usize) -> Result<f64> {
        Ok(self.script[self.epoch.get() - 1])
    }

    fn params(&self) -> &ParamStore<f64> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<f64> {
        &mut self.params
    }
}

/// Straightforward replay of the schedule: halve after `k` epochs without
/// improvement (counting from the last improvement or halving), stop after
/// `n` epochs without improvement.
pub fn expected(script: &[f64], k: usize, n: usize) -> (Vec<usize>, usize, usize, bool) {
    let mut best = f64::INFINITY;
    let (mut best_epoch, mut last_improve, mut last_event) = (0, 0, 0);
    let mut halvings = Vec::new();
    for (i, &v) in script.iter().enumerate() {
        let epoch = i + 1;
        if v < best {
            best = v;
            best_epoch = epoch;
            last_improve = epoch;
            last_event = epoch;
            continue;
        }
        if epoch - last_improve >= n {
            return (halvings, best_epoch, epoch, true);
        }
        if epoch - last_event >= k {
            halvings.push(epoch);
            last_event = epoch;
        }
    }
    (halvings, best_epoch, script.len(), false)
}
