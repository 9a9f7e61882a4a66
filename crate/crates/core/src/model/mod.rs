//! Any-order autoregressive models over encoded tables.

pub mod flat;
pub(crate) mod heads;
pub mod seq;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Scalar;

pub use flat::{FlatArchitecture, FlatModel};
pub use seq::{draw_window, SeqArchitecture, SeqModel, SeqSampleRequest, SeqWindow};

/// Below this temperature sampling takes the argmax.
pub const ARGMAX_TEMPERATURE: f64 = 1e-6;

/// Visiting order over sub-columns: `order[p]` is the sub-column at position `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    order: Vec<usize>,
    position: Vec<usize>,
}

impl Permutation {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let mut position = vec![usize::MAX; order.len()];
        for (p, &j) in order.iter().enumerate() {
            if j >= order.len() || position[j] != usize::MAX {
                return Err(Error::InvalidConfig(format!("{order:?} is not a permutation")));
            }
            position[j] = p;
        }
        Ok(Self { order, position })
    }

    pub fn identity(n: usize) -> Self {
        Self::new((0..n).collect()).unwrap()
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self::new(order).unwrap()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn position(&self, j: usize) -> usize {
        self.position[j]
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Sub-columns that strictly precede `k`.
    pub fn predecessors(&self, k: usize) -> Vec<bool> {
        let pk = self.position[k];
        self.position.iter().map(|&p| p < pk).collect()
    }
}

/// Flat generation in index space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRequest {
    pub n_rows: usize,
    pub temperature: f64,
    /// Row-major `n_rows × D` fixed indices; `None` cells are sampled.
    #[serde(default)]
    pub fixed: Option<Vec<Option<u32>>>,
    /// `(sub-column, index)` pairs that must never be sampled.
    #[serde(default)]
    pub exclude: Vec<(usize, u32)>,
    #[serde(default)]
    pub order: Option<Vec<usize>>,
    pub seed: u64,
}

impl SampleRequest {
    pub fn new(n_rows: usize, seed: u64) -> Self {
        Self {
            n_rows,
            temperature: 1.0,
            fixed: None,
            exclude: Vec::new(),
            order: None,
            seed,
        }
    }
}

/// Independent stream for row (or sequence) `i`.
pub fn stream_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

/// Class probabilities of `softmax(logits / T)` with `excluded` classes
/// removed and the rest renormalised.
pub fn probabilities<T: Scalar>(logits: &[T], temperature: f64, excluded: &[u32]) -> Result<Vec<f64>> {
    let t = temperature.max(ARGMAX_TEMPERATURE);
    let max = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| !excluded.contains(&(*i as u32)))
        .map(|(_, v)| v.f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if excluded.contains(&(i as u32)) {
                0.0
            } else {
                ((v.f64() - max) / t).exp()
            }
        })
        .collect();
    let sum: f64 = p.iter().sum();
    if !(sum > 0.0 && sum.is_finite()) {
        return Err(Error::AllProbabilityMassExcluded(format!(
            "{} of {} classes excluded",
            excluded.len(),
            logits.len()
        )));
    }
    p.iter_mut().for_each(|v| *v /= sum);
    Ok(p)
}

/// Draws a class from the logits. Below [`ARGMAX_TEMPERATURE`] the first
/// maximum is returned and no randomness is consumed.
pub fn sample_logits<T: Scalar, R: Rng + ?Sized>(
    logits: &[T],
    temperature: f64,
    excluded: &[u32],
    rng: &mut R,
) -> Result<u32> {
    if temperature < ARGMAX_TEMPERATURE {
        let best = logits
            .iter()
            .enumerate()
            .filter(|(i, _)| !excluded.contains(&(*i as u32)))
            .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
                Some((_, b)) if b >= v.f64() => best,
                _ => Some((i, v.f64())),
            });
        return best.map(|(i, _)| i as u32).ok_or_else(|| {
            Error::AllProbabilityMassExcluded(format!("all {} classes excluded", logits.len()))
        });
    }
    let p = probabilities(logits, temperature, excluded)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi > 0.0 {
            acc += pi;
            last = i;
            if u < acc {
                return Ok(i as u32);
            }
        }
    }
    Ok(last as u32)
}

/// Entropy in nats of a probability vector.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}
