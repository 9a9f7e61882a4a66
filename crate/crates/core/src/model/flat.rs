//! Flat-table model: one embedding per sub-column and one masked head per
//! sub-column, trained under a fresh random permutation per batch.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::heads::{HeadStack, HeadTargets};
use super::{sample_logits, stream_rng, Permutation, SampleRequest};
use crate::error::{Error, Result};
use crate::kernel::sizes::{embed_dim, regressor_units};
use crate::kernel::{glorot_uniform, Adam, Matrix, ParamId, ParamStore, Scalar, DEFAULT_DROPOUT};

/// Rows per sampling chunk.
const SAMPLE_CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatArchitecture {
    pub cardinalities: Vec<u32>,
    pub embed_dims: Vec<usize>,
    pub regressor_units: Vec<usize>,
    pub regressor_depth: usize,
    pub dropout: f64,
}

impl FlatArchitecture {
    /// Sizes every layer from the sub-column cardinalities.
    pub fn new(cardinalities: &[u32]) -> Self {
        Self {
            cardinalities: cardinalities.to_vec(),
            embed_dims: cardinalities.iter().map(|&c| embed_dim(c as usize)).collect(),
            regressor_units: cardinalities.iter().map(|&c| regressor_units(c as usize)).collect(),
            regressor_depth: 1,
            dropout: DEFAULT_DROPOUT,
        }
    }

    pub fn width(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn embedding_width(&self) -> usize {
        self.embed_dims.iter().sum()
    }

    pub(crate) fn blocks(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        self.embed_dims
            .iter()
            .map(|&w| {
                off += w;
                (off - w, w)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.width();
        if self.embed_dims.len() != d || self.regressor_units.len() != d {
            return Err(Error::InvalidConfig("architecture vectors differ in length".into()));
        }
        if self.cardinalities.contains(&0) || self.embed_dims.contains(&0) || self.regressor_units.contains(&0) {
            return Err(Error::InvalidConfig("layer sizes must be at least 1".into()));
        }
        if self.regressor_depth == 0 || !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig("regressor depth ≥ 1 and dropout in [0, 1) required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FlatModel<T> {
    arch: FlatArchitecture,
    params: ParamStore<T>,
    emb: Vec<ParamId>,
    heads: HeadStack,
}

impl<T: Scalar> FlatModel<T> {
    pub fn new(arch: FlatArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let emb = arch
            .cardinalities
            .iter()
            .zip(&arch.embed_dims)
            .enumerate()
            .map(|(j, (&c, &e))| params.add(format!("emb.{j}"), glorot_uniform(c as usize, e, &mut rng)))
            .collect();
        let heads = HeadStack::build(
            &mut params,
            &arch.cardinalities,
            arch.blocks(),
            arch.embedding_width(),
            &arch.regressor_units,
            arch.regressor_depth,
            &vec![true; arch.width()],
            arch.dropout,
            &mut rng,
        );
        Ok(Self {
            arch,
            params,
            emb,
            heads,
        })
    }

    pub fn architecture(&self) -> &FlatArchitecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Same architecture and weights in another precision.
    pub fn cast<U: Scalar>(&self) -> FlatModel<U> {
        FlatModel {
            arch: self.arch.clone(),
            params: self.params.cast(),
            emb: self.emb.clone(),
            heads: self.heads.clone(),
        }
    }

    pub fn width(&self) -> usize {
        self.arch.width()
    }

    fn check_rows(&self, rows: &[u32]) -> Result<usize> {
        let d = self.width();
        if d == 0 || rows.len() % d != 0 {
            return Err(Error::ShapeMismatch(format!("{} indices for width {d}", rows.len())));
        }
        Ok(rows.len() / d)
    }

    /// Concatenated embeddings `n × Σ e_j` of row-major index rows.
    pub fn embed(&self, rows: &[u32]) -> Result<Matrix<T>> {
        let n = self.check_rows(rows)?;
        let d = self.width();
        let mut x = Matrix::zeros(n, self.arch.embedding_width());
        let blocks = self.heads.blocks.clone();
        for r in 0..n {
            let out = x.row_mut(r);
            for j in 0..d {
                let idx = rows[r * d + j];
                let table = self.params.get(self.emb[j]);
                if idx as usize >= table.rows {
                    return Err(Error::IndexOutOfRange {
                        sub_column: format!("#{j}"),
                        index: idx,
                        cardinality: table.rows as u32,
                    });
                }
                let (off, w) = blocks[j];
                out[off..off + w].copy_from_slice(table.row(idx as usize));
            }
        }
        Ok(x)
    }

    fn set_block(&self, x: &mut Matrix<T>, r: usize, j: usize, idx: u32) {
        let (off, w) = self.heads.blocks[j];
        let table = self.params.get(self.emb[j]);
        x.row_mut(r)[off..off + w].copy_from_slice(table.row(idx as usize));
    }

    fn run<R: Rng + ?Sized>(
        &self,
        rows: &[u32],
        sigma: &Permutation,
        mut grads: Option<&mut ParamStore<T>>,
        rng: Option<&mut R>,
    ) -> Result<f64> {
        let n = self.check_rows(rows)?;
        let d = self.width();
        if sigma.len() != d {
            return Err(Error::ShapeMismatch("permutation length differs from width".into()));
        }
        let x = self.embed(rows)?;
        let columns: Vec<Vec<u32>> = (0..d).map(|j| (0..n).map(|r| rows[r * d + j]).collect()).collect();
        let (loss, dx) = self.heads.loss(
            &self.params,
            grads.as_deref_mut(),
            &x,
            &|k| sigma.predecessors(k),
            &|k| HeadTargets {
                targets: columns[k].clone(),
                row_mask: None,
            },
            rng,
        )?;
        if let (Some(g), Some(dx)) = (grads, dx) {
            for j in 0..d {
                let (off, w) = self.heads.blocks[j];
                let ge = g.get_mut(self.emb[j]);
                for r in 0..n {
                    let idx = columns[j][r] as usize;
                    for (a, &b) in ge.row_mut(idx).iter_mut().zip(&dx.row(r)[off..off + w]) {
                        *a += b;
                    }
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteValue("flat loss".into()));
        }
        Ok(loss)
    }

    /// Inference-mode loss (no dropout) under `sigma`.
    pub fn loss(&self, rows: &[u32], sigma: &Permutation) -> Result<f64> {
        self.run::<ChaCha8Rng>(rows, sigma, None, None)
    }

    /// Loss and parameter gradients; dropout is active when `rng` is given.
    pub fn loss_and_grads<R: Rng + ?Sized>(
        &self,
        rows: &[u32],
        sigma: &Permutation,
        rng: Option<&mut R>,
    ) -> Result<(f64, ParamStore<T>)> {
        let mut grads = self.params.zeros_like();
        let loss = self.run(rows, sigma, Some(&mut grads), rng)?;
        Ok((loss, grads))
    }

    /// One optimiser step on a batch under a freshly drawn permutation.
    pub fn train_batch<R: Rng + ?Sized>(&mut self, adam: &mut Adam<T>, rows: &[u32], rng: &mut R) -> Result<f64> {
        let sigma = Permutation::random(self.width(), rng);
        let (loss, grads) = self.loss_and_grads(rows, &sigma, Some(rng))?;
        adam.update(&mut self.params, &grads)?;
        Ok(loss)
    }

    /// Inference logits of head `k` when only σ-predecessors are visible.
    pub fn head_logits(&self, rows: &[u32], sigma: &Permutation, k: usize) -> Result<Matrix<T>> {
        let x = self.embed(rows)?;
        Ok(self.heads.logits(&self.params, k, &x, &sigma.predecessors(k)))
    }

    /// Generates `n_rows × D` indices, row `i` drawing from its own stream.
    pub fn sample(&self, req: &SampleRequest) -> Result<Vec<u32>> {
        let d = self.width();
        let n = req.n_rows;
        if !(req.temperature >= 0.0 && req.temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!("temperature {} must be ≥ 0", req.temperature)));
        }
        if let Some(fixed) = &req.fixed {
            if fixed.len() != n * d {
                return Err(Error::ConditionIndexInvalid(format!(
                    "{} fixed cells for {n} rows of width {d}",
                    fixed.len()
                )));
            }
            for (i, v) in fixed.iter().enumerate() {
                if let Some(v) = v {
                    let card = self.arch.cardinalities[i % d];
                    if *v >= card {
                        return Err(Error::ConditionIndexInvalid(format!(
                            "index {v} for sub-column {} of cardinality {card}",
                            i % d
                        )));
                    }
                }
            }
        }
        let mut excluded: Vec<Vec<u32>> = vec![Vec::new(); d];
        for &(j, v) in &req.exclude {
            if j >= d {
                return Err(Error::ConditionIndexInvalid(format!("sub-column {j} out of range")));
            }
            excluded[j].push(v);
        }
        let explicit = req.order.as_ref().map(|o| Permutation::new(o.clone())).transpose()?;
        if explicit.as_ref().is_some_and(|p| p.len() != d) {
            return Err(Error::InvalidConfig("order length differs from width".into()));
        }

        let fixed_at = |r: usize, j: usize| req.fixed.as_ref().and_then(|f| f[r * d + j]);
        let mut patterns: BTreeMap<Vec<bool>, Vec<usize>> = BTreeMap::new();
        for r in 0..n {
            let p: Vec<bool> = (0..d).map(|j| fixed_at(r, j).is_some()).collect();
            patterns.entry(p).or_default().push(r);
        }

        let mut out = vec![0u32; n * d];
        for (pattern, rows) in &patterns {
            let order: Vec<usize> = match &explicit {
                Some(p) => p.order().to_vec(),
                None => (0..d)
                    .filter(|&j| pattern[j])
                    .chain((0..d).filter(|&j| !pattern[j]))
                    .collect(),
            };
            for chunk in rows.chunks(SAMPLE_CHUNK) {
                let mut cur = vec![0u32; chunk.len() * d];
                for (i, &r) in chunk.iter().enumerate() {
                    for j in 0..d {
                        cur[i * d + j] = fixed_at(r, j).unwrap_or(0);
                    }
                }
                let mut rngs: Vec<ChaCha8Rng> = chunk.iter().map(|&r| stream_rng(req.seed, r)).collect();
                let mut x = self.embed(&cur)?;
                let mut visible = vec![false; d];
                for &j in &order {
                    if !pattern[j] {
                        let logits = self.heads.logits(&self.params, j, &x, &visible);
                        for i in 0..chunk.len() {
                            let v = sample_logits(logits.row(i), req.temperature, &excluded[j], &mut rngs[i])?;
                            cur[i * d + j] = v;
                            self.set_block(&mut x, i, j, v);
                        }
                    }
                    visible[j] = true;
                }
                for (i, &r) in chunk.iter().enumerate() {
                    out[r * d..(r + 1) * d].copy_from_slice(&cur[i * d..(i + 1) * d]);
                }
            }
        }
        Ok(out)
    }
}
