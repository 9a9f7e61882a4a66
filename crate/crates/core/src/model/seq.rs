//! Sequential model: flat heads over each step, an LSTM history of the
//! previous steps and an optional embedding of the subject's context row.
//!
//! Sub-column layout: data sub-columns, then sequence length, then the
//! counting index (as appended by `codec::augment_sequences`). Within a step
//! the index and the length always precede the data sub-columns.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::heads::{pair_mut, HeadStack, HeadTargets};
use super::{sample_logits, stream_rng, Permutation};
use crate::error::{Error, Result};
use crate::kernel::sizes::{context_units, embed_dim, history_units, regressor_units};
use crate::kernel::{
    apply_mask, dense_backward, dense_forward, dropout_mask, glorot_uniform, lstm_bias, relu_backward_inplace,
    relu_inplace, Adam, LstmGrads, LstmWeights, Matrix, ParamId, ParamStore, Scalar, DEFAULT_DROPOUT,
};

const SAMPLE_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqArchitecture {
    /// Data sub-columns followed by the length and index sub-columns.
    pub cardinalities: Vec<u32>,
    pub embed_dims: Vec<usize>,
    pub regressor_units: Vec<usize>,
    pub regressor_depth: usize,
    pub history_units: usize,
    #[serde(default)]
    pub context_cardinalities: Vec<u32>,
    #[serde(default)]
    pub context_embed_dims: Vec<usize>,
    /// 0 without a context table.
    #[serde(default)]
    pub context_units: usize,
    pub dropout: f64,
    pub median_length: usize,
}

impl SeqArchitecture {
    /// `cardinalities` must end with the length and index sub-columns.
    pub fn new(cardinalities: &[u32], context_cardinalities: &[u32], median_length: usize) -> Self {
        let embed_dims: Vec<usize> = cardinalities.iter().map(|&c| embed_dim(c as usize)).collect();
        let context_embed_dims: Vec<usize> = context_cardinalities.iter().map(|&c| embed_dim(c as usize)).collect();
        let d_tgt: usize = embed_dims.iter().sum();
        let d_ctx: usize = context_embed_dims.iter().sum();
        Self {
            cardinalities: cardinalities.to_vec(),
            regressor_units: cardinalities.iter().map(|&c| regressor_units(c as usize)).collect(),
            embed_dims,
            regressor_depth: 1,
            history_units: history_units(d_tgt, median_length),
            context_units: if context_cardinalities.is_empty() { 0 } else { context_units(d_ctx) },
            context_cardinalities: context_cardinalities.to_vec(),
            context_embed_dims,
            dropout: DEFAULT_DROPOUT,
            median_length,
        }
    }

    pub fn width(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn len_column(&self) -> usize {
        self.width() - 2
    }

    pub fn index_column(&self) -> usize {
        self.width() - 1
    }

    pub fn embedding_width(&self) -> usize {
        self.embed_dims.iter().sum()
    }

    pub fn has_context(&self) -> bool {
        !self.context_cardinalities.is_empty()
    }

    pub fn max_length(&self) -> usize {
        self.cardinalities[self.len_column()] as usize - 1
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.width();
        if d < 2 {
            return Err(Error::InvalidConfig("sequential models need the length and index sub-columns".into()));
        }
        if self.embed_dims.len() != d
            || self.regressor_units.len() != d
            || self.context_embed_dims.len() != self.context_cardinalities.len()
        {
            return Err(Error::InvalidConfig("architecture vectors differ in length".into()));
        }
        let zero = |v: &[usize]| v.contains(&0);
        if self.cardinalities.contains(&0)
            || self.context_cardinalities.contains(&0)
            || zero(&self.embed_dims)
            || zero(&self.regressor_units)
            || zero(&self.context_embed_dims)
            || self.history_units == 0
            || (self.has_context() && self.context_units == 0)
        {
            return Err(Error::InvalidConfig("layer sizes must be at least 1".into()));
        }
        if self.regressor_depth == 0 || !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig("regressor depth ≥ 1 and dropout in [0, 1) required".into()));
        }
        Ok(())
    }

    /// Permutation over all sub-columns: index, length, then the data
    /// sub-columns in `data_order`.
    pub fn step_order(&self, data_order: &[usize]) -> Result<Permutation> {
        let mut order = vec![self.index_column(), self.len_column()];
        order.extend_from_slice(data_order);
        Permutation::new(order)
    }
}

/// A training sequence: `rows` holds `len × D` indices; `from_start` marks
/// windows that begin at the sequence's first step.
#[derive(Debug, Clone, Copy)]
pub struct SeqWindow<'a> {
    pub rows: &'a [u32],
    pub from_start: bool,
}

/// Draws the training window of a sequence of length `len`: `u` uniform on
/// `[−w+1, len−1]`, window `[max(u, 0), min(u + w, len))`. Every step is
/// covered by exactly `w` of the `len + w − 1` outcomes.
pub fn draw_window<R: Rng + ?Sized>(len: usize, window: usize, rng: &mut R) -> (usize, usize) {
    if len <= window {
        return (0, len);
    }
    let u = rng.random_range(-(window as i64) + 1..=len as i64 - 1);
    (u.max(0) as usize, ((u + window as i64) as usize).min(len))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqSampleRequest {
    pub n_sequences: usize,
    pub temperature: f64,
    #[serde(default)]
    pub exclude: Vec<(usize, u32)>,
    /// Order of the data sub-columns within a step.
    #[serde(default)]
    pub order: Option<Vec<usize>>,
    /// Fixed lengths instead of sampled ones.
    #[serde(default)]
    pub lengths: Option<Vec<usize>>,
    /// Random stream of each sequence; defaults to its position.
    #[serde(default)]
    pub streams: Option<Vec<usize>>,
    pub seed: u64,
}

impl SeqSampleRequest {
    pub fn new(n_sequences: usize, seed: u64) -> Self {
        Self {
            n_sequences,
            temperature: 1.0,
            exclude: Vec::new(),
            order: None,
            lengths: None,
            streams: None,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
struct ContextLayer {
    emb: Vec<ParamId>,
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
pub struct SeqModel<T> {
    arch: SeqArchitecture,
    params: ParamStore<T>,
    emb: Vec<ParamId>,
    context: Option<ContextLayer>,
    lstm: (ParamId, ParamId, ParamId),
    heads: HeadStack,
}

struct ContextCache<T> {
    x: Matrix<T>,
    pre: Matrix<T>,
    mask: Option<Vec<T>>,
}

impl<T: Scalar> SeqModel<T> {
    pub fn new(arch: SeqArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let emb: Vec<ParamId> = arch
            .cardinalities
            .iter()
            .zip(&arch.embed_dims)
            .enumerate()
            .map(|(j, (&c, &e))| params.add(format!("emb.{j}"), glorot_uniform(c as usize, e, &mut rng)))
            .collect();
        let context = arch.has_context().then(|| {
            let emb = arch
                .context_cardinalities
                .iter()
                .zip(&arch.context_embed_dims)
                .enumerate()
                .map(|(i, (&c, &e))| params.add(format!("ctx.emb.{i}"), glorot_uniform(c as usize, e, &mut rng)))
                .collect();
            let d_ctx: usize = arch.context_embed_dims.iter().sum();
            let w = params.add("ctx.dense.w", glorot_uniform(d_ctx, arch.context_units, &mut rng));
            let b = params.add("ctx.dense.b", Matrix::zeros(1, arch.context_units));
            ContextLayer { emb, w, b }
        });
        let s = arch.embedding_width();
        let h = arch.history_units;
        let lstm = (
            params.add("lstm.wx", glorot_uniform(s, 4 * h, &mut rng)),
            params.add("lstm.wh", glorot_uniform(h, 4 * h, &mut rng)),
            params.add("lstm.b", lstm_bias(h)),
        );
        let mut blocks = Vec::with_capacity(arch.width());
        let mut off = 0;
        for &e in &arch.embed_dims {
            blocks.push((off, e));
            off += e;
        }
        let mut predicted = vec![true; arch.width()];
        predicted[arch.index_column()] = false;
        let heads = HeadStack::build(
            &mut params,
            &arch.cardinalities,
            blocks,
            s + h + arch.context_units,
            &arch.regressor_units,
            arch.regressor_depth,
            &predicted,
            arch.dropout,
            &mut rng,
        );
        Ok(Self {
            arch,
            params,
            emb,
            context,
            lstm,
            heads,
        })
    }

    pub fn architecture(&self) -> &SeqArchitecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> SeqModel<U> {
        SeqModel {
            arch: self.arch.clone(),
            params: self.params.cast(),
            emb: self.emb.clone(),
            context: self.context.clone(),
            lstm: self.lstm,
            heads: self.heads.clone(),
        }
    }

    fn lstm_weights(&self) -> LstmWeights<'_, T> {
        LstmWeights {
            wx: self.params.get(self.lstm.0),
            wh: self.params.get(self.lstm.1),
            b: self.params.get(self.lstm.2),
        }
    }

    fn write_embedding(&self, out: &mut [T], row: &[u32]) -> Result<()> {
        for (j, &idx) in row.iter().enumerate() {
            let table = self.params.get(self.emb[j]);
            if idx as usize >= table.rows {
                return Err(Error::IndexOutOfRange {
                    sub_column: format!("#{j}"),
                    index: idx,
                    cardinality: table.rows as u32,
                });
            }
            let (off, w) = self.heads.blocks[j];
            out[off..off + w].copy_from_slice(table.row(idx as usize));
        }
        Ok(())
    }

    fn check_context(&self, context: Option<&[u32]>, n: usize) -> Result<()> {
        let dc = self.arch.context_cardinalities.len();
        match (self.arch.has_context(), context) {
            (false, None) => Ok(()),
            (false, Some(_)) => Err(Error::ContextSchemaMismatch("model was trained without context".into())),
            (true, None) => Err(Error::ContextSchemaMismatch("model needs one context row per sequence".into())),
            (true, Some(c)) => {
                if c.len() != n * dc {
                    return Err(Error::ContextSchemaMismatch(format!(
                        "{} context indices for {n} rows of width {dc}",
                        c.len()
                    )));
                }
                for (i, &v) in c.iter().enumerate() {
                    if v >= self.arch.context_cardinalities[i % dc] {
                        return Err(Error::ContextSchemaMismatch(format!(
                            "context index {v} out of range for sub-column {}",
                            i % dc
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    fn context_forward<R: Rng + ?Sized>(&self, ctx: &[u32], n: usize, rng: Option<&mut R>) -> (Matrix<T>, ContextCache<T>) {
        let layer = self.context.as_ref().expect("context layer");
        let dc = self.arch.context_cardinalities.len();
        let width: usize = self.arch.context_embed_dims.iter().sum();
        let mut x = Matrix::zeros(n, width);
        for r in 0..n {
            let out = x.row_mut(r);
            let mut off = 0;
            for i in 0..dc {
                let table = self.params.get(layer.emb[i]);
                let w = table.cols;
                out[off..off + w].copy_from_slice(table.row(ctx[r * dc + i] as usize));
                off += w;
            }
        }
        let mut pre = dense_forward(&x, self.params.get(layer.w), self.params.get(layer.b));
        relu_inplace(&mut pre);
        let mut c = pre.clone();
        let mask = match rng {
            Some(rng) if self.arch.dropout > 0.0 => {
                let m = dropout_mask(c.data.len(), self.arch.dropout, rng);
                apply_mask(&mut c, &m);
                Some(m)
            }
            _ => None,
        };
        (c, ContextCache { x, pre, mask })
    }

    fn context_backward(&self, grads: &mut ParamStore<T>, ctx: &[u32], cache: &ContextCache<T>, mut dc: Matrix<T>) {
        let layer = self.context.as_ref().expect("context layer");
        if let Some(m) = &cache.mask {
            apply_mask(&mut dc, m);
        }
        relu_backward_inplace(&mut dc, &cache.pre);
        let dx = {
            let (gw, gb) = pair_mut(grads, layer.w, layer.b);
            dense_backward(&cache.x, self.params.get(layer.w), &dc, gw, gb, true).unwrap()
        };
        let n_ctx = self.arch.context_cardinalities.len();
        for r in 0..dx.rows {
            let mut off = 0;
            for i in 0..n_ctx {
                let g = grads.get_mut(layer.emb[i]);
                let w = g.cols;
                for (a, &b) in g.row_mut(ctx[r * n_ctx + i] as usize).iter_mut().zip(&dx.row(r)[off..off + w]) {
                    *a += b;
                }
                off += w;
            }
        }
    }

    /// Per-head mean losses (zero for heads without targets in the batch).
    fn run<R: Rng + ?Sized>(
        &self,
        windows: &[SeqWindow<'_>],
        context: Option<&[u32]>,
        sigma: &Permutation,
        mut grads: Option<&mut ParamStore<T>>,
        mut rng: Option<&mut R>,
    ) -> Result<f64> {
        let d = self.arch.width();
        let b = windows.len();
        self.check_context(context, b)?;
        if sigma.len() != d {
            return Err(Error::ShapeMismatch("permutation length differs from width".into()));
        }
        let lens: Vec<usize> = windows
            .iter()
            .map(|w| {
                if w.rows.len() % d != 0 {
                    Err(Error::ShapeMismatch("sequence rows do not match the width".into()))
                } else {
                    Ok(w.rows.len() / d)
                }
            })
            .collect::<Result<_>>()?;
        let t_max = lens.iter().copied().max().unwrap_or(0);
        if t_max == 0 {
            return Ok(0.0);
        }
        let s = self.arch.embedding_width();
        let h = self.arch.history_units;
        let cw = self.arch.context_units;

        // Step embeddings, exact zeros beyond each sequence's end.
        let mut xs: Vec<Matrix<T>> = (0..t_max).map(|_| Matrix::zeros(b, s)).collect();
        let mut valid: Vec<(usize, usize)> = Vec::new();
        for (bi, w) in windows.iter().enumerate() {
            for t in 0..lens[bi] {
                self.write_embedding(xs[t].row_mut(bi), &w.rows[t * d..(t + 1) * d])?;
                valid.push((bi, t));
            }
        }

        let (c, ctx_cache) = match context {
            Some(ctx) => {
                let (c, cache) = self.context_forward(ctx, b, rng.as_deref_mut());
                (Some(c), Some(cache))
            }
            None => (None, None),
        };

        // History: inputs shifted one step, zero at t = 0.
        let mut in_masks = Vec::new();
        let mut inputs = Vec::with_capacity(t_max);
        inputs.push(Matrix::zeros(b, s));
        for x in xs.iter().take(t_max - 1) {
            let mut x = x.clone();
            if let Some(rng) = rng.as_deref_mut() {
                if self.arch.dropout > 0.0 {
                    let m = dropout_mask(x.data.len(), self.arch.dropout, rng);
                    apply_mask(&mut x, &m);
                    in_masks.push(m);
                }
            }
            inputs.push(x);
        }
        let lstm = self.lstm_weights();
        let cache = lstm.forward(inputs);

        let mut z = Matrix::zeros(valid.len(), s + h + cw);
        for (r, &(bi, t)) in valid.iter().enumerate() {
            let row = z.row_mut(r);
            row[..s].copy_from_slice(xs[t].row(bi));
            row[s..s + h].copy_from_slice(cache.hs[t].row(bi));
            if let Some(c) = &c {
                row[s + h..].copy_from_slice(c.row(bi));
            }
        }
        let cell = |r: usize, k: usize| {
            let (bi, t) = valid[r];
            windows[bi].rows[t * d + k]
        };
        let len_col = self.arch.len_column();
        let first_step: Vec<bool> = valid.iter().map(|&(bi, t)| t == 0 && windows[bi].from_start).collect();
        let real_row: Vec<bool> = (0..valid.len()).map(|r| cell(r, len_col) != 0).collect();
        let (loss, dz) = self.heads.loss(
            &self.params,
            grads.as_deref_mut(),
            &z,
            &|k| sigma.predecessors(k),
            &|k| HeadTargets {
                targets: (0..valid.len()).map(|r| cell(r, k)).collect(),
                row_mask: Some(if k == len_col { &first_step } else { &real_row }),
            },
            rng.as_deref_mut(),
        )?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteValue("sequence loss".into()));
        }
        let (Some(g), Some(dz)) = (grads, dz) else {
            return Ok(loss);
        };

        let mut dxs: Vec<Matrix<T>> = (0..t_max).map(|_| Matrix::zeros(b, s)).collect();
        let mut dhs: Vec<Matrix<T>> = (0..t_max).map(|_| Matrix::zeros(b, h)).collect();
        let mut dc = Matrix::zeros(b, cw);
        for (r, &(bi, t)) in valid.iter().enumerate() {
            let row = dz.row(r);
            dxs[t].row_mut(bi).copy_from_slice(&row[..s]);
            dhs[t].row_mut(bi).copy_from_slice(&row[s..s + h]);
            for (a, &v) in dc.row_mut(bi).iter_mut().zip(&row[s + h..]) {
                *a += v;
            }
        }
        let dins = {
            let (wx, rest) = g.values_mut().split_at_mut(self.lstm.1 .0);
            let (wh, rest) = rest.split_at_mut(1);
            lstm.backward(
                &cache,
                &dhs,
                LstmGrads {
                    wx: &mut wx[self.lstm.0 .0],
                    wh: &mut wh[0],
                    b: &mut rest[self.lstm.2 .0 - self.lstm.1 .0 - 1],
                },
            )
        };
        for t in 1..t_max {
            let mut din = dins[t].clone();
            if let Some(m) = in_masks.get(t - 1) {
                apply_mask(&mut din, m);
            }
            dxs[t - 1].add_assign(&din);
        }
        for &(bi, t) in &valid {
            let row = &windows[bi].rows[t * d..(t + 1) * d];
            let dx = dxs[t].row(bi);
            for (j, &idx) in row.iter().enumerate() {
                let (off, w) = self.heads.blocks[j];
                let ge = g.get_mut(self.emb[j]);
                for (a, &v) in ge.row_mut(idx as usize).iter_mut().zip(&dx[off..off + w]) {
                    *a += v;
                }
            }
        }
        if let (Some(ctx), Some(cache)) = (context, &ctx_cache) {
            self.context_backward(g, ctx, cache, dc);
        }
        Ok(loss)
    }

    /// Permutation with a canonical data order (index, length, data...).
    pub fn canonical_order(&self) -> Permutation {
        self.arch.step_order(&(0..self.arch.len_column()).collect::<Vec<_>>()).unwrap()
    }

    pub fn random_order<R: Rng + ?Sized>(&self, rng: &mut R) -> Permutation {
        let data = Permutation::random(self.arch.len_column(), rng);
        self.arch.step_order(data.order()).unwrap()
    }

    pub fn loss(&self, windows: &[SeqWindow<'_>], context: Option<&[u32]>, sigma: &Permutation) -> Result<f64> {
        self.run::<ChaCha8Rng>(windows, context, sigma, None, None)
    }

    pub fn loss_and_grads<R: Rng + ?Sized>(
        &self,
        windows: &[SeqWindow<'_>],
        context: Option<&[u32]>,
        sigma: &Permutation,
        rng: Option<&mut R>,
    ) -> Result<(f64, ParamStore<T>)> {
        let mut grads = self.params.zeros_like();
        let loss = self.run(windows, context, sigma, Some(&mut grads), rng)?;
        Ok((loss, grads))
    }

    /// One optimiser step: random windows of at most `window` steps and a
    /// fresh permutation of the data sub-columns.
    pub fn train_batch<R: Rng + ?Sized>(
        &mut self,
        adam: &mut Adam<T>,
        sequences: &[&[u32]],
        context: Option<&[u32]>,
        window: usize,
        rng: &mut R,
    ) -> Result<f64> {
        let d = self.arch.width();
        let windows: Vec<SeqWindow<'_>> = sequences
            .iter()
            .map(|rows| {
                let (a, e) = draw_window(rows.len() / d, window.max(1), rng);
                SeqWindow {
                    rows: &rows[a * d..e * d],
                    from_start: a == 0,
                }
            })
            .collect();
        let sigma = self.random_order(rng);
        let (loss, grads) = self.loss_and_grads(&windows, context, &sigma, Some(rng))?;
        adam.update(&mut self.params, &grads)?;
        Ok(loss)
    }

    /// Hidden states of the history encoder for full sequences (inference).
    pub fn history(&self, windows: &[SeqWindow<'_>]) -> Result<Vec<Matrix<T>>> {
        let d = self.arch.width();
        let b = windows.len();
        let t_max = windows.iter().map(|w| w.rows.len() / d).max().unwrap_or(0);
        let s = self.arch.embedding_width();
        let mut inputs = vec![Matrix::zeros(b, s)];
        for t in 0..t_max.saturating_sub(1) {
            let mut x = Matrix::zeros(b, s);
            for (bi, w) in windows.iter().enumerate() {
                if (t + 1) * d <= w.rows.len() {
                    self.write_embedding(x.row_mut(bi), &w.rows[t * d..(t + 1) * d])?;
                }
            }
            inputs.push(x);
        }
        Ok(self.lstm_weights().forward(inputs).hs)
    }

    /// Context embedding in inference mode.
    pub fn context_embedding(&self, context: &[u32], n: usize) -> Result<Matrix<T>> {
        self.check_context(Some(context), n)?;
        Ok(self.context_forward::<ChaCha8Rng>(context, n, None).0)
    }

    /// Generates sequences; returns the rows (`Σ L × D`, positional columns
    /// included) and the length of every sequence.
    pub fn sample(&self, context: Option<&[u32]>, req: &SeqSampleRequest) -> Result<(Vec<u32>, Vec<usize>)> {
        let n = req.n_sequences;
        self.check_context(context, n)?;
        if !(req.temperature >= 0.0 && req.temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!("temperature {} must be ≥ 0", req.temperature)));
        }
        let d = self.arch.width();
        let n_data = self.arch.len_column();
        let data_order: Vec<usize> = match &req.order {
            Some(o) => o.clone(),
            None => (0..n_data).collect(),
        };
        let sigma = self.arch.step_order(&data_order)?;
        let mut excluded: Vec<Vec<u32>> = vec![Vec::new(); d];
        for &(j, v) in &req.exclude {
            if j >= n_data {
                return Err(Error::ConditionIndexInvalid(format!("sub-column {j} out of range")));
            }
            excluded[j].push(v);
        }
        if let Some(l) = &req.lengths {
            if l.len() != n || l.iter().any(|&x| x > self.arch.max_length()) {
                return Err(Error::ConditionIndexInvalid("fixed lengths invalid".into()));
            }
        }
        if req.streams.as_ref().is_some_and(|s| s.len() != n) {
            return Err(Error::InvalidConfig("one stream per sequence required".into()));
        }
        let dc = self.arch.context_cardinalities.len();
        let mut per_seq: Vec<Vec<u32>> = vec![Vec::new(); n];
        let ids: Vec<usize> = (0..n).collect();
        for chunk in ids.chunks(SAMPLE_CHUNK) {
            let ctx: Option<Vec<u32>> =
                context.map(|c| chunk.iter().flat_map(|&i| c[i * dc..(i + 1) * dc].to_vec()).collect());
            let fixed: Option<Vec<usize>> = req.lengths.as_ref().map(|l| chunk.iter().map(|&i| l[i]).collect());
            let streams: Vec<usize> = chunk
                .iter()
                .map(|&i| req.streams.as_ref().map_or(i, |s| s[i]))
                .collect();
            let out = self.sample_chunk(ctx.as_deref(), fixed.as_deref(), &streams, &sigma, &excluded, req)?;
            for (&i, rows) in chunk.iter().zip(out) {
                per_seq[i] = rows;
            }
        }
        let lengths = per_seq.iter().map(|r| r.len() / d).collect();
        Ok((per_seq.concat(), lengths))
    }

    fn sample_chunk(
        &self,
        context: Option<&[u32]>,
        fixed_lengths: Option<&[usize]>,
        streams: &[usize],
        sigma: &Permutation,
        excluded: &[Vec<u32>],
        req: &SeqSampleRequest,
    ) -> Result<Vec<Vec<u32>>> {
        let b = streams.len();
        let d = self.arch.width();
        let s = self.arch.embedding_width();
        let h = self.arch.history_units;
        let cw = self.arch.context_units;
        let len_col = self.arch.len_column();
        let idx_col = self.arch.index_column();
        let mut rngs: Vec<ChaCha8Rng> = streams.iter().map(|&i| stream_rng(req.seed, i)).collect();
        let c = context.map(|ctx| self.context_forward::<ChaCha8Rng>(ctx, b, None).0);
        let lstm = self.lstm_weights();
        let mut state_h = Matrix::zeros(b, h);
        let mut state_c = Matrix::zeros(b, h);
        let (_, mut hist, mut cell) = lstm.step(&Matrix::zeros(b, s), &state_h, &state_c);

        let assemble = |x: &Matrix<T>, hist: &Matrix<T>| {
            let mut z = Matrix::zeros(b, s + h + cw);
            for r in 0..b {
                let row = z.row_mut(r);
                row[..s].copy_from_slice(x.row(r));
                row[s..s + h].copy_from_slice(hist.row(r));
                if let Some(c) = &c {
                    row[s + h..].copy_from_slice(c.row(r));
                }
            }
            z
        };
        let mut rows: Vec<Vec<u32>> = vec![vec![0; d]; b];
        for r in rows.iter_mut() {
            r[idx_col] = 1.min(self.arch.cardinalities[idx_col] - 1);
        }
        let mut x = Matrix::zeros(b, s);
        for r in 0..b {
            self.write_embedding(x.row_mut(r), &rows[r])?;
        }
        let lengths: Vec<usize> = match fixed_lengths {
            Some(l) => l.to_vec(),
            None => {
                let logits = self.heads.logits(&self.params, len_col, &assemble(&x, &hist), &sigma.predecessors(len_col));
                (0..b)
                    .map(|r| sample_logits(logits.row(r), req.temperature, &[], &mut rngs[r]).map(|v| v as usize))
                    .collect::<Result<_>>()?
            }
        };
        let mut out: Vec<Vec<u32>> = lengths.iter().map(|&l| Vec::with_capacity(l * d)).collect();
        let t_max = lengths.iter().copied().max().unwrap_or(0);
        for t in 0..t_max {
            for r in 0..b {
                rows[r].fill(0);
                rows[r][len_col] = lengths[r] as u32;
                rows[r][idx_col] = (t as u32 + 1).min(self.arch.cardinalities[idx_col] - 1);
                self.write_embedding(x.row_mut(r), &rows[r])?;
            }
            for &j in &sigma.order()[2..] {
                let z = assemble(&x, &hist);
                let logits = self.heads.logits(&self.params, j, &z, &sigma.predecessors(j));
                for r in 0..b {
                    if t >= lengths[r] {
                        continue;
                    }
                    let v = sample_logits(logits.row(r), req.temperature, &excluded[j], &mut rngs[r])?;
                    rows[r][j] = v;
                    let (off, w) = self.heads.blocks[j];
                    x.row_mut(r)[off..off + w].copy_from_slice(self.params.get(self.emb[j]).row(v as usize));
                }
            }
            for r in 0..b {
                if t < lengths[r] {
                    out[r].extend_from_slice(&rows[r]);
                }
            }
            state_h = hist;
            state_c = cell;
            let (_, hn, cn) = lstm.step(&x, &state_h, &state_c);
            hist = hn;
            cell = cn;
        }
        Ok(out)
    }
}
