//! Per-sub-column regressor and predictor heads over a shared input matrix
//! whose leading columns are the sub-column embedding blocks.

use rand::Rng;

use crate::error::Result;
use crate::kernel::{
    apply_mask, dense_backward, dense_forward, dropout_mask, glorot_uniform, relu_backward_inplace,
    relu_inplace, softmax_cross_entropy, Matrix, ParamId, ParamStore, Scalar,
};

#[derive(Debug, Clone)]
pub(crate) struct Head {
    layers: Vec<(ParamId, ParamId)>,
    out: (ParamId, ParamId),
}

#[derive(Debug, Clone)]
pub(crate) struct HeadStack {
    /// `None` for sub-columns that are never predicted.
    pub heads: Vec<Option<Head>>,
    /// `(offset, width)` of every sub-column's embedding block.
    pub blocks: Vec<(usize, usize)>,
    pub input_width: usize,
    pub dropout: f64,
}

struct HeadCache<T> {
    /// Post-activation, post-dropout outputs of each regressor layer.
    acts: Vec<Matrix<T>>,
    /// Pre-dropout activations, needed for the ReLU gradient.
    relu: Vec<Matrix<T>>,
    masks: Vec<Vec<T>>,
}

/// Row-level training targets of one head.
pub(crate) struct HeadTargets<'a> {
    pub targets: Vec<u32>,
    pub row_mask: Option<&'a [bool]>,
}

impl HeadStack {
    #[allow(clippy::too_many_arguments)]
    pub fn build<T: Scalar, R: Rng + ?Sized>(
        params: &mut ParamStore<T>,
        cardinalities: &[u32],
        blocks: Vec<(usize, usize)>,
        input_width: usize,
        units: &[usize],
        depth: usize,
        predicted: &[bool],
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let heads = cardinalities
            .iter()
            .enumerate()
            .map(|(k, &card)| {
                if !predicted[k] {
                    return None;
                }
                let mut fan_in = input_width;
                let mut layers = Vec::with_capacity(depth);
                for l in 0..depth.max(1) {
                    let w = params.add(format!("head.{k}.dense{l}.w"), glorot_uniform(fan_in, units[k], rng));
                    let b = params.add(format!("head.{k}.dense{l}.b"), Matrix::zeros(1, units[k]));
                    layers.push((w, b));
                    fan_in = units[k];
                }
                let w = params.add(format!("head.{k}.out.w"), glorot_uniform(fan_in, card as usize, rng));
                let b = params.add(format!("head.{k}.out.b"), Matrix::zeros(1, card as usize));
                Some(Head { layers, out: (w, b) })
            })
            .collect();
        Self {
            heads,
            blocks,
            input_width,
            dropout,
        }
    }

    /// Copy of `x` with the embedding blocks of invisible sub-columns zeroed.
    /// Columns after the embedding blocks are passed through.
    pub fn mask_input<T: Scalar>(&self, x: &Matrix<T>, visible: &[bool]) -> Matrix<T> {
        let mut xm = x.clone();
        self.mask_inplace(&mut xm, visible);
        xm
    }

    pub fn mask_inplace<T: Scalar>(&self, x: &mut Matrix<T>, visible: &[bool]) {
        debug_assert_eq!(x.cols, self.input_width);
        for (j, &(off, width)) in self.blocks.iter().enumerate() {
            if visible[j] {
                continue;
            }
            for r in 0..x.rows {
                x.row_mut(r)[off..off + width].fill(T::zero());
            }
        }
    }

    fn forward<T: Scalar, R: Rng + ?Sized>(
        &self,
        params: &ParamStore<T>,
        head: &Head,
        xm: &Matrix<T>,
        mut rng: Option<&mut R>,
    ) -> (Matrix<T>, HeadCache<T>) {
        let mut cache = HeadCache {
            acts: Vec::with_capacity(head.layers.len()),
            relu: Vec::with_capacity(head.layers.len()),
            masks: Vec::new(),
        };
        for (l, &(w, b)) in head.layers.iter().enumerate() {
            let input = if l == 0 { xm } else { &cache.acts[l - 1] };
            let mut h = dense_forward(input, params.get(w), params.get(b));
            relu_inplace(&mut h);
            let mut out = h.clone();
            if let Some(rng) = rng.as_deref_mut() {
                if self.dropout > 0.0 {
                    let mask = dropout_mask(out.data.len(), self.dropout, rng);
                    apply_mask(&mut out, &mask);
                    cache.masks.push(mask);
                }
            }
            cache.relu.push(h);
            cache.acts.push(out);
        }
        let last = cache.acts.last().unwrap_or(xm);
        let logits = dense_forward(last, params.get(head.out.0), params.get(head.out.1));
        (logits, cache)
    }

    fn backward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        grads: &mut ParamStore<T>,
        head: &Head,
        xm: &Matrix<T>,
        cache: &HeadCache<T>,
        dlogits: &Matrix<T>,
    ) -> Matrix<T> {
        let last = cache.acts.last().unwrap_or(xm);
        let mut d = {
            let (gw, gb) = two_mut(grads, head.out.0, head.out.1);
            dense_backward(last, params.get(head.out.0), dlogits, gw, gb, true).unwrap()
        };
        for l in (0..head.layers.len()).rev() {
            if let Some(mask) = cache.masks.get(l) {
                apply_mask(&mut d, mask);
            }
            relu_backward_inplace(&mut d, &cache.relu[l]);
            let (w, b) = head.layers[l];
            let input = if l == 0 { xm } else { &cache.acts[l - 1] };
            let (gw, gb) = two_mut(grads, w, b);
            d = dense_backward(input, params.get(w), &d, gw, gb, true).unwrap();
        }
        d
    }

    /// Logits of head `k` in inference mode.
    pub fn logits<T: Scalar>(&self, params: &ParamStore<T>, k: usize, x: &Matrix<T>, visible: &[bool]) -> Matrix<T> {
        let head = self.heads[k].as_ref().expect("sub-column has a head");
        let xm = self.mask_input(x, visible);
        self.forward::<T, rand_chacha::ChaCha8Rng>(params, head, &xm, None).0
    }

    /// Sum over heads of the mean cross-entropy. With `grads`, accumulates
    /// parameter gradients and returns `∂L/∂x` as well.
    pub fn loss<'a, T: Scalar, R: Rng + ?Sized>(
        &self,
        params: &ParamStore<T>,
        mut grads: Option<&mut ParamStore<T>>,
        x: &Matrix<T>,
        visible: &dyn Fn(usize) -> Vec<bool>,
        targets: &dyn Fn(usize) -> HeadTargets<'a>,
        mut rng: Option<&mut R>,
    ) -> Result<(f64, Option<Matrix<T>>)> {
        let mut total = 0.0;
        let mut dx = grads.is_some().then(|| Matrix::zeros(x.rows, x.cols));
        for (k, head) in self.heads.iter().enumerate() {
            let Some(head) = head else { continue };
            let vis = visible(k);
            let xm = self.mask_input(x, &vis);
            let (logits, cache) = self.forward(params, head, &xm, rng.as_deref_mut());
            let t = targets(k);
            let (loss, dlogits) = softmax_cross_entropy(&logits, &t.targets, t.row_mask)?;
            total += loss.f64();
            if let (Some(g), Some(dx)) = (grads.as_deref_mut(), dx.as_mut()) {
                let mut dxm = self.backward(params, g, head, &xm, &cache, &dlogits);
                self.mask_inplace(&mut dxm, &vis);
                dx.add_assign(&dxm);
            }
        }
        Ok((total, dx))
    }
}

fn two_mut<T: Scalar>(store: &mut ParamStore<T>, a: ParamId, b: ParamId) -> (&mut Matrix<T>, &mut Matrix<T>) {
    assert!(a.0 < b.0);
    let (lo, hi) = store.values_mut().split_at_mut(b.0);
    (&mut lo[a.0], &mut hi[0])
}

pub(crate) fn pair_mut<T: Scalar>(store: &mut ParamStore<T>, a: ParamId, b: ParamId) -> (&mut Matrix<T>, &mut Matrix<T>) {
    two_mut(store, a, b)
}
