//! Forward and backward passes of the feed-forward layers. Backward functions
//! accumulate into parameter gradients and return input gradients.

use rand::Rng;

use super::{gemm, Matrix, Scalar};
use crate::error::{Error, Result};

pub const DEFAULT_DROPOUT: f64 = 0.25;

/// `y = x·W + b` with `W: in × out` and `b: 1 × out`.
pub fn dense_forward<T: Scalar>(x: &Matrix<T>, w: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let mut y = Matrix::zeros(x.rows, w.cols);
    for r in 0..y.rows {
        y.row_mut(r).copy_from_slice(&b.data);
    }
    gemm(T::one(), x, false, w, false, T::one(), &mut y);
    y
}

/// Accumulates `∂W += xᵀ·dy`, `∂b += Σ dy` and returns `dx = dy·Wᵀ` when asked.
pub fn dense_backward<T: Scalar>(
    x: &Matrix<T>,
    w: &Matrix<T>,
    dy: &Matrix<T>,
    gw: &mut Matrix<T>,
    gb: &mut Matrix<T>,
    want_dx: bool,
) -> Option<Matrix<T>> {
    gemm(T::one(), x, true, dy, false, T::one(), gw);
    for r in 0..dy.rows {
        for (g, &d) in gb.data.iter_mut().zip(dy.row(r)) {
            *g += d;
        }
    }
    want_dx.then(|| {
        let mut dx = Matrix::zeros(x.rows, x.cols);
        gemm(T::one(), dy, false, w, true, T::zero(), &mut dx);
        dx
    })
}

pub fn relu_inplace<T: Scalar>(y: &mut Matrix<T>) {
    for v in &mut y.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes `dy` where the activation output `y` is not positive.
pub fn relu_backward_inplace<T: Scalar>(dy: &mut Matrix<T>, y: &Matrix<T>) {
    for (d, &v) in dy.data.iter_mut().zip(&y.data) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
}

/// Inverted dropout mask: each entry is 0 with probability `rate`, else
/// `1 / (1 − rate)`.
pub fn dropout_mask<T: Scalar, R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<T> {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
    let keep = T::c(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect()
}

pub fn apply_mask<T: Scalar>(x: &mut Matrix<T>, mask: &[T]) {
    for (v, &m) in x.data.iter_mut().zip(mask) {
        *v *= m;
    }
}

/// Rows of `table` selected by `indices`.
pub fn embedding_forward<T: Scalar>(table: &Matrix<T>, indices: &[u32]) -> Result<Matrix<T>> {
    let mut out = Matrix::zeros(indices.len(), table.cols);
    for (r, &i) in indices.iter().enumerate() {
        if i as usize >= table.rows {
            return Err(Error::ShapeMismatch(format!(
                "embedding index {i} outside a table of {} rows",
                table.rows
            )));
        }
        out.row_mut(r).copy_from_slice(table.row(i as usize));
    }
    Ok(out)
}

pub fn embedding_backward<T: Scalar>(grad: &mut Matrix<T>, indices: &[u32], dy: &Matrix<T>) {
    for (r, &i) in indices.iter().enumerate() {
        for (g, &d) in grad.row_mut(i as usize).iter_mut().zip(dy.row(r)) {
            *g += d;
        }
    }
}

pub fn softmax_inplace<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Mean cross-entropy over the rows where `mask` is set (all rows when
/// `None`) and the gradient with respect to the logits. Masked rows get a
/// zero gradient.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Matrix<T>,
    targets: &[u32],
    mask: Option<&[bool]>,
) -> Result<(T, Matrix<T>)> {
    if targets.len() != logits.rows || mask.is_some_and(|m| m.len() != logits.rows) {
        return Err(Error::ShapeMismatch("targets do not match logits rows".into()));
    }
    let valid = |r: usize| mask.is_none_or(|m| m[r]);
    let count = (0..logits.rows).filter(|&r| valid(r)).count();
    let mut grad = Matrix::zeros(logits.rows, logits.cols);
    if count == 0 {
        return Ok((T::zero(), grad));
    }
    let scale = T::one() / T::c(count as f64);
    let mut loss = T::zero();
    for r in 0..logits.rows {
        if !valid(r) {
            continue;
        }
        let t = targets[r] as usize;
        if t >= logits.cols {
            return Err(Error::ShapeMismatch(format!(
                "target {t} outside {} classes",
                logits.cols
            )));
        }
        let g = grad.row_mut(r);
        g.copy_from_slice(logits.row(r));
        let max = g.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in g.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        loss += sum.ln() + max - logits.at(r, t);
        for v in g.iter_mut() {
            *v = *v / sum * scale;
        }
        g[t] -= scale;
    }
    let loss = loss * scale;
    if !loss.is_finite() {
        return Err(Error::NonFiniteValue("cross-entropy loss".into()));
    }
    Ok((loss, grad))
}
