//! Single-layer LSTM over time-major inputs. Gate order in the fused weight
//! matrices is input, forget, cell, output.

use super::{gemm, Matrix, Scalar};

pub const FORGET_BIAS: f64 = 1.0;

/// Weights: `wx: in × 4h`, `wh: h × 4h`, `b: 1 × 4h`.
pub struct LstmWeights<'a, T> {
    pub wx: &'a Matrix<T>,
    pub wh: &'a Matrix<T>,
    pub b: &'a Matrix<T>,
}

pub struct LstmGrads<'a, T> {
    pub wx: &'a mut Matrix<T>,
    pub wh: &'a mut Matrix<T>,
    pub b: &'a mut Matrix<T>,
}

/// Activations kept for the backward pass; `hs[t]` is the output at step `t`.
pub struct LstmCache<T> {
    pub xs: Vec<Matrix<T>>,
    pub gates: Vec<Matrix<T>>,
    pub cs: Vec<Matrix<T>>,
    pub hs: Vec<Matrix<T>>,
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Scalar> LstmWeights<'_, T> {
    pub fn hidden(&self) -> usize {
        self.wh.rows
    }

    /// One step from state `(h, c)`; returns activated gates and the new state.
    pub fn step(&self, x: &Matrix<T>, h: &Matrix<T>, c: &Matrix<T>) -> (Matrix<T>, Matrix<T>, Matrix<T>) {
        let n = self.hidden();
        let batch = x.rows;
        let mut z = Matrix::zeros(batch, 4 * n);
        for r in 0..batch {
            z.row_mut(r).copy_from_slice(&self.b.data);
        }
        gemm(T::one(), x, false, self.wx, false, T::one(), &mut z);
        gemm(T::one(), h, false, self.wh, false, T::one(), &mut z);
        let mut c_new = Matrix::zeros(batch, n);
        let mut h_new = Matrix::zeros(batch, n);
        for r in 0..batch {
            let g = z.row_mut(r);
            for j in 0..n {
                g[j] = sigmoid(g[j]);
                g[n + j] = sigmoid(g[n + j]);
                g[2 * n + j] = g[2 * n + j].tanh();
                g[3 * n + j] = sigmoid(g[3 * n + j]);
            }
            let g = z.row(r);
            let cp = c.row(r);
            let cn = c_new.row_mut(r);
            for j in 0..n {
                cn[j] = g[n + j] * cp[j] + g[j] * g[2 * n + j];
            }
            let cn = c_new.row(r).to_vec();
            let hn = h_new.row_mut(r);
            for j in 0..n {
                hn[j] = g[3 * n + j] * cn[j].tanh();
            }
        }
        (z, h_new, c_new)
    }

    /// Runs the sequence from a zero state.
    pub fn forward(&self, xs: Vec<Matrix<T>>) -> LstmCache<T> {
        let n = self.hidden();
        let batch = xs.first().map_or(0, |x| x.rows);
        let mut h = Matrix::zeros(batch, n);
        let mut c = Matrix::zeros(batch, n);
        let mut cache = LstmCache {
            gates: Vec::with_capacity(xs.len()),
            cs: Vec::with_capacity(xs.len()),
            hs: Vec::with_capacity(xs.len()),
            xs: Vec::new(),
        };
        for x in &xs {
            let (g, hn, cn) = self.step(x, &h, &c);
            cache.gates.push(g);
            cache.cs.push(cn.clone());
            cache.hs.push(hn.clone());
            h = hn;
            c = cn;
        }
        cache.xs = xs;
        cache
    }

    /// Backpropagation through time given `∂L/∂h_t` for every step; returns
    /// `∂L/∂x_t`.
    pub fn backward(&self, cache: &LstmCache<T>, dhs: &[Matrix<T>], grads: LstmGrads<'_, T>) -> Vec<Matrix<T>> {
        let n = self.hidden();
        let steps = cache.xs.len();
        let batch = cache.xs.first().map_or(0, |x| x.rows);
        let mut dh_next = Matrix::zeros(batch, n);
        let mut dc_next: Matrix<T> = Matrix::zeros(batch, n);
        let mut dxs: Vec<Matrix<T>> = vec![Matrix::zeros(0, 0); steps];
        let zero = Matrix::zeros(batch, n);
        for t in (0..steps).rev() {
            let g = &cache.gates[t];
            let c = &cache.cs[t];
            let c_prev = if t > 0 { &cache.cs[t - 1] } else { &zero };
            let h_prev = if t > 0 { &cache.hs[t - 1] } else { &zero };
            let mut dz = Matrix::zeros(batch, 4 * n);
            for r in 0..batch {
                let gr = g.row(r);
                let dzr = dz.row_mut(r);
                for j in 0..n {
                    let (i, f, gg, o) = (gr[j], gr[n + j], gr[2 * n + j], gr[3 * n + j]);
                    let tc = c.at(r, j).tanh();
                    let dh = dhs[t].at(r, j) + dh_next.at(r, j);
                    let dc = dc_next.at(r, j) + dh * o * (T::one() - tc * tc);
                    dzr[j] = dc * gg * i * (T::one() - i);
                    dzr[n + j] = dc * c_prev.at(r, j) * f * (T::one() - f);
                    dzr[2 * n + j] = dc * i * (T::one() - gg * gg);
                    dzr[3 * n + j] = dh * tc * o * (T::one() - o);
                    dc_next.data[r * n + j] = dc * f;
                }
            }
            gemm(T::one(), &cache.xs[t], true, &dz, false, T::one(), grads.wx);
            gemm(T::one(), h_prev, true, &dz, false, T::one(), grads.wh);
            for r in 0..batch {
                for (gb, &d) in grads.b.data.iter_mut().zip(dz.row(r)) {
                    *gb += d;
                }
            }
            let mut dx = Matrix::zeros(batch, self.wx.rows);
            gemm(T::one(), &dz, false, self.wx, true, T::zero(), &mut dx);
            gemm(T::one(), &dz, false, self.wh, true, T::zero(), &mut dh_next);
            dxs[t] = dx;
        }
        dxs
    }
}

/// Zero bias except for the forget gate.
pub fn lstm_bias<T: Scalar>(hidden: usize) -> Matrix<T> {
    Matrix::from_fn(1, 4 * hidden, |_, j| {
        if (hidden..2 * hidden).contains(&j) {
            T::c(FORGET_BIAS)
        } else {
            T::zero()
        }
    })
}
