//! Finite-difference checks shared by the gradient and acceptance suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use synthtab::kernel::gradcheck::{check, GradCheckReport};
use synthtab::kernel::{
    apply_mask, dense_backward, dense_forward, dropout_mask, embedding_backward, embedding_forward, lstm_bias,
    relu_backward_inplace, relu_inplace, softmax_cross_entropy, LstmGrads, LstmWeights, Matrix, ParamStore,
};
use synthtab::model::seq::SeqWindow;
use synthtab::model::{FlatArchitecture, FlatModel, Permutation, SeqArchitecture, SeqModel};

#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub batch: usize,
    pub time: usize,
    pub features: usize,
}

impl Shape {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        Self {
            batch: rng.random_range(1..=4),
            time: rng.random_range(1..=8),
            features: rng.random_range(1..=8),
        }
    }
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Entries bounded away from zero so ReLU kinks are never crossed.
fn away_from_zero(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| {
        let v: f64 = rng.random_range(0.05..1.0);
        if rng.random::<bool>() { v } else { -v }
    })
}

fn probe(y: &Matrix<f64>, r: &Matrix<f64>) -> f64 {
    y.data.iter().zip(&r.data).map(|(a, b)| a * b).sum()
}

pub fn dense(shape: Shape, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, i, o) = (shape.batch, shape.features, shape.time);
    let mut p = ParamStore::new();
    let x = p.add("x", random(n, i, &mut rng));
    let w = p.add("w", random(i, o, &mut rng));
    let b = p.add("b", random(1, o, &mut rng));
    let r = random(n, o, &mut rng);
    let mut g = p.zeros_like();
    let mut gw = Matrix::zeros(i, o);
    let mut gb = Matrix::zeros(1, o);
    let dx = dense_backward(p.get(x), p.get(w), &r, &mut gw, &mut gb, true).unwrap();
    *g.get_mut(x) = dx;
    *g.get_mut(w) = gw;
    *g.get_mut(b) = gb;
    check(&mut p, &g, 64, |p| probe(&dense_forward(p.get(x), p.get(w), p.get(b)), &r))
}

pub fn dense_relu(shape: Shape, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, i, o) = (shape.batch, shape.features, shape.time);
    let mut p = ParamStore::new();
    let x = p.add("x", away_from_zero(n, i, &mut rng));
    let w = p.add("w", random(i, o, &mut rng));
    let b = p.add("b", random(1, o, &mut rng));
    let r = random(n, o, &mut rng);
    let forward = |p: &ParamStore<f64>| {
        let mut y = dense_forward(p.get(x), p.get(w), p.get(b));
        relu_inplace(&mut y);
        y
    };
    // Keep pre-activations away from the kink.
    let pre = dense_forward(p.get(x), p.get(w), p.get(b));
    for (bv, col) in p.get_mut(b).data.iter_mut().zip(0..o) {
        let near = (0..n).any(|r| pre.at(r, col).abs() < 1e-2);
        if near {
            *bv += 0.05;
        }
    }
    let y = forward(&p);
    let mut dy = r.clone();
    relu_backward_inplace(&mut dy, &y);
    let mut g = p.zeros_like();
    let mut gw = Matrix::zeros(i, o);
    let mut gb = Matrix::zeros(1, o);
    *g.get_mut(x) = dense_backward(p.get(x), p.get(w), &dy, &mut gw, &mut gb, true).unwrap();
    *g.get_mut(w) = gw;
    *g.get_mut(b) = gb;
    check(&mut p, &g, 64, |p| probe(&forward(p), &r))
}

pub fn dropout(shape: Shape, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    let x = p.add("x", random(shape.batch, shape.features, &mut rng));
    let mask: Vec<f64> = dropout_mask(shape.batch * shape.features, 0.25, &mut rng);
    let r = random(shape.batch, shape.features, &mut rng);
    let mut g = p.zeros_like();
    let mut dx = r.clone();
    apply_mask(&mut dx, &mask);
    *g.get_mut(x) = dx;
    check(&mut p, &g, 64, |p| {
        let mut y = p.get(x).clone();
        apply_mask(&mut y, &mask);
        probe(&y, &r)
    })
}

pub fn embedding(shape: Shape, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let card = shape.time;
    let mut p = ParamStore::new();
    let t = p.add("table", random(card, shape.features, &mut rng));
    let idx: Vec<u32> = (0..shape.batch * 2).map(|_| rng.random_range(0..card as u32)).collect();
    let r = random(idx.len(), shape.features, &mut rng);
    let mut g = p.zeros_like();
    embedding_backward(g.get_mut(t), &idx, &r);
    check(&mut p, &g, 64, |p| probe(&embedding_forward(p.get(t), &idx).unwrap(), &r))
}

pub fn cross_entropy(shape: Shape, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = shape.features.max(2);
    let rows = shape.batch * shape.time;
    let mut p = ParamStore::new();
    let l = p.add("logits", random(rows, classes, &mut rng).cast());
    let targets: Vec<u32> = (0..rows).map(|_| rng.random_range(0..classes as u32)).collect();
    let mut mask: Vec<bool> = (0..rows).map(|_| rng.random::<f64>() < 0.7).collect();
    mask[0] = true;
    let mut g = p.zeros_like();
    *g.get_mut(l) = softmax_cross_entropy(p.get(l), &targets, Some(&mask)).unwrap().1;
    check(&mut p, &g, 64, |p| softmax_cross_entropy(p.get(l), &targets, Some(&mask)).unwrap().0)
}

pub fn lstm(shape: Shape, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, t, f) = (shape.batch, shape.time, shape.features);
    let h = rng.random_range(1..=6);
    let mut p = ParamStore::new();
    let xs: Vec<_> = (0..t).map(|k| p.add(format!("x{k}"), random(b, f, &mut rng))).collect();
    let wx = p.add("wx", random(f, 4 * h, &mut rng));
    let wh = p.add("wh", random(h, 4 * h, &mut rng));
    let bias = p.add("b", {
        let mut m = lstm_bias(h);
        m.add_assign(&random(1, 4 * h, &mut rng));
        m
    });
    let rs: Vec<Matrix<f64>> = (0..t).map(|_| random(b, h, &mut rng)).collect();
    let run = |p: &ParamStore<f64>| {
        let weights = LstmWeights {
            wx: p.get(wx),
            wh: p.get(wh),
            b: p.get(bias),
        };
        weights.forward(xs.iter().map(|&x| p.get(x).clone()).collect())
    };
    let cache = run(&p);
    let mut g = p.zeros_like();
    let (mut gwx, mut gwh, mut gb) = (Matrix::zeros(f, 4 * h), Matrix::zeros(h, 4 * h), Matrix::zeros(1, 4 * h));
    let weights = LstmWeights {
        wx: p.get(wx),
        wh: p.get(wh),
        b: p.get(bias),
    };
    let dxs = weights.backward(
        &cache,
        &rs,
        LstmGrads {
            wx: &mut gwx,
            wh: &mut gwh,
            b: &mut gb,
        },
    );
    for (k, dx) in dxs.into_iter().enumerate() {
        *g.get_mut(xs[k]) = dx;
    }
    *g.get_mut(wx) = gwx;
    *g.get_mut(wh) = gwh;
    *g.get_mut(bias) = gb;
    check(&mut p, &g, 64, |p| {
        run(p).hs.iter().zip(&rs).map(|(h, r)| probe(h, r)).sum()
    })
}

/// Zero-initialised biases put ReLU pre-activations of fully masked inputs
/// exactly on the kink; shift every bias away from zero.
fn jitter_biases(p: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for k in 0..p.len() {
        if p.names()[k].ends_with(".b") {
            let b = &mut p.values_mut()[k];
            *b = away_from_zero(b.rows, b.cols, rng);
        }
    }
}

fn random_rows(cards: &[u32], n: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
    (0..n).flat_map(|_| cards.iter().map(|&c| rng.random_range(0..c)).collect::<Vec<_>>()).collect()
}

/// Full flat model (embeddings, masked heads, dropout) under a random order.
pub fn flat_model(shape: Shape, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = shape.features.clamp(1, 4);
    let cards: Vec<u32> = (0..d).map(|_| rng.random_range(2..=6)).collect();
    let mut arch = FlatArchitecture::new(&cards);
    arch.regressor_units = vec![5; d];
    arch.regressor_depth = 1 + (seed % 2) as usize;
    let mut model = FlatModel::<f64>::new(arch, seed).unwrap();
    jitter_biases(model.params_mut(), &mut rng);
    let rows = random_rows(&cards, shape.batch * 2, &mut rng);
    let sigma = Permutation::random(d, &mut rng);
    let drop_seed = rng.random::<u64>();
    let (_, g) = model
        .loss_and_grads(&rows, &sigma, Some(&mut ChaCha8Rng::seed_from_u64(drop_seed)))
        .unwrap();
    let mut p = model.params().clone();
    let mut probe_model = model.clone();
    check(&mut p, &g, 24, |p| {
        probe_model.params_mut().load(p).unwrap();
        probe_model
            .loss_and_grads(&rows, &sigma, Some(&mut ChaCha8Rng::seed_from_u64(drop_seed)))
            .unwrap()
            .0
    })
}

/// Full sequential model with history, context and dropout.
pub fn seq_model(shape: Shape, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d_data = shape.features.clamp(1, 3);
    let max_len = shape.time.min(5);
    let mut cards: Vec<u32> = (0..d_data).map(|_| rng.random_range(2..=5)).collect();
    cards.push(max_len as u32 + 1);
    cards.push(max_len as u32 + 1);
    let ctx_cards: Vec<u32> = if seed % 2 == 0 { vec![3, 2] } else { Vec::new() };
    let mut arch = SeqArchitecture::new(&cards, &ctx_cards, 2);
    arch.regressor_units = vec![4; cards.len()];
    arch.history_units = 3;
    if !ctx_cards.is_empty() {
        arch.context_units = 3;
    }
    let mut model = SeqModel::<f64>::new(arch, seed).unwrap();
    jitter_biases(model.params_mut(), &mut rng);
    let b = shape.batch;
    let seqs: Vec<Vec<u32>> = (0..b)
        .map(|i| {
            let len = if i == 0 { max_len } else { rng.random_range(0..=max_len) };
            if len == 0 {
                let mut row = vec![0; d_data];
                row.extend([0, 1]);
                return row;
            }
            (0..len)
                .flat_map(|t| {
                    let mut row: Vec<u32> = cards[..d_data].iter().map(|&c| rng.random_range(0..c)).collect();
                    row.extend([len as u32, t as u32 + 1]);
                    row
                })
                .collect()
        })
        .collect();
    let windows: Vec<SeqWindow<'_>> = seqs
        .iter()
        .map(|s| SeqWindow {
            rows: s,
            from_start: true,
        })
        .collect();
    let ctx: Option<Vec<u32>> = (!ctx_cards.is_empty()).then(|| random_rows(&ctx_cards, b, &mut rng));
    let sigma = model.random_order(&mut rng);
    let drop_seed = rng.random::<u64>();
    let (_, g) = model
        .loss_and_grads(&windows, ctx.as_deref(), &sigma, Some(&mut ChaCha8Rng::seed_from_u64(drop_seed)))
        .unwrap();
    let mut p = model.params().clone();
    let mut probe_model = model.clone();
    check(&mut p, &g, 24, |p| {
        probe_model.params_mut().load(p).unwrap();
        probe_model
            .loss_and_grads(&windows, ctx.as_deref(), &sigma, Some(&mut ChaCha8Rng::seed_from_u64(drop_seed)))
            .unwrap()
            .0
    })
}

pub type Check = fn(Shape, u64) -> GradCheckReport;

pub const ALL: &[(&str, Check)] = &[
    ("dense", dense),
    ("dense_relu", dense_relu),
    ("dropout", dropout),
    ("embedding", embedding),
    ("softmax_cross_entropy", cross_entropy),
    ("lstm_sequence", lstm),
    ("flat_head", flat_model),
    ("seq_head", seq_model),
];
