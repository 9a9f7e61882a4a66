//! Synthetic datasets with known structure.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use synthtab::codec::EncodedTable;
use synthtab::model::{FlatArchitecture, FlatModel};
use synthtab::schema::SubColumn;
use synthtab::trainer::{fit, FlatTask, TrainConfig};
use synthtab::RawTable;

pub fn pick<R: Rng>(rng: &mut R, p: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, q) in p.iter().enumerate() {
        acc += q;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

pub fn encoded(cards: &[u32], rows: Vec<u32>) -> EncodedTable {
    let subs = cards
        .iter()
        .enumerate()
        .map(|(i, &c)| SubColumn {
            name: format!("c{i}"),
            cardinality: c,
        })
        .collect();
    EncodedTable::new(subs, rows, None).unwrap()
}

pub fn train_encoded(data: &EncodedTable, cfg: &TrainConfig) -> FlatModel<f32> {
    let mut model = FlatModel::new(FlatArchitecture::new(&data.cardinalities()), cfg.seed).unwrap();
    fit(
        &mut FlatTask {
            model: &mut model,
            data,
        },
        cfg,
    )
    .unwrap();
    model
}

/// Three correlated categorical columns of cardinalities 3, 4 and 5.
pub fn correlated_triplet(n: usize, seed: u64) -> RawTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols: Vec<Vec<_>> = (0..3).map(|_| Vec::with_capacity(n)).collect();
    for _ in 0..n {
        let a = pick(&mut rng, &[0.5, 0.3, 0.2]);
        let b = if rng.random::<f64>() < 0.8 { a } else { pick(&mut rng, &[0.25; 4]) };
        let c = if rng.random::<f64>() < 0.7 { (a + b) % 5 } else { pick(&mut rng, &[0.2; 5]) };
        cols[0].push(Some(format!("a{a}")));
        cols[1].push(Some(format!("b{b}")));
        cols[2].push(Some(format!("c{c}")));
    }
    RawTable::new(vec!["a".into(), "b".into(), "c".into()], cols).unwrap()
}

pub const STAY: [f64; 2] = [0.9, 0.8];

/// Two-state Markov chains with lengths uniform on 1..=10, keyed by `id`.
pub fn markov_chains(n: usize, seed: u64) -> RawTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut ids, mut states) = (Vec::new(), Vec::new());
    for i in 0..n {
        let len = rng.random_range(1..=10);
        let mut s = usize::from(rng.random_bool(0.5));
        for _ in 0..len {
            ids.push(Some(format!("s{i}")));
            states.push(Some(["A", "B"][s].to_string()));
            if !rng.random_bool(STAY[s]) {
                s = 1 - s;
            }
        }
    }
    RawTable::new(vec!["id".into(), "state".into()], vec![ids, states]).unwrap()
}

pub fn adult() -> RawTable {
    RawTable::read_csv(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/adult.csv")).unwrap()
}

/// Disjoint halves of a seeded shuffle, `n` rows each.
pub fn halves(table: &RawTable, n: usize, seed: u64) -> (RawTable, RawTable) {
    let mut idx: Vec<usize> = (0..table.n_rows()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    (table.select_rows(&idx[..n]), table.select_rows(&idx[n..2 * n]))
}

/// Total variation distance between two count or probability vectors.
pub fn tv(p: &[f64], q: &[f64]) -> f64 {
    let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
    0.5 * p.iter().zip(q).map(|(a, b)| (a / sp - b / sq).abs()).sum::<f64>()
}

/// A customer table (`cid`, `segment`, `age`) and one event sequence per
/// customer (`customer`, `channel`, `amount`) whose channel persistence and
/// length depend on the segment.
pub fn customers(n: usize, seed: u64) -> (RawTable, RawTable) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut cid, mut segment, mut age) = (Vec::new(), Vec::new(), Vec::new());
    let (mut customer, mut channel, mut amount) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        let s = pick(&mut rng, &[0.5, 0.3, 0.2]);
        cid.push(Some(format!("c{i:05}")));
        segment.push(Some(["retail", "business", "student"][s].to_string()));
        age.push(Some((20 + 10 * s + rng.random_range(0..15)).to_string()));
        let len = rng.random_range(1..=3 + 2 * s);
        let mut ch = rng.random_range(0..3);
        for _ in 0..len {
            customer.push(Some(format!("c{i:05}")));
            channel.push(Some(["web", "shop", "phone"][ch].to_string()));
            amount.push(Some(format!("{:.2}", (s as f64 + 1.0) * rng.random_range(1.0..50.0))));
            if rng.random::<f64>() > [0.8, 0.5, 0.2][s] {
                ch = rng.random_range(0..3);
            }
        }
    }
    let ctx = RawTable::new(vec!["cid".into(), "segment".into(), "age".into()], vec![cid, segment, age]).unwrap();
    let seq = RawTable::new(
        vec!["customer".into(), "channel".into(), "amount".into()],
        vec![customer, channel, amount],
    )
    .unwrap();
    (ctx, seq)
}
