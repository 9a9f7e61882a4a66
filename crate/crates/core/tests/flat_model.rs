mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use synthtab::model::{entropy, probabilities, FlatArchitecture, FlatModel, Permutation, SampleRequest};
use synthtab::pipeline::{generate_table, train_flat, GenerationRequest};
use synthtab::trainer::TrainConfig;
use synthtab::{analyze, AnalysisOptions, Error, RawTable};

use common::data::{encoded, pick, train_encoded, tv};
use common::stats::{chi_square, chi_square_sf_even};

fn untrained(cards: &[u32], seed: u64) -> FlatModel<f32> {
    FlatModel::new(FlatArchitecture::new(cards), seed).unwrap()
}

fn head_probs(model: &FlatModel<f32>, row: &[u32], sigma: &Permutation, k: usize) -> Vec<f64> {
    let logits = model.head_logits(row, sigma, k).unwrap();
    probabilities(&logits.data, 1.0, &[]).unwrap()
}

fn bits(m: &synthtab::kernel::Matrix<f32>) -> Vec<u32> {
    m.data.iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn non_predecessors_never_reach_a_head(
        cards in prop::collection::vec(2u32..7, 1..=8),
        seed in any::<u64>(),
    ) {
        let d = cards.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = untrained(&cards, seed);
        let sigma = Permutation::random(d, &mut rng);
        let rows: Vec<u32> = (0..4).flat_map(|_| cards.iter().map(|&c| rng.random_range(0..c)).collect::<Vec<_>>()).collect();
        for k in 0..d {
            let base = bits(&model.head_logits(&rows, &sigma, k).unwrap());
            let visible = sigma.predecessors(k);
            for j in (0..d).filter(|&j| !visible[j]) {
                let mut changed = rows.clone();
                for r in 0..4 {
                    changed[r * d + j] = (changed[r * d + j] + 1 + rng.random_range(0..cards[j] - 1)) % cards[j];
                }
                prop_assert_eq!(&bits(&model.head_logits(&changed, &sigma, k).unwrap()), &base);
            }
        }
    }

    #[test]
    fn lower_temperature_never_raises_entropy(
        logits in prop::collection::vec(-8f32..8.0, 2..12),
        ta in 0.01f64..5.0,
        dt in 0.0f64..5.0,
    ) {
        let a = entropy(&probabilities(&logits, ta, &[]).unwrap());
        let b = entropy(&probabilities(&logits, ta + dt, &[]).unwrap());
        prop_assert!(a <= b + 1e-12, "H(T={}) = {} > H(T={}) = {}", ta, a, ta + dt, b);
    }
}

#[test]
fn untrained_loss_is_near_uniform() {
    for c in [2u32, 7, 30] {
        let model = untrained(&[c], 3);
        let rows: Vec<u32> = (0..500).map(|i| i % c).collect();
        let loss = model.loss(&rows, &Permutation::identity(1)).unwrap();
        assert!((loss - f64::from(c).ln()).abs() < 0.15, "c={c}: loss {loss}");
    }
}

#[test]
fn copy_column_is_learned() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows: Vec<u32> = (0..4000).flat_map(|_| {
        let v = rng.random_range(0..4);
        [v, v]
    }).collect();
    let model = train_encoded(&encoded(&[4, 4], rows), &TrainConfig::default());
    let sigma = Permutation::identity(2);
    for v in 0..4 {
        let p = head_probs(&model, &[v, 0], &sigma, 1);
        assert!(p[v as usize] >= 0.95, "p(x2={v} | x1={v}) = {}", p[v as usize]);
    }
}

#[test]
fn both_orders_recover_the_joint() {
    let joint = [[0.30, 0.05, 0.05], [0.05, 0.20, 0.05], [0.02, 0.08, 0.20]];
    let flat: Vec<f64> = joint.iter().flatten().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut counts = [0.0; 9];
    let rows: Vec<u32> = (0..20_000)
        .flat_map(|_| {
            let cell = pick(&mut rng, &flat);
            counts[cell] += 1.0;
            [(cell / 3) as u32, (cell % 3) as u32]
        })
        .collect();
    let model = train_encoded(&encoded(&[3, 3], rows), &TrainConfig::default());
    for order in [vec![0, 1], vec![1, 0]] {
        let sigma = Permutation::new(order.clone()).unwrap();
        let (first, second) = (order[0], order[1]);
        let marginal = head_probs(&model, &[0, 0], &sigma, first);
        let mut implied = [0.0; 9];
        for v in 0..3u32 {
            let mut row = [0u32; 2];
            row[first] = v;
            let cond = head_probs(&model, &row, &sigma, second);
            for (w, p) in cond.iter().enumerate() {
                let (a, b) = if first == 0 { (v as usize, w) } else { (w, v as usize) };
                implied[a * 3 + b] = marginal[v as usize] * p;
            }
        }
        let d = tv(&implied, &counts);
        assert!(d < 0.05, "order {order:?}: TV {d}");
    }
}

#[test]
fn joint_model_beats_independent_columns() {
    for seed in 0..5 {
        let raw = common::data::correlated_triplet(3000, 100 + seed);
        let schema = analyze(&raw, None, &AnalysisOptions::default()).unwrap();
        let enc = synthtab::encode(&raw, &schema).unwrap();
        let train_ids: Vec<usize> = (0..2700).collect();
        let val_ids: Vec<usize> = (2700..3000).collect();
        let (train, val) = (enc.select_rows(&train_ids), enc.select_rows(&val_ids));
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let joint = train_encoded(&train, &cfg);
        let joint_loss = joint.loss(&val.data, &Permutation::identity(3)).unwrap();
        let mut independent = 0.0;
        for k in 0..3 {
            let column = |t: &synthtab::EncodedTable| encoded(&[t.cardinalities()[k]], (0..t.n_rows).map(|r| t.row(r)[k]).collect());
            let single = train_encoded(&column(&train), &cfg);
            independent += single.loss(&column(&val).data, &Permutation::identity(1)).unwrap();
        }
        assert!(joint_loss < independent, "seed {seed}: joint {joint_loss} vs independent {independent}");
    }
}

#[test]
fn fully_conditioned_rows_are_copied() {
    let cards = [3u32, 5, 2];
    let model = untrained(&cards, 4);
    let fixed: Vec<Option<u32>> = (0..30).map(|i| Some(i as u32 % cards[i % 3])).collect();
    let out = model
        .sample(&SampleRequest {
            fixed: Some(fixed.clone()),
            ..SampleRequest::new(10, 5)
        })
        .unwrap();
    assert_eq!(out, fixed.into_iter().map(Option::unwrap).collect::<Vec<_>>());
}

#[test]
fn near_zero_temperature_is_argmax() {
    let cards = [4u32, 3, 6, 2];
    let model = untrained(&cards, 8);
    let out = model
        .sample(&SampleRequest {
            temperature: 1e-7,
            ..SampleRequest::new(50, 1)
        })
        .unwrap();
    let sigma = Permutation::identity(4);
    for row in out.chunks(4) {
        for k in 0..4 {
            let logits = model.head_logits(row, &sigma, k).unwrap();
            let best = (0..logits.cols).fold(0, |b, i| if logits.data[i] > logits.data[b] { i } else { b });
            assert_eq!(row[k] as usize, best);
        }
    }
}

#[test]
fn single_column_samples_match_training_distribution() {
    let q = [0.5, 0.25, 0.15, 0.1];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let rows: Vec<u32> = (0..20_000).map(|_| pick(&mut rng, &q) as u32).collect();
    let model = train_encoded(&encoded(&[4], rows), &TrainConfig::default());
    let out = model.sample(&SampleRequest::new(100_000, 3)).unwrap();
    let mut counts = [0.0; 4];
    out.iter().for_each(|&v| counts[v as usize] += 1.0);
    let d = tv(&counts, &q);
    assert!(d < 0.02, "TV {d}");
}

#[test]
fn critical_value_of_the_chi_square_tail() {
    // Tabulated 1% critical values for 2, 6 and 10 degrees of freedom.
    for (x, df) in [(9.2103, 2), (16.8119, 6), (23.2093, 10)] {
        assert!((chi_square_sf_even(x, df) - 0.01).abs() < 1e-5, "df {df}");
    }
    assert_eq!(chi_square_sf_even(0.0, 4), 1.0);
}

#[test]
fn samples_fit_the_head_softmax() {
    let q = [0.4, 0.25, 0.15, 0.1, 0.05, 0.03, 0.02];
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let rows: Vec<u32> = (0..10_000).map(|_| pick(&mut rng, &q) as u32).collect();
    let model = train_encoded(&encoded(&[7], rows), &TrainConfig { max_epochs: 5, ..TrainConfig::default() });
    let p = head_probs(&model, &[0], &Permutation::identity(1), 0);
    let out = model.sample(&SampleRequest::new(100_000, 21)).unwrap();
    let mut counts = [0.0; 7];
    out.iter().for_each(|&v| counts[v as usize] += 1.0);
    let pvalue = chi_square_sf_even(chi_square(&counts, &p), 6);
    assert!(pvalue > 0.01, "p = {pvalue}");
}

#[test]
fn sampling_is_seeded_per_row() {
    let model = untrained(&[5, 4, 3], 2);
    let long = model.sample(&SampleRequest::new(5000, 11)).unwrap();
    let again = model.sample(&SampleRequest::new(5000, 11)).unwrap();
    let short = model.sample(&SampleRequest::new(7, 11)).unwrap();
    assert_eq!(long, again);
    assert_eq!(&long[..21], &short[..]);
    let other = model.sample(&SampleRequest::new(7, 12)).unwrap();
    assert_ne!(short, other);
}

#[test]
fn invalid_requests_are_rejected() {
    let model = untrained(&[2, 3], 0);
    let err = model
        .sample(&SampleRequest {
            fixed: Some(vec![Some(2), None]),
            ..SampleRequest::new(1, 0)
        })
        .unwrap_err();
    assert!(matches!(err, Error::ConditionIndexInvalid(_)));
    let err = model
        .sample(&SampleRequest {
            exclude: vec![(0, 0), (0, 1)],
            ..SampleRequest::new(1, 0)
        })
        .unwrap_err();
    assert!(matches!(err, Error::AllProbabilityMassExcluded(_)));
}

fn with_missing() -> RawTable {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for _ in 0..400 {
        let x = rng.random_range(0..3);
        a.push(Some(format!("a{x}")));
        b.push((rng.random::<f64>() > 0.4).then(|| format!("{}", x * 10 + rng.random_range(0..3))));
    }
    RawTable::new(vec!["a".into(), "b".into()], vec![a, b]).unwrap()
}

#[test]
fn imputed_columns_are_never_missing() {
    let raw = with_missing();
    let schema = analyze(&raw, None, &AnalysisOptions::default()).unwrap();
    let model = train_flat(&schema, &raw, &TrainConfig { max_epochs: 3, ..TrainConfig::default() }).unwrap();
    let plain = generate_table(&model, &GenerationRequest { n: 2000, ..Default::default() }).unwrap();
    assert!(plain.column("b").unwrap().iter().any(Option::is_none));
    let imputed = generate_table(
        &model,
        &GenerationRequest {
            n: 2000,
            impute: vec!["b".into()],
            ..Default::default()
        },
    )
    .unwrap();
    assert!(imputed.column("b").unwrap().iter().all(Option::is_some));
}

#[test]
fn conditioned_column_is_constant() {
    let raw = with_missing();
    let schema = analyze(&raw, None, &AnalysisOptions::default()).unwrap();
    let model = train_flat(&schema, &raw, &TrainConfig { max_epochs: 3, ..TrainConfig::default() }).unwrap();
    let req = GenerationRequest {
        n: 300,
        conditions: [("a".to_string(), Some("a2".to_string()))].into(),
        seed: 4,
        ..Default::default()
    };
    let out = generate_table(&model, &req).unwrap();
    assert!(out.column("a").unwrap().iter().all(|c| c.as_deref() == Some("a2")));
    let bad = GenerationRequest {
        conditions: [("a".to_string(), Some("nope".to_string()))].into(),
        ..req
    };
    assert!(matches!(generate_table(&model, &bad), Err(Error::ConditionIndexInvalid(_))));
}

#[test]
fn zero_rows_generate_an_empty_table() {
    let raw = with_missing();
    let schema = analyze(&raw, None, &AnalysisOptions::default()).unwrap();
    let model = train_flat(&schema, &raw, &TrainConfig { max_epochs: 1, ..TrainConfig::default() }).unwrap();
    let out = generate_table(&model, &GenerationRequest::default()).unwrap();
    assert_eq!(out.n_rows(), 0);
    assert_eq!(out.to_csv_string().unwrap().trim(), "a,b");
}
