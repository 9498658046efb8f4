use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tilembed::corpus::SampleSource;
use tilembed::nnindex::{build_index, exact_nn, l1, EmbeddingStore, ForestConfig, NnIndex, Node, Payload};
use tilembed::{AffordanceVector, Error};

fn payload(i: usize) -> Payload {
    Payload {
        pixels: vec![(i % 7) as f32 / 7.0; 768],
        affordance: AffordanceVector::from_bits((i % 8192) as u16).unwrap(),
        source: SampleSource {
            game_id: "g".into(),
            level_id: format!("l{}", i % 3),
            x: i,
            y: i / 2,
        },
    }
}

fn random_store(n: usize, dim: usize, seed: u64) -> EmbeddingStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = EmbeddingStore::new(dim);
    for i in 0..n {
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        store.push(&v, payload(i)).unwrap();
    }
    store
}

/// Independent oracle: sort all (distance, id) pairs and take the first.
fn sorted_scan(store: &EmbeddingStore, q: &[f32]) -> usize {
    let mut all: Vec<(f64, usize)> = (0..store.len())
        .map(|id| {
            let e = store.embedding(id);
            let mut d = 0.0f64;
            for k in 0..q.len() {
                d += (e[k] as f64 - q[k] as f64).abs();
            }
            (d, id)
        })
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all[0].1
}

#[test]
fn single_item_forest() {
    let store = random_store(1, 8, 0);
    let forest = build_index(&store, ForestConfig::default()).unwrap();
    assert_eq!(forest.trees.len(), 10);
    for t in &forest.trees {
        assert_eq!(t.nodes, vec![Node::Leaf(vec![0])]);
    }
    assert_eq!(forest.query(&store, &[0.0; 8], 1).unwrap(), 0);
}

#[test]
fn leaves_respect_capacity_and_partition_items() {
    let store = random_store(1000, 32, 1);
    let forest = build_index(&store, ForestConfig { trees: 10, leaf_capacity: 16, seed: 4 }).unwrap();
    forest.check_partition(&store).unwrap();
    for t in &forest.trees {
        for n in &t.nodes {
            if let Node::Leaf(ids) = n {
                assert!(ids.len() <= 16 && !ids.is_empty());
            }
        }
    }
}

#[test]
fn same_seed_same_forest() {
    let store = random_store(300, 16, 2);
    let cfg = ForestConfig { seed: 9, ..Default::default() };
    assert_eq!(build_index(&store, cfg).unwrap(), build_index(&store, cfg).unwrap());
    assert_ne!(build_index(&store, cfg).unwrap(), build_index(&store, ForestConfig { seed: 10, ..cfg }).unwrap());
}

#[test]
fn empty_store_is_rejected() {
    let store = EmbeddingStore::new(4);
    assert!(matches!(build_index(&store, ForestConfig::default()), Err(Error::Index(_))));
    assert!(exact_nn(&store, &[0.0; 4]).is_err());
}

#[test]
fn stored_vectors_find_themselves() {
    let store = random_store(2000, 64, 3);
    let forest = build_index(&store, ForestConfig::default()).unwrap();
    for id in (0..2000).step_by(37) {
        assert_eq!(forest.query(&store, store.embedding(id), 1).unwrap(), id);
    }
}

#[test]
fn exhaustive_budget_equals_exact_scan() {
    let store = random_store(500, 24, 4);
    let forest = build_index(&store, ForestConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let q: Vec<f32> = (0..24).map(|_| rng.random_range(-1.5..1.5)).collect();
        assert_eq!(forest.query(&store, &q, store.len()).unwrap(), exact_nn(&store, &q).unwrap());
    }
}

#[test]
fn exact_nn_hand_cases() {
    let mut store = EmbeddingStore::new(2);
    store.push(&[0.0, 0.0], payload(0)).unwrap();
    store.push(&[1.0, 1.0], payload(1)).unwrap();
    assert_eq!(exact_nn(&store, &[0.1, 0.0]).unwrap(), 0);
    assert!((l1(&[0.1, 0.0], store.embedding(1)) - 1.9).abs() < 1e-7);
    assert_eq!(exact_nn(&store, &[0.9, 1.0]).unwrap(), 1);
    // Equidistant: both at L1 distance 1.
    assert_eq!(exact_nn(&store, &[1.0, 0.0]).unwrap(), 0);
    assert_eq!(exact_nn(&store, &[0.0, 1.0]).unwrap(), 0);
}

#[test]
fn exact_nn_agrees_with_sorted_scan() {
    let store = random_store(400, 10, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let q: Vec<f32> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert_eq!(exact_nn(&store, &q).unwrap(), sorted_scan(&store, &q));
    }
}

#[test]
fn recall_on_perturbed_stored_vectors() {
    let store = random_store(5000, 256, 8);
    let index = NnIndex::build(store, ForestConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let mut hits = 0;
    for q in 0..500 {
        let query: Vec<f32> = index.store.embedding(q * 10).iter().map(|&v| v + noise.sample(&mut rng) as f32).collect();
        hits += usize::from(index.query(&query).unwrap() == exact_nn(&index.store, &query).unwrap());
    }
    assert!(hits as f64 / 500.0 >= 0.95, "recall {}", hits as f64 / 500.0);
}

#[test]
fn identical_embeddings_share_a_leaf() {
    let mut store = EmbeddingStore::new(3);
    for i in 0..40 {
        store.push(&[0.5, 0.5, 0.5], payload(i)).unwrap();
    }
    store.push(&[0.0, 0.0, 0.0], payload(40)).unwrap();
    let forest = build_index(&store, ForestConfig { leaf_capacity: 4, ..Default::default() }).unwrap();
    forest.check_partition(&store).unwrap();
    assert_eq!(forest.query(&store, &[0.5, 0.5, 0.5], 8).unwrap(), 0);
    assert_eq!(forest.query(&store, &[0.1, 0.0, 0.0], 8).unwrap(), 40);
}

#[test]
fn invalid_items_are_rejected() {
    let mut store = EmbeddingStore::new(2);
    assert!(matches!(store.push(&[0.0], payload(0)), Err(Error::Geometry(_))));
    assert!(matches!(store.push(&[f32::NAN, 0.0], payload(0)), Err(Error::Numeric(_))));
    let mut bad = payload(0);
    bad.pixels[0] = 1.5;
    assert!(store.push(&[0.0, 0.0], bad).is_err());
}

#[test]
fn index_round_trip() {
    let store = random_store(300, 16, 10);
    let index = NnIndex::build(store, ForestConfig { trees: 4, leaf_capacity: 8, seed: 3 }).unwrap();
    let bytes = index.encode().unwrap();
    let back = NnIndex::decode(&bytes).unwrap();
    assert_eq!(back, index);
    assert_eq!(back.encode().unwrap(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("i.tcnn");
    index.save(&path).unwrap();
    let loaded = NnIndex::load(&path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let q: Vec<f32> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert_eq!(loaded.query(&q).unwrap(), index.query(&q).unwrap());
    }
    for cut in [3, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(NnIndex::decode(&bytes[..cut]), Err(Error::Truncated { .. } | Error::Magic { .. })), "cut {cut}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn larger_budgets_never_get_worse(seed in 0u64..1000, b1 in 1usize..200, extra in 0usize..300) {
        let store = random_store(300, 12, seed);
        let forest = build_index(&store, ForestConfig { seed, ..Default::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let q: Vec<f32> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let small = forest.query(&store, &q, b1).unwrap();
        let large = forest.query(&store, &q, b1 + extra).unwrap();
        prop_assert!(l1(store.embedding(large), &q) <= l1(store.embedding(small), &q));
    }

    #[test]
    fn queries_are_deterministic(seed in 0u64..1000) {
        let store = random_store(200, 8, seed);
        let cfg = ForestConfig { seed, trees: 3, leaf_capacity: 5 };
        let f1 = build_index(&store, cfg).unwrap();
        let f2 = build_index(&store, cfg).unwrap();
        let q = vec![0.25f32; 8];
        prop_assert_eq!(f1.query(&store, &q, 20).unwrap(), f2.query(&store, &q, 20).unwrap());
    }
}
