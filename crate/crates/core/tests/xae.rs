use tilembed::corpus::{build_dataset, ContextSample, Dataset};
use tilembed::synth::{toy_game, Palette};
use tilembed::tensor::gradcheck::{check_model_params, GradCheckConfig};
use tilembed::tensor::{mse_loss, weighted_bce_loss, HasParams, Mode, Tensor};
use tilembed::xae::{self, train, Autoencoder, AutoencoderConfig, Batch, LossBreakdown, TrainConfig};
use tilembed::{AffordanceVector, Error, TAG_COUNT};

fn toy_dataset(n: usize) -> Dataset {
    let ds = build_dataset(&[toy_game("a", Palette::default(), 2, 16, 8, 1).unwrap()]).unwrap();
    let idx: Vec<usize> = (0..n.min(ds.len())).collect();
    ds.subset(&idx).unwrap()
}

fn tiny_config() -> AutoencoderConfig {
    AutoencoderConfig {
        conv_filters: vec![2, 2, 2],
        affordance_widths: vec![3, 2],
        embedding_dim: 4,
        decoder_seed_channels: 2,
        decoder_filters: vec![2, 2],
        decoder_affordance_widths: vec![3],
        seed: 3,
        ..Default::default()
    }
}

fn batch<T: tilembed::tensor::Real>(ds: &Dataset, n: usize) -> Batch<T> {
    let s: Vec<&ContextSample> = ds.samples.iter().take(n).collect();
    Batch::from_samples(&s, &[]).unwrap()
}

#[test]
fn build_is_deterministic_in_seed() {
    let cfg = AutoencoderConfig { seed: 7, ..Default::default() };
    let a = Autoencoder::<f32>::new(&cfg).unwrap();
    let b = Autoencoder::<f32>::new(&cfg).unwrap();
    assert_eq!(a.named_tensors(), b.named_tensors());
    let c = Autoencoder::<f32>::new(&AutoencoderConfig { seed: 8, ..cfg }).unwrap();
    assert_ne!(a.flat_params(), c.flat_params());
    assert!(a.param_count() > 200_000);
}

#[test]
fn unbalanced_loss_weights_are_rejected() {
    let cfg = AutoencoderConfig {
        image_loss_weight: 0.5,
        affordance_loss_weight: 0.4,
        ..Default::default()
    };
    assert!(matches!(Autoencoder::<f32>::new(&cfg), Err(Error::Config(_))));
}

#[test]
fn forward_shapes_and_ranges() {
    let ds = toy_dataset(4);
    let ae = Autoencoder::<f32>::new(&AutoencoderConfig::default()).unwrap();
    let b = batch::<f32>(&ds, 4);
    let emb = ae.encode(&b.contexts, &b.affordance_inputs).unwrap();
    assert_eq!(emb.shape(), &[4, 256]);
    assert!(emb.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    let (tile, probs) = ae.decode(&emb).unwrap();
    assert_eq!(tile.shape(), &[4, 16, 16, 3]);
    assert!(tile.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(probs.data().iter().all(|&p| p > 0.0 && p < 1.0));

    let (tile, probs) = ae.decode(&Tensor::zeros(&[1, 256])).unwrap();
    assert!(tile.all_finite() && probs.all_finite());

    let bad = Tensor::<f32>::zeros(&[1, 40, 48, 3]);
    assert!(matches!(ae.encode(&bad, &Tensor::zeros(&[1, TAG_COUNT])), Err(Error::Geometry(_))));
}

#[test]
fn batch_encode_matches_single_encodes() {
    let ds = toy_dataset(6);
    let mut ae = Autoencoder::<f32>::new(&AutoencoderConfig::default()).unwrap();
    // Move the running statistics away from their initial values first.
    ae.train_step(&batch(&ds, 6), &ds.label_weights).unwrap();
    let b = batch::<f32>(&ds, 6);
    let all = ae.encode(&b.contexts, &b.affordance_inputs).unwrap();
    for i in 0..6 {
        let one = ae
            .encode(&b.contexts.slice_batch(i, i + 1).unwrap(), &b.affordance_inputs.slice_batch(i, i + 1).unwrap())
            .unwrap();
        for (a, b) in one.data().iter().zip(&all.data()[i * 256..(i + 1) * 256]) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn loss_is_the_weighted_sum() {
    let cfg = AutoencoderConfig::default();
    let l = LossBreakdown::combine(&cfg, 0.1, 0.5);
    assert!((l.total - 0.18).abs() < 1e-15);

    let ds = toy_dataset(4);
    let ae = Autoencoder::<f32>::new(&cfg).unwrap();
    let b = batch::<f32>(&ds, 4);
    let l = ae.evaluate(&b, &ds.label_weights).unwrap();
    let emb = ae.encode(&b.contexts, &b.affordance_inputs).unwrap();
    let (tile, probs) = ae.decode(&emb).unwrap();
    let img = mse_loss(&tile, &b.tiles).unwrap().value;
    let aff = weighted_bce_loss(&probs, &b.affordance_targets, &ds.label_weights).unwrap().value;
    assert_eq!(l.image, img);
    assert_eq!(l.affordance, aff);
    assert_eq!(l.total, 0.8 * img + 0.2 * aff);
}

fn model_loss(ae: &mut Autoencoder<f64>, b: &Batch<f64>, w: &[f64]) -> f64 {
    let out = ae.forward(&b.contexts, &b.affordance_inputs, Mode::Train).unwrap();
    let img = mse_loss(&out.tile, &b.tiles).unwrap().value;
    let aff = weighted_bce_loss(&out.probs, &b.affordance_targets, w).unwrap().value;
    LossBreakdown::combine(ae.config(), img, aff).total
}

#[test]
fn full_model_gradient_tiny() {
    let ds = toy_dataset(8);
    for seed in 0..3 {
        let mut ae = Autoencoder::<f64>::new(&AutoencoderConfig { seed, ..tiny_config() }).unwrap();
        let b = batch::<f64>(&ds, 2 + seed as usize);
        ae.train_step(&b, &ds.label_weights).unwrap();
        let analytic = ae.flat_grads();
        let w = ds.label_weights;
        let report = check_model_params(&mut ae, &analytic, GradCheckConfig::default(), |m| model_loss(m, &b, &w));
        assert!(report.passed, "seed {seed}: {report:?}");
        assert_eq!(report.checked, analytic.len());
    }
}

#[test]
fn full_model_gradient_default_geometry_sampled() {
    let ds = toy_dataset(2);
    let mut ae = Autoencoder::<f32>::new(&AutoencoderConfig::default()).unwrap().cast::<f64>();
    let b = batch::<f64>(&ds, 2);
    ae.train_step(&b, &ds.label_weights).unwrap();
    let analytic = ae.flat_grads();
    let w = ds.label_weights;
    let cfg = GradCheckConfig {
        max_entries: Some(150),
        ..Default::default()
    };
    let report = check_model_params(&mut ae, &analytic, cfg, |m| model_loss(m, &b, &w));
    assert!(report.passed, "{report:?}");
}

#[test]
fn overfits_ten_samples() {
    // 13 samples leave 10 for training after the 20% validation split.
    let ds = toy_dataset(13);
    let ae = Autoencoder::<f32>::new(&AutoencoderConfig::default()).unwrap();
    let cfg = TrainConfig {
        batch_size: 5,
        max_epochs: 300,
        patience: 1000,
        restore_best: false,
        ..Default::default()
    };
    let (ae, report) = train(ae, &ds, &cfg).unwrap();
    assert_eq!(report.train_indices.len(), 10);
    let train: Vec<&ContextSample> = report.train_indices.iter().map(|&i| &ds.samples[i]).collect();
    let b = Batch::<f32>::from_samples(&train, &[]).unwrap();
    let (tile, probs) = ae.decode(&ae.encode(&b.contexts, &b.affordance_inputs).unwrap()).unwrap();
    let mse = mse_loss(&tile, &b.tiles).unwrap().value;
    assert!(mse < 0.01, "reconstruction mse {mse}");
    for (s, p) in train.iter().zip(probs.data().chunks(TAG_COUNT)) {
        assert_eq!(AffordanceVector::from_probs(p, 0.5), s.center_affordance);
    }

    // The affordance input is part of the code.
    let zeros = Tensor::zeros(&[10, TAG_COUNT]);
    let ez = ae.encode(&b.contexts, &zeros).unwrap();
    let et = ae.encode(&b.contexts, &b.affordance_inputs).unwrap();
    let dist: f32 = ez.data().iter().zip(et.data()).map(|(a, b)| (a - b).abs()).sum();
    assert!(dist > 0.0);

    let contexts: Vec<&[f32]> = train.iter().map(|s| s.pixels.as_slice()).collect();
    let predicted = ae.predict_affordances(&contexts, 0.5).unwrap();
    let correct = predicted.iter().zip(&train).filter(|(p, s)| p.0 == s.center_affordance).count();
    assert!(correct as f64 >= 0.95 * train.len() as f64, "{correct}/10");
}

#[test]
fn fifty_samples_train_loss_drops_tenfold() {
    let ds = toy_dataset(50);
    let ae = Autoencoder::<f32>::new(&AutoencoderConfig::default()).unwrap();
    let cfg = TrainConfig {
        batch_size: 8,
        max_epochs: 200,
        patience: 1000,
        ..Default::default()
    };
    let (_, report) = train(ae, &ds, &cfg).unwrap();
    assert_eq!(report.train.len(), 200);
    let first = report.train[0].total;
    let last = report.train.last().unwrap().total;
    assert!(last < 0.1 * first, "{first} -> {last}");
    let best = report.best_epoch - 1;
    assert!(report.validation.iter().all(|v| v.total >= report.validation[best].total));
}

#[test]
fn training_is_deterministic() {
    let ds = toy_dataset(20);
    let cfg = TrainConfig {
        batch_size: 4,
        max_epochs: 3,
        affordance_dropout: 0.3,
        ..Default::default()
    };
    let run = || train(Autoencoder::<f32>::new(&AutoencoderConfig::default()).unwrap(), &ds, &cfg).unwrap();
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(ra, rb);
    assert_eq!(a.flat_params(), b.flat_params());
}

#[test]
fn too_small_datasets_are_rejected() {
    let ds = toy_dataset(2);
    let ae = Autoencoder::<f32>::new(&AutoencoderConfig::default()).unwrap();
    assert!(matches!(train(ae, &ds, &TrainConfig::default()), Err(Error::Training(_))));
}

#[test]
fn early_stopping_returns_best_checkpoint() {
    let ds = toy_dataset(30);
    let cfg = TrainConfig {
        batch_size: 4,
        max_epochs: 40,
        patience: 2,
        adam: tilembed::tensor::AdamConfig { lr: 0.05, ..Default::default() },
        ..Default::default()
    };
    let ae = Autoencoder::<f32>::new(&AutoencoderConfig::default()).unwrap();
    let (best, report) = train(ae, &ds, &cfg).unwrap();
    assert_eq!(report.stopped_epoch, report.train.len());
    assert!(report.stopped_epoch - report.best_epoch <= 2);
    let val: Vec<&ContextSample> = report.validation_indices.iter().map(|&i| &ds.samples[i]).collect();
    let l = xae::evaluate_samples(&best, &val, &ds.label_weights).unwrap();
    assert!((l.total - report.validation[report.best_epoch - 1].total).abs() < 1e-9);
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ae.tcwt");
    let ae = Autoencoder::<f32>::new(&AutoencoderConfig { seed: 5, ..Default::default() }).unwrap();
    let w = [1.0; TAG_COUNT];
    xae::save(&path, &ae, &w, 11).unwrap();
    let (back, sidecar) = xae::load(&path).unwrap();
    assert_eq!(back.named_tensors(), ae.named_tensors());
    assert_eq!(sidecar.train_seed, 11);
    assert_eq!(sidecar.config, *ae.config());

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    match xae::load(&path) {
        Err(Error::Truncated { offset, .. }) => assert!(offset > 0),
        other => panic!("expected truncation error, got {other:?}"),
    }
    let mut versioned = bytes.clone();
    versioned[4] = 9;
    std::fs::write(&path, &versioned).unwrap();
    assert!(matches!(xae::load(&path), Err(Error::Version { .. })));
}

#[test]
fn cast_preserves_outputs() {
    let ds = toy_dataset(3);
    let ae = Autoencoder::<f32>::new(&AutoencoderConfig::default()).unwrap();
    let ae64 = ae.cast::<f64>();
    let b32 = batch::<f32>(&ds, 3);
    let b64 = batch::<f64>(&ds, 3);
    let e32 = ae.encode(&b32.contexts, &b32.affordance_inputs).unwrap();
    let e64 = ae64.encode(&b64.contexts, &b64.affordance_inputs).unwrap();
    for (a, b) in e32.data().iter().zip(e64.data()) {
        assert!((*a as f64 - b).abs() < 1e-4);
    }
}
