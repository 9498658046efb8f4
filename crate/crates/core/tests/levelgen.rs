use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tilembed::corpus::{extract_contexts, SampleSource};
use tilembed::levelgen::*;
use tilembed::nnindex::{EmbeddingStore, ForestConfig, NnIndex, Payload};
use tilembed::synth::{level_from_rows, random_rows, Palette};
use tilembed::tensor::{grad_check, GradCheckConfig, HasParams, Tensor};
use tilembed::xae::{Autoencoder, AutoencoderConfig};
use tilembed::{AffordanceVector, Error, TAG_COUNT};

const D: usize = 8;
const KINDS: usize = 4;

/// One random embedding per tile kind.
fn book(seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..KINDS).map(|_| (0..D).map(|_| rng.random_range(-0.8..0.8)).collect()).collect()
}

fn kind_payload(k: usize) -> Payload {
    Payload {
        pixels: vec![k as f32 / KINDS as f32; 768],
        affordance: AffordanceVector::from_bits(1 << k).unwrap(),
        source: SampleSource {
            game_id: "pattern".into(),
            level_id: "book".into(),
            x: k,
            y: 0,
        },
    }
}

fn book_index(book: &[Vec<f32>]) -> NnIndex {
    let mut store = EmbeddingStore::new(D);
    for (k, e) in book.iter().enumerate() {
        store.push(e, kind_payload(k)).unwrap();
    }
    NnIndex::build(store, ForestConfig::default()).unwrap()
}

fn pattern_kind(x: usize, y: usize, phase: usize) -> usize {
    (x + 2 * y + phase) % KINDS
}

fn lattice(book: &[Vec<f32>], w: usize, h: usize, kind: impl Fn(usize, usize) -> usize) -> EmbeddedLevel {
    let cells = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .flat_map(|(x, y)| book[kind(x, y)].clone())
        .collect();
    EmbeddedLevel {
        game_id: "pattern".into(),
        level_id: format!("{w}x{h}"),
        width: w,
        height: h,
        dim: D,
        cells,
    }
}

fn small_gen(seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        hidden: 48,
        embedding_dim: D,
        seed,
        ..Default::default()
    }
}

fn quick_train(epochs: usize) -> GenTrainConfig {
    GenTrainConfig {
        batch_size: 4,
        max_epochs: epochs,
        patience: epochs,
        adam: tilembed::tensor::AdamConfig {
            lr: 0.01,
            ..Default::default()
        },
        ..Default::default()
    }
}

/// Four phases of the stripe pattern, 8 wide and 12 tall, trained in row
/// mode. Shared by the generation tests.
fn trained_pattern_model() -> (Vec<Vec<f32>>, Generator<f32>, NnIndex) {
    let b = book(3);
    let levels: Vec<_> = (0..KINDS).map(|p| lattice(&b, 8, 12, |x, y| pattern_kind(x, y, p))).collect();
    let seqs = make_sequences(&levels);
    let (model, _) = train_generator(&seqs, &small_gen(1), &quick_train(150)).unwrap();
    let index = book_index(&b);
    (b, model, index)
}

fn small_ae() -> AutoencoderConfig {
    AutoencoderConfig {
        conv_filters: vec![4, 4, 4],
        affordance_widths: vec![8],
        embedding_dim: 16,
        decoder_seed_channels: 4,
        decoder_filters: vec![4, 4],
        decoder_affordance_widths: vec![8],
        ..Default::default()
    }
}

#[test]
fn full_size_level_embeds_to_32_by_22_by_256() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let rows = random_rows(32, 22, &mut rng);
    let level = level_from_rows("g", "l", &rows, Palette::default(), true).unwrap();
    assert_eq!((level.pixel_width(), level.pixel_height()), (512, 352));
    let ae = Autoencoder::<f32>::new(&AutoencoderConfig::default()).unwrap();
    let e = embed_level(&ae, &level).unwrap();
    assert_eq!((e.width, e.height, e.dim), (32, 22, 256));
    assert_eq!(e.cells.len(), 32 * 22 * 256);
    assert!(e.cells.iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn unannotated_levels_embed_with_zero_affordances() {
    let ae = Autoencoder::<f32>::new(&small_ae()).unwrap();
    let rows = ["-o-", "XEX"];
    let plain = level_from_rows("g", "l", &rows, Palette::default(), false).unwrap();
    let e = embed_level(&ae, &plain).unwrap();
    let samples = extract_contexts(&plain);
    let ctx: Vec<&[f32]> = samples.iter().map(|s| s.pixels.as_slice()).collect();
    let zeros = vec![AffordanceVector::EMPTY; ctx.len()];
    assert_eq!(e.cells, ae.encode_contexts(&ctx, &zeros).unwrap().concat());

    let annotated = level_from_rows("g", "l", &rows, Palette::default(), true).unwrap();
    assert_ne!(embed_level(&ae, &annotated).unwrap().cells, e.cells);

    let one = level_from_rows("g", "one", &["o"], Palette::default(), true).unwrap();
    let e1 = embed_level(&ae, &one).unwrap();
    let s = &extract_contexts(&one)[0];
    assert_eq!((e1.width, e1.height), (1, 1));
    assert_eq!(e1.cells, ae.encode_contexts(&[&s.pixels], &[s.center_affordance]).unwrap()[0]);
}

#[test]
fn row_windows_cover_six_rows_at_stride_three() {
    let b = book(0);
    let count = |h| make_sequences(&[lattice(&b, 5, h, |x, y| (x + y) % KINDS)]).len();
    assert_eq!(count(6), 1);
    assert_eq!(count(12), 3);
    assert_eq!(count(13), 3);
    assert_eq!(count(15), 4);
    assert_eq!(count(5), 0);

    let wide = make_sequences(&[lattice(&b, 32, 6, |_, _| 0)]);
    assert_eq!(wide[0].steps, 192);
    assert_eq!(HISTORY_ROWS * 32, 96);
}

#[test]
fn window_inputs_are_previous_cell_and_position() {
    let b = book(0);
    let level = lattice(&b, 4, 9, |x, y| (x + 3 * y) % KINDS);
    let seqs = make_sequences(std::slice::from_ref(&level));
    assert_eq!(seqs.len(), 2);
    let s = &seqs[1];
    let w = D + 2;
    for t in 0..s.steps {
        let (x, y) = (t % 4, 3 + t / 4);
        let input = &s.inputs[t * w..(t + 1) * w];
        assert_eq!(&s.targets[t * D..(t + 1) * D], level.cell(x, y));
        if t == 0 {
            assert!(input[..D].iter().all(|&v| v == 0.0));
        } else {
            let (px, py) = ((t - 1) % 4, 3 + (t - 1) / 4);
            assert_eq!(&input[..D], level.cell(px, py));
        }
        assert_eq!(input[D], x as f32 / 4.0);
        assert_eq!(input[D + 1], y as f32 / 9.0);
        assert!((0.0..=1.0).contains(&input[D]) && (0.0..=1.0).contains(&input[D + 1]));
    }
}

#[test]
fn column_sequences_traverse_whole_levels() {
    let b = book(0);
    let level = lattice(&b, 4, 3, |x, y| (x + y) % KINDS);
    let seqs = make_column_sequences(&[level.clone()]);
    assert_eq!(seqs.len(), 1);
    assert_eq!(seqs[0].steps, 12);
    for t in 0..12 {
        let (x, y) = (t / 3, t % 3);
        assert_eq!(&seqs[0].targets[t * D..(t + 1) * D], level.cell(x, y));
    }
    assert_eq!(sequences_for(Traversal::Symmetric, &[level.clone()]), seqs);
    assert!(sequences_for(Traversal::Row, &[level]).is_empty());
}

#[test]
fn positional_inputs_are_required() {
    let cfg = GeneratorConfig {
        positional: false,
        ..small_gen(0)
    };
    assert!(matches!(Generator::<f32>::new(&cfg), Err(Error::Config(_))));
    assert!(matches!(
        train_generator(&[], &small_gen(0), &GenTrainConfig::default()),
        Err(Error::Training(_))
    ));
}

#[test]
fn composed_generator_gradients_match_finite_differences() {
    let cfg = GeneratorConfig {
        hidden: 5,
        embedding_dim: 3,
        seed: 7,
        ..Default::default()
    };
    let mut model = Generator::<f64>::new(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::from_vec(&[2, 4, 5], (0..40).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let y = Tensor::from_vec(&[2, 4, 3], (0..24).map(|_| rng.random_range(-0.9..0.9)).collect()).unwrap();
    model.train_step(&x, &y).unwrap();
    let params = model.flat_params();
    let grads = model.flat_grads();
    let mut probe = model.clone();
    let report = grad_check(
        &params,
        &grads,
        |p| {
            probe.set_flat_params(p);
            let out = probe.predict(&x).unwrap();
            out.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 24.0
        },
        GradCheckConfig::default(),
    );
    assert!(report.passed, "{report:?}");
}

#[test]
fn constant_row_level_is_learned() {
    let b = book(1);
    let level = lattice(&b, 6, 9, |x, _| x % KINDS);
    let seqs = make_sequences(&[level]);
    let (model, report) = train_generator(&seqs, &small_gen(0), &quick_train(200)).unwrap();
    let all: Vec<usize> = (0..seqs.len()).collect();
    let mse = sequence_mse(&model, &seqs, &all).unwrap();
    assert!(mse < 1e-3, "mse {mse}, curve {:?}", report.validation);
    // Two windows: too few to hold one out.
    assert!(report.validation_windows.is_empty());
}

#[test]
fn training_is_deterministic() {
    let b = book(2);
    let levels: Vec<_> = (0..3).map(|p| lattice(&b, 5, 9, |x, y| pattern_kind(x, y, p))).collect();
    let seqs = make_sequences(&levels);
    let run = || train_generator(&seqs, &small_gen(4), &quick_train(5)).unwrap();
    let (m1, r1) = run();
    let (m2, r2) = run();
    assert_eq!(r1, r2);
    assert_eq!(m1.flat_params(), m2.flat_params());
    let (_, r3) = train_generator(&seqs, &small_gen(5), &quick_train(5)).unwrap();
    assert_ne!(r1.train, r3.train);
}

#[test]
fn alternating_rows_beat_the_variance_baseline() {
    let b = book(4);
    // Two row patterns, alternating; levels differ in which comes first.
    let levels: Vec<_> = (0..10)
        .map(|i| lattice(&b, 6, 12, move |x, y| if (y + i) % 2 == 0 { x % 2 } else { 2 + x % 2 }))
        .collect();
    let seqs = make_sequences(&levels);
    let (model, report) = train_generator(&seqs, &small_gen(2), &quick_train(100)).unwrap();
    assert!(!report.validation_windows.is_empty());
    let held = &report.validation_windows;
    let targets: Vec<f64> = held.iter().flat_map(|&i| seqs[i].targets.iter().map(|&v| v as f64)).collect();
    let n = targets.len() as f64;
    let mean_per_dim: Vec<f64> = (0..D)
        .map(|k| targets.iter().skip(k).step_by(D).sum::<f64>() / (n / D as f64))
        .collect();
    let variance = targets.iter().enumerate().map(|(i, v)| (v - mean_per_dim[i % D]).powi(2)).sum::<f64>() / n;
    let mse = sequence_mse(&model, &seqs, held).unwrap();
    assert!(mse < variance, "held-out mse {mse} vs variance {variance}");
}

#[test]
fn predictions_depend_on_position() {
    let (_, model, _) = trained_pattern_model();
    let b = book(3);
    let seq = &make_sequences(&[lattice(&b, 8, 6, |x, y| pattern_kind(x, y, 0))])[0];
    let x = Tensor::from_vec(&[1, seq.steps, D + 2], seq.inputs.clone()).unwrap();
    let base = model.predict(&x).unwrap();
    // Reverse the positional scalars across time, keep the embeddings.
    let mut permuted = seq.inputs.clone();
    for t in 0..seq.steps {
        let src = (seq.steps - 1 - t) * (D + 2);
        permuted[t * (D + 2) + D] = seq.inputs[src + D];
        permuted[t * (D + 2) + D + 1] = seq.inputs[src + D + 1];
    }
    let moved = model.predict(&Tensor::from_vec(&[1, seq.steps, D + 2], permuted).unwrap()).unwrap();
    let diff: f32 = base.data().iter().zip(moved.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
    assert!(diff > 1e-3, "max change {diff}");
}

#[test]
fn row_generation_continues_the_pattern() {
    let (b, model, index) = trained_pattern_model();
    let mut matched = 0;
    let mut total = 0;
    for phase in 0..KINDS {
        let seed = lattice(&b, 8, 3, |x, y| pattern_kind(x, y, phase));
        let cfg = GenerationConfig {
            width: 8,
            height: 15,
            ..Default::default()
        };
        let out = generate(&model, &index, &cfg, Some(&seed)).unwrap();
        assert_eq!((out.width, out.height, out.ids.len()), (8, 15, 120));
        for y in HISTORY_ROWS..15 {
            for x in 0..8 {
                total += 1;
                matched += usize::from(out.id(x, y) == pattern_kind(x, y, phase));
            }
        }
    }
    let fidelity = matched as f64 / total as f64;
    assert!(fidelity >= 0.9, "fidelity {fidelity}");
}

#[test]
fn generation_is_closed_and_deterministic() {
    let (b, model, index) = trained_pattern_model();
    let cfg = GenerationConfig {
        width: 8,
        height: 10,
        ..Default::default()
    };
    let a = generate(&model, &index, &cfg, None).unwrap();
    assert_eq!(a, generate(&model, &index, &cfg, None).unwrap());
    for y in 0..10 {
        for x in 0..8 {
            let p = index.store.payload(a.id(x, y));
            assert_eq!(a.level.affordance(x, y), p.affordance);
            assert_eq!(a.level.tile_pixels(x, y), p.pixels);
        }
    }

    let noisy = GenerationConfig { noise: 0.5, ..cfg.clone() };
    let n1 = generate(&model, &index, &noisy, None).unwrap();
    assert_eq!(n1, generate(&model, &index, &noisy, None).unwrap());
    let others: Vec<_> = (1..6)
        .map(|s| generate(&model, &index, &GenerationConfig { seed: s, ..noisy.clone() }, None).unwrap())
        .collect();
    assert!(others.iter().any(|o| o.ids != n1.ids));

    let seed = lattice(&b, 8, 3, |x, y| pattern_kind(x, y, 1));
    let short = GenerationConfig { height: 2, ..cfg.clone() };
    assert!(matches!(generate(&model, &index, &short, Some(&seed)), Err(Error::Config(_))));
    let exact = GenerationConfig { height: 3, ..cfg.clone() };
    let top = generate(&model, &index, &exact, Some(&seed)).unwrap();
    assert!((0..24).all(|i| top.ids[i] == pattern_kind(i % 8, i / 8, 1)));
    let narrow = GenerationConfig { width: 6, ..cfg };
    assert!(matches!(generate(&model, &index, &narrow, Some(&seed)), Err(Error::Config(_))));
}

#[test]
fn symmetric_generation_mirrors_the_right_half() {
    let b = book(6);
    let levels: Vec<_> = (0..KINDS).map(|p| lattice(&b, 8, 6, |x, y| pattern_kind(x, y, p))).collect();
    let seqs = make_column_sequences(&levels);
    let gen_cfg = GeneratorConfig {
        traversal: Traversal::Symmetric,
        ..small_gen(3)
    };
    let (model, _) = train_generator(&seqs, &gen_cfg, &quick_train(40)).unwrap();
    let index = book_index(&b);
    let cfg = GenerationConfig {
        mode: Traversal::Symmetric,
        width: 8,
        height: 6,
        ..Default::default()
    };
    let left = levels[2].columns(0, 4).unwrap();
    let out = generate_symmetric(&model, &index, &cfg, &left).unwrap();
    assert_eq!((out.width, out.height), (8, 6));
    for y in 0..6 {
        for x in 0..4 {
            assert_eq!(out.id(x, y), out.id(7 - x, y));
            assert_eq!(out.level.tile_pixels(x, y), out.level.tile_pixels(7 - x, y));
        }
        for x in 0..8 {
            assert!(out.id(x, y) < index.store.len());
            assert_eq!(out.level.tile_pixels(x, y), index.store.payload(out.id(x, y)).pixels);
        }
    }
    let odd = GenerationConfig { width: 7, ..cfg.clone() };
    assert!(matches!(generate_symmetric(&model, &index, &odd, &left), Err(Error::Config(_))));
    let tall = GenerationConfig { height: 7, ..cfg };
    assert!(matches!(generate_symmetric(&model, &index, &tall, &left), Err(Error::Config(_))));
}

#[test]
fn render_pastes_payload_tiles() {
    let b = book(0);
    let index = book_index(&b);
    let cfg = GenerationConfig {
        width: 2,
        height: 3,
        ..Default::default()
    };
    let model = Generator::<f32>::new(&small_gen(0)).unwrap();
    let tall = lattice(&b, 2, 3, |x, y| (x + 2 * y) % KINDS);
    let out = generate(&model, &index, &cfg, Some(&tall)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("l.png");
    render(&out.level, &path).unwrap();
    let img = image::open(&path).unwrap().to_rgb8();
    assert_eq!(img.dimensions(), (32, 48));
    for i in 0..6 {
        let (x, y) = (i % 2, i / 2);
        let expect = (255.0 * index.store.payload(out.id(x, y)).pixels[0]).round() as u8;
        for py in 0..16 {
            for px in 0..16 {
                assert_eq!(img.get_pixel((16 * x + px) as u32, (16 * y + py) as u32).0, [expect; 3]);
            }
        }
    }
}

#[test]
fn self_snapping_reproduces_the_source_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows = random_rows(10, 7, &mut rng);
    let level = level_from_rows("g", "l", &rows, Palette::default(), true).unwrap();
    let ae = Autoencoder::<f32>::new(&small_ae()).unwrap();
    let store = build_store(&ae, &extract_contexts(&level)).unwrap();
    let index = NnIndex::build(store, ForestConfig::default()).unwrap();
    let emb = embed_level(&ae, &level).unwrap();
    let cfg = GenerationConfig {
        width: 10,
        height: 3,
        ..Default::default()
    };
    let gen = Generator::<f32>::new(&GeneratorConfig {
        embedding_dim: 16,
        ..small_gen(0)
    })
    .unwrap();
    let top = generate(&gen, &index, &cfg, Some(&emb)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("self.png");
    render(&top.level, &path).unwrap();
    let got = image::open(&path).unwrap().to_rgb8();
    let want = level.to_image();
    assert_eq!(got.as_raw()[..], want.as_raw()[..got.as_raw().len()]);
}

#[test]
fn equal_affordances_keep_distinct_pixels() {
    let ae = Autoencoder::<f32>::new(&small_ae()).unwrap();
    let a = level_from_rows("a", "l", &["o"], Palette::default(), true).unwrap();
    let b = level_from_rows("b", "l", &["o"], Palette::shifted(40), true).unwrap();
    let mut samples = extract_contexts(&a);
    samples.extend(extract_contexts(&b));
    let store = build_store(&ae, &samples).unwrap();
    assert_eq!(store.payload(0).affordance, store.payload(1).affordance);
    assert_ne!(store.payload(0).pixels, store.payload(1).pixels);
    let index = NnIndex::build(store, ForestConfig::default()).unwrap();
    let gen = Generator::<f32>::new(&GeneratorConfig {
        embedding_dim: 16,
        ..small_gen(0)
    })
    .unwrap();
    let embed = |l| embed_level(&ae, l).unwrap();
    let cfg = GenerationConfig {
        width: 1,
        height: 3,
        ..Default::default()
    };
    // One-row seeds padded to the three seed rows.
    let pad = |e: EmbeddedLevel| EmbeddedLevel {
        height: 3,
        cells: e.cells.repeat(3),
        ..e
    };
    let ga = generate(&gen, &index, &cfg, Some(&pad(embed(&a)))).unwrap();
    let gb = generate(&gen, &index, &cfg, Some(&pad(embed(&b)))).unwrap();
    assert_eq!(ga.level.affordances(), gb.level.affordances());
    assert_ne!(ga.level.to_image(), gb.level.to_image());
}

#[test]
fn outputs_are_written_per_level() {
    let (_, model, index) = trained_pattern_model();
    let cfg = GenerationConfig {
        width: 8,
        height: 6,
        ..Default::default()
    };
    let out = generate(&model, &index, &cfg, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_outputs(dir.path(), "lvl0", &out, &index.store).unwrap();

    let tiles = std::fs::read_to_string(dir.path().join("lvl0.tiles.txt")).unwrap();
    let ids: Vec<usize> = tiles.split_whitespace().map(|t| t.parse().unwrap()).collect();
    assert_eq!(tiles.lines().count(), 6);
    assert_eq!(ids, out.ids);

    let emb = std::fs::read(dir.path().join("lvl0.emb")).unwrap();
    assert_eq!(emb.len(), 6 * 8 * D * 4);
    let first = f32::from_le_bytes(emb[..4].try_into().unwrap());
    assert_eq!(first, index.store.embedding(out.ids[0])[0]);

    let aff: Vec<Vec<Vec<String>>> =
        serde_json::from_slice(&std::fs::read(dir.path().join("lvl0.aff.json")).unwrap()).unwrap();
    assert_eq!(aff.len(), 6);
    assert_eq!(aff[0].len(), 8);
    assert_eq!(aff[0][0], out.level.affordance(0, 0).names());
    assert!(aff.iter().flatten().all(|c| c.len() <= TAG_COUNT));
    assert!(dir.path().join("lvl0.png").exists());
}

#[test]
fn generator_round_trips_through_disk() {
    let (_, model, _) = trained_pattern_model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gen.tcwt");
    save_generator(&path, &model).unwrap();
    let back = load_generator(&path).unwrap();
    assert_eq!(back.config(), model.config());
    assert_eq!(back.flat_params(), model.flat_params());
    std::fs::write(&path, b"nope").unwrap();
    assert!(load_generator(&path).is_err());
}
