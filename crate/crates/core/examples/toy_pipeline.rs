//! Trains a small model on the synthetic tile set and writes a few
//! generated levels.
//!
//! ```text
//! cargo run --release -p tilembed --example toy_pipeline -- /tmp/toy
//! ```

use std::path::PathBuf;

use tilembed::corpus::build_dataset;
use tilembed::levelgen::{
    build_store, embed_level, generate, make_sequences, train_generator, write_outputs, GenTrainConfig,
    GenerationConfig, GeneratorConfig,
};
use tilembed::metrics::{leniency, linearity};
use tilembed::nnindex::{ForestConfig, NnIndex};
use tilembed::synth::{toy_game, Palette};
use tilembed::tensor::AdamConfig;
use tilembed::xae::{train, Autoencoder, AutoencoderConfig, TrainConfig};

fn main() -> tilembed::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "toy-out".into()));
    let game = toy_game("toy", Palette::default(), 6, 24, 12, 1)?;
    let dataset = build_dataset(std::slice::from_ref(&game))?;
    println!("{} training windows", dataset.len());

    let ae_config = AutoencoderConfig {
        embedding_dim: 32,
        ..Default::default()
    };
    let training = TrainConfig {
        max_epochs: 60,
        ..Default::default()
    };
    let (ae, report) = train(Autoencoder::new(&ae_config)?, &dataset, &training)?;
    println!("autoencoder: best epoch {} of {}", report.best_epoch, report.stopped_epoch);

    let embedded = game.levels.iter().map(|l| embed_level(&ae, l)).collect::<tilembed::Result<Vec<_>>>()?;
    let gen_config = GeneratorConfig {
        hidden: 128,
        embedding_dim: 32,
        ..Default::default()
    };
    let gen_training = GenTrainConfig {
        max_epochs: 300,
        patience: 30,
        adam: AdamConfig {
            lr: 0.003,
            ..Default::default()
        },
        ..Default::default()
    };
    let (generator, report) = train_generator(&make_sequences(&embedded), &gen_config, &gen_training)?;
    println!("generator: best epoch {} of {}", report.best_epoch, report.stopped_epoch);

    let store = build_store(&ae, &dataset.samples)?;
    let index = NnIndex::build(store, ForestConfig::default())?;
    for i in 0..3 {
        let cfg = GenerationConfig {
            width: 24,
            height: 12,
            noise: 0.05,
            seed: i,
            ..Default::default()
        };
        let level = generate(&generator, &index, &cfg, Some(&embedded[i as usize]))?;
        let name = format!("toy_{i:03}");
        write_outputs(&out, &name, &level, &index.store)?;
        println!(
            "{name}: linearity {:.4}, leniency {:.4}",
            linearity(&level.level),
            leniency(&level.level)
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}
