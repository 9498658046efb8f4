//! The X-shaped autoencoder: a convolutional image branch and a dense
//! affordance branch merge into one tanh embedding, which two decoders
//! expand back into the centre tile and its affordance probabilities.
//!
//! Models are stored as a `TCWT` tensor file plus a JSON sidecar at
//! `<path>.json` holding the configuration, tag order and label weights.

mod config;
mod model;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use config::AutoencoderConfig;
pub use model::{Autoencoder, Batch, LossBreakdown, Reconstruction};
pub use train::{evaluate_samples, split_by_game, train, EarlyStopping, TrainConfig, TrainReport};

use crate::affordance::Tag;
use crate::binio::{read_file, write_atomic};
use crate::error::{Error, Result};
use crate::tensor::{weights, HasParams};

/// Default affordance decision threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub config: AutoencoderConfig,
    pub tag_order: Vec<String>,
    pub label_weights: Vec<f64>,
    pub train_seed: u64,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Writes the parameters and the sidecar.
pub fn save(path: &Path, model: &Autoencoder<f32>, label_weights: &[f64], train_seed: u64) -> Result<()> {
    weights::save(path, &model.named_tensors())?;
    let sidecar = ModelSidecar {
        config: model.config().clone(),
        tag_order: Tag::order(),
        label_weights: label_weights.to_vec(),
        train_seed,
    };
    write_atomic(&sidecar_path(path), &serde_json::to_vec_pretty(&sidecar)?)
}

pub fn load(path: &Path) -> Result<(Autoencoder<f32>, ModelSidecar)> {
    let sidecar: ModelSidecar = serde_json::from_slice(&read_file(&sidecar_path(path))?)?;
    if sidecar.tag_order != Tag::order() {
        return Err(Error::Format(format!("unsupported tag order {:?}", sidecar.tag_order)));
    }
    let mut model = Autoencoder::new(&sidecar.config)?;
    model.load_named(&weights::load(path)?)?;
    Ok((model, sidecar))
}
