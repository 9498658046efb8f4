use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::multilabel::{mfl_baseline, AlphaParams, MetricsReport, PredictionRow};
use crate::affordance::AffordanceVector;
use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::xae::{train, Autoencoder, AutoencoderConfig, TrainConfig, DEFAULT_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossfoldConfig {
    pub autoencoder: AutoencoderConfig,
    pub training: TrainConfig,
    pub threshold: f64,
    pub alphas: Vec<AlphaParams>,
}

impl Default for CrossfoldConfig {
    fn default() -> Self {
        CrossfoldConfig {
            autoencoder: AutoencoderConfig::default(),
            training: TrainConfig::default(),
            threshold: DEFAULT_THRESHOLD,
            alphas: AlphaParams::STANDARD.to_vec(),
        }
    }
}

/// Results for one held-out game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub held_out: String,
    pub train_games: Vec<String>,
    pub model: MetricsReport,
    pub mfl: MetricsReport,
    /// The constant combination the baseline predicts.
    pub mfl_combination: AffordanceVector,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
}

/// Annotated games in the dataset, sorted by id. A game counts as annotated
/// when any of its samples carries a tag.
pub fn annotated_games(dataset: &Dataset) -> Vec<String> {
    dataset
        .indices_by_game()
        .into_iter()
        .filter_map(|(game, ids)| {
            if ids.iter().any(|&i| !dataset.samples[i].center_affordance.is_empty()) {
                Some(game)
            } else {
                warn!("game {game} has no annotations; left out of cross-fold evaluation");
                None
            }
        })
        .collect()
}

/// Trains on every annotated game but the `fold`-th and evaluates
/// zero-input affordance predictions on the held-out game, alongside the
/// most-frequent-combination baseline fitted on the training games.
pub fn crossfold(dataset: &Dataset, fold: usize, config: &CrossfoldConfig) -> Result<(FoldReport, Autoencoder<f32>)> {
    let games = annotated_games(dataset);
    if games.len() < 2 {
        return Err(Error::Config(format!(
            "cross-fold evaluation needs at least 2 annotated games, found {}",
            games.len()
        )));
    }
    let held_out = games
        .get(fold)
        .ok_or_else(|| Error::Config(format!("fold {fold} out of range for {} games", games.len())))?
        .clone();
    let by_game = dataset.indices_by_game();
    let train_games: Vec<String> = games.iter().filter(|g| **g != held_out).cloned().collect();
    let train_ids: Vec<usize> = train_games.iter().flat_map(|g| by_game[g].iter().copied()).collect();
    let test_ids = &by_game[&held_out];
    info!(
        "fold {fold}: holding out {held_out} ({} samples), training on {} samples",
        test_ids.len(),
        train_ids.len()
    );

    let train_set = dataset.subset(&train_ids)?;
    let (model, report) = train(Autoencoder::new(&config.autoencoder)?, &train_set, &config.training)?;

    let contexts: Vec<&[f32]> = test_ids.iter().map(|&i| dataset.samples[i].pixels.as_slice()).collect();
    let truth: Vec<AffordanceVector> = test_ids.iter().map(|&i| dataset.samples[i].center_affordance).collect();
    let predicted = model.predict_affordances(&contexts, config.threshold)?;
    let rows: Vec<PredictionRow> = truth.iter().zip(&predicted).map(|(&y, (p, _))| (y, *p)).collect();
    let model_report = MetricsReport::compute(&rows, &config.alphas, Some(config.threshold))?;

    let train_labels: Vec<AffordanceVector> = train_set.samples.iter().map(|s| s.center_affordance).collect();
    let (mfl_combination, mfl) = mfl_baseline(&train_labels, &truth, &config.alphas)?;
    Ok((
        FoldReport {
            fold,
            held_out,
            train_games,
            model: model_report,
            mfl,
            mfl_combination,
            stopped_epoch: report.stopped_epoch,
            best_epoch: report.best_epoch,
        },
        model,
    ))
}
