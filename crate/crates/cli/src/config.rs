use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tilembed::levelgen::{GenTrainConfig, GenerationConfig, GeneratorConfig, Traversal};
use tilembed::metrics::{AlphaParams, LinearityNorm};
use tilembed::nnindex::ForestConfig;
use tilembed::xae::{AutoencoderConfig, TrainConfig, DEFAULT_THRESHOLD};
use tilembed::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub root: PathBuf,
    /// Games to load; empty means every game under `root`.
    pub games: Vec<String>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            root: "corpus".into(),
            games: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub mode: Traversal,
    /// Row mode width when no seed level is given.
    pub width: usize,
    pub height: usize,
    pub noise: f64,
    /// Levels to generate per run.
    pub count: usize,
    /// `game/level` whose top rows (row mode) or left half (symmetric mode)
    /// seeds every level. Row mode without one starts from zeros; symmetric
    /// mode without one cycles through the embedded corpus levels.
    pub seed_level: Option<String>,
}

impl Default for GenerateSection {
    fn default() -> Self {
        let g = GenerationConfig::default();
        GenerateSection {
            mode: g.mode,
            width: g.width,
            height: g.height,
            noise: g.noise,
            count: 10,
            seed_level: None,
        }
    }
}

impl GenerateSection {
    /// The generation settings for the `i`-th level of a run.
    pub fn config(&self, seed: u64, i: usize) -> GenerationConfig {
        GenerationConfig {
            mode: self.mode,
            width: self.width,
            height: self.height,
            noise: self.noise,
            seed: seed.wrapping_add(i as u64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub threshold: f64,
    pub alphas: Vec<AlphaParams>,
    pub linearity: LinearityNorm,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            threshold: DEFAULT_THRESHOLD,
            alphas: AlphaParams::STANDARD.to_vec(),
            linearity: LinearityNorm::default(),
        }
    }
}

/// Everything a pipeline run reads. Every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Applied to every stage's own seed.
    pub seed: u64,
    pub out: PathBuf,
    /// Recorded only; every numeric path runs on one thread.
    pub threads: usize,
    pub corpus: CorpusConfig,
    pub autoencoder: AutoencoderConfig,
    pub training: TrainConfig,
    pub index: ForestConfig,
    pub generator: GeneratorConfig,
    pub generator_training: GenTrainConfig,
    pub generate: GenerateSection,
    pub metrics: MetricsSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            out: "out".into(),
            threads: 1,
            corpus: CorpusConfig::default(),
            autoencoder: AutoencoderConfig::default(),
            training: TrainConfig::default(),
            index: ForestConfig::default(),
            generator: GeneratorConfig::default(),
            generator_training: GenTrainConfig::default(),
            generate: GenerateSection::default(),
            metrics: MetricsSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().replace('\n', " ")))
    }

    /// Pushes the global seed into every stage and the generator width into
    /// the embedding dimension it must match.
    pub fn resolve(mut self) -> Result<Self> {
        if self.threads == 0 {
            return Err(Error::Config("threads must be ≥ 1".into()));
        }
        let s = self.seed;
        self.autoencoder.seed = s;
        self.training.seed = s;
        self.index.seed = s;
        self.generator.seed = s;
        self.generator_training.seed = s;
        self.generator.embedding_dim = self.autoencoder.embedding_dim;
        self.generator.traversal = self.generate.mode;
        self.autoencoder.validate()?;
        self.training.validate()?;
        self.generator.validate()?;
        if !(0.0..=1.0).contains(&self.metrics.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1]", self.metrics.threshold)));
        }
        for a in &self.metrics.alphas {
            a.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(self)
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
    }
}
