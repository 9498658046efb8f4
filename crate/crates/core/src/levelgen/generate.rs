use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::generator::Generator;
use super::sequence::{column_major, position, row_major, EmbeddedLevel, Traversal, HISTORY_ROWS};
use crate::affordance::AffordanceVector;
use crate::binio::{write_atomic, write_png};
use crate::corpus::{ContextSample, LevelGrid};
use crate::error::{Error, Result};
use crate::nnindex::{EmbeddingStore, NnIndex};
use crate::tensor::{LstmState, Tensor};
use crate::xae::Autoencoder;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub mode: Traversal,
    /// Output width in tiles. Must match the seed level's width in row mode
    /// and be even in symmetric mode.
    pub width: usize,
    pub height: usize,
    /// Standard deviation of Gaussian noise added to every prediction
    /// before snapping. Zero is deterministic.
    pub noise: f64,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            mode: Traversal::Row,
            width: 32,
            height: 22,
            noise: 0.0,
            seed: 0,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("target width and height must be positive".into()));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Config(format!("noise must be a finite non-negative scale, got {}", self.noise)));
        }
        match self.mode {
            Traversal::Row if self.height < HISTORY_ROWS => Err(Error::Config(format!(
                "target height {} is below the {HISTORY_ROWS} seed rows",
                self.height
            ))),
            Traversal::Symmetric if self.width % 2 != 0 => Err(Error::Config(format!(
                "symmetric generation needs an even width, got {}",
                self.width
            ))),
            _ => Ok(()),
        }
    }
}

/// A generated level: store ids per cell plus the level assembled from
/// their payloads.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedLevel {
    pub width: usize,
    pub height: usize,
    /// Row-major store ids.
    pub ids: Vec<usize>,
    pub level: LevelGrid,
}

impl GeneratedLevel {
    fn assemble(name: &str, width: usize, height: usize, ids: Vec<usize>, store: &EmbeddingStore) -> Result<Self> {
        let tiles: Vec<Vec<f32>> = ids.iter().map(|&i| store.payload(i).pixels.clone()).collect();
        let affordances = ids.iter().map(|&i| store.payload(i).affordance).collect();
        let level = LevelGrid::from_tiles("generated", name, width, height, &tiles, affordances)?;
        Ok(GeneratedLevel {
            width,
            height,
            ids,
            level,
        })
    }

    pub fn id(&self, x: usize, y: usize) -> usize {
        self.ids[y * self.width + x]
    }

    /// The snapped embeddings, `H×W×D` row-major.
    pub fn embeddings(&self, store: &EmbeddingStore) -> Vec<f32> {
        self.ids.iter().flat_map(|&i| store.embedding(i).iter().copied()).collect()
    }
}

/// Steps a generator one cell at a time, snapping each prediction.
struct Roller<'a> {
    gen: &'a Generator<f32>,
    index: &'a NnIndex,
    noise: Option<Normal<f64>>,
    rng: ChaCha8Rng,
    state: LstmState<f32>,
    prev: Vec<f32>,
}

impl<'a> Roller<'a> {
    fn new(gen: &'a Generator<f32>, index: &'a NnIndex, config: &GenerationConfig) -> Result<Self> {
        let d = gen.config().embedding_dim;
        if index.store.dim() != d {
            return Err(Error::Geometry(format!(
                "index holds {}-d embeddings, generator emits {d}",
                index.store.dim()
            )));
        }
        let noise = (config.noise > 0.0)
            .then(|| Normal::new(0.0, config.noise).map_err(|e| Error::Config(e.to_string())))
            .transpose()?;
        Ok(Roller {
            gen,
            index,
            noise,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            state: gen.initial_state(1),
            prev: vec![0.0; d],
        })
    }

    /// Starts a fresh sequence.
    fn reset(&mut self) {
        self.state = self.gen.initial_state(1);
        self.prev.fill(0.0);
    }

    fn advance(&mut self, px: f32, py: f32) -> Result<Vec<f32>> {
        let mut x = self.prev.clone();
        x.extend([px, py]);
        let (state, y) = self.gen.step(&Tensor::from_vec(&[1, x.len()], x)?, &self.state)?;
        self.state = state;
        Ok(y.into_data())
    }

    /// Consumes a known cell: advances the state and feeds `embedding` on.
    fn force(&mut self, px: f32, py: f32, embedding: &[f32]) -> Result<()> {
        self.advance(px, py)?;
        self.prev.copy_from_slice(embedding);
        Ok(())
    }

    /// Predicts a cell, snaps it and feeds the snapped embedding on.
    fn predict(&mut self, px: f32, py: f32) -> Result<usize> {
        let mut y = self.advance(px, py)?;
        if let Some(noise) = &self.noise {
            for v in &mut y {
                *v += noise.sample(&mut self.rng) as f32;
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("generator produced a non-finite embedding".into()));
        }
        let id = self.index.query(&y)?;
        self.prev.copy_from_slice(self.index.store.embedding(id));
        Ok(id)
    }
}

/// Row-wise generation, three rows at a time.
///
/// The first three rows are the seed level's top rows snapped to the store,
/// or, without a seed, generated from a zero start exactly as the first
/// half of a training window. Every further block restarts the LSTM, replays
/// the previous three rows as teacher-forced history and predicts the next
/// three. The last block is cut at the target height.
pub fn generate(
    gen: &Generator<f32>,
    index: &NnIndex,
    config: &GenerationConfig,
    seed: Option<&EmbeddedLevel>,
) -> Result<GeneratedLevel> {
    config.validate()?;
    if config.mode != Traversal::Row {
        return Err(Error::Config("generate expects row mode; use generate_symmetric".into()));
    }
    let (w, h) = (config.width, config.height);
    let mut roller = Roller::new(gen, index, config)?;
    let mut ids = Vec::with_capacity(w * h);
    match seed {
        Some(level) => {
            if level.width != w || level.height < HISTORY_ROWS {
                return Err(Error::Config(format!(
                    "seed level is {}x{}, need width {w} and at least {HISTORY_ROWS} rows",
                    level.width, level.height
                )));
            }
            for (x, y) in row_major(0, w, 0, HISTORY_ROWS) {
                ids.push(index.query(level.cell(x, y))?);
            }
        }
        None => {
            for (x, y) in row_major(0, w, 0, HISTORY_ROWS) {
                ids.push(roller.predict(position(x, w), position(y, h))?);
            }
        }
    }
    let mut y0 = HISTORY_ROWS;
    while y0 < h {
        roller.reset();
        for (x, y) in row_major(0, w, y0 - HISTORY_ROWS, y0) {
            let e = index.store.embedding(ids[y * w + x]);
            roller.force(position(x, w), position(y, h), e)?;
        }
        for (x, y) in row_major(0, w, y0, (y0 + HISTORY_ROWS).min(h)) {
            ids.push(roller.predict(position(x, w), position(y, h))?);
        }
        y0 += HISTORY_ROWS;
    }
    GeneratedLevel::assemble("row", w, h, ids, &index.store)
}

/// Symmetric generation from a left half.
///
/// The left half is fed column by column as conditioning, the right half is
/// generated the same way, and the output is the mirrored right half
/// followed by the right half. Tiles are placed unflipped, so every tile
/// stays a corpus tile.
pub fn generate_symmetric(
    gen: &Generator<f32>,
    index: &NnIndex,
    config: &GenerationConfig,
    left_half: &EmbeddedLevel,
) -> Result<GeneratedLevel> {
    let config = GenerationConfig {
        mode: Traversal::Symmetric,
        ..config.clone()
    };
    config.validate()?;
    let (w, h) = (config.width, config.height);
    let half = w / 2;
    if left_half.width != half || left_half.height != h {
        return Err(Error::Config(format!(
            "left half is {}x{}, expected {half}x{h} for a {w}x{h} level",
            left_half.width, left_half.height
        )));
    }
    let mut roller = Roller::new(gen, index, &config)?;
    for (x, y) in column_major(0, half, h) {
        roller.force(position(x, w), position(y, h), left_half.cell(x, y))?;
    }
    let mut right = vec![0usize; half * h];
    for (x, y) in column_major(half, w, h) {
        right[y * half + (x - half)] = roller.predict(position(x, w), position(y, h))?;
    }
    let mut ids = Vec::with_capacity(w * h);
    for row in right.chunks(half) {
        ids.extend(row.iter().rev());
        ids.extend(row);
    }
    GeneratedLevel::assemble("symmetric", w, h, ids, &index.store)
}

/// Store of every sample's embedding (encoded with its own affordances) and
/// payload, in sample order.
pub fn build_store(ae: &Autoencoder<f32>, samples: &[ContextSample]) -> Result<EmbeddingStore> {
    let contexts: Vec<&[f32]> = samples.iter().map(|s| s.pixels.as_slice()).collect();
    let affordances: Vec<AffordanceVector> = samples.iter().map(|s| s.center_affordance).collect();
    let embeddings = ae.encode_contexts(&contexts, &affordances)?;
    EmbeddingStore::from_samples(samples, &embeddings)
}

/// Writes the level's pixels as a PNG.
pub fn render(level: &LevelGrid, path: &Path) -> Result<()> {
    write_png(path, &level.to_image())
}

/// Writes `<name>.png`, `<name>.tiles.txt` (store ids, one row per line),
/// `<name>.emb` (little-endian f32, `H×W×D`) and `<name>.aff.json` (per-cell
/// tag names, rows of cells) into `dir`.
pub fn write_outputs(dir: &Path, name: &str, generated: &GeneratedLevel, store: &EmbeddingStore) -> Result<()> {
    render(&generated.level, &dir.join(format!("{name}.png")))?;
    let tiles: String = generated
        .ids
        .chunks(generated.width)
        .map(|row| {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            cells.join(" ") + "\n"
        })
        .collect();
    write_atomic(&dir.join(format!("{name}.tiles.txt")), tiles.as_bytes())?;
    let emb: Vec<u8> = generated.embeddings(store).iter().flat_map(|v| v.to_le_bytes()).collect();
    write_atomic(&dir.join(format!("{name}.emb")), &emb)?;
    let aff: Vec<Vec<AffordanceVector>> = generated
        .level
        .affordances()
        .chunks(generated.width)
        .map(<[AffordanceVector]>::to_vec)
        .collect();
    write_atomic(&dir.join(format!("{name}.aff.json")), &serde_json::to_vec(&aff)?)
}
