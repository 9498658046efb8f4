use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::{extract_contexts, LevelGrid};
use crate::error::{Error, Result};
use crate::xae::Autoencoder;

/// Rows of history a row window carries, and rows it predicts.
pub const HISTORY_ROWS: usize = 3;
pub const WINDOW_ROWS: usize = 2 * HISTORY_ROWS;

/// A level as an `H×W` lattice of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedLevel {
    pub game_id: String,
    pub level_id: String,
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    /// Row-major cells, `dim` values each.
    pub cells: Vec<f32>,
}

impl EmbeddedLevel {
    pub fn cell(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.dim;
        &self.cells[i..i + self.dim]
    }

    /// Columns `[start, end)` as a new lattice.
    pub fn columns(&self, start: usize, end: usize) -> Result<EmbeddedLevel> {
        if start >= end || end > self.width {
            return Err(Error::Geometry(format!("columns {start}..{end} of a width-{} level", self.width)));
        }
        let mut cells = Vec::with_capacity((end - start) * self.height * self.dim);
        for y in 0..self.height {
            for x in start..end {
                cells.extend_from_slice(self.cell(x, y));
            }
        }
        Ok(EmbeddedLevel {
            game_id: self.game_id.clone(),
            level_id: self.level_id.clone(),
            width: end - start,
            height: self.height,
            dim: self.dim,
            cells,
        })
    }
}

/// Embeds every cell of a level in inference mode. Annotated cells use their
/// true affordances; unannotated levels carry all-zero vectors already.
pub fn embed_level(ae: &Autoencoder<f32>, level: &LevelGrid) -> Result<EmbeddedLevel> {
    let samples = extract_contexts(level);
    let contexts: Vec<&[f32]> = samples.iter().map(|s| s.pixels.as_slice()).collect();
    let affordances: Vec<_> = samples.iter().map(|s| s.center_affordance).collect();
    let cells = ae.encode_contexts(&contexts, &affordances)?.concat();
    Ok(EmbeddedLevel {
        game_id: level.game_id.clone(),
        level_id: level.level_id.clone(),
        width: level.width(),
        height: level.height(),
        dim: ae.config().embedding_dim,
        cells,
    })
}

/// Cell traversal order of a training sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Traversal {
    /// Six-row windows, row-major, advancing three rows at a time.
    Row,
    /// Whole levels, column by column from the left, top to bottom.
    Symmetric,
}

/// One teacher-forced training sequence.
///
/// Step `t` predicts cell `c_t`. Its input is the embedding of `c_{t−1}`
/// (zeros at `t = 0`) followed by `c_t`'s position `(x/W, y/H)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub steps: usize,
    pub dim: usize,
    /// `steps × (dim + 2)`
    pub inputs: Vec<f32>,
    /// `steps × dim`
    pub targets: Vec<f32>,
}

impl SequenceSample {
    pub fn input_width(&self) -> usize {
        self.dim + 2
    }
}

/// Builds a sequence over the given cells of `level`, in order.
pub(crate) fn sequence_over(level: &EmbeddedLevel, cells: &[(usize, usize)]) -> SequenceSample {
    let d = level.dim;
    let mut inputs = Vec::with_capacity(cells.len() * (d + 2));
    let mut targets = Vec::with_capacity(cells.len() * d);
    let mut prev: Option<&[f32]> = None;
    for &(x, y) in cells {
        match prev {
            Some(p) => inputs.extend_from_slice(p),
            None => inputs.extend(std::iter::repeat_n(0.0, d)),
        }
        inputs.push(position(x, level.width));
        inputs.push(position(y, level.height));
        let e = level.cell(x, y);
        targets.extend_from_slice(e);
        prev = Some(e);
    }
    SequenceSample {
        steps: cells.len(),
        dim: d,
        inputs,
        targets,
    }
}

pub(crate) fn position(i: usize, extent: usize) -> f32 {
    i as f32 / extent as f32
}

pub(crate) fn row_major(x0: usize, x1: usize, y0: usize, y1: usize) -> Vec<(usize, usize)> {
    (y0..y1).flat_map(|y| (x0..x1).map(move |x| (x, y))).collect()
}

pub(crate) fn column_major(x0: usize, x1: usize, height: usize) -> Vec<(usize, usize)> {
    (x0..x1).flat_map(|x| (0..height).map(move |y| (x, y))).collect()
}

/// Six-row windows at row offsets `0, 3, 6, …`, each of `6·W` steps.
/// Levels shorter than six rows are skipped with a warning.
pub fn make_sequences(levels: &[EmbeddedLevel]) -> Vec<SequenceSample> {
    let mut out = Vec::new();
    for level in levels {
        if level.height < WINDOW_ROWS {
            warn!(
                "skipping level {}/{}: {} rows, windows need {WINDOW_ROWS}",
                level.game_id, level.level_id, level.height
            );
            continue;
        }
        for y0 in (0..=level.height - WINDOW_ROWS).step_by(HISTORY_ROWS) {
            out.push(sequence_over(level, &row_major(0, level.width, y0, y0 + WINDOW_ROWS)));
        }
    }
    out
}

/// One whole-level column-major sequence per level.
pub fn make_column_sequences(levels: &[EmbeddedLevel]) -> Vec<SequenceSample> {
    levels
        .iter()
        .map(|l| sequence_over(l, &column_major(0, l.width, l.height)))
        .collect()
}

pub fn sequences_for(traversal: Traversal, levels: &[EmbeddedLevel]) -> Vec<SequenceSample> {
    match traversal {
        Traversal::Row => make_sequences(levels),
        Traversal::Symmetric => make_column_sequences(levels),
    }
}
