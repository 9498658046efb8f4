use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::level::LevelGrid;
use crate::affordance::AffordanceVector;
use crate::{CHANNELS, CONTEXT_PX, TILE_PX};

/// Character recorded for neighbours that fall outside the level.
pub const OUT_OF_BOUNDS: char = '\u{0}';

/// Where a sample came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleSource {
    pub game_id: String,
    pub level_id: String,
    pub x: usize,
    pub y: usize,
}

/// A 48×48×3 pixel neighbourhood and the centre tile's affordances.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSample {
    pub pixels: Vec<f32>,
    pub center_affordance: AffordanceVector,
    /// Equal for two samples iff they are duplicates: same game and same
    /// 3×3 character neighbourhood (annotated) or same quantized pixels
    /// (unannotated).
    pub dedup_key: Vec<u8>,
    pub source: SampleSource,
}

impl ContextSample {
    /// The 16×16×3 centre tile, the autoencoder's image target.
    pub fn center_tile(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(TILE_PX * TILE_PX * CHANNELS);
        for row in TILE_PX..2 * TILE_PX {
            let start = (row * CONTEXT_PX + TILE_PX) * CHANNELS;
            out.extend_from_slice(&self.pixels[start..start + TILE_PX * CHANNELS]);
        }
        out
    }
}

fn window(level: &LevelGrid, x: usize, y: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; CONTEXT_PX * CONTEXT_PX * CHANNELS];
    let (pw, ph) = (level.pixel_width() as isize, level.pixel_height() as isize);
    let x0 = (x as isize - 1) * TILE_PX as isize;
    let y0 = (y as isize - 1) * TILE_PX as isize;
    for wy in 0..CONTEXT_PX as isize {
        let py = y0 + wy;
        if py < 0 || py >= ph {
            continue;
        }
        // Clip the row to the image; everything outside stays zero.
        let lo = (-x0).clamp(0, CONTEXT_PX as isize);
        let hi = (pw - x0).clamp(0, CONTEXT_PX as isize);
        if lo >= hi {
            continue;
        }
        let src = ((py * pw + x0 + lo) as usize) * CHANNELS;
        let dst = ((wy * CONTEXT_PX as isize + lo) as usize) * CHANNELS;
        let n = (hi - lo) as usize * CHANNELS;
        out[dst..dst + n].copy_from_slice(&level.pixels()[src..src + n]);
    }
    out
}

fn dedup_key(level: &LevelGrid, x: usize, y: usize, pixels: &[f32]) -> Vec<u8> {
    let mut key = level.game_id.as_bytes().to_vec();
    key.push(0);
    if level.is_annotated() {
        key.push(b'C');
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                let c = if nx < 0 || ny < 0 || nx >= level.width() as isize || ny >= level.height() as isize {
                    OUT_OF_BOUNDS
                } else {
                    level.char_at(nx as usize, ny as usize).unwrap_or(OUT_OF_BOUNDS)
                };
                let mut buf = [0u8; 4];
                key.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            }
        }
    } else {
        key.push(b'P');
        let mut h = Sha256::new();
        let quantized: Vec<u8> = pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        h.update(&quantized);
        key.extend_from_slice(&h.finalize());
    }
    key
}

/// One context window per cell, row-major. Neighbours outside the level are
/// zero pixels.
pub fn extract_contexts(level: &LevelGrid) -> Vec<ContextSample> {
    let mut out = Vec::with_capacity(level.width() * level.height());
    for y in 0..level.height() {
        for x in 0..level.width() {
            let pixels = window(level, x, y);
            let dedup_key = dedup_key(level, x, y, &pixels);
            out.push(ContextSample {
                pixels,
                center_affordance: level.affordance(x, y),
                dedup_key,
                source: SampleSource {
                    game_id: level.game_id.clone(),
                    level_id: level.level_id.clone(),
                    x,
                    y,
                },
            });
        }
    }
    out
}

/// Keeps the first sample for each distinct dedup key, preserving order.
pub fn dedup_contexts(samples: Vec<ContextSample>) -> Vec<ContextSample> {
    let mut seen = HashSet::new();
    samples
        .into_iter()
        .filter(|s| seen.insert(s.dedup_key.clone()))
        .collect()
}
