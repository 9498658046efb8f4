use std::path::Path;

use image::RgbImage;

use super::legend::TileLegend;
use crate::affordance::AffordanceVector;
use crate::error::{Error, Result};
use crate::{CHANNELS, TILE_PX};

/// A level as an `H×W` lattice of 16-px tiles.
///
/// `pixels` is the whole `(16·H)×(16·W)×3` image in row-major HWC order with
/// channels in `[0, 1]`. `chars` is present for annotated levels only; for
/// unannotated levels every affordance vector is all-zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelGrid {
    pub game_id: String,
    pub level_id: String,
    width: usize,
    height: usize,
    chars: Option<Vec<char>>,
    pixels: Vec<f32>,
    affordances: Vec<AffordanceVector>,
}

impl LevelGrid {
    /// Builds a level from a 16-px-tile image, an optional character grid
    /// (rows of equal length) and the legend used to look characters up.
    pub fn new(
        game_id: impl Into<String>,
        level_id: impl Into<String>,
        image: &RgbImage,
        chars: Option<&[Vec<char>]>,
        legend: Option<&TileLegend>,
    ) -> Result<Self> {
        let (pw, ph) = (image.width() as usize, image.height() as usize);
        if pw % TILE_PX != 0 || ph % TILE_PX != 0 || pw == 0 || ph == 0 {
            return Err(Error::Ingestion(format!(
                "image is {pw}x{ph} px, not a positive multiple of {TILE_PX}"
            )));
        }
        let (width, height) = (pw / TILE_PX, ph / TILE_PX);
        let pixels = image.as_raw().iter().map(|&b| f32::from(b) / 255.0).collect();
        let (chars, affordances) = match chars {
            None => (None, vec![AffordanceVector::EMPTY; width * height]),
            Some(rows) => {
                let gw = rows.first().map_or(0, Vec::len);
                if rows.len() != height || rows.iter().any(|r| r.len() != gw) || gw != width {
                    return Err(Error::Ingestion(format!(
                        "character grid is {}x{} tiles ({}), image is {width}x{height} tiles",
                        gw,
                        rows.len(),
                        if rows.iter().any(|r| r.len() != gw) { "ragged" } else { "rectangular" }
                    )));
                }
                let legend = legend.ok_or_else(|| Error::Legend("character grid given without a legend".into()))?;
                let flat: Vec<char> = rows.iter().flatten().copied().collect();
                let aff = flat.iter().map(|&c| legend.lookup(c)).collect::<Result<_>>()?;
                (Some(flat), aff)
            }
        };
        Ok(LevelGrid {
            game_id: game_id.into(),
            level_id: level_id.into(),
            width,
            height,
            chars,
            pixels,
            affordances,
        })
    }

    /// Assembles a level tile by tile, e.g. from snapped generator output.
    /// `tiles` holds `16·16·3` pixel values per cell in row-major cell order.
    pub fn from_tiles(
        game_id: impl Into<String>,
        level_id: impl Into<String>,
        width: usize,
        height: usize,
        tiles: &[Vec<f32>],
        affordances: Vec<AffordanceVector>,
    ) -> Result<Self> {
        let tile_len = TILE_PX * TILE_PX * CHANNELS;
        if width == 0 || height == 0 || tiles.len() != width * height || affordances.len() != width * height {
            return Err(Error::Geometry(format!(
                "{width}x{height} level needs {} tiles and affordances, got {} and {}",
                width * height,
                tiles.len(),
                affordances.len()
            )));
        }
        if let Some(bad) = tiles.iter().position(|t| t.len() != tile_len) {
            return Err(Error::Geometry(format!("tile {bad} has {} values, expected {tile_len}", tiles[bad].len())));
        }
        let mut level = LevelGrid {
            game_id: game_id.into(),
            level_id: level_id.into(),
            width,
            height,
            chars: None,
            pixels: vec![0.0; width * height * tile_len],
            affordances,
        };
        for (i, t) in tiles.iter().enumerate() {
            level.set_tile_pixels(i % width, i / width, t);
        }
        Ok(level)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_width(&self) -> usize {
        self.width * TILE_PX
    }

    pub fn pixel_height(&self) -> usize {
        self.height * TILE_PX
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn is_annotated(&self) -> bool {
        self.chars.is_some()
    }

    pub fn char_at(&self, x: usize, y: usize) -> Option<char> {
        self.chars.as_ref().map(|c| c[y * self.width + x])
    }

    pub fn affordance(&self, x: usize, y: usize) -> AffordanceVector {
        self.affordances[y * self.width + x]
    }

    pub fn affordances(&self) -> &[AffordanceVector] {
        &self.affordances
    }

    /// Pixel value at image coordinates, channel `ch`.
    pub fn pixel(&self, px: usize, py: usize, ch: usize) -> f32 {
        self.pixels[(py * self.pixel_width() + px) * CHANNELS + ch]
    }

    /// The `16×16×3` pixels of cell `(x, y)`.
    pub fn tile_pixels(&self, x: usize, y: usize) -> Vec<f32> {
        let pw = self.pixel_width();
        let mut out = Vec::with_capacity(TILE_PX * TILE_PX * CHANNELS);
        for row in 0..TILE_PX {
            let start = ((y * TILE_PX + row) * pw + x * TILE_PX) * CHANNELS;
            out.extend_from_slice(&self.pixels[start..start + TILE_PX * CHANNELS]);
        }
        out
    }

    fn set_tile_pixels(&mut self, x: usize, y: usize, tile: &[f32]) {
        let pw = self.pixel_width();
        for row in 0..TILE_PX {
            let start = ((y * TILE_PX + row) * pw + x * TILE_PX) * CHANNELS;
            self.pixels[start..start + TILE_PX * CHANNELS]
                .copy_from_slice(&tile[row * TILE_PX * CHANNELS..(row + 1) * TILE_PX * CHANNELS]);
        }
    }

    /// The level as an 8-bit RGB image (`round(255·v)` per channel).
    pub fn to_image(&self) -> RgbImage {
        let raw = self
            .pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        RgbImage::from_raw(self.pixel_width() as u32, self.pixel_height() as u32, raw).expect("buffer sized from dims")
    }
}

/// Nearest-neighbour upscale by an integer factor.
fn upscale(img: &RgbImage, factor: u32) -> RgbImage {
    if factor == 1 {
        return img.clone();
    }
    RgbImage::from_fn(img.width() * factor, img.height() * factor, |x, y| {
        *img.get_pixel(x / factor, y / factor)
    })
}

fn parse_grid(text: &str) -> Vec<Vec<char>> {
    let mut rows: Vec<Vec<char>> = text
        .lines()
        .map(|l| l.trim_end_matches('\r').chars().collect())
        .collect();
    while rows.last().is_some_and(|r| r.is_empty()) {
        rows.pop();
    }
    rows
}

/// Loads a level image (and optionally its character grid), upscaling
/// `tile_px = 8` sources to 16-px tiles.
///
/// Without a legend the image is assumed to use 16-px tiles. The game id is
/// the legend's, or `"unknown"`; the level id is the image file stem.
pub fn ingest_level(image: &Path, grid: Option<&Path>, legend: Option<&TileLegend>) -> Result<LevelGrid> {
    let tile_px = legend.map_or(TILE_PX, |l| l.tile_px);
    let img = image::open(image)
        .map_err(|source| Error::Image {
            path: image.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    if w as usize % tile_px != 0 || h as usize % tile_px != 0 {
        return Err(Error::Ingestion(format!(
            "{}: {w}x{h} px is not a multiple of the {tile_px}-px tile size ({})",
            image.display(),
            if w as usize % tile_px != 0 { "width" } else { "height" }
        )));
    }
    let img = upscale(&img, (TILE_PX / tile_px) as u32);
    let rows = grid
        .map(|p| std::fs::read_to_string(p).map_err(|e| Error::io(p, e)).map(|t| parse_grid(&t)))
        .transpose()?;
    let level_id = image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let game_id = legend.map_or_else(|| "unknown".to_string(), |l| l.game_id.clone());
    LevelGrid::new(game_id, level_id, &img, rows.as_deref(), legend)
}
