//! Small deterministic toy corpora built from a fixed vocabulary of drawn
//! tiles. Used by the examples, the guide and the test suites.
//!
//! Every game draws the same tile shapes; a [`Palette`] offset recolours
//! them, so two games can share a visual vocabulary with disjoint colours.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::affordance::{AffordanceVector, Tag};
use crate::binio::{write_atomic, write_png};
use crate::corpus::{parse_legend, GameLevels, LevelGrid, TileLegend};
use crate::error::{Error, Result};
use crate::TILE_PX;

/// Characters of the toy vocabulary and their affordances.
pub const TOY_TILES: &[(char, &[Tag])] = &[
    ('-', &[Tag::Empty, Tag::Passable]),
    ('X', &[Tag::Solid]),
    ('B', &[Tag::Solid, Tag::Breakable]),
    ('?', &[Tag::Block, Tag::Openable, Tag::Solid]),
    ('o', &[Tag::Collectable, Tag::Passable]),
    ('E', &[Tag::Hazard, Tag::Moving]),
    ('#', &[Tag::Climbable, Tag::Passable]),
    ('^', &[Tag::Hazard]),
    ('[', &[Tag::Pipe, Tag::Solid]),
    ('W', &[Tag::Wall, Tag::Solid]),
];

/// A colour offset added (saturating) to every channel of every tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Palette {
    pub offset: i16,
}

impl Palette {
    pub fn shifted(offset: i16) -> Self {
        Palette { offset }
    }

    fn rgb(self, c: [u8; 3]) -> Rgb<u8> {
        Rgb(c.map(|v| (v as i16 + self.offset).clamp(0, 255) as u8))
    }
}

const SKY: [u8; 3] = [70, 110, 170];

/// Draws one 16×16 tile of the vocabulary at `(ox, oy)`.
fn draw_tile(img: &mut RgbImage, ox: u32, oy: u32, ch: char, pal: Palette) -> Result<()> {
    let t = TILE_PX as u32;
    for y in 0..t {
        for x in 0..t {
            let c = match ch {
                '-' => SKY,
                'X' if x == 0 || y == 0 => [90, 50, 20],
                'X' => [150, 90, 40],
                'B' if y % 8 == 0 || (x + if y < 8 { 0 } else { 8 }) % 16 == 0 => [60, 40, 40],
                'B' => [180, 80, 60],
                '?' if x == 0 || y == 0 || x == t - 1 || y == t - 1 => [120, 80, 20],
                '?' if (6..10).contains(&x) && (3..13).contains(&y) && y != 10 => [240, 240, 220],
                '?' => [220, 170, 40],
                'o' if (x as i32 - 7).pow(2) + (y as i32 - 7).pow(2) <= 25 => [250, 210, 30],
                'E' if (x as i32 - 7).abs() + (y as i32 - 9).abs() <= 6 => [200, 30, 30],
                '#' if x == 3 || x == 12 || y % 5 == 2 => [200, 160, 90],
                '^' if y >= 8 && (x % 8).abs_diff(4) <= (y - 8) / 2 => [160, 160, 170],
                '[' if x < 2 || x > 13 => [10, 90, 20],
                '[' if x == 4 => [140, 230, 140],
                '[' => [40, 170, 60],
                'W' if (x + y) % 6 < 2 => [60, 60, 100],
                'W' => [110, 110, 150],
                'o' | 'E' | '#' | '^' => SKY,
                other => return Err(Error::Legend(format!("no toy tile for {other:?}"))),
            };
            img.put_pixel(ox + x, oy + y, pal.rgb(c));
        }
    }
    Ok(())
}

/// The toy legend as JSON, in the documented legend format.
pub fn toy_legend_json() -> String {
    let tiles: serde_json::Map<String, serde_json::Value> = TOY_TILES
        .iter()
        .map(|(c, tags)| {
            let names = tags.iter().map(|t| t.name().into()).collect();
            (c.to_string(), serde_json::Value::Array(names))
        })
        .collect();
    serde_json::json!({ "tile_px": TILE_PX, "tiles": tiles }).to_string()
}

pub fn toy_legend(game_id: &str) -> TileLegend {
    parse_legend(&toy_legend_json(), game_id).expect("toy legend is valid")
}

/// Affordances of a toy character.
pub fn toy_affordance(ch: char) -> Option<AffordanceVector> {
    TOY_TILES
        .iter()
        .find(|(c, _)| *c == ch)
        .map(|(_, tags)| AffordanceVector::from_tags(tags.iter().copied()))
}

/// Renders rows of toy characters to an image with 16-px tiles.
pub fn render_rows<S: AsRef<str>>(rows: &[S], palette: Palette) -> Result<RgbImage> {
    let h = rows.len();
    let w = rows.first().map_or(0, |r| r.as_ref().chars().count());
    if w == 0 || rows.iter().any(|r| r.as_ref().chars().count() != w) {
        return Err(Error::Geometry("toy rows must be nonempty and of equal length".into()));
    }
    let t = TILE_PX as u32;
    let mut img = RgbImage::new(w as u32 * t, h as u32 * t);
    for (y, row) in rows.iter().enumerate() {
        for (x, ch) in row.as_ref().chars().enumerate() {
            draw_tile(&mut img, x as u32 * t, y as u32 * t, ch, palette)?;
        }
    }
    Ok(img)
}

/// A level drawn from toy rows; unannotated levels drop the character grid.
pub fn level_from_rows<S: AsRef<str>>(
    game_id: &str,
    level_id: &str,
    rows: &[S],
    palette: Palette,
    annotated: bool,
) -> Result<LevelGrid> {
    let img = render_rows(rows, palette)?;
    if annotated {
        let chars: Vec<Vec<char>> = rows.iter().map(|r| r.as_ref().chars().collect()).collect();
        LevelGrid::new(game_id, level_id, &img, Some(&chars), Some(&toy_legend(game_id)))
    } else {
        LevelGrid::new(game_id, level_id, &img, None, None)
    }
}

/// A random platformer-like layout: solid ground, floating platforms with
/// coins above them, enemies and spikes on the ground, ladders and pipes.
pub fn random_rows(width: usize, height: usize, rng: &mut impl Rng) -> Vec<String> {
    let mut g = vec![vec!['-'; width]; height];
    if height >= 1 {
        g[height - 1].fill('X');
    }
    if height >= 4 {
        let mut y = height - 4;
        while y >= 1 {
            let mut x = rng.random_range(0..3);
            while x + 3 <= width {
                let len = rng.random_range(2..=5).min(width - x);
                let kind = ['X', 'B', '?', 'W'][rng.random_range(0..4)];
                for cell in &mut g[y][x..x + len] {
                    *cell = kind;
                }
                if rng.random_bool(0.6) {
                    for cell in &mut g[y - 1][x..x + len] {
                        *cell = 'o';
                    }
                }
                if rng.random_bool(0.3) && y + 1 < height - 1 {
                    let lx = x + len / 2;
                    for row in g.iter_mut().take(height - 1).skip(y + 1) {
                        if row[lx] == '-' {
                            row[lx] = '#';
                        }
                    }
                }
                x += len + rng.random_range(2..6);
            }
            if y < 4 {
                break;
            }
            y -= 3;
        }
    }
    if height >= 3 {
        for x in 0..width {
            if g[height - 2][x] != '-' {
                continue;
            }
            let r: f64 = rng.random();
            g[height - 2][x] = if r < 0.1 {
                'E'
            } else if r < 0.16 {
                '^'
            } else if r < 0.22 && height >= 4 && g[height - 3][x] == '-' {
                g[height - 3][x] = '[';
                '['
            } else {
                '-'
            };
        }
    }
    g.into_iter().map(|r| r.into_iter().collect()).collect()
}

/// Diagonal stripes over the first `kinds` vocabulary tiles: cell `(x, y)`
/// is tile `(x + 2y + phase) mod kinds`. Any three consecutive rows fix the
/// phase, so the rows below them are fully determined.
pub fn pattern_rows(width: usize, height: usize, kinds: usize, phase: usize) -> Vec<String> {
    let kinds = kinds.clamp(1, TOY_TILES.len());
    (0..height)
        .map(|y| (0..width).map(|x| TOY_TILES[(x + 2 * y + phase) % kinds].0).collect())
        .collect()
}

/// `levels` random annotated levels for one game; deterministic in `seed`.
pub fn toy_game(game_id: &str, palette: Palette, levels: usize, width: usize, height: usize, seed: u64) -> Result<GameLevels> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels = (0..levels)
        .map(|i| level_from_rows(game_id, &format!("{i}"), &random_rows(width, height, &mut rng), palette, true))
        .collect::<Result<_>>()?;
    Ok(GameLevels {
        game_id: game_id.to_string(),
        levels,
    })
}

/// Writes a game in the on-disk corpus layout: `legend.json` plus
/// `levels/<name>.png` and, for annotated games, `levels/<name>.txt`.
pub fn write_game<S: AsRef<str>>(
    root: &Path,
    game_id: &str,
    levels: &[(String, Vec<S>)],
    palette: Palette,
    annotated: bool,
) -> Result<()> {
    let dir = root.join(game_id).join("levels");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_atomic(&root.join(game_id).join("legend.json"), toy_legend_json().as_bytes())?;
    for (name, rows) in levels {
        write_png(&dir.join(format!("{name}.png")), &render_rows(rows, palette)?)?;
        if annotated {
            let text: String = rows.iter().map(|r| format!("{}\n", r.as_ref())).collect();
            write_atomic(&dir.join(format!("{name}.txt")), text.as_bytes())?;
        }
    }
    Ok(())
}
