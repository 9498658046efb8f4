use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::affordance::{AffordanceVector, Tag};
use crate::error::{Error, Result};

/// Per-game mapping from grid characters to unified affordances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileLegend {
    pub game_id: String,
    pub tile_px: usize,
    pub char_to_affordances: BTreeMap<char, AffordanceVector>,
}

#[derive(Deserialize)]
struct RawLegend {
    tile_px: Option<usize>,
    #[serde(default)]
    game: Option<String>,
    #[serde(default)]
    tiles: BTreeMap<String, Vec<String>>,
}

impl TileLegend {
    pub fn lookup(&self, c: char) -> Result<AffordanceVector> {
        self.char_to_affordances.get(&c).copied().ok_or_else(|| {
            Error::Legend(format!("character {c:?} has no entry in the {} legend", self.game_id))
        })
    }

    /// A legend with no annotated tiles, for games without character grids.
    pub fn unannotated(game_id: impl Into<String>, tile_px: usize) -> Self {
        TileLegend {
            game_id: game_id.into(),
            tile_px,
            char_to_affordances: BTreeMap::new(),
        }
    }

    pub fn is_annotated(&self) -> bool {
        !self.char_to_affordances.is_empty()
    }
}

/// Parses the JSON legend format `{"tile_px": 16, "tiles": {"<char>": ["<tag>", ...]}}`.
/// Tag names are case-insensitive. An optional `"game"` key overrides
/// `default_game_id`.
pub fn parse_legend(json: &str, default_game_id: &str) -> Result<TileLegend> {
    let raw: RawLegend = serde_json::from_str(json).map_err(|e| Error::Format(format!("legend: {e}")))?;
    let tile_px = raw
        .tile_px
        .ok_or_else(|| Error::Format("legend is missing \"tile_px\"".into()))?;
    if tile_px == 0 || crate::TILE_PX % tile_px != 0 {
        return Err(Error::Format(format!(
            "tile_px {tile_px} must divide {}",
            crate::TILE_PX
        )));
    }
    let mut map = BTreeMap::new();
    for (key, tags) in raw.tiles {
        let mut chars = key.chars();
        let (Some(c), None) = (chars.next(), chars.next()) else {
            return Err(Error::Legend(format!("legend key {key:?} is not a single character")));
        };
        let mut v = AffordanceVector::EMPTY;
        for t in tags {
            v.insert(t.parse::<Tag>()?);
        }
        map.insert(c, v);
    }
    Ok(TileLegend {
        game_id: raw.game.unwrap_or_else(|| default_game_id.to_string()),
        tile_px,
        char_to_affordances: map,
    })
}

/// Loads a legend file. The game id defaults to the containing directory name.
pub fn load_legend(path: &Path) -> Result<TileLegend> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let game = path
        .parent()
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "unknown".into());
    parse_legend(&text, &game)
}
