use std::path::Path;

use super::dataset::GameLevels;
use super::legend::{load_legend, TileLegend};
use super::level::ingest_level;
use crate::error::{Error, Result};

/// Game directories under a corpus root, sorted by name.
pub fn list_games(root: &Path) -> Result<Vec<String>> {
    let mut games = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.path().join("legend.json").is_file() {
            games.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    games.sort();
    Ok(games)
}

/// Loads `root/<game>/legend.json` and every `levels/*.png`, pairing each
/// image with a same-stem `.txt` grid when one exists. Levels are ordered
/// by file name.
pub fn load_game(root: &Path, game: &str) -> Result<(TileLegend, GameLevels)> {
    let dir = root.join(game);
    let mut legend = load_legend(&dir.join("legend.json"))?;
    legend.game_id = game.to_string();
    let levels_dir = dir.join("levels");
    let mut pngs: Vec<_> = std::fs::read_dir(&levels_dir)
        .map_err(|e| Error::io(&levels_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    pngs.sort();
    let mut levels = Vec::with_capacity(pngs.len());
    for png in pngs {
        let txt = png.with_extension("txt");
        let grid = txt.is_file().then_some(txt.as_path());
        levels.push(ingest_level(&png, grid, Some(&legend))?);
    }
    Ok((
        legend,
        GameLevels {
            game_id: game.to_string(),
            levels,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;

    #[test]
    fn loads_documented_layout() {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("mario/levels");
        std::fs::create_dir_all(&g).unwrap();
        std::fs::write(dir.path().join("mario/legend.json"), r#"{"tile_px": 16, "tiles": {"-": ["empty", "passable"], "X": ["solid"]}}"#).unwrap();
        RgbImage::new(32, 16).save(g.join("b.png")).unwrap();
        RgbImage::new(32, 32).save(g.join("a.png")).unwrap();
        std::fs::write(g.join("a.txt"), "--\nXX\n").unwrap();
        std::fs::create_dir_all(dir.path().join("not_a_game")).unwrap();

        assert_eq!(list_games(dir.path()).unwrap(), vec!["mario"]);
        let (legend, levels) = load_game(dir.path(), "mario").unwrap();
        assert_eq!(legend.game_id, "mario");
        assert_eq!(levels.levels.len(), 2);
        assert_eq!(levels.levels[0].level_id, "a");
        assert!(levels.levels[0].is_annotated());
        assert!(!levels.levels[1].is_annotated());
    }
}
