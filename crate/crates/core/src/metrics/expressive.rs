use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::affordance::{AffordanceVector, Tag};
use crate::binio::write_atomic;
use crate::corpus::LevelGrid;
use crate::error::Result;

/// How the mean perpendicular distance is normalized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearityNorm {
    /// Mean distance, then divided again by the number of centre points.
    #[default]
    MeanThenCount,
    /// Mean distance only.
    MeanOnly,
}

/// Centres `((x_start + x_end)/2, y)` of every platform: a maximal
/// horizontal run of Solid cells whose cells directly above are not Solid.
/// Cells in the top row count as having open space above.
pub fn platform_centres(width: usize, height: usize, affordances: &[AffordanceVector]) -> Vec<(f64, f64)> {
    let solid = |x: usize, y: usize| affordances[y * width + x].contains(Tag::Solid);
    let top = |x: usize, y: usize| solid(x, y) && (y == 0 || !solid(x, y - 1));
    let mut out = Vec::new();
    for y in 0..height {
        let mut x = 0;
        while x < width {
            if !top(x, y) {
                x += 1;
                continue;
            }
            let start = x;
            while x + 1 < width && top(x + 1, y) {
                x += 1;
            }
            out.push(((start + x) as f64 / 2.0, y as f64));
            x += 1;
        }
    }
    out
}

/// Mean perpendicular distance of `points` to their least-squares line
/// `y = a + b·x`. If every point shares one x the fitted line is vertical.
pub fn mean_line_distance(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return 0.0;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return points.iter().map(|p| (p.0 - mx).abs()).sum::<f64>() / n;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let scale = (1.0 + b * b).sqrt();
    points.iter().map(|p| (p.1 - a - b * p.0).abs() / scale).sum::<f64>() / n
}

pub fn linearity_of(width: usize, height: usize, affordances: &[AffordanceVector], norm: LinearityNorm) -> f64 {
    let centres = platform_centres(width, height, affordances);
    if centres.len() < 2 {
        return 0.0;
    }
    let mean = mean_line_distance(&centres);
    match norm {
        LinearityNorm::MeanThenCount => mean / centres.len() as f64,
        LinearityNorm::MeanOnly => mean,
    }
}

/// How far platforms stray from a straight line; 0 when they are collinear
/// or there are fewer than two.
pub fn linearity(level: &LevelGrid) -> f64 {
    linearity_with(level, LinearityNorm::default())
}

pub fn linearity_with(level: &LevelGrid, norm: LinearityNorm) -> f64 {
    linearity_of(level.width(), level.height(), level.affordances(), norm)
}

/// `(#Collectable − #Hazard) / cells`. A tile tagged with both counts both.
pub fn leniency_of(affordances: &[AffordanceVector]) -> f64 {
    if affordances.is_empty() {
        return 0.0;
    }
    let score: i64 = affordances
        .iter()
        .map(|a| i64::from(a.contains(Tag::Collectable)) - i64::from(a.contains(Tag::Hazard)))
        .sum();
    score as f64 / affordances.len() as f64
}

pub fn leniency(level: &LevelGrid) -> f64 {
    leniency_of(level.affordances())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressiveRangePoint {
    pub level_id: String,
    pub linearity: f64,
    pub leniency: f64,
}

pub fn expressive_range(levels: &[LevelGrid], norm: LinearityNorm) -> Vec<ExpressiveRangePoint> {
    levels
        .iter()
        .map(|l| ExpressiveRangePoint {
            level_id: l.level_id.clone(),
            linearity: linearity_with(l, norm),
            leniency: leniency(l),
        })
        .collect()
}

/// CSV with header `level_id,linearity,leniency`, written even when there
/// are no points.
pub fn expressive_range_csv(points: &[ExpressiveRangePoint]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(["level_id", "linearity", "leniency"])?;
    for p in points {
        w.serialize(p)?;
    }
    w.into_inner().map_err(|e| crate::Error::Csv(e.into_error().into()))
}

pub fn write_expressive_range(path: &Path, points: &[ExpressiveRangePoint]) -> Result<()> {
    write_atomic(path, &expressive_range_csv(points)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: &[&str]) -> (usize, usize, Vec<AffordanceVector>) {
        let solid = AffordanceVector::from_tags([Tag::Solid]);
        let cells = rows
            .iter()
            .flat_map(|r| r.chars().map(move |c| if c == 'X' { solid } else { AffordanceVector::EMPTY }))
            .collect();
        (rows[0].len(), rows.len(), cells)
    }

    #[test]
    fn platforms_are_topmost_solid_runs() {
        let (w, h, a) = grid(&["......", ".XXX..", ".XXX.X", "XXXXXX"]);
        let c = platform_centres(w, h, &a);
        assert_eq!(c, vec![(2.0, 1.0), (5.0, 2.0), (0.0, 3.0), (4.0, 3.0)]);
    }

    #[test]
    fn hand_regression() {
        // y = 4/3 fits (1,1),(2,2),(3,1); residuals 1/3, 2/3, 1/3.
        let d = mean_line_distance(&[(1.0, 1.0), (2.0, 2.0), (3.0, 1.0)]);
        assert!((d - 4.0 / 9.0).abs() < 1e-12);
        let (w, h, a) = grid(&["..X.", ".X.X", "...."]);
        assert!((linearity_of(w, h, &a, LinearityNorm::MeanThenCount) - 4.0 / 27.0).abs() < 1e-12);
        assert!((linearity_of(w, h, &a, LinearityNorm::MeanOnly) - 4.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_and_degenerate() {
        let (w, h, a) = grid(&["X.....", "..X...", "....X."]);
        assert!(linearity_of(w, h, &a, LinearityNorm::MeanThenCount).abs() < 1e-12);
        let (w, h, a) = grid(&["......", "..X..."]);
        assert_eq!(linearity_of(w, h, &a, LinearityNorm::MeanThenCount), 0.0);
        let (w, h, a) = grid(&["X", ".", "X"]);
        assert_eq!(linearity_of(w, h, &a, LinearityNorm::MeanThenCount), 0.0);
    }

    #[test]
    fn leniency_counts() {
        let c = AffordanceVector::from_tags([Tag::Collectable]);
        let hz = AffordanceVector::from_tags([Tag::Hazard]);
        let mut cells = vec![AffordanceVector::EMPTY; 100];
        cells[3] = c;
        cells[50] = c;
        cells[99] = hz;
        assert!((leniency_of(&cells) - 0.01).abs() < 1e-15);
        assert_eq!(leniency_of(&[hz; 9]), -1.0);
        assert_eq!(leniency_of(&[AffordanceVector::EMPTY; 4]), 0.0);
    }

    #[test]
    fn csv_header_only_when_empty() {
        assert_eq!(expressive_range_csv(&[]).unwrap(), b"level_id,linearity,leniency\n");
        let p = ExpressiveRangePoint {
            level_id: "a".into(),
            linearity: 0.5,
            leniency: -0.25,
        };
        assert_eq!(
            String::from_utf8(expressive_range_csv(&[p]).unwrap()).unwrap(),
            "level_id,linearity,leniency\na,0.5,-0.25\n"
        );
    }
}
