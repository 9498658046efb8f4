//! Multi-label scores for affordance predictions, the most-frequent-label
//! baseline, cross-fold evaluation, and the linearity and leniency of
//! levels.
//!
//! Empty-set conventions: a row with `Y = P = ∅` scores 1 on every
//! example-based score and on the alpha score; any other zero denominator
//! scores 0. Label-based accuracy is the per-tag Jaccard index
//! `TP/(TP+FP+FN)`, macro-averaged over all 13 tags with zero-denominator
//! tags contributing 0.

mod crossfold;
mod expressive;
mod multilabel;

pub use crossfold::{annotated_games, crossfold, CrossfoldConfig, FoldReport};
pub use expressive::{
    expressive_range, expressive_range_csv, leniency, leniency_of, linearity, linearity_of, linearity_with,
    mean_line_distance, platform_centres, write_expressive_range, ExpressiveRangePoint, LinearityNorm,
};
pub use multilabel::{
    alpha_row, alpha_score, example_based, exact_match_ratio, label_based, label_counts, mfl_baseline,
    most_frequent_combination, AlphaParams, LabelCounts, MetricsReport, PredictionRow, Scores,
};
