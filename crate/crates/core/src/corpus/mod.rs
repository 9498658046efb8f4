//! Corpus ingestion: legends, level lattices, context windows and the
//! deduplicated, label-weighted training set.
//!
//! On disk a corpus is laid out as
//!
//! ```text
//! corpus/<game>/legend.json
//! corpus/<game>/levels/<name>.png
//! corpus/<game>/levels/<name>.txt     (optional character grid)
//! ```

mod context;
mod dataset;
mod layout;
mod legend;
mod level;

pub use context::{dedup_contexts, extract_contexts, ContextSample, SampleSource, OUT_OF_BOUNDS};
pub use dataset::{build_dataset, compute_label_weights, Dataset, DatasetSidecar, GameLevels};
pub use layout::{list_games, load_game};
pub use legend::{load_legend, parse_legend, TileLegend};
pub use level::{ingest_level, LevelGrid};
