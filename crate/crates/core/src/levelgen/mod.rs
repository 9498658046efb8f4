//! Level generation over embedding lattices.
//!
//! Levels become `H×W×D` lattices of tile embeddings. In row mode an LSTM
//! is trained on six-row windows traversed row-major and continues a level
//! three rows at a time, each window replaying the last three rows as
//! history. In symmetric mode it is trained on whole levels traversed
//! column by column and completes a right half from a given left half.
//! Every step also sees the target cell's normalized `(x, y)`. Predictions
//! are snapped to the nearest stored embedding, so every generated tile is
//! a corpus tile.

mod generate;
mod generator;
mod sequence;

pub use generate::{build_store, generate, generate_symmetric, render, write_outputs, GeneratedLevel, GenerationConfig};
pub use generator::{
    load_generator, save_generator, sequence_mse, stack, train_generator, GenTrainConfig, GenTrainReport, Generator,
    GeneratorConfig,
};
pub use sequence::{
    embed_level, make_column_sequences, make_sequences, sequences_for, EmbeddedLevel, SequenceSample, Traversal,
    HISTORY_ROWS, WINDOW_ROWS,
};
