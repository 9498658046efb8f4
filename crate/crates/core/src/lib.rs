//! Affordance-rich tile embeddings for 2D tile-based game levels.
//!
//! The pipeline:
//!
//! 1. [`corpus`] turns level images, character grids and affordance legends
//!    into 48×48 pixel context windows paired with the centre tile's
//!    affordances.
//! 2. [`xae`] trains a two-branch autoencoder on those pairs; its 256-d
//!    bottleneck is the tile embedding.
//! 3. [`levelgen`] embeds whole levels, trains an LSTM to continue them and
//!    snaps every generated embedding to a real tile through [`nnindex`].
//! 4. [`metrics`] scores affordance predictions and generated levels.
//!
//! [`tensor`] is the small numeric kernel underneath the two networks.

pub mod affordance;
mod binio;
pub mod corpus;
pub mod error;
pub mod levelgen;
pub mod metrics;
pub mod nnindex;
pub mod synth;
pub mod tensor;
pub mod xae;

pub use affordance::{AffordanceVector, Tag, TAG_COUNT};
pub use binio::write_atomic;
pub use error::{Error, Result};

/// Side length of a tile after ingestion, in pixels.
pub const TILE_PX: usize = 16;
/// Side length of a context window (the tile and its eight neighbours).
pub const CONTEXT_PX: usize = 3 * TILE_PX;
/// Colour channels kept from source images.
pub const CHANNELS: usize = 3;
