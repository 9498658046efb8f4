//! The guide's chapters, compiled as doc comments so that `cargo test`
//! runs every Rust listing in `book/src`. One module per chapter keeps
//! failures traceable to a file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/corpus.md")]
pub mod corpus {}
#[doc = include_str!("../../../book/src/autoencoder.md")]
pub mod autoencoder {}
#[doc = include_str!("../../../book/src/index.md")]
pub mod index {}
#[doc = include_str!("../../../book/src/generation.md")]
pub mod generation {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
