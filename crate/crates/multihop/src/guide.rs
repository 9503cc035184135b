//! The user guide, compiled from the book sources.
//!
//! Each submodule below embeds one chapter of `book/` verbatim, so every
//! code block in the rendered guide is a doc-test: `cargo test` fails the
//! moment the prose and the library drift apart. The chapters read in
//! order, but each stands alone.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}

#[doc = include_str!("../../../book/src/transport.md")]
pub mod transport {}

#[doc = include_str!("../../../book/src/tails.md")]
pub mod tails {}

#[doc = include_str!("../../../book/src/allocation.md")]
pub mod allocation {}

#[doc = include_str!("../../../book/src/shaping.md")]
pub mod shaping {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
