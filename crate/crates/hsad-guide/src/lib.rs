//! Every chapter of the guide in `book/` is included here as module
//! documentation, so `cargo test --doc -p hsad-guide` compiles and runs all
//! of the book's code snippets. One module per chapter keeps test failures
//! attributable to a file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/getting-started.md")]
pub mod getting_started {}

#[doc = include_str!("../../../book/src/concepts/cubes-and-normalization.md")]
pub mod cubes_and_normalization {}

#[doc = include_str!("../../../book/src/concepts/background-purification.md")]
pub mod background_purification {}

#[doc = include_str!("../../../book/src/concepts/reconstruction-models.md")]
pub mod reconstruction_models {}

#[doc = include_str!("../../../book/src/concepts/error-maps.md")]
pub mod error_maps {}

#[doc = include_str!("../../../book/src/concepts/weighted-rx.md")]
pub mod weighted_rx {}

#[doc = include_str!("../../../book/src/concepts/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[doc = include_str!("../../../book/src/formats.md")]
pub mod formats {}
