//! Every chapter of the book under `book/src` is compiled here as a module
//! doc, so `cargo test --doc` runs its listings against the library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}
#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}
#[doc = include_str!("../../../book/src/topology.md")]
pub mod topology {}
#[doc = include_str!("../../../book/src/protocol.md")]
pub mod protocol {}
#[doc = include_str!("../../../book/src/engine.md")]
pub mod engine {}
#[doc = include_str!("../../../book/src/plans.md")]
pub mod plans {}
#[doc = include_str!("../../../book/src/results.md")]
pub mod results {}
