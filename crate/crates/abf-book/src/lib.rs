//! Keeps the book honest: every chapter is included as a doc comment, so
//! `cargo test --doc` compiles and runs each code snippet. mdbook itself does
//! not execute snippets against the workspace crates, hence this shim; one
//! module per chapter makes a failing test name point at the right file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}

#[doc = include_str!("../../../book/src/solver.md")]
pub mod solver {}

#[doc = include_str!("../../../book/src/particles.md")]
pub mod particles {}

#[doc = include_str!("../../../book/src/entropies.md")]
pub mod entropies {}

#[doc = include_str!("../../../book/src/spectral.md")]
pub mod spectral {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
