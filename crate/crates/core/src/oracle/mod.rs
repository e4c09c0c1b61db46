//! Exact quantum references: a grid Schrödinger solver and Weyl-ordered operator algebra.

mod grid;
mod weyl;

pub use grid::*;
pub use weyl::*;
