//! Finite-depth constructions on markered array systems.

pub mod arrays;
pub mod markers;
pub mod measures;
pub mod generators;
pub mod purify;
pub mod assemble;
pub mod formats;
