//! Weighted cogrowth for free groups.
//!
//! Edge lengths `r` and step weights `p` both live on the simplex
//! `{x_i > 0, Σ x_i = 1/2}`. The library computes Poincaré exponents of
//! subgroups of `F_n` acting on the weighted Cayley tree, bottoms of spectra of
//! weighted Laplacians on the tree and on quotient graphs, and checks the
//! cogrowth formula relating the two.

pub mod cogrowth;
pub mod error;
pub mod exponents;
pub mod freegroup;
pub mod params;
pub mod roots;
pub mod spectrum;
pub mod subgroups;

pub use error::{Error, Result};
