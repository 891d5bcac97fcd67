//! Uniform spanning trees and the abelian sandpile on subsets of `Z^d`.

pub mod cli;
pub mod error;
pub mod estimator;
pub mod forest;
pub mod greens;
pub mod lattice;
pub mod oracle;
pub mod randwalk;
pub mod runner;
pub mod sandpile;
pub mod wilson;

pub use error::{Error, Result};
