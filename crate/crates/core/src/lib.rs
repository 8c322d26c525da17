pub mod data;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gda;
pub mod model;
pub mod numerics;
mod parallel;
pub mod selftest;
pub mod training;

pub use error::{GaitError, Result};
