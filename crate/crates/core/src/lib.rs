//! Explicit topology optimization with ensembles of anisotropic Gaussian fields.

pub mod error;
pub mod evaluation;
pub mod fea;
pub mod geometry;
pub mod mesh;
pub mod optimizer;
pub mod postprocess;
pub mod problems;
pub mod projection;
pub mod sensitivity;

pub use error::{Error, Result};
