//! Fast diffusion samplers built by least-squares subspace search.

pub mod defaults;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod olss;
pub mod schedulers;

pub use error::{Error, Result};
