//! Memory-efficient reverse-mode differentiation for unrolled physics-based
//! reconstruction networks.

pub mod error;
pub mod experiments;
pub mod layers;
pub mod linop;
pub mod network;
pub mod params;
pub mod training;

pub use error::{Error, Result};
