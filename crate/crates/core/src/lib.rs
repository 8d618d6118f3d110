//! Spherical signals on the HEALPix grid, processed with ordinary 2D
//! convolutions through a precomputed 3x3 neighbour gather.

pub mod error;
pub mod formats;
pub mod healpix;
pub mod kernels;
pub mod models;
pub mod nn;
pub mod projection;
pub mod scalar;
pub mod transformer;

pub use error::{Result, StmError};
pub use healpix::{GridLevel, Level};
pub use scalar::Real;
pub use transformer::{SphericalSignal, TransformerGrid};
