//! Spectrally adapted physics-informed neural networks.
//!
//! A small network maps time to the coefficients of a spectral expansion in space.
//! Training minimizes the residual of an implicit Gauss–Legendre Runge–Kutta step,
//! and between steps the basis is re-tuned (scaling, moving, order refinement) from a
//! frequency indicator.

pub mod adaptivity;
pub mod basis;
pub mod collocation;
pub mod error;
pub mod expansion;
pub mod inverse;
pub mod linalg;
pub mod net;
pub mod problems;
pub mod reference;

pub use error::{Error, Result};
