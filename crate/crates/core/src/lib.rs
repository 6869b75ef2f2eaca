//! Numerical study of Siegel disk boundaries: extended-precision critical
//! orbits, dyadic resampling of the boundary parameterization, Fourier
//! spectra, Littlewood-Paley regularity estimates, scaling exponents,
//! disk geometry and phase statistics.

pub mod boundary;
pub mod cache;
pub mod clp;
pub mod cfrac;
pub mod error;
pub mod geometry;
pub mod hexfloat;
pub mod maps;
pub mod mp;
pub mod orbit;
pub mod output;
pub mod par;
pub mod phasestats;
pub mod pipeline;
pub mod stats;

pub use error::{Error, Result};
