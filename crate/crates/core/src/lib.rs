//! Discrete planar orbits of nonuniform Fuchsian lattices.
//!
//! The library enumerates scaled discrete orbits Lambda = Gamma sigma e1 with
//! exact arithmetic in the trace field, computes pair statistics over those
//! orbits (double-coset totients, scattering sums, close pairs, bounded
//! determinants, pair correlation), samples the Haar probability measure on
//! G/Gamma and the matrix-cone measure, and verifies the first- and
//! second-moment mean value formulas by Monte Carlo.
//!
//! Modules follow the pipeline: [`ring`] (exact arithmetic) -> [`fuchsian`]
//! (lattices, cusps, scaling transformations) -> [`orbit`] (enumeration and
//! caches) -> [`pairstats`] / [`haarmc`] / [`counting`] (statistics,
//! Monte Carlo checks, effective counting experiments).

pub mod counting;
pub mod error;
pub mod fuchsian;
pub mod haarmc;
pub mod mc;
pub mod orbit;
pub mod pairstats;
pub mod ring;
pub mod shape;

pub use error::{Error, Result};
