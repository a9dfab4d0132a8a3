//! Numerics for chaotic scattering of He atoms off a corrugated Cu surface.
//!
//! The crate works in the dimensionless McGehee picture: the point at
//! infinity becomes the parabolic periodic orbit `q = p = J = 0`, whose
//! invariant manifolds split by an exponentially small amount.  Everything
//! here is pure computation; file formats and the command line live in the
//! `surfscatter` crate.

#![no_std]

extern crate alloc;

pub mod fit;
pub mod fourier;
pub mod horseshoe;
pub mod inner;
pub mod integrate;
pub mod manifolds;
pub mod math;
pub mod model;
pub mod quad;
pub mod separatrix;
pub mod volterra;

pub use num_complex::Complex64;
