//! Numerical laboratory for the divisible sandpile with heavy-tailed initial
//! configurations.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only the numerics:
//!
//! * [`torus`]: the discrete torus `Z_n^d`, its Fourier transform, graph
//!   Laplacian and spectral Poisson solver.
//! * [`stable`]: symmetric α-stable, symmetric Pareto and Gaussian laws,
//!   quantiles and characteristic-function diagnostics.
//! * [`green`]: torus and killed Green's functions, the lattice Green's
//!   function of `Z^d` and the transience diagnostics built on them.
//! * [`sandpile`]: toppling dynamics, exact odometers and the stabilization
//!   probes.
//! * [`scaling`]: the rescaled odometer pairing, its kernel, and the limiting
//!   α-stable functional.
//!
//! IO, configuration and the command line live in the `sandpile-lab` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
pub mod green;
pub mod quadrature;
pub mod rng;
pub mod sandpile;
pub mod scaling;
pub mod stable;
pub mod stats;
pub mod torus;

pub use error::{Error, Result};
pub use num_complex::Complex64;
