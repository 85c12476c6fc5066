//! Spectral solver and verification suite for the spatially homogeneous
//! Boltzmann equation with Maxwellian molecules and a non-cutoff angular
//! kernel.
//!
//! The collision operator is diagonalized by a Hermite-style basis of
//! Laguerre radial profiles times spherical harmonics. The linearized part
//! acts diagonally with eigenvalues `lambda_{n,l}`; the quadratic part
//! couples modes through a sparse tensor whose targets always carry the sum
//! of the source energies 2n + l. That additivity makes the coefficient
//! system strictly lower-triangular in energy, which the crate exploits
//! twice: the infinite coefficient ODE system restricted to an energy ball
//! closes exactly and is solved in closed form as exponential-polynomials
//! ([`cascade`]), and the projected quadratic system integrated in time is
//! exact for every retained mode ([`galerkin`]).
//!
//! Layout:
//! - [`specialfn`]: Legendre/Laguerre/spherical-harmonic evaluation, the
//!   basis eigenfunctions and their Fourier images.
//! - [`quadrature`]: graded quadrature for the singular kernel, exact-degree
//!   sphere rules.
//! - [`coefficients`]: eigenvalues, coupling tensors, identity audits and
//!   the persistent coefficient table.
//! - [`cascade`]: closed-form solution of the coefficient ODE system.
//! - [`galerkin`]: truncated quadratic system, adaptive time integration,
//!   weighted-norm monitors.
//! - [`diagnostics`]: physical-space reconstruction of the density.
//! - [`io`]: table/series/report serialization.

pub mod cascade;
pub mod coefficients;
pub mod diagnostics;
pub mod error;
pub mod exppoly;
pub mod galerkin;
pub mod io;
pub mod mode;
pub mod quadrature;
pub mod specialfn;

pub use error::{Error, Result};
pub use mode::{modes_up_to_energy, ModeIndex, SpectralState};
pub use quadrature::{KernelModel, KernelParams, QuadratureSpec};

pub use num_complex::Complex64;
