//! Fuchsian evolution and null-structure analysis for systems of semilinear
//! wave equations near spatial infinity.
//!
//! The crate is organised bottom-up:
//!
//! * [`coefficients`]: constant Cartesian couplings and the angular/compactified
//!   objects derived from them (`b̄`, `c̄`, `ã`).
//! * [`geometry`]: the cylinder-at-spatial-infinity maps, the radial chart and
//!   cutoff, initial-data transforms, constraints and reconstruction.
//! * [`asymptotics`]: the asymptotic ODE flow, its variational equations and the
//!   bounded weak null classifier.
//! * [`system`]: first-order and block operators, sources, parameters and the
//!   algebraic identity suites.
//! * [`solver`]: pseudospectral method-of-lines evolution of the extended
//!   system in the rotationally invariant sector.
//! * [`diagnostics`]: Fuchsian variables, norms, residuals, decay fits and
//!   bound verdicts.

pub mod asymptotics;
pub mod coefficients;
pub mod diagnostics;
pub mod error;
pub mod free_wave;
pub mod geometry;
pub mod grid;
pub mod par;
pub mod solver;
pub mod spectral;
pub mod system;

pub use error::{Error, Result};
