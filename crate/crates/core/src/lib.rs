//! Numerical laboratory for weakly nonlinear three-wave turbulence.
//!
//! * [`modegrid`]: Fourier lattice, dispersion, interaction coefficients, triads.
//! * [`dynamics`]: direct RK4 integration of the interaction-representation equations.
//! * [`perturb`]: closed-form first and second iterates of the ε-expansion.
//! * [`ensemble`]: random-phase ensembles and their statistics.
//! * [`kinetics`]: kinetic coefficients, spectrum evolution, one-mode amplitude PDF.
//! * [`zspdf`]: joint amplitude PDF of a small closed triad cluster.
//! * [`record`]: binary snapshot records and trajectory CSV.

pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod kinetics;
pub mod ks;
pub mod modegrid;
pub mod perturb;
mod quad;
pub mod record;
pub mod rng;
pub mod zspdf;

pub use error::{Error, Result};
