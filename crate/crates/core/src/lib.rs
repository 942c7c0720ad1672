//! Lattice phase-space toolkit for the two-component discrete-time quantum
//! walk in 1+1 dimensions.
//!
//! The crate evolves the walk, builds the space-time correlation tensor and
//! its Brillouin-zone transform (a lattice Wigner function), audits the
//! discrete identities that tie the two together at machine precision, and
//! measures how the discrete transport equation converges to its continuum
//! limit, including the first lattice correction.
//!
//! Module map:
//!
//! - [`lattice`] — labeled-axis complex fields, centered differences `d1`
//!   and the half-normalized `d2`, shifts, validity windows.
//! - [`spectral`] — Brillouin grids, `exp(+ikn)` transforms, the sin/tan
//!   spectral derivative identities and their small-spacing expansions.
//! - [`walk`] — coin, step, trajectories, dispersion, wave packets, and the
//!   equation-of-motion audit.
//! - [`wigner`] — correlation tensor, Wigner field, transport-term
//!   evaluators, and the transport-equation audit over coefficient variants.
//! - [`continuum`] — physical scalings, the continuum transport operator
//!   with its first-order correction, convergence-order fits.
//! - [`io`] — deterministic CSV/JSON emission.

pub mod continuum;
pub mod error;
pub mod io;
pub mod lattice;
pub mod report;
pub mod spectral;
pub mod walk;
pub mod wigner;

pub use error::{Error, Result};
pub use report::ResidualReport;
