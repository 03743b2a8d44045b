//! Quantum-state reconstruction from on/off photodetection.
//!
//! A signal mode is mixed with a coherent probe on a beam splitter and the
//! joint no-click probability of one or two binary detectors is recorded for
//! a set of effective efficiencies. For a fixed effective displacement `γ`
//! these probabilities are linear in the photon-number distribution of the
//! displaced signal, which is inferred by expectation-maximization. The
//! alternating sum of that distribution is the Wigner function at `γ`, and a
//! Wigner map over the phase plane yields the density matrix by quadrature.
//!
//! Module map:
//!
//! - [`fock`]: truncated Fock-space states, displacement operators and exact
//!   reference quantities.
//! - [`measurement`]: measurement settings, schedules, exact no-click
//!   probabilities and seeded sampling.
//! - [`em`]: expectation-maximization for the displaced photon statistics.
//! - [`wigner`]: phase-plane scans, error and variance maps.
//! - [`rho`]: density-matrix recovery and state comparison.
//! - [`config`], [`io`], [`cli`]: run configuration, CSV interchange and the
//!   command-line front end.

// Negated comparisons reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod config;
pub mod em;
mod error;
pub mod fock;
pub mod io;
pub mod measurement;
pub mod rho;
pub mod wigner;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;

/// Dense complex matrix over Fock indices.
pub type CMatrix = nalgebra::DMatrix<C64>;
