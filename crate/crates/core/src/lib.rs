// Copyright 2026 Gravdec Contributors
// SPDX-License-Identifier: Apache-2.0

//! Gravitational decoherence master equations.
//!
//! Builds the full Markovian generator for a mass coupled to a stochastic
//! metric perturbation, its position- and momentum-basis limits, a generic
//! second-order cumulant engine, and a stochastic-trajectory oracle used to
//! check every prediction against brute-force ensemble averages.
//!
//! Internal units set ħ = c = 1.

pub mod analysis;
pub mod cli;
pub mod cumulant;
pub mod error;
pub mod generators;
pub mod kernels;
pub mod linalg;
pub mod model;
pub mod noise_field;
mod ode;
pub mod oracle;
pub mod propagators;
pub mod quadrature;

pub use error::{Error, FieldError, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
/// Dense complex matrix.
pub type CMatrix = ndarray::Array2<C64>;
