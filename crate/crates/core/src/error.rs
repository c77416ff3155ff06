// Copyright 2026 Gravdec Contributors
// SPDX-License-Identifier: Apache-2.0

//! Error type shared by every module.

use std::fmt;

/// A single violated configuration constraint.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("config validation failed: {}", join(.0))]
    Validation(Vec<FieldError>),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("numerical failure: {message} (residual estimate {residual:e})")]
    Numerical { message: String, residual: f64 },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),

    #[error("basis mismatch: expected {expected}, found {found}")]
    BasisMismatch { expected: String, found: String },

    #[error("time step {dt:e} violates stability bound; use dt <= {suggested_dt:e}")]
    StabilityBound { dt: f64, suggested_dt: f64 },

    #[error("step size underflow at t = {t:e}; dominant rate {dominant_rate:e}")]
    StepSizeUnderflow { t: f64, dominant_rate: f64 },

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("trajectory {index} failed (master seed {seed}): {reason}")]
    TrajectoryFailed { index: usize, seed: u64, reason: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn join(errs: &[FieldError]) -> String {
    errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
}

impl Error {
    pub fn numerical(message: impl Into<String>) -> Self {
        Error::Numerical {
            message: message.into(),
            residual: f64::NAN,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
