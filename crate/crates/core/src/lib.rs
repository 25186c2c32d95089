//! Orthogonalization by Newton's iteration (ONI): forward and backward
//! passes, the eigendecomposition, spectral-normalization and
//! weight-normalization baselines, and a small MLP trainer built on them.

pub mod baselines;
pub mod data;
pub mod error;
pub mod grad;
pub mod matrix;
pub mod nn;
pub mod oni;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};
pub use grad::{grad_check, oni_backward, oni_backward_accel, oni_backward_basic, GradCheckReport};
pub use matrix::DenseMatrix;
pub use oni::{
    group_oni_forward, newton_schulz, oni_forward, orthogonality_error, OniCache, OniConfig, OrthoDiagnostics,
};
