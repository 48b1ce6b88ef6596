//! Hardware-free quantum state tomography.
//!
//! The crate simulates overcomplete projective tomography of 1 to 4 qubit
//! states and reconstructs density matrices two ways:
//!
//! * [`mle`]: Gaussian-likelihood estimation over a Cholesky parameterization,
//!   minimized with BFGS.
//! * [`nn`]: a small 1-D convolutional network trained on simulated
//!   measurements, whose output is mapped to a density matrix by the same
//!   parameterization.
//!
//! [`qstate`] holds the state types and metrics, [`measurement`] the projector
//! set and the shot/noise simulation, and [`dataio`] the on-disk formats.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
mod error;
pub mod measurement;
pub mod mle;
pub mod nn;
pub mod qstate;
pub mod rng;

pub use error::{Error, Result};
pub use measurement::{MeasurementRecord, ProjectorSet, Shots};
pub use qstate::{DensityMatrix, PureState, TauVector};
