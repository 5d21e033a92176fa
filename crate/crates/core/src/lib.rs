//! Numerical toolkit for the Gaussian classical-quantum channel: truncated Fock
//! representations, the coherent-state measurement, stationarity checks of the
//! decoded-information functional, heterodyne simulation and spectral rates.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fock;
pub mod gaussian;
pub mod grid;
pub mod heterodyne;
pub mod linalg;
pub mod optimality;
pub mod povm;
pub mod rates;

pub use error::{Error, Result};
pub use linalg::{c, CMatrix, CVector, C64};
