#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Source-independent quantum random number generation from homodyne
//! quadrature data: simulation, entropy estimation, uncertainty-relation
//! bound, Toeplitz extraction and the self-testing protocol.

pub mod bound;
pub mod config;
pub mod discretization;
pub mod error;
pub mod estimators;
pub mod extractor;
pub mod harness;
pub mod nist;
pub mod protocol;
pub mod source;

pub use error::{Error, Result};
