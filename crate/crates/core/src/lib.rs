// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod cli;
pub mod compliance;
pub mod discretize;
pub mod eig;
pub mod error;
pub mod geometry;
pub mod harmonic;
pub mod linalg;
pub mod quadrature;

pub use error::{Error, Result};
