#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod linalg;
pub mod mediation;
pub(crate) mod qp;
pub mod regression;
pub mod simulation;
pub mod stats;
pub mod vepd;

pub use error::{Error, Result};
