//! Numerical laboratory for the odd-sector dynamics of the kink of the
//! relativistic Ginzburg-Landau equation `psi_tt = psi_xx + F(psi)`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diagnostics;
pub mod error;
pub mod evolve;
pub mod fields;
pub mod kink;
pub mod linalg;
pub mod normalform;
pub mod potential;
pub mod spectral;

pub use error::{Error, Result};
