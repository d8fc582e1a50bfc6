//! Sparse SPD hierarchical solver/preconditioner.
//!
//! Builds a multilevel approximate Cholesky factorization by eliminating
//! clusters of unknowns with scaled low-rank compression of their
//! well-separated couplings, and uses it as a direct solver (eps = 0) or
//! as a preconditioner inside PCG / restarted GMRES.

pub mod cli;
pub mod elim;
pub mod error;
pub mod hfact;
pub mod kernels;
pub mod krylov;
pub mod partition;
pub mod problems;
pub mod sparse;
pub mod verify;

pub use error::{Error, Result};
