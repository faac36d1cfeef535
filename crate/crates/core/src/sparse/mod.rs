//! Sparse matrices and direct solvers.

mod csr;
mod ldl;
pub mod ordering;

pub use csr::{axpy, dot, norm2, sub, CsrMatrix, TripletBuilder};
pub use ldl::{relative_residual, FactorKind, Factorization};
