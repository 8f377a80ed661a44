//! Sparse storage and the banded factorization used by the QP engine.

mod banded;
mod sparse;

pub use banded::BandedLdlt;
pub use sparse::{SparseMatrix, Triplets};

pub(crate) fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub(crate) fn norm_1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
