//! Solver library for discretized optimal control problems with equilibrium
//! constraints (OCPECs).
//!
//! Each stage-wise variational inequality `λ ∈ SOL(K, F(x, u, λ))` is replaced by
//! an auxiliary equality `F(x, u, λ) = η`, membership `g(λ) ≥ 0` and a relaxed gap
//! constraint `φᶜ(λ, η) ≤ s` built on the regularized gap function. The resulting
//! NLP is solved by successive gap constraint linearization (SGCL): an SQP-type
//! loop that evaluates the skewed projectors stage by stage, linearizes the gap
//! constraints, solves a structured convex QP and globalizes with a filter line
//! search. A continuation in `s` drives the relaxation to zero.
//!
//! Module map:
//!
//! * [`vi`]: VI sets, Euclidean projection, natural residual, brute-force oracle.
//! * [`gap`]: skewed projector, gap value and gradients, scalar closed form.
//! * [`model`]: continuous problem, implicit-Euler discretization, NLP assembly.
//! * [`qp`]: sparse proximal QP solver and dense projection QP.
//! * [`sgcl`]: the SGCL iteration, filter, termination tests, continuation.
//! * [`bench`]: affine DVI benchmark, geometry demo, verification and CSV output.

pub mod bench;
pub mod config;
mod error;
pub mod gap;
pub mod linalg;
pub mod model;
pub mod qp;
pub mod sgcl;
pub mod vi;

pub use error::{Error, Result};
