//! Monotone finite-difference schemes for impulse-control HJB
//! quasi-variational inequalities, solved by policy iteration.
//!
//! The crate is layered bottom-up:
//!
//! - [`grid`]: grids, interpolation, stencils, control sets
//! - [`sparsela`]: sparse matrices, diagonal-dominance diagnostics, solvers
//! - [`bellman`]: row-decoupled Bellman problems and policy iteration
//! - [`hjbqvi`]: problem definitions and the three timestepping schemes
//! - [`problems`]: FEX, consumption, GMWB benchmarks and the MDP bridge
//! - [`harness`]: refinement studies and report output

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod grid;
pub mod sparsela;
pub mod bellman;
pub mod hjbqvi;
pub mod problems;
pub mod harness;
