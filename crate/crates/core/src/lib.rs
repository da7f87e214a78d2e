//! Projection-free solvers for nuclear-norm-ball constrained minimisation
//!
//! ```text
//! min f(X)  s.t.  ||X||_NN <= delta
//! ```
//!
//! Every solver keeps its iterate as a thin SVD `X = U diag(S) V'` and only ever
//! touches it through rank-one updates. Alongside vanilla Frank-Wolfe, away-step
//! Frank-Wolfe and a max-step in-face baseline, the crate provides rank-drop
//! steps: rank-one perturbations that annihilate one singular direction of the
//! iterate while staying inside the ball and not increasing the objective.
//!
//! The crate is `no_std` + `alloc`. The `std` feature only switches the
//! dense kernels to their std-backed (faster) implementations.

#![cfg_attr(not(any(feature = "std", test)), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod dataset;
pub mod dense;
pub mod error;
pub mod factored;
mod math;
pub mod objective;
pub mod rank_drop;
pub mod solver;
pub mod theorems;

pub use error::{Error, Result};
pub use factored::{full_svd_oracle, RankOneOuter, ThinSvd, DEFAULT_RANK_THRESHOLD};
pub use objective::{Entry, Lmo, LmoAtom, Observations, SparseResidual};
pub use rank_drop::{DropCase, InteriorSearch, ProjectedGradient, RankDropStep};
pub use solver::{IterateTrace, Solution, SolveError, SolverConfig, StepType, TraceRecord, Variant};
