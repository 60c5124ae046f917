//! Partitioned kernel ridge regression.
//!
//! The training set is split into Voronoi cells in feature space around
//! greedily chosen centroids, each cell gets its own Nystrom-sketched,
//! preconditioned-CG ridge solver, and prediction routes every query to the
//! single nearest cell. Exact solvers, divide-and-conquer baselines, and a
//! diagnostics suite (effective dimensions, principal angles between cell
//! subspaces, risk-bound checks) live alongside the estimator so the
//! statistical behaviour can be verified on fixed-design instances.
//!
//! Modules, bottom-up:
//!
//! * [`kernel`] — kernel functions, Gram assembly, feature-space distances
//! * [`numerics`] — Cholesky with jitter escalation, triangular solves,
//!   symmetric eigendecomposition, conjugate gradients
//! * [`partition`] — greedy/uniform centroid selection and cell assignment
//! * [`local_solver`] — per-cell solvers: exact ridge, exact Nystrom, and
//!   the preconditioned iterative solver
//! * [`estimator`] — the partitioned estimator, baselines, hyperparameter
//!   scaling; [`model_io`] for the binary model artifact
//! * [`diagnostics`] — excess risk, risk decomposition, effective
//!   dimensions, subspace angles, bound checks
//! * [`harness`] — datasets (synthetic generator, CSV, binary cache),
//!   metrics, run configuration, reports
//!
//! With the default `parallel` feature the hot loops fan out over rayon;
//! every parallel lane writes disjoint, per-index outputs with a fixed
//! arithmetic order, so sequential builds (`--no-default-features`) and
//! parallel builds produce bitwise-identical results.

pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod kernel;
pub mod local_solver;
pub mod model_io;
pub mod numerics;
pub mod partition;

mod parallel;

pub use error::{ParkError, Result};
