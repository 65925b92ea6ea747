//! Latent-variable Gaussian graphical model selection.
//!
//! The observed precision matrix of a Gaussian with hidden coordinates splits
//! as `K = S* − L*`, with `S*` sparse (the observed graph) and `L*` positive
//! semidefinite of rank equal to the number of hidden variables. This crate
//! estimates the pair by ℓ1 + trace regularized maximum likelihood, and
//! provides the pieces needed to study that estimator empirically:
//!
//! * [`symkernel`]: dense symmetric matrices, eigendecomposition, Schur complements
//! * [`prox`]: proximal maps of the penalty and likelihood terms
//! * [`lvsolver`]: the splitting solvers and KKT certificates
//! * [`modelgen`]: synthetic ground-truth models and sampling
//! * [`baselines`]: neighborhood selection and the graphical lasso
//! * [`evalmetrics`]: support, rank and norm-error metrics
//! * [`experiment`]: seeded, parallel experiment sweeps and result tables

// `!(x > 0.0)` is the NaN-rejecting form used in parameter checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod dense;
pub mod error;
pub mod evalmetrics;
pub mod experiment;
pub mod graph;
pub mod lvsolver;
pub mod matio;
pub mod modelgen;
pub mod prox;
pub mod rng;
pub mod symkernel;

pub use dense::DenseMatrix;
pub use error::{Error, Result};
pub use graph::EdgeSet;
pub use lvsolver::{solve_lvglasso, solve_noisy_decomposition, Estimate, RegParams, SolverConfig, SolverReport, SolverStatus};
pub use modelgen::{GraphKind, GroundTruth, ModelSpec, SampleSet};
pub use symkernel::{EigDecomp, SymMatrix};
