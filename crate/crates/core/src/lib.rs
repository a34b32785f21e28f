//! Causal bias of predictive relationships in structural causal models.
//!
//! The crate declares SCMs from differentiable scalar expressions, decides
//! identifiability by covariate adjustment on the causal graph, and estimates
//! the association `A`, the average partial effect on the treated `C`, and the
//! causal bias `B = A - C` with Laplace or importance-sampling posteriors.

pub mod autodiff;
pub mod dist;
pub mod error;
pub mod estimators;
pub mod expr;
pub mod graph;
pub mod inference;
pub mod parallel;
pub mod scm;
pub mod zoo;

pub use dist::NoiseDistribution;
pub use error::{Error, Result};
pub use expr::{Comparison, Expression, VariableId};
pub use graph::{CausalGraph, IdentifiabilityVerdict};
pub use scm::{build_scm, Assignment, Dataset, EndogenousDef, ExogenousDecl, Roles, Scm, ScmSpec};
pub use estimators::{BiasReport, Estimate, ReportOptions};
pub use inference::{MapOptions, Method, PosteriorApprox, Query};
pub use zoo::{builtin, closed_form, AscvdParams, LinearModelParams, ModelParams};
