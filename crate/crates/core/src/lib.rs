//! Complier average causal effect estimation for randomized trials with all-or-none
//! noncompliance and outcome-dependent nonignorable missing outcomes.
//!
//! The estimator works in two steps. The first estimates the assignment probability and the
//! always-taker / never-taker proportions in closed form. The second maximizes the likelihood
//! of `(Z, D)` conditional on each observed outcome; that conditional law does not involve
//! the response mechanism `P(R = 1 | Y = y)`, which therefore never has to be modelled.
//!
//! Model preconditions: no interference between units, randomized assignment, monotonicity
//! (no defiers), a nonzero effect of assignment on treatment received, compound exclusion
//! for always-takers and never-takers, response depending on the outcome only, and stratum
//! outcome laws from one of the shipped exponential families.

pub mod data;
pub mod error;
pub mod estimation;
pub mod identification;
pub mod li;
pub mod model;
pub mod optim;
pub mod quadrature;
pub mod rng;
pub mod simulation;
pub mod stats;

pub use error::{Error, Result};
pub use estimation::{
    bootstrap, conditional_log_likelihood, first_stage, fit_second_stage, fit_two_step, BootstrapOptions,
    BootstrapSummary, CountSummary, FitResult, Init,
};
pub use model::{
    Block, Cell, ComplianceStratum, FirstStageParams, ObservedRecord, OutcomeFamily, OutcomeParams, StratumLaw,
};
