//! Sequential instrument selection for underspecified linear IV models.
//!
//! Each experiment randomizes a subset of instruments and estimates the
//! projection of the treatment effect `beta` onto the subspace those
//! instruments move. Projections from several experiments are combined into a
//! minimum-norm estimate, and a selection loop picks the next subset by a
//! dissimilarity gain minus an experiment cost.

// NaN must fail the range checks, so `!(x < y)` is deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod combination;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod linalg;
pub mod norm;
pub mod rng;
pub mod scenario;
pub mod selection;
pub mod simulator;

pub use combination::{
    combine, combined_covariance, error_bound, identification_distance, identified_fraction,
    RoundRecord, RunningEstimate,
};
pub use error::{Error, Result};
pub use estimation::{estimate_covariance, estimate_projection, ProjectedEstimate};
pub use norm::{external_norm, oracle_norm, NormEstimate, NormProvider, NormSource};
pub use scenario::{compute_similarities, generate_scenario, Scenario, SimilarityMatrix};
pub use selection::{
    cost, gain, run_ideal, run_random_baseline, run_sis, score, select_next, CostKind,
    EpsilonMode, SelectionConfig, SisTrajectory, Strategy,
};
pub use simulator::{observational_data, run_experiment, Dataset};
