//! Rerandomization for balanced two-level factorial designs.
//!
//! Units are allocated to the `2^K` treatment combinations in equal numbers;
//! random allocations are redrawn until the Mahalanobis covariate imbalance
//! of every monitored factorial effect falls below its tier's threshold.

pub mod assignment;
pub mod balance;
pub mod contrasts;
pub mod criteria;
pub mod design;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod simlab;
pub mod special;
pub mod streams;

pub use assignment::{expand_assignment, random_allocation, Allocation, AssignmentMatrix, DrawOrigin};
pub use balance::{
    balance_profile, fit_covariance, mahalanobis, mean_difference, BalanceProfile, BalanceScorer, CovarianceModel,
    CovariateMatrix, EffectBalance,
};
pub use criteria::{
    accept, calibration_targets, resolve_empirical, resolve_thresholds, variance_factor, AcceptanceRule,
    ThresholdMode, Tier, TierBound, VarianceFactor,
};
pub use design::{build_design_matrix, expand_model_matrix, DesignMatrix, DesignSpec, Effect, ModelMatrix, RunOrder};
pub use engine::{
    estimate_effects, randomization_test, rerandomize, EffectEstimates, RandomizationTestResult,
    RerandomizationResult, Rerandomizer, RunManifest, RunOptions, TestOptions,
};
pub use error::{Error, Result};
pub use streams::{Purpose, StreamRng, StreamSeeder};
