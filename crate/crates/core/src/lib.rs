// Negated comparisons are used deliberately on floats so that NaN fails
// validation checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Estimation of cell-type concentrations from linear mixtures of
//! expression profiles: a constrained-regression solver stack with feature
//! filters, marker selection, regularization, and an evaluation harness
//! with synthetic-data generators.

pub mod error;
pub mod eval;
pub mod filter;
pub mod marker;
pub mod model;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
pub use eval::{
    empirical_pvalue, kendall_tau, mad, per_sample_qc, r2d, rmsd, MetricKind, RandomBaseline,
    SampleQc,
};
pub use filter::{
    adaptive_range_analysis, adaptive_range_bounds, apply_mask, fixed_range_mask,
    sto_violation_categorize, sto_violation_filter, AdaptiveAnalysis, FeatureMask,
    KneeNormalization, RangeBounds, ViolationCategory, ViolationFilter, ViolationReport,
    ViolationScope,
};
pub use marker::{
    bh_qvalues, condition_number, optimal_cut, score_abbas, score_newman, BasisCut, CurvePoint,
    CutMethod, MarkerScore, NewmanMarkers,
};
pub use model::{
    collapse_replicates, to_percentages, validate_alignment, AlignedPair, ConcentrationMatrix,
    ConstraintStatus, ExpressionMatrix, PercentageMatrix, ReplicateGrouping,
};
pub use solver::{
    deconvolve_sample, enforce_implicit, full_deconvolve_anls, grid_search_param, loss_value,
    parse_celltype_groups, sixteen_configs, solve_constrained, solve_ols, solve_ridge, svr_lambda,
    AnlsInit, AnlsOptions, AnlsOutcome, ConstraintMode, DeconvolutionConfig, EnforcementMode,
    GridCriterion, GridOutcome, LossKind, ParamGrid, RegressionProblem, RegularizerKind, Solution,
    SolverOptions,
};
pub use synth::{
    derive_seed, generate, trial_battery, ConcentrationScheme, ConfigTrialSummary, NoiseKind,
    NoiseModel, Summary, SynthDataset, SynthSpec,
};
