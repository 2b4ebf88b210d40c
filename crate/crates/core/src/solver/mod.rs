//! Constrained regression engine: loss functions, constraint enforcement
//! modes, regularizers, parameter grid search, and the alternating
//! full-deconvolution loop.

pub mod admm;
pub mod anls;
pub mod closed_form;
pub mod grid;
pub mod stiff_huber;
pub mod loss;
pub mod nnls;
mod types;

pub use anls::{full_deconvolve_anls, AnlsInit, AnlsOptions, AnlsOutcome};
pub use closed_form::{solve_ols, solve_ridge};
pub use grid::{grid_search_param, GridCriterion, GridOutcome, ParamGrid};
pub use loss::{loss_value, total_loss, LossKind};
pub use types::{
    parse_celltype_groups, project_simplex, ConstraintMode, ConstraintSet, EnforcementMode,
    RegressionProblem, RegularizerKind, Solution, SolverOptions,
};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::ExpressionMatrix;

/// A complete per-sample solver configuration.
#[derive(Debug, Clone)]
pub struct DeconvolutionConfig {
    pub loss: LossKind,
    pub constraints: ConstraintMode,
    pub regularizer: RegularizerKind,
}

impl DeconvolutionConfig {
    pub fn new(loss: LossKind, constraints: ConstraintMode, regularizer: RegularizerKind) -> Self {
        Self {
            loss,
            constraints,
            regularizer,
        }
    }
}

/// The ridge weight equivalent to a given SVR cost parameter `C` when the
/// margin loss is written in penalized form.
pub fn svr_lambda(c: f64) -> f64 {
    1.0 / (2.0 * c)
}

/// The standard comparison grid: four losses crossed with implicit and
/// explicit enforcement of each constraint, with the usual visual-
/// comparison loss parameters (`m = 1`, `epsilon = 1/2`).
pub fn sixteen_configs() -> Vec<DeconvolutionConfig> {
    let losses = [
        LossKind::SquaredL2,
        LossKind::AbsoluteL1,
        LossKind::Huber { m: 1.0 },
        LossKind::EpsInsensitive { epsilon: 0.5 },
    ];
    let modes = [EnforcementMode::Implicit, EnforcementMode::Explicit];
    let mut configs = Vec::with_capacity(16);
    for loss in losses {
        for nn in modes {
            for sto in modes {
                configs.push(DeconvolutionConfig::new(
                    loss,
                    ConstraintMode::new(nn, sto),
                    RegularizerKind::None,
                ));
            }
        }
    }
    configs
}

/// Solve the regression with the *explicit* constraints encoded in the
/// optimization. Implicit-mode constraints are not applied here; see
/// [`enforce_implicit`].
pub fn solve_constrained(problem: &RegressionProblem, options: &SolverOptions) -> Result<Solution> {
    problem.validate()?;
    let set = problem.constraints.explicit_set();

    // Exact reductions: penalties that are constant on the feasible set
    // disappear, and piecewise-linear losses absorb one-norm penalties as
    // extra design rows. Both leave the minimizer set unchanged; the
    // reported objective is always re-evaluated on the original problem.
    if let Some(reduced) = reduce_problem(problem, set) {
        return match solve_dispatch(&reduced, set, options) {
            Ok(mut solution) => {
                solution.objective = problem.objective(&solution.coefficients);
                solution.residual_rmsd = problem.residual_rmsd(&solution.coefficients);
                Ok(solution)
            }
            Err(Error::NonConvergence {
                iterations,
                best_coefficients,
                ..
            }) => {
                let c = DVector::from_column_slice(&best_coefficients);
                Err(Error::NonConvergence {
                    iterations,
                    best_objective: problem.objective(&c),
                    best_coefficients,
                })
            }
            Err(other) => Err(other),
        };
    }
    solve_dispatch(problem, set, options)
}

fn solve_dispatch(
    problem: &RegressionProblem,
    set: ConstraintSet,
    options: &SolverOptions,
) -> Result<Solution> {
    if set == ConstraintSet::Free && problem.loss == LossKind::SquaredL2 {
        match &problem.regularizer {
            RegularizerKind::None => {
                if let Ok(sol) = solve_ols(problem) {
                    return Ok(sol);
                }
                // Rank-deficient design: fall through to the iterative path,
                // which still reaches an optimal objective.
            }
            RegularizerKind::NormTwo { lambda } if *lambda > 0.0 => {
                return solve_ridge(problem);
            }
            _ => {}
        }
    }
    // A Huber zone far narrower than the data scale is numerically stiff
    // for the splitting solver; majorize-minimize handles it instead.
    if let LossKind::Huber { m } = problem.loss {
        let n = problem.design.nrows();
        let q = problem.design.ncols();
        let typical = problem.design.norm() / ((n * q) as f64).sqrt();
        if problem.regularizer == RegularizerKind::None && m < 0.05 * typical.max(1e-300) {
            return stiff_huber::solve_stiff_huber(problem, set, options);
        }
    }
    admm::solve_admm(problem, set, options)
}

/// One-norm weight equivalent to the regularizer when its nonsmooth part
/// acts coordinatewise (singleton group norms are absolute values).
fn one_norm_weight(regularizer: &RegularizerKind) -> Option<(f64, f64)> {
    match regularizer {
        RegularizerKind::NormOne { lambda } => Some((*lambda, 0.0)),
        RegularizerKind::ElasticNet { lambda, alpha } => {
            Some((lambda * alpha, lambda * (1.0 - alpha)))
        }
        RegularizerKind::GroupLasso { lambda, groups }
            if groups.iter().all(|g| g.len() == 1) =>
        {
            Some((*lambda, 0.0))
        }
        _ => None,
    }
}

/// Build an equivalent problem whose minimizers over `set` coincide with
/// the original's, when a known exact reduction applies.
fn reduce_problem(problem: &RegressionProblem, set: ConstraintSet) -> Option<RegressionProblem> {
    // On the probability simplex the one-norm is identically 1, so purely
    // coordinatewise nonsmooth penalties are constant there.
    if set == ConstraintSet::Simplex {
        match one_norm_weight(&problem.regularizer) {
            Some((_, quadratic)) => {
                let regularizer = if quadratic > 0.0 {
                    RegularizerKind::NormTwo { lambda: quadratic }
                } else {
                    RegularizerKind::None
                };
                return Some(RegressionProblem {
                    regularizer,
                    ..problem.clone()
                });
            }
            None => return None,
        }
    }

    // Piecewise-linear losses absorb a one-norm penalty as design rows:
    // lambda |c_k| is the absolute residual of a zero-target row lambda e_k.
    // The margin loss first becomes an absolute loss on doubled rows,
    // max(0, |r| - eps) = |r - eps|/2 + |r + eps|/2 - eps.
    let piecewise = matches!(
        problem.loss,
        LossKind::AbsoluteL1 | LossKind::EpsInsensitive { .. }
    );
    if !piecewise {
        return None;
    }
    let (one_norm, quadratic) = one_norm_weight(&problem.regularizer)?;
    if one_norm <= 0.0 {
        return None;
    }

    let design = &problem.design;
    let target = &problem.target;
    let n = design.nrows();
    let q = design.ncols();
    let data_rows = match problem.loss {
        LossKind::AbsoluteL1 => n,
        LossKind::EpsInsensitive { .. } => 2 * n,
        _ => unreachable!(),
    };
    let mut new_design = nalgebra::DMatrix::<f64>::zeros(data_rows + q, q);
    let mut new_target = DVector::<f64>::zeros(data_rows + q);
    match problem.loss {
        LossKind::AbsoluteL1 => {
            new_design.view_mut((0, 0), (n, q)).copy_from(design);
            new_target.rows_mut(0, n).copy_from(target);
        }
        LossKind::EpsInsensitive { epsilon } => {
            let half = design * 0.5;
            new_design.view_mut((0, 0), (n, q)).copy_from(&half);
            new_design.view_mut((n, 0), (n, q)).copy_from(&half);
            for i in 0..n {
                new_target[i] = (target[i] - epsilon) * 0.5;
                new_target[n + i] = (target[i] + epsilon) * 0.5;
            }
        }
        _ => unreachable!(),
    }
    for k in 0..q {
        new_design[(data_rows + k, k)] = one_norm;
    }
    let regularizer = if quadratic > 0.0 {
        RegularizerKind::NormTwo { lambda: quadratic }
    } else {
        RegularizerKind::None
    };
    Some(RegressionProblem {
        design: new_design,
        target: new_target,
        loss: LossKind::AbsoluteL1,
        constraints: problem.constraints,
        regularizer,
    })
}

/// Make a raw solver iterate reportable: apply the implicit projections
/// and the final feasibility tidy exactly as `deconvolve_sample` does.
pub(crate) fn enforce_best_effort(
    raw: &[f64],
    config: &DeconvolutionConfig,
) -> Result<DVector<f64>> {
    let mut c = enforce_implicit(&DVector::from_column_slice(raw), config.constraints)?;
    for x in c.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let sum = c.sum();
    if sum <= 0.0 {
        return Err(Error::Degenerate(
            "best-effort iterate collapsed to zero".into(),
        ));
    }
    c /= sum;
    Ok(c)
}

/// Post-hoc projection used for implicitly enforced constraints:
/// clamp negatives when non-negativity was implicit, then rescale to a
/// unit sum when sum-to-one was implicit or was enforced explicitly but
/// broken again by the clamping.
pub fn enforce_implicit(coefficients: &DVector<f64>, mode: ConstraintMode) -> Result<DVector<f64>> {
    let mut c = coefficients.clone();
    if mode.nn == EnforcementMode::Implicit {
        for x in c.iter_mut() {
            if *x < 0.0 {
                *x = 0.0;
            }
        }
    }
    let renormalize = mode.sto == EnforcementMode::Implicit
        || (mode.sto == EnforcementMode::Explicit && mode.nn == EnforcementMode::Implicit);
    if renormalize {
        let sum = c.sum();
        if sum <= 0.0 {
            return Err(Error::Degenerate(
                "all coefficients vanished after clamping; nothing to normalize".into(),
            ));
        }
        c /= sum;
    }
    Ok(c)
}

/// Estimate the concentration vector of one mixture column against a
/// reference profile. Explicit constraints are enforced inside the solver,
/// implicit ones by projection afterwards; the returned coefficients always
/// satisfy both constraints so results are comparable as percentages.
/// Objective and residual diagnostics refer to the final coefficients.
pub fn deconvolve_sample(
    reference: &ExpressionMatrix,
    mixture_column: &DVector<f64>,
    config: &DeconvolutionConfig,
    options: &SolverOptions,
) -> Result<Solution> {
    if reference.n_genes() != mixture_column.len() {
        return Err(Error::Data(format!(
            "reference has {} genes but the mixture column has {}",
            reference.n_genes(),
            mixture_column.len()
        )));
    }
    let problem = RegressionProblem {
        design: reference.values().clone(),
        target: mixture_column.clone(),
        loss: config.loss,
        constraints: config.constraints,
        regularizer: config.regularizer.clone(),
    };
    let solution = solve_constrained(&problem, options)?;
    let mut c = enforce_implicit(&solution.coefficients, config.constraints)?;

    // Tidy solver-tolerance noise so downstream percentage handling never
    // sees a negative entry or a drifted sum.
    for x in c.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let sum = c.sum();
    if sum <= 0.0 {
        return Err(Error::Degenerate(
            "deconvolution produced an all-zero concentration vector".into(),
        ));
    }
    c /= sum;

    let objective = problem.objective(&c);
    let residual_rmsd = problem.residual_rmsd(&c);
    Ok(Solution {
        coefficients: c,
        objective,
        iterations: solution.iterations,
        converged: solution.converged,
        residual_rmsd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dvector, DMatrix};
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn enforce_implicit_clamps_then_normalizes() {
        let mode = ConstraintMode::new(EnforcementMode::Implicit, EnforcementMode::Implicit);
        let out = enforce_implicit(&dvector![-0.1, 0.5, 0.6], mode).unwrap();
        assert_eq!(out[0], 0.0);
        assert!((out[1] - 0.5 / 1.1).abs() < 1e-15);
        assert!((out[2] - 0.6 / 1.1).abs() < 1e-15);
    }

    #[test]
    fn enforce_implicit_fixed_point_on_feasible_input() {
        let mode = ConstraintMode::new(EnforcementMode::Implicit, EnforcementMode::Implicit);
        let input = dvector![0.25, 0.75];
        let out = enforce_implicit(&input, mode).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn enforce_implicit_all_negative_is_degenerate() {
        let mode = ConstraintMode::new(EnforcementMode::Implicit, EnforcementMode::Implicit);
        assert!(matches!(
            enforce_implicit(&dvector![-1.0, -2.0], mode),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn enforce_implicit_renormalizes_after_deferred_explicit_sto() {
        // STO was explicit in the optimizer, but implicit NN clamping broke
        // the sum, so it is restored here.
        let mode = ConstraintMode::new(EnforcementMode::Implicit, EnforcementMode::Explicit);
        let out = enforce_implicit(&dvector![-0.2, 0.7, 0.5], mode).unwrap();
        assert!((out.sum() - 1.0).abs() < 1e-12);
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn enforce_implicit_explicit_only_is_identity() {
        let mode = ConstraintMode::new(EnforcementMode::Explicit, EnforcementMode::Explicit);
        let input = dvector![0.4, 0.6];
        assert_eq!(enforce_implicit(&input, mode).unwrap(), input);
    }

    fn reference(design: DMatrix<f64>) -> ExpressionMatrix {
        let n = design.nrows();
        let q = design.ncols();
        ExpressionMatrix::new(
            (0..n).map(|i| format!("g{i}")).collect(),
            (0..q).map(|i| format!("t{i}")).collect(),
            design,
        )
        .unwrap()
    }

    #[test]
    fn identity_design_same_answer_for_every_config() {
        // m is itself a feasible exact fit. Every configuration reaches
        // objective zero; the losses without a flat region also pin the
        // coefficients to the same simplex point.
        let g = reference(DMatrix::identity(2, 2));
        let m = dvector![0.3, 0.7];
        let options = SolverOptions::default();
        for config in sixteen_configs() {
            let sol = deconvolve_sample(&g, &m, &config, &options).unwrap();
            if matches!(config.loss, LossKind::EpsInsensitive { .. }) {
                assert!(sol.objective <= 1e-12, "{config:?}");
                continue;
            }
            assert!(
                (sol.coefficients[0] - 0.3).abs() < 1e-5
                    && (sol.coefficients[1] - 0.7).abs() < 1e-5,
                "{config:?} -> {:?}",
                sol.coefficients
            );
        }
    }

    #[test]
    fn sixteen_configs_all_land_on_simplex() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let design = DMatrix::from_fn(30, 3, |_, _| rng.random::<f64>() * 50.0);
        let g = reference(design.clone());
        let c_true = dvector![0.2, 0.5, 0.3];
        let mut m = &design * &c_true;
        for v in m.iter_mut() {
            *v += rng.random::<f64>() - 0.5;
        }
        let options = SolverOptions::default();
        let configs = sixteen_configs();
        assert_eq!(configs.len(), 16);
        for config in &configs {
            let sol = deconvolve_sample(&g, &m, config, &options).unwrap();
            assert!(sol.coefficients.iter().all(|&x| x >= 0.0), "{config:?}");
            assert!((sol.coefficients.sum() - 1.0).abs() < 1e-6, "{config:?}");
        }
    }

    #[test]
    fn explicit_objective_never_worse_than_projected() {
        // The projected unconstrained solution is feasible, so the explicit
        // optimum cannot lose under the same loss.
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let options = SolverOptions::default();
        for trial in 0..10 {
            let design = DMatrix::from_fn(20, 3, |_, _| rng.random::<f64>() * 10.0);
            let g = reference(design.clone());
            let mut m = DVector::from_fn(20, |_, _| rng.random::<f64>() * 8.0);
            for v in m.iter_mut() {
                *v += 1.0;
            }
            for loss in [
                LossKind::SquaredL2,
                LossKind::AbsoluteL1,
                LossKind::Huber { m: 1.0 },
                LossKind::EpsInsensitive { epsilon: 0.5 },
            ] {
                let explicit = deconvolve_sample(
                    &g,
                    &m,
                    &DeconvolutionConfig::new(
                        loss,
                        ConstraintMode::new(EnforcementMode::Explicit, EnforcementMode::Explicit),
                        RegularizerKind::None,
                    ),
                    &options,
                )
                .unwrap();
                let projected = deconvolve_sample(
                    &g,
                    &m,
                    &DeconvolutionConfig::new(
                        loss,
                        ConstraintMode::new(EnforcementMode::Implicit, EnforcementMode::Implicit),
                        RegularizerKind::None,
                    ),
                    &options,
                )
                .unwrap();
                assert!(
                    explicit.objective
                        <= projected.objective * (1.0 + 1e-7) + 1e-12,
                    "trial {trial} {loss:?}: explicit {} projected {}",
                    explicit.objective,
                    projected.objective
                );
            }
        }
    }

    #[test]
    fn target_scaling_scales_l2_minimizer() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let design = DMatrix::from_fn(25, 3, |_, _| rng.random::<f64>());
        let target = DVector::from_fn(25, |_, _| rng.random::<f64>());
        let p = RegressionProblem {
            design: design.clone(),
            target: target.clone(),
            loss: LossKind::SquaredL2,
            constraints: ConstraintMode::new(EnforcementMode::Implicit, EnforcementMode::Implicit),
            regularizer: RegularizerKind::None,
        };
        let base = solve_ols(&p).unwrap();
        for gamma in [0.5, 3.0, 17.0] {
            let scaled = RegressionProblem {
                target: &target * gamma,
                ..p.clone()
            };
            let sol = solve_ols(&scaled).unwrap();
            assert!((sol.coefficients - &base.coefficients * gamma).norm() < 1e-9);
        }
    }
}
