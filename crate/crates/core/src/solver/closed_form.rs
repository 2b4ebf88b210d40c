//! Closed-form least-squares solvers.

use nalgebra::{Cholesky, DVector};

use crate::error::{Error, Result};
use crate::solver::loss::LossKind;
use crate::solver::types::{RegressionProblem, RegularizerKind, Solution};

/// Relative singular-value cutoff below which the normal equations are
/// treated as singular.
const SINGULAR_CUTOFF: f64 = 1e-12;

/// Ordinary least squares through the normal equations,
/// `c = (X^T X)^{-1} X^T y`.
pub fn solve_ols(problem: &RegressionProblem) -> Result<Solution> {
    problem.validate()?;
    if problem.loss != LossKind::SquaredL2 {
        return Err(Error::InvalidInput(
            "ordinary least squares requires the squared loss".into(),
        ));
    }
    if problem.regularizer != RegularizerKind::None {
        return Err(Error::InvalidInput(
            "ordinary least squares takes no regularizer".into(),
        ));
    }
    let condition = design_condition(problem);
    if !condition.is_finite() {
        return Err(Error::IllConditioned { condition });
    }
    let gram = problem.design.transpose() * &problem.design;
    let chol = Cholesky::new(gram).ok_or(Error::IllConditioned { condition })?;
    let coefficients = chol.solve(&(problem.design.transpose() * &problem.target));
    Ok(closed_form_solution(problem, coefficients))
}

/// Ridge regression, `c = (X^T X + lambda I)^{-1} X^T y`.
pub fn solve_ridge(problem: &RegressionProblem) -> Result<Solution> {
    problem.validate()?;
    if problem.loss != LossKind::SquaredL2 {
        return Err(Error::InvalidInput(
            "ridge regression requires the squared loss".into(),
        ));
    }
    let lambda = match problem.regularizer {
        RegularizerKind::NormTwo { lambda } => lambda,
        _ => {
            return Err(Error::InvalidInput(
                "ridge regression requires the norm-2 regularizer".into(),
            ))
        }
    };
    if lambda == 0.0 {
        // Limit case: plain least squares.
        let mut ols_problem = problem.clone();
        ols_problem.regularizer = RegularizerKind::None;
        let sol = solve_ols(&ols_problem)?;
        return Ok(closed_form_solution(problem, sol.coefficients));
    }
    let mut gram = problem.design.transpose() * &problem.design;
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let chol = Cholesky::new(gram).ok_or(Error::IllConditioned {
        condition: f64::INFINITY,
    })?;
    let coefficients = chol.solve(&(problem.design.transpose() * &problem.target));
    Ok(closed_form_solution(problem, coefficients))
}

fn closed_form_solution(problem: &RegressionProblem, coefficients: DVector<f64>) -> Solution {
    let objective = problem.objective(&coefficients);
    let residual_rmsd = problem.residual_rmsd(&coefficients);
    Solution {
        coefficients,
        objective,
        iterations: 0,
        converged: true,
        residual_rmsd,
    }
}

/// Condition of the design matrix; infinite when numerically singular.
pub fn design_condition(problem: &RegressionProblem) -> f64 {
    let svd = problem.design.clone().svd(false, false);
    let max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let min = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if max == 0.0 || min < SINGULAR_CUTOFF * max {
        f64::INFINITY
    } else {
        max / min
    }
}
