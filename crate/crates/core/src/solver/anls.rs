//! Alternating non-negative least squares for full deconvolution: joint
//! estimation of the reference profiles and the concentrations when only
//! the mixtures are observed.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::ExpressionMatrix;
use crate::solver::admm::solve_admm;
use crate::solver::loss::{loss_value, LossKind};
use crate::solver::nnls::nnls_normal;
use crate::solver::types::{
    ConstraintMode, ConstraintSet, EnforcementMode, RegressionProblem, RegularizerKind,
    SolverOptions,
};

/// Which factor the caller provides to start the alternation.
#[derive(Debug, Clone)]
pub enum AnlsInit {
    /// Initial reference profiles (genes x cell-types); the concentration
    /// step runs first.
    Reference(DMatrix<f64>),
    /// Initial concentrations (cell-types x samples); the reference step
    /// runs first.
    Concentrations(DMatrix<f64>),
}

#[derive(Debug, Clone)]
pub struct AnlsOptions {
    pub max_iterations: usize,
    /// Relative objective decrease below which the alternation stops.
    pub tolerance: f64,
    pub solver: SolverOptions,
}

impl Default for AnlsOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-9,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnlsOutcome {
    /// Estimated reference profiles, genes x cell-types.
    pub reference: DMatrix<f64>,
    /// Estimated concentrations, cell-types x samples.
    pub concentrations: DMatrix<f64>,
    /// Objective after the initial completion step and after every accepted
    /// half-step; non-increasing by construction.
    pub objective_trace: Vec<f64>,
    /// Set when a rank-deficient factor forced ridge regularization of a
    /// half-step's normal system.
    pub ridge_regularized: bool,
    pub converged: bool,
    pub iterations: usize,
}

/// Alternate non-negative updates of the two factors of `mixture = G * C`
/// until the relative objective decrease falls below tolerance. Updates of
/// the reference factor run per gene, updates of the concentration factor
/// per sample; each block update is safeguarded so the objective trace
/// never increases.
pub fn full_deconvolve_anls(
    mixture: &ExpressionMatrix,
    init: AnlsInit,
    loss: LossKind,
    options: &AnlsOptions,
) -> Result<AnlsOutcome> {
    loss.validate()?;
    let m = mixture.values();
    let n = m.nrows();
    let p = m.ncols();

    let (mut g, mut c, c_first) = match init {
        AnlsInit::Reference(g0) => {
            if g0.nrows() != n {
                return Err(Error::InvalidInput(format!(
                    "initial reference has {} rows but the mixture has {} genes",
                    g0.nrows(),
                    n
                )));
            }
            let q = g0.ncols();
            (g0, DMatrix::<f64>::zeros(q, p), true)
        }
        AnlsInit::Concentrations(c0) => {
            if c0.ncols() != p {
                return Err(Error::InvalidInput(format!(
                    "initial concentrations have {} columns but the mixture has {} samples",
                    c0.ncols(),
                    p
                )));
            }
            let q = c0.nrows();
            (DMatrix::<f64>::zeros(n, q), c0, false)
        }
    };
    let q = g.ncols();
    if q > p {
        return Err(Error::InvalidInput(format!(
            "{q} cell-types exceed {p} samples; the reference update would be under-determined"
        )));
    }
    if g.iter().chain(c.iter()).any(|v| *v < 0.0) {
        return Err(Error::InvalidInput(
            "initial factors must be non-negative".into(),
        ));
    }

    let mut ridge_regularized = false;

    // Complete the missing factor before the first objective is defined.
    if c_first {
        c = concentration_step(m, &g, loss, options, &mut ridge_regularized)?;
    } else {
        g = reference_step(m, &c, loss, options, &mut ridge_regularized)?;
    }

    let mut objective = anls_objective(m, &g, &c, loss);
    let mut trace = vec![objective];
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..options.max_iterations {
        iterations = iter + 1;
        let previous = objective;

        // First half-step updates the factor that was *not* just solved.
        let mut progressed = false;
        for half in 0..2 {
            let update_reference = (half == 0) == c_first;
            if update_reference {
                let candidate = reference_step(m, &c, loss, options, &mut ridge_regularized)?;
                let value = anls_objective(m, &candidate, &c, loss);
                if value <= objective {
                    g = candidate;
                    progressed |= value < objective;
                    objective = value;
                }
            } else {
                let candidate = concentration_step(m, &g, loss, options, &mut ridge_regularized)?;
                let value = anls_objective(m, &g, &candidate, loss);
                if value <= objective {
                    c = candidate;
                    progressed |= value < objective;
                    objective = value;
                }
            }
            trace.push(objective);
        }

        let decrease = (previous - objective) / previous.abs().max(1e-300);
        if !progressed || decrease < options.tolerance {
            converged = true;
            break;
        }
    }

    Ok(AnlsOutcome {
        reference: g,
        concentrations: c,
        objective_trace: trace,
        ridge_regularized,
        converged,
        iterations,
    })
}

fn anls_objective(m: &DMatrix<f64>, g: &DMatrix<f64>, c: &DMatrix<f64>, loss: LossKind) -> f64 {
    let residual = m - g * c;
    residual.iter().map(|&r| loss_value(loss, r)).sum()
}

/// Column-wise concentration update: one non-negative regression per sample.
fn concentration_step(
    m: &DMatrix<f64>,
    g: &DMatrix<f64>,
    loss: LossKind,
    options: &AnlsOptions,
    ridge_regularized: &mut bool,
) -> Result<DMatrix<f64>> {
    let q = g.ncols();
    let p = m.ncols();
    let mut c = DMatrix::<f64>::zeros(q, p);
    if loss == LossKind::SquaredL2 {
        let gram = g.transpose() * g;
        for j in 0..p {
            let rhs = g.transpose() * m.column(j);
            let sol = nnls_normal(&gram, &rhs);
            *ridge_regularized |= sol.ridge_regularized;
            c.column_mut(j).copy_from(&sol.coefficients);
        }
    } else {
        for j in 0..p {
            let sol = nonneg_robust(g.clone(), m.column(j).into_owned(), loss, options)?;
            c.column_mut(j).copy_from(&sol);
        }
    }
    Ok(c)
}

/// Row-wise reference update: one non-negative regression per gene, with
/// the transposed concentrations as the design.
fn reference_step(
    m: &DMatrix<f64>,
    c: &DMatrix<f64>,
    loss: LossKind,
    options: &AnlsOptions,
    ridge_regularized: &mut bool,
) -> Result<DMatrix<f64>> {
    let q = c.nrows();
    let n = m.nrows();
    let design = c.transpose();
    let mut g = DMatrix::<f64>::zeros(n, q);
    if loss == LossKind::SquaredL2 {
        let gram = c * c.transpose();
        for i in 0..n {
            let rhs = c * m.row(i).transpose();
            let sol = nnls_normal(&gram, &rhs);
            *ridge_regularized |= sol.ridge_regularized;
            g.row_mut(i).copy_from(&sol.coefficients.transpose());
        }
    } else {
        for i in 0..n {
            let sol = nonneg_robust(design.clone(), m.row(i).transpose(), loss, options)?;
            g.row_mut(i).copy_from(&sol.transpose());
        }
    }
    Ok(g)
}

/// Non-negative regression under a robust loss; degrades to the best
/// iterate when the inner solver hits its iteration cap, since the outer
/// safeguard rejects non-improving blocks anyway.
fn nonneg_robust(
    design: DMatrix<f64>,
    target: DVector<f64>,
    loss: LossKind,
    options: &AnlsOptions,
) -> Result<DVector<f64>> {
    let problem = RegressionProblem {
        design,
        target,
        loss,
        constraints: ConstraintMode::new(EnforcementMode::Explicit, EnforcementMode::Implicit),
        regularizer: RegularizerKind::None,
    };
    match solve_admm(&problem, ConstraintSet::NonNegative, &options.solver) {
        Ok(sol) => Ok(sol.coefficients),
        Err(Error::NonConvergence {
            best_coefficients, ..
        }) => Ok(DVector::from_vec(best_coefficients)),
        Err(other) => Err(other),
    }
}
