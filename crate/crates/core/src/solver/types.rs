//! Problem description types shared by all solver backends.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::solver::loss::{soft_threshold, LossKind};

/// How a constraint is enforced: inside the optimization (`Explicit`) or
/// by post-hoc projection of the unconstrained solution (`Implicit`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnforcementMode {
    Implicit,
    Explicit,
}

impl EnforcementMode {
    pub fn name(&self) -> &'static str {
        match self {
            EnforcementMode::Implicit => "implicit",
            EnforcementMode::Explicit => "explicit",
        }
    }
}

/// Enforcement choice for the non-negativity and sum-to-one constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstraintMode {
    pub nn: EnforcementMode,
    pub sto: EnforcementMode,
}

impl ConstraintMode {
    pub fn new(nn: EnforcementMode, sto: EnforcementMode) -> Self {
        Self { nn, sto }
    }

    /// The feasible set handed to the optimizer; implicit constraints are
    /// applied afterwards by `enforce_implicit`.
    pub fn explicit_set(&self) -> ConstraintSet {
        match (self.nn, self.sto) {
            (EnforcementMode::Implicit, EnforcementMode::Implicit) => ConstraintSet::Free,
            (EnforcementMode::Explicit, EnforcementMode::Implicit) => ConstraintSet::NonNegative,
            (EnforcementMode::Implicit, EnforcementMode::Explicit) => ConstraintSet::SumToOne,
            (EnforcementMode::Explicit, EnforcementMode::Explicit) => ConstraintSet::Simplex,
        }
    }
}

/// Feasible sets supported inside the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintSet {
    /// No constraint.
    Free,
    /// Coefficients >= 0.
    NonNegative,
    /// Coefficients sum to one (sign unrestricted).
    SumToOne,
    /// Probability simplex: >= 0 and summing to one.
    Simplex,
}

impl ConstraintSet {
    /// Euclidean projection onto the set, written into `v`.
    pub fn project(&self, v: &mut DVector<f64>) {
        match self {
            ConstraintSet::Free => {}
            ConstraintSet::NonNegative => {
                for x in v.iter_mut() {
                    if *x < 0.0 {
                        *x = 0.0;
                    }
                }
            }
            ConstraintSet::SumToOne => {
                let shift = (1.0 - v.sum()) / v.len() as f64;
                for x in v.iter_mut() {
                    *x += shift;
                }
            }
            ConstraintSet::Simplex => project_simplex(v),
        }
    }
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &mut DVector<f64>) {
    let n = v.len();
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (k, &x) in sorted.iter().enumerate() {
        cumulative += x;
        let candidate = (cumulative - 1.0) / (k + 1) as f64;
        if x - candidate > 0.0 {
            tau = candidate;
        } else {
            break;
        }
    }
    let _ = n;
    for x in v.iter_mut() {
        *x = (*x - tau).max(0.0);
    }
}

/// Penalty added to the loss, scaled by its own lambda.
#[derive(Debug, Clone, PartialEq)]
pub enum RegularizerKind {
    None,
    /// `lambda * ||c||_2^2` — shrinks towards a flat solution.
    NormTwo { lambda: f64 },
    /// `lambda * ||c||_1` — sparsifies.
    NormOne { lambda: f64 },
    /// `lambda * (alpha ||c||_1 + (1 - alpha) ||c||_2^2)`.
    ElasticNet { lambda: f64, alpha: f64 },
    /// `lambda * sum_g ||c_g||_2` over a partition of the cell-types:
    /// flat within groups, sparse across groups.
    GroupLasso { lambda: f64, groups: Vec<Vec<usize>> },
}

impl RegularizerKind {
    pub fn validate(&self, n_coefficients: usize) -> Result<()> {
        match self {
            RegularizerKind::None => Ok(()),
            RegularizerKind::NormTwo { lambda } | RegularizerKind::NormOne { lambda } => {
                require_nonneg(*lambda)
            }
            RegularizerKind::ElasticNet { lambda, alpha } => {
                require_nonneg(*lambda)?;
                if !(0.0..=1.0).contains(alpha) {
                    return Err(Error::InvalidInput(format!(
                        "elastic net alpha must lie in [0,1], got {alpha}"
                    )));
                }
                Ok(())
            }
            RegularizerKind::GroupLasso { lambda, groups } => {
                require_nonneg(*lambda)?;
                let mut seen = vec![false; n_coefficients];
                for g in groups {
                    for &i in g {
                        if i >= n_coefficients || seen[i] {
                            return Err(Error::InvalidInput(
                                "group lasso groups must partition the cell-type set".into(),
                            ));
                        }
                        seen[i] = true;
                    }
                }
                if seen.iter().any(|s| !s) {
                    return Err(Error::InvalidInput(
                        "group lasso groups must cover every cell-type".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match self {
            RegularizerKind::None => None,
            RegularizerKind::NormTwo { lambda }
            | RegularizerKind::NormOne { lambda }
            | RegularizerKind::ElasticNet { lambda, .. }
            | RegularizerKind::GroupLasso { lambda, .. } => Some(*lambda),
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        match self {
            RegularizerKind::None => RegularizerKind::None,
            RegularizerKind::NormTwo { .. } => RegularizerKind::NormTwo { lambda },
            RegularizerKind::NormOne { .. } => RegularizerKind::NormOne { lambda },
            RegularizerKind::ElasticNet { alpha, .. } => RegularizerKind::ElasticNet {
                lambda,
                alpha: *alpha,
            },
            RegularizerKind::GroupLasso { groups, .. } => RegularizerKind::GroupLasso {
                lambda,
                groups: groups.clone(),
            },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RegularizerKind::None => "none",
            RegularizerKind::NormTwo { .. } => "ridge",
            RegularizerKind::NormOne { .. } => "lasso",
            RegularizerKind::ElasticNet { .. } => "elastic",
            RegularizerKind::GroupLasso { .. } => "group",
        }
    }

    /// Penalty value at `c`.
    pub fn value(&self, c: &DVector<f64>) -> f64 {
        match self {
            RegularizerKind::None => 0.0,
            RegularizerKind::NormTwo { lambda } => lambda * c.norm_squared(),
            RegularizerKind::NormOne { lambda } => lambda * c.iter().map(|x| x.abs()).sum::<f64>(),
            RegularizerKind::ElasticNet { lambda, alpha } => {
                lambda
                    * (alpha * c.iter().map(|x| x.abs()).sum::<f64>()
                        + (1.0 - alpha) * c.norm_squared())
            }
            RegularizerKind::GroupLasso { lambda, groups } => {
                lambda
                    * groups
                        .iter()
                        .map(|g| g.iter().map(|&i| c[i] * c[i]).sum::<f64>().sqrt())
                        .sum::<f64>()
            }
        }
    }

    /// Proximal operator `argmin_z t*R(z) + ||z - v||^2 / 2`, in place.
    pub fn prox(&self, v: &mut DVector<f64>, t: f64) {
        match self {
            RegularizerKind::None => {}
            RegularizerKind::NormTwo { lambda } => {
                let s = 1.0 / (1.0 + 2.0 * t * lambda);
                v.scale_mut(s);
            }
            RegularizerKind::NormOne { lambda } => {
                let thr = t * lambda;
                for x in v.iter_mut() {
                    *x = soft_threshold(*x, thr);
                }
            }
            RegularizerKind::ElasticNet { lambda, alpha } => {
                let thr = t * lambda * alpha;
                let s = 1.0 / (1.0 + 2.0 * t * lambda * (1.0 - alpha));
                for x in v.iter_mut() {
                    *x = soft_threshold(*x, thr) * s;
                }
            }
            RegularizerKind::GroupLasso { lambda, groups } => {
                let thr = t * lambda;
                for g in groups {
                    let norm: f64 = g.iter().map(|&i| v[i] * v[i]).sum::<f64>().sqrt();
                    let scale = if norm > thr { 1.0 - thr / norm } else { 0.0 };
                    for &i in g {
                        v[i] *= scale;
                    }
                }
            }
        }
    }
}

/// Parse a cell-type grouping spec like `A,B|C` ('|' between groups, ','
/// between members) into index groups over the given cell-type list.
pub fn parse_celltype_groups(spec: &str, celltypes: &[String]) -> Result<Vec<Vec<usize>>> {
    let mut groups = Vec::new();
    for group in spec.split('|') {
        let mut indices = Vec::new();
        for member in group.split(',') {
            let member = member.trim();
            let idx = celltypes
                .iter()
                .position(|t| t == member)
                .ok_or_else(|| {
                    Error::InvalidInput(format!("unknown cell-type '{member}' in group spec"))
                })?;
            indices.push(idx);
        }
        groups.push(indices);
    }
    // Partition validity is re-checked by the regularizer itself.
    Ok(groups)
}

fn require_nonneg(lambda: f64) -> Result<()> {
    if lambda >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "regularization strength must be non-negative, got {lambda}"
        )))
    }
}

/// A single-sample regression instance: estimate coefficients `c` so that
/// `design * c` reproduces `target` under the configured loss, constraints,
/// and regularizer.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    pub design: DMatrix<f64>,
    pub target: DVector<f64>,
    pub loss: LossKind,
    pub constraints: ConstraintMode,
    pub regularizer: RegularizerKind,
}

impl RegressionProblem {
    pub fn validate(&self) -> Result<()> {
        if self.design.nrows() != self.target.len() {
            return Err(Error::Data(format!(
                "design has {} rows but target has {} entries",
                self.design.nrows(),
                self.target.len()
            )));
        }
        if self.design.nrows() == 0 || self.design.ncols() == 0 {
            return Err(Error::InvalidInput(
                "regression problem needs at least one row and one column".into(),
            ));
        }
        self.loss.validate()?;
        self.regularizer.validate(self.design.ncols())
    }

    /// Full objective (loss plus penalty) at `c`.
    pub fn objective(&self, c: &DVector<f64>) -> f64 {
        let residual = &self.target - &self.design * c;
        let loss: f64 = residual
            .iter()
            .map(|&r| crate::solver::loss::loss_value(self.loss, r))
            .sum();
        loss + self.regularizer.value(c)
    }

    /// Root mean squared residual at `c`.
    pub fn residual_rmsd(&self, c: &DVector<f64>) -> f64 {
        let residual = &self.target - &self.design * c;
        (residual.norm_squared() / residual.len() as f64).sqrt()
    }
}

/// Solver output: the estimate plus diagnostics.
#[derive(Debug, Clone)]
pub struct Solution {
    pub coefficients: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residual_rmsd: f64,
}

/// Iterative solver controls.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Relative residual tolerance.
    pub rel_tol: f64,
    /// Absolute residual tolerance floor.
    pub abs_tol: f64,
    /// ADMM over-relaxation factor in (0, 2).
    pub over_relaxation: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            over_relaxation: 1.7,
        }
    }
}
