//! Splitting-based solver covering every loss / constraint / regularizer
//! combination through exact proximal maps.
//!
//! The problem
//!   minimize  sum_i L(y_i - x_i . c) + lambda R(c)  subject to  c in C
//! is split into a residual copy `r` (with `Xc + r = y`), a constraint copy
//! `z1 = c`, and a regularizer copy `z2 = c`. Each iteration solves one
//! fixed q x q normal system for `c` (factored once), then applies the
//! closed-form prox of the loss to `r`, the projection onto C to `z1`, and
//! the prox of the penalty to `z2`. The penalty parameter is rebalanced
//! from the primal/dual residual ratio; the factorization never depends on
//! it because the smooth part of the split objective is zero.

use nalgebra::{Cholesky, DVector};
#[cfg(test)]
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::solver::loss::{loss_prox, LossKind};
use crate::solver::types::{
    ConstraintSet, RegressionProblem, RegularizerKind, Solution, SolverOptions,
};

/// Residual-balancing parameters.
const BALANCE_RATIO: f64 = 10.0;
const BALANCE_FACTOR: f64 = 2.0;
const BALANCE_EVERY: usize = 5;
const RHO_MIN: f64 = 1e-10;
const RHO_MAX: f64 = 1e12;

pub fn solve_admm(
    problem: &RegressionProblem,
    set: ConstraintSet,
    options: &SolverOptions,
) -> Result<Solution> {
    problem.validate()?;

    // Rescale the data to unit-magnitude entries. Dividing both design and
    // target by `s` leaves the minimizer unchanged once the loss shape
    // parameters shrink by `s` and the penalty weight by the loss's scaling
    // power, and it keeps the penalty dynamics well inside f64 range for
    // raw expression intensities.
    let n_raw = problem.design.nrows();
    let q_raw = problem.design.ncols();
    let typical = problem.design.norm() / ((n_raw * q_raw) as f64).sqrt();
    let scale = if typical.is_finite() && typical > 0.0 {
        typical
    } else {
        1.0
    };
    let scaled = if scale != 1.0 {
        let loss = match problem.loss {
            LossKind::SquaredL2 => LossKind::SquaredL2,
            LossKind::AbsoluteL1 => LossKind::AbsoluteL1,
            LossKind::Huber { m } => LossKind::Huber { m: m / scale },
            LossKind::EpsInsensitive { epsilon } => LossKind::EpsInsensitive {
                epsilon: epsilon / scale,
            },
        };
        let power = match problem.loss {
            LossKind::SquaredL2 | LossKind::Huber { .. } => 2,
            LossKind::AbsoluteL1 | LossKind::EpsInsensitive { .. } => 1,
        };
        let regularizer = match problem.regularizer.lambda() {
            Some(lambda) => problem
                .regularizer
                .with_lambda(lambda / scale.powi(power)),
            None => problem.regularizer.clone(),
        };
        RegressionProblem {
            design: &problem.design / scale,
            target: &problem.target / scale,
            loss,
            constraints: problem.constraints,
            regularizer,
        }
    } else {
        problem.clone()
    };

    // A Huber loss deep in its linear regime has asymptotic slope 2m, so
    // its duals live at a vanishing scale. Weighting the objective by a
    // constant keeps the slope order-one without moving the minimizer.
    let loss_weight = match scaled.loss {
        LossKind::Huber { m } if m < 0.5 => 1.0 / (2.0 * m),
        _ => 1.0,
    };

    match solve_admm_scaled(&scaled, set, options, loss_weight) {
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
    }
}

fn solve_admm_scaled(
    problem: &RegressionProblem,
    set: ConstraintSet,
    options: &SolverOptions,
    loss_weight: f64,
) -> Result<Solution> {
    let design = &problem.design;
    let target = &problem.target;
    let design_t = design.transpose();
    let n = design.nrows();
    let q = design.ncols();
    let alpha = options.over_relaxation;

    // Quadratic penalties join the smooth part of the c-update; only the
    // genuinely nonsmooth remainder goes through the z2 prox.
    let (quad_weight, nonsmooth) = match &problem.regularizer {
        RegularizerKind::NormTwo { lambda } => (loss_weight * lambda, RegularizerKind::None),
        RegularizerKind::ElasticNet { lambda, alpha } => (
            loss_weight * lambda * (1.0 - alpha),
            RegularizerKind::NormOne {
                lambda: lambda * alpha,
            },
        ),
        other => (0.0, other.clone()),
    };

    // Consensus constraints get penalty kappa*rho against the residual
    // block's rho, with kappa matched to the Gram scale; otherwise the
    // c-update all but ignores the z copies whenever the design is large.
    let gram = &design_t * design;
    let kappa = (gram.trace() / q as f64).max(1.0);

    let mut normal_base = gram;
    for i in 0..q {
        normal_base[(i, i)] += 2.0 * kappa;
    }
    let factor = |rho: f64| -> Result<Cholesky<f64, nalgebra::Dyn>> {
        let mut normal = normal_base.clone();
        if quad_weight > 0.0 {
            for i in 0..q {
                normal[(i, i)] += 2.0 * quad_weight / rho;
            }
        }
        Cholesky::new(normal).ok_or(Error::IllConditioned {
            condition: f64::INFINITY,
        })
    };

    // Start from a feasible guess.
    let mut c = DVector::<f64>::zeros(q);
    if matches!(set, ConstraintSet::Simplex | ConstraintSet::SumToOne) {
        c.fill(1.0 / q as f64);
    }
    let mut r = target - design * &c;
    let mut z1 = c.clone();
    set.project(&mut z1);
    let mut z2 = c.clone();
    let mut dual_r = DVector::<f64>::zeros(n);
    let mut dual_1 = DVector::<f64>::zeros(q);
    let mut dual_2 = DVector::<f64>::zeros(q);

    // Start the penalty at the scale of the smooth quadratic so heavy
    // ridge weights do not need thousands of rebalancing rounds.
    let mut rho: f64 = (quad_weight / kappa).max(1.0);
    let mut chol = factor(rho)?;
    let target_norm = target.norm();
    let burn_in = (options.max_iterations / 10).clamp(100, 2500);

    // Cadence of the vertex-exit attempts for piecewise-linear losses.
    const STAGNATION_WINDOW: usize = 250;
    let mut last_window_objective = f64::INFINITY;
    let mut last_polish: Option<(DVector<f64>, f64)> = None;
    let mut polish_exit: Option<DVector<f64>> = None;

    let mut iterations = options.max_iterations;
    let mut converged = false;

    for iter in 0..options.max_iterations {
        // c-update:
        // (X^T X + 2 kappa I + 2 quad/rho I) c =
        //     X^T (y - r - u_r) + kappa ((z1 - u1) + (z2 - u2))
        let rhs = &design_t * (target - &r - &dual_r) + kappa * ((&z1 - &dual_1) + (&z2 - &dual_2));
        c = chol.solve(&rhs);

        let design_c = design * &c;

        // Over-relaxed copies of the coupling terms.
        let relaxed_dc = alpha * &design_c + (1.0 - alpha) * (target - &r);
        let relaxed_c1 = alpha * &c + (1.0 - alpha) * &z1;
        let relaxed_c2 = alpha * &c + (1.0 - alpha) * &z2;

        let r_prev = r.clone();
        let z1_prev = z1.clone();
        let z2_prev = z2.clone();

        // r-update: separable loss prox at the weighted objective.
        let v = target - &relaxed_dc - &dual_r;
        r = DVector::from_iterator(
            n,
            v.iter().map(|&vi| loss_prox(problem.loss, vi, loss_weight / rho)),
        );

        // z1-update: projection onto the explicit constraint set.
        z1 = &relaxed_c1 + &dual_1;
        set.project(&mut z1);

        // z2-update: prox of the nonsmooth penalty remainder at the
        // consensus block's penalty; the weight applies to the whole
        // objective, penalty included.
        z2 = &relaxed_c2 + &dual_2;
        nonsmooth.prox(&mut z2, loss_weight / (kappa * rho));

        // Scaled dual ascent.
        dual_r += &relaxed_dc + &r - target;
        dual_1 += &relaxed_c1 - &z1;
        dual_2 += &relaxed_c2 - &z2;

        // True (unrelaxed) residuals in the penalty-weighted metric.
        let p_r = &design_c + &r - target;
        let p_1 = &c - &z1;
        let p_2 = &c - &z2;
        let primal =
            (p_r.norm_squared() + kappa * (p_1.norm_squared() + p_2.norm_squared())).sqrt();
        let dual_vec =
            &design_t * (&r - &r_prev) - kappa * ((&z1 - &z1_prev) + (&z2 - &z2_prev));
        let dual = rho * dual_vec.norm();

        let scale_primal = (design_c.norm_squared() + 2.0 * kappa * c.norm_squared())
            .sqrt()
            .max((r.norm_squared() + kappa * (z1.norm_squared() + z2.norm_squared())).sqrt())
            .max(target_norm);
        let eps_primal =
            ((n + 2 * q) as f64).sqrt() * options.abs_tol + options.rel_tol * scale_primal;
        // The stationarity sum X^T u_r + kappa (u1 + u2) vanishes at the
        // optimum, so the dual tolerance is referenced against the largest
        // dual block instead.
        let dual_ref = (&design_t * &dual_r)
            .norm()
            .max(kappa * dual_1.norm())
            .max(kappa * dual_2.norm())
            .max(2.0 * quad_weight * c.norm() / rho);
        let eps_dual = (q as f64).sqrt() * options.abs_tol + options.rel_tol * rho * dual_ref;

        if primal <= eps_primal && dual <= eps_dual {
            iterations = iter + 1;
            converged = true;
            break;
        }

        // Secondary exits for the flat tail of the piecewise-linear losses,
        // checked once per window when the consensus gap is already small:
        // either the kink vertex solved from the active structure is stable
        // across windows and at least as good as the feasible iterate, or
        // whole windows of iterations stop moving the feasible objective.
        if iter % STAGNATION_WINDOW == STAGNATION_WINDOW - 1 {
            let feasible_objective = problem.objective(&z1);
            let gap_small = primal <= 1e-6 * scale_primal.max(1.0);

            // Exact interpolation: the feasible copy reproduces the target
            // to floating noise, so no loss can be driven meaningfully
            // lower and the relative criteria have nothing to normalize by.
            if problem.regularizer == RegularizerKind::None {
                let residual_inf = (target - design * &z1).amax();
                if residual_inf <= 1e-12 * target.amax().max(1e-300) {
                    polish_exit = Some(z1.clone());
                    iterations = iter + 1;
                    converged = true;
                    break;
                }
            }

            // Support exit for the squared loss: freeze the active faces,
            // solve the equality-constrained least squares exactly, and
            // accept on the exact first-order condition (sufficient for a
            // smooth convex objective).
            if problem.loss == LossKind::SquaredL2
                && problem.regularizer == RegularizerKind::None
            {
                if let Some(vertex) =
                    crate::solver::stiff_huber::zone_step(problem, set, f64::INFINITY, &z1)
                {
                    let value = problem.objective(&vertex);
                    if value <= feasible_objective + 1e-12 * feasible_objective.abs().max(1.0)
                        && crate::solver::stiff_huber::huber_first_order_optimal(
                            problem,
                            set,
                            f64::INFINITY,
                            &vertex,
                        )
                    {
                        polish_exit = Some(vertex);
                        iterations = iter + 1;
                        converged = true;
                        break;
                    }
                }
            }

            // Vertex exit: the kink vertex must beat the feasible iterate
            // and pass the first-order edge test; it is taken immediately
            // when the iterate has homed onto it, or once it reproduces
            // itself across two polish attempts.
            if let Some(vertex) = kink_polish(problem, set, &z1) {
                let value = problem.objective(&vertex);
                if value <= feasible_objective + 1e-12 * feasible_objective.abs().max(1.0)
                    && vertex_edge_optimal(problem, set, &vertex)
                {
                    let near = (&vertex - &z1).amax() <= 1e-3 * (1.0 + vertex.amax());
                    let stable = last_polish.as_ref().is_some_and(|(prev, _)| {
                        (&vertex - prev).amax() <= 1e-10 * (1.0 + vertex.amax())
                    });
                    if near || stable {
                        polish_exit = Some(vertex);
                        iterations = iter + 1;
                        converged = true;
                        break;
                    }
                    last_polish = Some((vertex, value));
                } else {
                    last_polish = None;
                }
            }

            let _ = (last_window_objective, gap_small);
            last_window_objective = feasible_objective;
        }

        // Residual balancing during burn-in, then only sparse corrections:
        // each rescale perturbs the duals, and perpetual adaptation cycles
        // instead of converging, but a frozen badly-placed rho stalls too.
        if (iter < burn_in && iter % BALANCE_EVERY == BALANCE_EVERY - 1)
            || (iter >= burn_in && iter % 1000 == 999)
        {
            if primal > BALANCE_RATIO * dual && rho * BALANCE_FACTOR <= RHO_MAX {
                rho *= BALANCE_FACTOR;
                dual_r /= BALANCE_FACTOR;
                dual_1 /= BALANCE_FACTOR;
                dual_2 /= BALANCE_FACTOR;
                if quad_weight > 0.0 {
                    chol = factor(rho)?;
                }
            } else if dual > BALANCE_RATIO * primal && rho / BALANCE_FACTOR >= RHO_MIN {
                rho /= BALANCE_FACTOR;
                dual_r *= BALANCE_FACTOR;
                dual_1 *= BALANCE_FACTOR;
                dual_2 *= BALANCE_FACTOR;
                if quad_weight > 0.0 {
                    chol = factor(rho)?;
                }
            }
        }
    }

    // Report the copy that satisfies its non-smooth structure exactly:
    // the vertex from a polish exit, else the constraint copy when a set is
    // enforced, the penalty copy when the penalty is sparsity-inducing, and
    // the consensus value otherwise.
    let mut coefficients = polish_exit.unwrap_or(match set {
        ConstraintSet::Free => match nonsmooth {
            RegularizerKind::NormOne { .. } | RegularizerKind::GroupLasso { .. } => z2,
            _ => c,
        },
        _ => z1,
    });
    let mut objective = problem.objective(&coefficients);

    // Piecewise-linear optima sit on intersections of residual kinks and
    // constraint faces; solving for that vertex directly removes the last
    // fraction of ADMM's creep. Accepted only when the objective improves.
    if let Some(polished) = kink_polish(problem, set, &coefficients) {
        let value = problem.objective(&polished);
        if value < objective {
            coefficients = polished;
            objective = value;
        }
    }

    // At the iteration cap a piecewise-linear point that still passes the
    // first-order edge test after exhaustive descent is accepted as solved.
    if !converged
        && matches!(
            problem.loss,
            LossKind::AbsoluteL1 | LossKind::EpsInsensitive { .. }
        )
        && problem.regularizer == crate::solver::types::RegularizerKind::None
        && vertex_edge_optimal(problem, set, &coefficients)
    {
        converged = true;
    }
    // Same rescue for the smooth losses via their exact first-order
    // certificates (the squared loss is Huber with an infinite zone).
    if !converged && problem.regularizer == crate::solver::types::RegularizerKind::None {
        let zone = match problem.loss {
            LossKind::SquaredL2 => Some(f64::INFINITY),
            LossKind::Huber { m } => Some(m),
            _ => None,
        };
        if let Some(m) = zone {
            if let Some(vertex) =
                crate::solver::stiff_huber::zone_step(problem, set, m, &coefficients)
            {
                let value = problem.objective(&vertex);
                if value < objective {
                    coefficients = vertex;
                    objective = value;
                }
            }
            if crate::solver::stiff_huber::huber_first_order_optimal(
                problem,
                set,
                m,
                &coefficients,
            ) {
                converged = true;
            }
        }
    }

    if !converged {
        return Err(Error::NonConvergence {
            iterations: options.max_iterations,
            best_objective: objective,
            best_coefficients: coefficients.iter().copied().collect(),
        });
    }

    let residual_rmsd = problem.residual_rmsd(&coefficients);
    Ok(Solution {
        coefficients,
        objective,
        iterations,
        converged,
        residual_rmsd,
    })
}

/// Solve for the vertex of active residual kinks and constraint faces near
/// a candidate point of a piecewise-linear problem, trying a ladder of
/// detection tolerances and keeping the best feasible result. Returns
/// nothing when no tolerance pins the local structure down.
fn kink_polish(
    problem: &RegressionProblem,
    set: ConstraintSet,
    candidate: &DVector<f64>,
) -> Option<DVector<f64>> {
    use crate::solver::types::RegularizerKind;
    if problem.regularizer != RegularizerKind::None {
        return None;
    }
    if !matches!(
        problem.loss,
        LossKind::AbsoluteL1 | LossKind::EpsInsensitive { .. }
    ) {
        return None;
    }
    let scale = problem.target.amax().max(1.0);
    let mut best: Option<(DVector<f64>, f64)> = None;
    for tol_exp in [-7, -6, -5, -4, -3] {
        let tol_r = scale * 10f64.powi(tol_exp);
        if let Some(vertex) = kink_vertex(problem, set, candidate, tol_r) {
            let value = problem.objective(&vertex);
            if best.as_ref().is_none_or(|(_, b)| value < *b) {
                best = Some((vertex, value));
            }
        }
    }
    // Walk descending edges from the best vertex (or from the candidate
    // itself when no structure was detected).
    let start = best
        .map(|(v, _)| v)
        .unwrap_or_else(|| candidate.clone());
    Some(edge_descend(problem, set, start))
}

fn kink_vertex(
    problem: &RegressionProblem,
    set: ConstraintSet,
    candidate: &DVector<f64>,
    tol_r: f64,
) -> Option<DVector<f64>> {
    let epsilon = match problem.loss {
        LossKind::AbsoluteL1 => 0.0,
        LossKind::EpsInsensitive { epsilon } => epsilon,
        _ => return None,
    };
    let design = &problem.design;
    let target = &problem.target;
    let q = design.ncols();
    let residual = target - design * candidate;
    let tol_c = 1e-6;

    // Free coordinates: those not pinned to the non-negativity face.
    let clamped = matches!(set, ConstraintSet::NonNegative | ConstraintSet::Simplex);
    let free: Vec<usize> = (0..q)
        .filter(|&k| !clamped || candidate[k] > tol_c)
        .collect();
    if free.is_empty() {
        return None;
    }

    // Interpolation equations from residuals at a kink.
    let mut rows: Vec<(usize, f64)> = Vec::new();
    for i in 0..design.nrows() {
        if epsilon == 0.0 {
            if residual[i].abs() <= tol_r {
                rows.push((i, target[i]));
            }
        } else if (residual[i] - epsilon).abs() <= tol_r {
            rows.push((i, target[i] - epsilon));
        } else if (residual[i] + epsilon).abs() <= tol_r {
            rows.push((i, target[i] + epsilon));
        }
    }
    let sum_constrained = matches!(set, ConstraintSet::SumToOne | ConstraintSet::Simplex);
    let n_eq = rows.len() + usize::from(sum_constrained);
    if n_eq < free.len() {
        return None;
    }

    let mut system = nalgebra::DMatrix::<f64>::zeros(n_eq, free.len());
    let mut rhs = DVector::<f64>::zeros(n_eq);
    for (row, &(i, b)) in rows.iter().enumerate() {
        for (col, &k) in free.iter().enumerate() {
            system[(row, col)] = design[(i, k)];
        }
        rhs[row] = b;
    }
    if sum_constrained {
        let row = rows.len();
        for col in 0..free.len() {
            system[(row, col)] = 1.0;
        }
        rhs[row] = 1.0;
    }

    let gram = system.transpose() * &system;
    let solution = Cholesky::new(gram)?.solve(&(system.transpose() * rhs));

    let mut full = DVector::<f64>::zeros(q);
    for (col, &k) in free.iter().enumerate() {
        full[k] = solution[col];
    }
    set.project(&mut full);
    Some(full)
}

/// Generators of the feasible direction cone at `point`, as sparse
/// coordinate moves.
fn edge_generators(set: ConstraintSet, point: &DVector<f64>) -> Vec<Vec<(usize, f64)>> {
    let q = point.len();
    let support_tol = 1e-9;
    let mut dirs = Vec::new();
    match set {
        ConstraintSet::Free => {
            for k in 0..q {
                dirs.push(vec![(k, 1.0)]);
                dirs.push(vec![(k, -1.0)]);
            }
        }
        ConstraintSet::NonNegative => {
            for k in 0..q {
                dirs.push(vec![(k, 1.0)]);
                if point[k] > support_tol {
                    dirs.push(vec![(k, -1.0)]);
                }
            }
        }
        ConstraintSet::SumToOne | ConstraintSet::Simplex => {
            for k in 0..q {
                for j in 0..q {
                    if j != k
                        && (set == ConstraintSet::SumToOne || point[j] > support_tol)
                    {
                        dirs.push(vec![(k, 1.0), (j, -1.0)]);
                    }
                }
            }
        }
    }
    dirs
}

/// Exact minimization of the piecewise-linear objective along a feasible
/// ray: walk the breakpoints where a residual crosses a kink.
fn exact_line_step(
    problem: &RegressionProblem,
    set: ConstraintSet,
    point: &DVector<f64>,
    direction: &[(usize, f64)],
) -> Option<DVector<f64>> {
    let design = &problem.design;
    let target = &problem.target;
    let n = design.nrows();
    let epsilon = match problem.loss {
        LossKind::AbsoluteL1 => 0.0,
        LossKind::EpsInsensitive { epsilon } => epsilon,
        _ => return None,
    };

    // Step bound from the non-negativity faces of the set.
    let mut t_max = 1e3 * (1.0 + point.amax());
    if matches!(set, ConstraintSet::NonNegative | ConstraintSet::Simplex) {
        for &(k, w) in direction {
            if w < 0.0 {
                t_max = t_max.min(point[k] / -w);
            }
        }
    }
    if t_max <= 0.0 {
        return None;
    }

    let residual = target - design * point;
    let mut rate = DVector::<f64>::zeros(n);
    for &(k, w) in direction {
        for i in 0..n {
            rate[i] += design[(i, k)] * w;
        }
    }

    // Residual along the ray is residual - t * rate; breakpoints are the
    // kink crossings of each coordinate.
    let mut breaks = vec![t_max];
    for i in 0..n {
        if rate[i].abs() < 1e-300 {
            continue;
        }
        for offset in if epsilon == 0.0 {
            vec![0.0]
        } else {
            vec![-epsilon, epsilon]
        } {
            let t = (residual[i] - offset) / rate[i];
            if t > 1e-15 && t < t_max {
                breaks.push(t);
            }
        }
    }
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let base = problem.objective(point);
    let mut best = (0.0, base);
    for &t in &breaks {
        let mut candidate = point.clone();
        for &(k, w) in direction {
            candidate[k] += t * w;
        }
        let value = problem.objective(&candidate);
        if value < best.1 {
            best = (t, value);
        } else if value > best.1 {
            // Convex along the ray: past the minimum.
            break;
        }
    }
    if best.0 == 0.0 {
        return None;
    }
    let mut out = point.clone();
    for &(k, w) in direction {
        out[k] += best.0 * w;
    }
    set.project(&mut out);
    Some(out)
}

/// Directions that keep every currently-interpolated kink row at its kink
/// while staying inside the feasible set's active faces: the null space of
/// the kink rows (restricted to free coordinates, with the unit-sum row
/// when applicable). These are the descent directions that coordinate
/// moves cannot express at degenerate points.
fn zero_preserving_directions(
    problem: &RegressionProblem,
    set: ConstraintSet,
    point: &DVector<f64>,
) -> Vec<Vec<(usize, f64)>> {
    let epsilon = match problem.loss {
        LossKind::AbsoluteL1 => 0.0,
        LossKind::EpsInsensitive { epsilon } => epsilon,
        _ => return Vec::new(),
    };
    let design = &problem.design;
    let target = &problem.target;
    let q = design.ncols();
    let scale = target.amax().max(1.0);
    let kink_tol = 1e-9 * scale;
    let residual = target - design * point;
    let kinks: Vec<usize> = (0..design.nrows())
        .filter(|&i| {
            if epsilon == 0.0 {
                residual[i].abs() <= kink_tol
            } else {
                (residual[i] - epsilon).abs() <= kink_tol
                    || (residual[i] + epsilon).abs() <= kink_tol
            }
        })
        .collect();

    let clamped = matches!(set, ConstraintSet::NonNegative | ConstraintSet::Simplex);
    let free: Vec<usize> = (0..q)
        .filter(|&k| !clamped || point[k] > 1e-9)
        .collect();
    let sum_constrained = matches!(set, ConstraintSet::SumToOne | ConstraintSet::Simplex);
    let n_rows = kinks.len() + usize::from(sum_constrained);
    if free.len() <= 1 || n_rows >= free.len() {
        return Vec::new();
    }

    let mut system = nalgebra::DMatrix::<f64>::zeros(n_rows.max(free.len()), free.len());
    for (r, &i) in kinks.iter().enumerate() {
        for (c, &k) in free.iter().enumerate() {
            system[(r, c)] = design[(i, k)];
        }
    }
    if sum_constrained {
        for c in 0..free.len() {
            system[(kinks.len(), c)] = 1.0;
        }
    }
    let svd = system.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let mut out = Vec::new();
    for (idx, &sigma) in svd.singular_values.iter().enumerate() {
        if sigma_max > 0.0 && sigma > 1e-9 * sigma_max {
            continue;
        }
        let row = v_t.row(idx);
        let dir: Vec<(usize, f64)> = free
            .iter()
            .enumerate()
            .map(|(c, &k)| (k, row[c]))
            .filter(|(_, w)| w.abs() > 1e-14)
            .collect();
        if !dir.is_empty() {
            let negated: Vec<(usize, f64)> = dir.iter().map(|&(k, w)| (k, -w)).collect();
            out.push(dir);
            out.push(negated);
        }
    }
    out
}

/// Walk descending edges from a candidate point until the first-order edge
/// test passes or the pivot budget runs out. Objective never increases.
fn edge_descend(
    problem: &RegressionProblem,
    set: ConstraintSet,
    start: DVector<f64>,
) -> DVector<f64> {
    let scale = problem.target.amax().max(1.0);
    let kink_tol = 1e-9 * scale;
    let slack = 1e-9 * scale * problem.design.nrows() as f64;
    let mut point = start;
    for _ in 0..50 {
        let residual = &problem.target - &problem.design * &point;
        let mut candidates = edge_generators(set, &point);
        candidates.extend(zero_preserving_directions(problem, set, &point));
        let mut best_dir: Option<(Vec<(usize, f64)>, f64)> = None;
        for dir in candidates {
            let mut slope = 0.0;
            for i in 0..problem.design.nrows() {
                let mut step = 0.0;
                for &(k, w) in &dir {
                    step += problem.design[(i, k)] * w;
                }
                slope +=
                    directional_loss_derivative(problem.loss, residual[i], -step, kink_tol);
            }
            if slope < -slack && best_dir.as_ref().is_none_or(|(_, s)| slope < *s) {
                best_dir = Some((dir, slope));
            }
        }
        let Some((dir, _)) = best_dir else { break };
        match exact_line_step(problem, set, &point, &dir) {
            Some(next) => point = next,
            None => break,
        }
    }
    point
}

/// Exact one-sided derivative of the piecewise-linear losses.
fn directional_loss_derivative(loss: LossKind, r: f64, v: f64, kink_tol: f64) -> f64 {
    match loss {
        LossKind::AbsoluteL1 => {
            if r.abs() <= kink_tol {
                v.abs()
            } else {
                v * r.signum()
            }
        }
        LossKind::EpsInsensitive { epsilon } => {
            let at_upper = (r - epsilon).abs() <= kink_tol;
            let at_lower = (r + epsilon).abs() <= kink_tol;
            if at_upper && at_lower {
                // Coincident kinks (zero margin): plain V shape.
                v.abs()
            } else if at_upper {
                v.max(0.0)
            } else if at_lower {
                (-v).max(0.0)
            } else if r.abs() < epsilon {
                0.0
            } else {
                v * r.signum()
            }
        }
        _ => 0.0,
    }
}

/// First-order edge test: directional derivative of the objective must be
/// non-negative along every generator of the feasible direction cone at
/// `point`. Necessary for optimality of piecewise-linear problems.
fn vertex_edge_optimal(
    problem: &RegressionProblem,
    set: ConstraintSet,
    point: &DVector<f64>,
) -> bool {
    let design = &problem.design;
    let target = &problem.target;
    let residual = target - design * point;
    let scale = target.amax().max(1.0);
    let kink_tol = 1e-9 * scale;
    let slack = 1e-9 * scale * design.nrows() as f64;

    let derivative_along = |direction_cols: &[(usize, f64)]| -> f64 {
        let mut total = 0.0;
        for i in 0..design.nrows() {
            let mut step = 0.0;
            for &(k, w) in direction_cols {
                step += design[(i, k)] * w;
            }
            // Residual moves opposite to the fit.
            total += directional_loss_derivative(problem.loss, residual[i], -step, kink_tol);
        }
        total
    };

    // Edge generators catch descent across faces; the zero-preserving null
    // directions catch descent along degenerate kink intersections that no
    // coordinate move can express.
    let mut directions = edge_generators(set, point);
    directions.extend(zero_preserving_directions(problem, set, point));
    directions
        .iter()
        .all(|dir| derivative_along(dir) >= -slack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::loss::LossKind;
    use crate::solver::types::{ConstraintMode, EnforcementMode, RegularizerKind};
    use nalgebra::{dmatrix, dvector};

    fn problem(
        design: DMatrix<f64>,
        target: DVector<f64>,
        loss: LossKind,
        regularizer: RegularizerKind,
    ) -> RegressionProblem {
        RegressionProblem {
            design,
            target,
            loss,
            constraints: ConstraintMode::new(EnforcementMode::Explicit, EnforcementMode::Explicit),
            regularizer,
        }
    }

    #[test]
    fn exact_fit_on_simplex_recovers_truth() {
        // target = design * c with c on the simplex; unique minimizer for
        // every loss with no flat region around zero residual.
        let design = dmatrix![
            10.0, 1.0;
            2.0, 8.0;
            5.0, 5.0;
        ];
        let c_true = dvector![0.3, 0.7];
        let target = &design * &c_true;
        for loss in [
            LossKind::SquaredL2,
            LossKind::AbsoluteL1,
            LossKind::Huber { m: 1.0 },
            LossKind::EpsInsensitive { epsilon: 0.0 },
        ] {
            let p = problem(design.clone(), target.clone(), loss, RegularizerKind::None);
            let sol = solve_admm(&p, ConstraintSet::Simplex, &SolverOptions::default()).unwrap();
            for i in 0..2 {
                assert!(
                    (sol.coefficients[i] - c_true[i]).abs() < 1e-6,
                    "{loss:?}: {:?}",
                    sol.coefficients
                );
            }
        }
        // A positive margin makes every tube-feasible point optimal, so only
        // the objective is pinned.
        let p = problem(
            design.clone(),
            target.clone(),
            LossKind::EpsInsensitive { epsilon: 0.01 },
            RegularizerKind::None,
        );
        let sol = solve_admm(&p, ConstraintSet::Simplex, &SolverOptions::default()).unwrap();
        assert!(sol.objective <= 1e-12);
    }

    #[test]
    fn single_celltype_simplex_is_a_point() {
        let design = dmatrix![3.0; 4.0; 9.0];
        let target = dvector![1.0, 2.0, 3.0];
        for loss in [
            LossKind::SquaredL2,
            LossKind::AbsoluteL1,
            LossKind::Huber { m: 2.0 },
            LossKind::EpsInsensitive { epsilon: 0.5 },
        ] {
            let p = problem(design.clone(), target.clone(), loss, RegularizerKind::None);
            let sol = solve_admm(&p, ConstraintSet::Simplex, &SolverOptions::default()).unwrap();
            assert!((sol.coefficients[0] - 1.0).abs() < 1e-9, "{loss:?}");
        }
    }

    #[test]
    fn l1_simplex_matches_grid_scan_oracle() {
        // 3 genes, 2 cell-types, explicit NN+STO, L1 loss: the simplex is
        // one-dimensional, so scan it at step 1e-5.
        let design = dmatrix![
            4.0, 1.0;
            1.0, 6.0;
            3.0, 2.0;
        ];
        let target = dvector![2.0, 5.0, 2.1];
        let p = problem(
            design.clone(),
            target.clone(),
            LossKind::AbsoluteL1,
            RegularizerKind::None,
        );
        let sol = solve_admm(&p, ConstraintSet::Simplex, &SolverOptions::default()).unwrap();

        let mut best = f64::INFINITY;
        let steps = 100_000;
        for k in 0..=steps {
            let a = k as f64 / steps as f64;
            let c = dvector![a, 1.0 - a];
            best = best.min(p.objective(&c));
        }
        assert!(
            sol.objective <= best + 1e-5 && sol.objective >= best - 1e-5,
            "solver {} vs scan {}",
            sol.objective,
            best
        );
    }

    #[test]
    fn unconstrained_l2_matches_normal_equations() {
        let design = dmatrix![
            1.0, 2.0;
            3.0, 1.0;
            0.5, 0.5;
            2.0, 2.5;
        ];
        let target = dvector![1.0, 2.0, 0.3, 2.2];
        let p = problem(
            design.clone(),
            target.clone(),
            LossKind::SquaredL2,
            RegularizerKind::None,
        );
        let sol = solve_admm(&p, ConstraintSet::Free, &SolverOptions::default()).unwrap();
        let gram = design.transpose() * &design;
        let expected = gram.cholesky().unwrap().solve(&(design.transpose() * &target));
        assert!((sol.coefficients - expected).norm() < 1e-7);
    }

    #[test]
    fn lasso_large_lambda_zeroes_out() {
        let design = dmatrix![
            1.0, 0.4;
            0.2, 1.0;
        ];
        let target = dvector![1.0, 1.0];
        let p = problem(
            design,
            target,
            LossKind::SquaredL2,
            RegularizerKind::NormOne { lambda: 1e9 },
        );
        let sol = solve_admm(&p, ConstraintSet::Free, &SolverOptions::default()).unwrap();
        assert_eq!(sol.coefficients[0], 0.0);
        assert_eq!(sol.coefficients[1], 0.0);
    }

    #[test]
    fn group_lasso_zeroes_whole_groups() {
        // Two groups; enormous lambda kills both entirely.
        let design = DMatrix::<f64>::identity(4, 4);
        let target = dvector![1.0, 1.0, 0.1, 0.1];
        let p = problem(
            design,
            target,
            LossKind::SquaredL2,
            RegularizerKind::GroupLasso {
                lambda: 1e9,
                groups: vec![vec![0, 1], vec![2, 3]],
            },
        );
        let sol = solve_admm(&p, ConstraintSet::Free, &SolverOptions::default()).unwrap();
        assert!(sol.coefficients.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sum_to_one_without_nn_allows_negatives() {
        // Unconstrained optimum has a negative coordinate; the affine
        // constraint keeps it, the simplex would not.
        let design = dmatrix![
            1.0, 0.0;
            0.0, 1.0;
        ];
        let target = dvector![1.5, -0.5];
        let p = problem(
            design,
            target,
            LossKind::SquaredL2,
            RegularizerKind::None,
        );
        let sol = solve_admm(&p, ConstraintSet::SumToOne, &SolverOptions::default()).unwrap();
        assert!((sol.coefficients[0] - 1.5).abs() < 1e-8);
        assert!((sol.coefficients[1] + 0.5).abs() < 1e-8);
        assert!((sol.coefficients.sum() - 1.0).abs() < 1e-12);
    }
}
