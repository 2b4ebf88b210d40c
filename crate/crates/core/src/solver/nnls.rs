//! Active-set non-negative least squares on the normal equations.
//!
//! Exact block minimizer for the small column counts this crate deals with
//! (cell-types, not genes). Used by the alternating full-deconvolution
//! loop, where exact per-block optima keep the objective trace monotone.

use nalgebra::{Cholesky, DMatrix, DVector};

/// Outcome of one NNLS solve.
pub struct NnlsSolution {
    pub coefficients: DVector<f64>,
    /// Set when the passive-set normal system needed a ridge to factor.
    pub ridge_regularized: bool,
}

/// Minimize `|| design c - target ||_2^2` subject to `c >= 0`.
pub fn nnls(design: &DMatrix<f64>, target: &DVector<f64>) -> NnlsSolution {
    let gram = design.transpose() * design;
    let rhs = design.transpose() * target;
    nnls_normal(&gram, &rhs)
}

/// Same, starting from precomputed `design^T design` and `design^T target`.
pub fn nnls_normal(gram: &DMatrix<f64>, rhs: &DVector<f64>) -> NnlsSolution {
    let q = rhs.len();
    let mut x = DVector::<f64>::zeros(q);
    let mut passive = vec![false; q];
    let mut ridge_regularized = false;

    let scale = rhs.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1.0);
    let tol = 1e-12 * scale;

    let max_outer = 3 * q + 30;
    for _ in 0..max_outer {
        // Gradient of the objective is -2 (rhs - gram x); the dual test
        // only needs the sign pattern of rhs - gram x.
        let w = rhs - gram * &x;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..q {
            if !passive[j] && w[j] > tol
                && best.is_none_or(|(_, bw)| w[j] > bw) {
                    best = Some((j, w[j]));
                }
        }
        let Some((enter, _)) = best else { break };
        passive[enter] = true;

        loop {
            let (s, ridged) = solve_passive(gram, rhs, &passive);
            ridge_regularized |= ridged;
            let mut alpha = 1.0;
            let mut leaving: Option<usize> = None;
            for j in 0..q {
                if passive[j] && s[j] <= 0.0 {
                    let step = x[j] / (x[j] - s[j]);
                    if step < alpha {
                        alpha = step;
                        leaving = Some(j);
                    }
                }
            }
            match leaving {
                None => {
                    for j in 0..q {
                        x[j] = if passive[j] { s[j] } else { 0.0 };
                    }
                    break;
                }
                Some(_) => {
                    for j in 0..q {
                        if passive[j] {
                            x[j] += alpha * (s[j] - x[j]);
                        }
                    }
                    for j in 0..q {
                        if passive[j] && x[j] <= tol * 1e-3 {
                            x[j] = 0.0;
                            passive[j] = false;
                        }
                    }
                }
            }
        }
    }

    NnlsSolution {
        coefficients: x,
        ridge_regularized,
    }
}

/// Solve the normal system restricted to the passive set, adding an
/// escalating ridge when the restricted Gram matrix is rank deficient.
fn solve_passive(gram: &DMatrix<f64>, rhs: &DVector<f64>, passive: &[bool]) -> (DVector<f64>, bool) {
    let idx: Vec<usize> = (0..passive.len()).filter(|&j| passive[j]).collect();
    let k = idx.len();
    let mut sub = DMatrix::<f64>::zeros(k, k);
    let mut sub_rhs = DVector::<f64>::zeros(k);
    for (a, &i) in idx.iter().enumerate() {
        sub_rhs[a] = rhs[i];
        for (b, &j) in idx.iter().enumerate() {
            sub[(a, b)] = gram[(i, j)];
        }
    }
    let mut ridge = 0.0;
    let mut ridged = false;
    let solution = loop {
        let mut attempt = sub.clone();
        for d in 0..k {
            attempt[(d, d)] += ridge;
        }
        if let Some(chol) = Cholesky::new(attempt) {
            break chol.solve(&sub_rhs);
        }
        ridged = true;
        ridge = if ridge == 0.0 { 1e-8 } else { ridge * 10.0 };
    };
    let mut full = DVector::<f64>::zeros(passive.len());
    for (a, &i) in idx.iter().enumerate() {
        full[i] = solution[a];
    }
    (full, ridged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn unconstrained_optimum_already_nonnegative() {
        let design = dmatrix![
            2.0, 0.0;
            0.0, 3.0;
        ];
        let target = dvector![2.0, 6.0];
        let sol = nnls(&design, &target);
        assert!((sol.coefficients[0] - 1.0).abs() < 1e-12);
        assert!((sol.coefficients[1] - 2.0).abs() < 1e-12);
        assert!(!sol.ridge_regularized);
    }

    #[test]
    fn clamps_negative_directions() {
        // Unconstrained solution has a negative coordinate.
        let design = dmatrix![
            1.0, 1.0;
            1.0, 1.2;
        ];
        let target = dvector![1.0, 0.5];
        let sol = nnls(&design, &target);
        assert!(sol.coefficients.iter().all(|&v| v >= 0.0));
        // KKT: gradient must be non-negative... for active coords and zero
        // for passive ones.
        let grad = design.transpose() * (&design * &sol.coefficients - &target);
        for j in 0..2 {
            if sol.coefficients[j] > 0.0 {
                assert!(grad[j].abs() < 1e-9);
            } else {
                assert!(grad[j] >= -1e-9);
            }
        }
    }

    /// Random instances must satisfy the NNLS KKT conditions, which
    /// certify the exact constrained optimum.
    #[test]
    fn random_instances_satisfy_kkt() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for _ in 0..200 {
            let n = rng.random_range(3..12);
            let q = rng.random_range(1..6);
            let design = DMatrix::from_fn(n, q, |_, _| rng.random::<f64>() * 2.0 - 0.5);
            let target = DVector::from_fn(n, |_, _| rng.random::<f64>() * 3.0 - 1.0);
            let sol = nnls(&design, &target);
            assert!(sol.coefficients.iter().all(|&v| v >= 0.0));
            let grad = design.transpose() * (&design * &sol.coefficients - &target);
            let scale = 1.0 + grad.norm();
            for j in 0..q {
                if sol.coefficients[j] > 1e-10 {
                    assert!(grad[j].abs() < 1e-7 * scale, "stationarity failed");
                } else {
                    assert!(grad[j] > -1e-7 * scale, "dual feasibility failed");
                }
            }
        }
    }
}
