//! Residual loss functions and their proximal operators.

use crate::error::{Error, Result};

/// Pointwise loss applied to each fitting residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// Squared (quadratic) loss, `r^2`.
    SquaredL2,
    /// Absolute deviation, `|r|`.
    AbsoluteL1,
    /// Huber loss with half-length `m`: quadratic for `|r| <= m`,
    /// `m (2|r| - m)` beyond it.
    Huber { m: f64 },
    /// Epsilon-insensitive loss, `max(0, |r| - epsilon)`. Flat inside the
    /// tube, linear outside.
    EpsInsensitive { epsilon: f64 },
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            LossKind::Huber { m } if !(*m > 0.0) => Err(Error::InvalidInput(format!(
                "Huber half-length must be positive, got {m}"
            ))),
            LossKind::EpsInsensitive { epsilon } if !(*epsilon >= 0.0) => Err(Error::InvalidInput(
                format!("epsilon margin must be non-negative, got {epsilon}"),
            )),
            _ => Ok(()),
        }
    }

    /// Short stable name used in reports.
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::SquaredL2 => "l2",
            LossKind::AbsoluteL1 => "l1",
            LossKind::Huber { .. } => "huber",
            LossKind::EpsInsensitive { .. } => "eps",
        }
    }
}

/// Loss of a single residual.
pub fn loss_value(kind: LossKind, r: f64) -> f64 {
    match kind {
        LossKind::SquaredL2 => r * r,
        LossKind::AbsoluteL1 => r.abs(),
        LossKind::Huber { m } => {
            let a = r.abs();
            if a <= m {
                r * r
            } else {
                m * (2.0 * a - m)
            }
        }
        LossKind::EpsInsensitive { epsilon } => (r.abs() - epsilon).max(0.0),
    }
}

/// Total loss over a residual slice.
pub fn total_loss(kind: LossKind, residuals: impl IntoIterator<Item = f64>) -> f64 {
    residuals.into_iter().map(|r| loss_value(kind, r)).sum()
}

/// Proximal operator `argmin_z t*L(z) + (z - v)^2 / 2` for each loss.
/// Closed form in every case; `t` must be positive.
pub fn loss_prox(kind: LossKind, v: f64, t: f64) -> f64 {
    match kind {
        LossKind::SquaredL2 => v / (1.0 + 2.0 * t),
        LossKind::AbsoluteL1 => soft_threshold(v, t),
        LossKind::Huber { m } => {
            if v.abs() <= m * (1.0 + 2.0 * t) {
                v / (1.0 + 2.0 * t)
            } else {
                v - 2.0 * t * m * v.signum()
            }
        }
        LossKind::EpsInsensitive { epsilon } => {
            let a = v.abs();
            if a <= epsilon {
                v
            } else if a <= epsilon + t {
                epsilon * v.signum()
            } else {
                v - t * v.signum()
            }
        }
    }
}

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn huber_piecewise_values() {
        let h = LossKind::Huber { m: 1.0 };
        // quadratic region
        assert_eq!(loss_value(h, 0.5), 0.25);
        // linear region: 1 * (2*3 - 1) = 5
        assert_eq!(loss_value(h, 3.0), 5.0);
        assert_eq!(loss_value(h, -3.0), 5.0);
        // boundary is continuous
        assert!((loss_value(h, 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn eps_insensitive_tube() {
        let e = LossKind::EpsInsensitive { epsilon: 0.5 };
        assert_eq!(loss_value(e, 0.4), 0.0);
        assert_eq!(loss_value(e, 2.0), 1.5);
        assert_eq!(loss_value(e, -2.0), 1.5);
        assert_eq!(loss_value(e, 0.5), 0.0);
    }

    #[test]
    fn validation_rejects_bad_params() {
        assert!(LossKind::Huber { m: 0.0 }.validate().is_err());
        assert!(LossKind::Huber { m: -1.0 }.validate().is_err());
        assert!(LossKind::EpsInsensitive { epsilon: -0.1 }.validate().is_err());
        assert!(LossKind::EpsInsensitive { epsilon: 0.0 }.validate().is_ok());
    }

    /// The prox must satisfy the optimality condition of its defining
    /// minimization: compare against a fine grid scan.
    #[test]
    fn prox_matches_grid_scan() {
        let kinds = [
            LossKind::SquaredL2,
            LossKind::AbsoluteL1,
            LossKind::Huber { m: 0.7 },
            LossKind::EpsInsensitive { epsilon: 0.3 },
        ];
        for kind in kinds {
            for &v in &[-2.3, -0.9, -0.2, 0.0, 0.15, 0.45, 1.8] {
                for &t in &[0.05, 0.5, 2.0] {
                    let z = loss_prox(kind, v, t);
                    let obj = |z: f64| t * loss_value(kind, z) + 0.5 * (z - v) * (z - v);
                    let best = obj(z);
                    let mut scan_best = f64::INFINITY;
                    let mut x = -3.0;
                    while x <= 3.0 {
                        scan_best = scan_best.min(obj(x));
                        x += 1e-4;
                    }
                    assert!(
                        best <= scan_best + 1e-7,
                        "{kind:?} v={v} t={t}: prox obj {best} > scan {scan_best}"
                    );
                }
            }
        }
    }
}
