//! Interval constructions and calibration of the predictive bounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::Estimate;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn unbounded() -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }
}

/// Interval that treats source and target as i.i.d. draws from one
/// population: `theta +- z sd sqrt(1/n_s + 1/n_t)`.
pub fn iid_interval(theta: f64, sd: f64, n_source: usize, n_target: usize, alpha: f64) -> Interval {
    let half = stats::z_two_sided(alpha) * sd * (1.0 / n_source as f64 + 1.0 / n_target as f64).sqrt();
    Interval::new(theta - half, theta + half)
}

/// Wald interval `theta +- z sigma` for a transported estimate.
pub fn covshift_interval(est: &Estimate, alpha: f64) -> Interval {
    let half = stats::z_two_sided(alpha) * est.sigma;
    Interval::new(est.theta - half, est.theta + half)
}

/// How the predictive bounds `(L, U)` are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundRule {
    /// `(-1, 1)`.
    Const,
    /// Empirical `alpha/2` and `1 - alpha/2` order statistics of ratios.
    Quantile { alpha: f64 },
    Fixed { lo: f64, hi: f64 },
}

/// Bounds `(L, U)` from a calibration set of shift ratios. Non-finite ratios
/// are ignored.
pub fn calibrate_bounds(rule: &BoundRule, ratios: &[f64]) -> Result<(f64, f64)> {
    match *rule {
        BoundRule::Const => Ok((-1.0, 1.0)),
        BoundRule::Fixed { lo, hi } => Ok((lo, hi)),
        BoundRule::Quantile { alpha } => {
            let r: Vec<f64> = ratios.iter().copied().filter(|v| v.is_finite()).collect();
            if r.is_empty() {
                return Err(Error::TooFewRatios { needed: 1, got: 0 });
            }
            Ok((
                stats::order_statistic(&r, alpha / 2.0)?,
                stats::order_statistic(&r, 1.0 - alpha / 2.0)?,
            ))
        }
    }
}

fn scale_bound(b: f64, scale: f64) -> f64 {
    if b.is_infinite() {
        b
    } else {
        b * scale
    }
}

/// `[theta_w + L t_x s_yx, theta_w + U t_x s_yx]`.
pub fn predictive_interval(theta_w: f64, t_x: f64, s_yx: f64, bounds: (f64, f64)) -> Interval {
    let scale = t_x * s_yx;
    Interval::new(theta_w + scale_bound(bounds.0, scale), theta_w + scale_bound(bounds.1, scale))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iid_half_width() {
        let iv = iid_interval(0.0, 1.0, 100, 100, 0.05);
        assert!((iv.hi - 0.277_181).abs() < 1e-6);
        assert!((iv.lo + 0.277_181).abs() < 1e-6);
    }

    #[test]
    fn const_interval() {
        let iv = predictive_interval(1.0, 0.2, 0.5, calibrate_bounds(&BoundRule::Const, &[]).unwrap());
        assert!((iv.lo - 0.9).abs() < 1e-15 && (iv.hi - 1.1).abs() < 1e-15);
    }

    #[test]
    fn quantile_bounds_example() {
        let b = calibrate_bounds(&BoundRule::Quantile { alpha: 0.4 }, &[-2.0, -1.0, 0.0, 1.0, 2.0]).unwrap();
        assert_eq!(b, (-2.0, 1.0));
        let single = calibrate_bounds(&BoundRule::Quantile { alpha: 0.05 }, &[0.3]).unwrap();
        assert_eq!(single, (0.3, 0.3));
        assert!(calibrate_bounds(&BoundRule::Quantile { alpha: 0.05 }, &[]).is_err());
    }

    #[test]
    fn zero_shift_collapses_to_point() {
        let iv = predictive_interval(2.0, 0.0, 1.0, (-1.0, 1.0));
        assert_eq!(iv, Interval::point(2.0));
        let inf = predictive_interval(2.0, 0.0, 1.0, (f64::NEG_INFINITY, f64::INFINITY));
        assert_eq!(inf, Interval::unbounded());
    }
}
