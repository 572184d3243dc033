//! Covariate-shift and conditional-shift measures between two sites.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{column_means, column_sds, SiteDataset};
use crate::error::{Error, Result};
use crate::estimators::{cross_fit_outcome, NuisanceConfig};
use crate::influence::{influence_values, Estimand};
use crate::stats;

/// Variance of `phi` split into the part explained by the covariates and
/// the remainder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionalVariances {
    /// Estimate of `Var(phi - E[phi | X])`.
    pub s2_yx: f64,
    /// Estimate of `Var(E[phi | X])`, truncated at zero.
    pub s2_x: f64,
}

impl ConditionalVariances {
    pub fn s_yx(&self) -> f64 {
        self.s2_yx.sqrt()
    }

    pub fn s_x(&self) -> f64 {
        self.s2_x.sqrt()
    }

    /// Share of the variance explained by the covariates.
    pub fn explained_share(&self) -> f64 {
        self.s2_x / (self.s2_x + self.s2_yx)
    }
}

/// Conditional variances from a two-fold cross-fitted `phi_hat`:
/// `s2_yx = mean((phi - phi_hat)^2)` and
/// `s2_x = mean(phi_hat (2 phi - phi_hat)) - mean(phi)^2`.
pub fn conditional_variances(ds: &SiteDataset, estimand: &Estimand, cfg: &NuisanceConfig, seed: u64) -> Result<ConditionalVariances> {
    let phi = influence_values(ds, estimand)?;
    let fitted = cross_fit_outcome(&ds.x, &phi, cfg, seed)?;
    Ok(conditional_variances_from(&phi, &fitted))
}

/// The same formulas for given `phi` and `phi_hat`.
pub fn conditional_variances_from(phi: &[f64], fitted: &[f64]) -> ConditionalVariances {
    let r2: Vec<f64> = phi.iter().zip(fitted).map(|(p, f)| (p - f) * (p - f)).collect();
    let cross: Vec<f64> = phi.iter().zip(fitted).map(|(p, f)| f * (2.0 * p - f)).collect();
    let m = stats::mean(phi);
    ConditionalVariances {
        s2_yx: stats::mean(&r2),
        s2_x: (stats::mean(&cross) - m * m).max(0.0),
    }
}

/// Stabilized covariate shift
/// `sqrt(mean_l ((mean_Q x_l - mean_P x_l) / sd_P x_l)^2)` over covariates
/// with positive source spread. With `mahalanobis` the differences are
/// whitened by the full source covariance instead.
pub fn stabilized_covariate_shift(source_x: &DMatrix<f64>, target_x: &DMatrix<f64>, mahalanobis: bool) -> Result<f64> {
    if source_x.ncols() != target_x.ncols() {
        return Err(Error::DimensionMismatch {
            expected: source_x.ncols(),
            got: target_x.ncols(),
        });
    }
    if source_x.nrows() == 0 || target_x.nrows() == 0 {
        return Err(Error::EmptyInput("covariate shift needs source and target rows"));
    }
    let ms = column_means(source_x);
    let mt = column_means(target_x);
    let sds = column_sds(source_x);
    let used: Vec<usize> = (0..sds.len()).filter(|&j| sds[j] > 0.0).collect();
    if used.is_empty() {
        return Err(Error::NoUsableCovariates);
    }
    let l = used.len() as f64;
    if !mahalanobis {
        let s: f64 = used
            .iter()
            .map(|&j| {
                let d = (mt[j] - ms[j]) / sds[j];
                d * d
            })
            .sum();
        return Ok((s / l).sqrt());
    }
    let n = source_x.nrows();
    let p = used.len();
    let mut cov = DMatrix::zeros(p, p);
    for i in 0..n {
        for a in 0..p {
            let da = source_x[(i, used[a])] - ms[used[a]];
            for b in a..p {
                cov[(a, b)] += da * (source_x[(i, used[b])] - ms[used[b]]);
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for a in 0..p {
        for b in a..p {
            cov[(a, b)] /= denom;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    let d = DVector::from_iterator(p, used.iter().map(|&j| mt[j] - ms[j]));
    let ch = cov.cholesky().ok_or(Error::DegenerateDesign)?;
    let sol = ch.solve(&d);
    Ok((d.dot(&sol).max(0.0) / l).sqrt())
}

/// `(theta_target - theta_w) / s_yx`.
pub fn conditional_shift(theta_target: f64, theta_w: f64, s_yx: f64) -> Result<f64> {
    if s_yx <= 0.0 {
        return Err(Error::ZeroConditionalScale);
    }
    Ok((theta_target - theta_w) / s_yx)
}

/// `t_yx / t_x`.
pub fn shift_ratio(t_yx: f64, t_x: f64) -> Result<f64> {
    if t_x <= 0.0 {
        return Err(Error::ZeroCovariateShift);
    }
    Ok(t_yx / t_x)
}

/// Unstandardized and alternatively standardized shift measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlternativeMeasures {
    /// `theta_target - theta_w`.
    pub delta_yx: f64,
    /// `theta_w - theta_source`.
    pub delta_x: f64,
    /// `delta_x / s_x`; infinite when `s_x` is zero.
    pub rel_x: f64,
    /// Set when `s_x` is zero and `rel_x` is a sentinel.
    pub rel_x_unstable: bool,
}

pub fn alternative_measures(theta_target: f64, theta_w: f64, theta_source: f64, s_x: f64) -> AlternativeMeasures {
    let delta_yx = theta_target - theta_w;
    let delta_x = theta_w - theta_source;
    let (rel_x, rel_x_unstable) = if s_x > 0.0 {
        (delta_x / s_x, false)
    } else if delta_x < 0.0 {
        (f64::NEG_INFINITY, true)
    } else {
        (f64::INFINITY, true)
    };
    AlternativeMeasures {
        delta_yx,
        delta_x,
        rel_x,
        rel_x_unstable,
    }
}

/// Options for the covariate shift measure.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftConfig {
    pub mahalanobis: bool,
}

/// One row of the measures table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftMeasures {
    pub source: String,
    pub target: String,
    pub hypothesis: String,
    pub t_yx: f64,
    pub t_x: f64,
    pub ratio: f64,
    pub delta_yx: f64,
    pub delta_x: f64,
    pub rel_x: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stabilized_shift_example() {
        // Source columns have mean 0 and sd 1; target means (0.1, -0.2).
        let s = DMatrix::from_column_slice(4, 2, &[-1.0, 1.0, -1.0, 1.0, 1.0, 1.0, -1.0, -1.0]);
        let sd = 1.0 / (4.0f64 / 3.0).sqrt();
        let s = s * sd;
        let t = DMatrix::from_row_slice(1, 2, &[0.1, -0.2]);
        let v = stabilized_covariate_shift(&s, &t, false).unwrap();
        assert!((v - (0.05f64 / 2.0).sqrt()).abs() < 1e-12);
        assert!((v - 0.1581).abs() < 1e-4);
    }

    #[test]
    fn identical_means_give_zero() {
        let s = DMatrix::from_fn(10, 3, |i, j| ((i * (j + 1) * (j + 2)) % 7) as f64);
        assert_eq!(stabilized_covariate_shift(&s, &s, false).unwrap(), 0.0);
        assert!(stabilized_covariate_shift(&s, &s, true).unwrap().abs() < 1e-12);
    }

    #[test]
    fn constant_columns_are_unusable() {
        let s = DMatrix::from_element(5, 2, 1.0);
        let t = DMatrix::from_element(5, 2, 2.0);
        assert!(matches!(stabilized_covariate_shift(&s, &t, false), Err(Error::NoUsableCovariates)));
    }

    #[test]
    fn conditional_shift_and_ratio() {
        assert!((conditional_shift(1.2, 1.0, 0.5).unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(shift_ratio(0.4, 0.2).unwrap(), 2.0);
        assert!(matches!(conditional_shift(1.0, 0.0, 0.0), Err(Error::ZeroConditionalScale)));
        assert!(matches!(shift_ratio(1.0, 0.0), Err(Error::ZeroCovariateShift)));
    }

    #[test]
    fn rel_x_sentinel() {
        let m = alternative_measures(1.0, 0.7, 0.5, 0.0);
        assert!(m.rel_x.is_infinite() && m.rel_x > 0.0);
        assert!(m.rel_x_unstable);
        assert!((m.delta_yx - 0.3).abs() < 1e-15);
        let m = alternative_measures(1.0, 0.7, 0.5, 0.4);
        assert!((m.rel_x - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_fit_has_no_explained_variance() {
        let phi = [1.0, 2.0, 3.0, 6.0];
        let fitted = [3.0; 4];
        let cv = conditional_variances_from(&phi, &fitted);
        assert_eq!(cv.s2_x, 0.0);
        assert!((cv.s2_yx - 3.5).abs() < 1e-12);
    }
}
