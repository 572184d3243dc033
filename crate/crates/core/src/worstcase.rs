//! Worst-case intervals over a Kullback-Leibler ball around the reweighted
//! source distribution.

use nalgebra::DMatrix;

use crate::data::SiteDataset;
use crate::error::{Error, Result};
use crate::intervals::Interval;
use crate::nuisance::fit_logistic;
use crate::stats;

const KL_PENALTY: f64 = 1e-6;

/// Covariates followed by outcome features: `y` for one-sample designs and
/// `(t, t y, (1 - t) y)` when a treatment is present.
fn joint_features(ds: &SiteDataset) -> DMatrix<f64> {
    let n = ds.n();
    let l = ds.n_covariates();
    match &ds.t {
        None => DMatrix::from_fn(n, l + 1, |i, j| if j < l { ds.x[(i, j)] } else { ds.y[i] }),
        Some(t) => DMatrix::from_fn(n, l + 3, |i, j| {
            if j < l {
                ds.x[(i, j)]
            } else {
                match j - l {
                    0 => t[i],
                    1 => t[i] * ds.y[i],
                    _ => (1.0 - t[i]) * ds.y[i],
                }
            }
        }),
    }
}

fn stack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let na = a.nrows();
    DMatrix::from_fn(na + b.nrows(), a.ncols(), |i, j| if i < na { a[(i, j)] } else { b[(i - na, j)] })
}

/// Plug-in estimate of `KL(Q_{Y|X} || P_{Y|X})` averaged over `Q_X`.
///
/// Two logistic classifiers of target against source, one on `(X, Y)` and one
/// on `X`, give the joint and marginal density ratios. Their quotient is the
/// conditional ratio `r`, and the estimate is `E[r log r]` over source rows
/// reweighted by the marginal ratio. Negative values are floored at zero.
pub fn estimate_conditional_kl(source: &SiteDataset, target: &SiteDataset) -> Result<f64> {
    if source.n_covariates() != target.n_covariates() {
        return Err(Error::DimensionMismatch {
            expected: source.n_covariates(),
            got: target.n_covariates(),
        });
    }
    if source.t.is_some() != target.t.is_some() {
        return Err(Error::MissingTreatment);
    }
    let ns = source.n();
    let labels: Vec<bool> = (0..ns + target.n()).map(|i| i >= ns).collect();

    let js = joint_features(source);
    let joint = fit_logistic(&stack(&js, &joint_features(target)), &labels, KL_PENALTY)?;
    let marginal = fit_logistic(&stack(&source.x, &target.x), &labels, KL_PENALTY)?;

    let lj = joint.logits(&js);
    let lm = marginal.logits(&source.x);
    // Source rows weighted by the marginal ratio, normalized.
    let lse_m = stats::log_sum_exp(&lm);
    let q: Vec<f64> = lm.iter().map(|v| (v - lse_m).exp()).collect();
    // log r, normalized so that the q-weighted mean of r is one.
    let raw: Vec<f64> = lj.iter().zip(&lm).map(|(a, b)| a - b).collect();
    let shifted: Vec<f64> = raw.iter().zip(&lm).map(|(r, m)| r + m - lse_m).collect();
    let norm = stats::log_sum_exp(&shifted);
    let kl: f64 = raw
        .iter()
        .zip(&q)
        .map(|(lr, qi)| {
            let l = lr - norm;
            qi * l.exp() * l
        })
        .sum();
    if !kl.is_finite() {
        return Err(Error::NumericalOverflow("conditional KL"));
    }
    Ok(kl.max(0.0))
}

/// Bound `rho` as the inclusive order-statistic quantile `q` (0.99 by
/// default) of estimated divergences.
pub fn calibrate_kl_bound(kls: &[f64], q: f64) -> Result<f64> {
    let v: Vec<f64> = kls.iter().copied().filter(|v| v.is_finite()).collect();
    if v.is_empty() {
        return Err(Error::EmptyInput("no divergence estimates to calibrate"));
    }
    stats::order_statistic(&v, q)
}

/// `sup E_Qbar[phi]` over distributions within KL `rho` of the weighted
/// sample, via the dual `inf_{lam > 0} lam rho + lam log E_w exp(phi / lam)`.
pub fn kl_upper(phi: &[f64], weights: &[f64], rho: f64) -> Result<f64> {
    if phi.is_empty() {
        return Err(Error::EmptyInput("worst case over an empty sample"));
    }
    if phi.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: phi.len(),
            got: weights.len(),
        });
    }
    if !(rho >= 0.0) {
        return Err(Error::Config(format!("divergence bound {rho} must be >= 0")));
    }
    let mean = stats::weighted_mean(phi, weights);
    if rho == 0.0 {
        return Ok(mean);
    }
    let max = phi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = phi.iter().copied().fold(f64::INFINITY, f64::min);
    let range = max - min;
    if range == 0.0 {
        return Ok(max);
    }
    let total: f64 = weights.iter().sum();
    let logw: Vec<f64> = weights.iter().map(|w| (w / total).ln()).collect();
    let mut buf = vec![0.0; phi.len()];
    let mut dual = |lam: f64| -> f64 {
        for ((b, p), lw) in buf.iter_mut().zip(phi).zip(&logw) {
            *b = lw + (p - max) / lam;
        }
        lam * rho + max + lam * stats::log_sum_exp(&buf)
    };
    // Golden-section search on log(lambda).
    let (mut a, mut b) = ((1e-6 * range).ln(), (1e3 * range).ln());
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = dual(c.exp());
    let mut fd = dual(d.exp());
    let mut best = fc.min(fd).min(dual(a.exp())).min(dual(b.exp()));
    for _ in 0..200 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = dual(c.exp());
            best = best.min(fc);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = dual(d.exp());
            best = best.min(fd);
        }
        if b - a < 1e-12 {
            break;
        }
    }
    Ok(best.clamp(mean, max))
}

/// Worst-case interval `[inf, sup]` of the mean of `phi` over the KL ball of
/// radius `rho` around the weighted sample.
pub fn kl_worstcase_interval(phi: &[f64], weights: &[f64], rho: f64) -> Result<Interval> {
    let hi = kl_upper(phi, weights, rho)?;
    let neg: Vec<f64> = phi.iter().map(|v| -v).collect();
    let lo = -kl_upper(&neg, weights, rho)?;
    if rho == 0.0 {
        return Ok(Interval::point(hi));
    }
    Ok(Interval::new(lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bernoulli_kl(q: f64, p: f64) -> f64 {
        let t = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
        t(q, p) + t(1.0 - q, 1.0 - p)
    }

    // Largest q >= p with KL(Ber(q) || Ber(p)) <= rho, by bisection.
    fn bernoulli_upper(p: f64, rho: f64) -> f64 {
        let (mut lo, mut hi) = (p, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if bernoulli_kl(mid, p) <= rho {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    #[test]
    fn bernoulli_upper_matches_primal() {
        let phi: Vec<f64> = (0..1000).map(|i| (i % 2) as f64).collect();
        let w = vec![1.0; 1000];
        let up = kl_upper(&phi, &w, 0.02).unwrap();
        assert!((up - bernoulli_upper(0.5, 0.02)).abs() < 1e-7);
        assert!((up - 0.5995).abs() < 0.002);
    }

    #[test]
    fn zero_radius_is_weighted_mean() {
        let phi = [0.3, 1.7, -2.2, 5.0];
        let w = [0.5, 1.5, 1.0, 1.0];
        let iv = kl_worstcase_interval(&phi, &w, 0.0).unwrap();
        assert_eq!(iv.lo, stats::weighted_mean(&phi, &w));
        assert_eq!(iv.hi, stats::weighted_mean(&phi, &w));
    }

    #[test]
    fn constant_phi_is_a_point() {
        let iv = kl_worstcase_interval(&[2.0; 5], &[1.0; 5], 0.5).unwrap();
        assert_eq!(iv, Interval::point(2.0));
    }

    #[test]
    fn huge_radius_reaches_extremes() {
        let phi = [0.0, 1.0, 2.0, 3.0];
        let iv = kl_worstcase_interval(&phi, &[1.0; 4], 50.0).unwrap();
        assert!((iv.hi - 3.0).abs() < 1e-4 && (iv.lo - 0.0).abs() < 1e-4);
    }

    #[test]
    fn kl_quantile() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64 / 1000.0).collect();
        assert_eq!(calibrate_kl_bound(&v, 0.99).unwrap(), 0.099);
        assert_eq!(calibrate_kl_bound(&[0.02], 0.99).unwrap(), 0.02);
    }
}
