//! Small numeric helpers shared across modules.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Arithmetic mean. Summation runs in index order so that identical inputs
/// give bit-identical results everywhere in the crate.
pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// `sum(w * v) / sum(w)`.
pub fn weighted_mean(v: &[f64], w: &[f64]) -> f64 {
    let num: f64 = v.iter().zip(w).map(|(a, b)| a * b).sum();
    let den: f64 = w.iter().sum();
    num / den
}

/// Variance with an `n - 1` denominator; zero for fewer than two values.
pub fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

pub fn sample_sd(v: &[f64]) -> f64 {
    sample_variance(v).sqrt()
}

/// Variance with an `n` denominator.
pub fn population_variance(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

/// Conventional median: the average of the two middle order statistics for an
/// even count.
pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    })
}

/// Inclusive order-statistic quantile: the `ceil(q * m)`-th smallest value
/// (1-based, clamped to `[1, m]`).
pub fn order_statistic(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("quantile of an empty set"));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s[order_index(s.len(), q)])
}

/// Zero-based index of the `ceil(q * m)`-th order statistic.
pub(crate) fn order_index(m: usize, q: f64) -> usize {
    // The small slack keeps products such as 0.2 * 5 from rounding up to 2.
    let k = (q * m as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(m) - 1
}

fn std_normal() -> Normal {
    Normal::standard()
}

pub fn normal_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

pub fn normal_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

/// Two-sided critical value `z_{1 - alpha/2}`.
pub fn z_two_sided(alpha: f64) -> f64 {
    normal_quantile(1.0 - alpha / 2.0)
}

pub fn chi_squared_cdf(x: f64, df: f64) -> f64 {
    ChiSquared::new(df).expect("positive degrees of freedom").cdf(x)
}

/// One-sample Kolmogorov-Smirnov test against a continuous CDF. Returns the
/// statistic and its asymptotic p-value (with the usual small-sample
/// correction to the scaling).
pub fn ks_test<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> (f64, f64) {
    let n = sample.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
    }
    let sq = nf.sqrt();
    (d, kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d))
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        let mut acc = 0.0;
        for k in 1..=20 {
            let j = (2 * k - 1) as f64;
            acc += (-j * j * pi2 / (8.0 * lambda * lambda)).exp();
        }
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / lambda * acc;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let mut acc = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            acc += if k % 2 == 1 { term } else { -term };
            if term < 1e-16 {
                break;
            }
        }
        (2.0 * acc).clamp(0.0, 1.0)
    }
}

/// Numerically stable `log(sum(exp(v)))`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_even_count_averages() {
        assert_eq!(median(&[3.0, 1.0]), Some(2.0));
        assert_eq!(median(&[5.0, 1.0, 3.0]), Some(3.0));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn order_statistic_inclusive() {
        let r = [-2.0, -1.0, 0.0, 1.0, 2.0];
        assert_eq!(order_statistic(&r, 0.2).unwrap(), -2.0);
        assert_eq!(order_statistic(&r, 0.8).unwrap(), 1.0);
        assert_eq!(order_statistic(&[0.7], 0.99).unwrap(), 0.7);
        assert_eq!(order_statistic(&r, 0.0).unwrap(), -2.0);
        assert_eq!(order_statistic(&r, 1.0).unwrap(), 2.0);
    }

    #[test]
    fn normal_quantile_matches_tables() {
        assert!((z_two_sided(0.05) - 1.959_963_984_540_054).abs() < 1e-9);
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-9);
        assert!((normal_quantile(0.5)).abs() < 1e-12);
        assert!((normal_quantile(0.841_344_746_068_543) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn kolmogorov_branches_agree() {
        let a = kolmogorov_sf(1.18 - 1e-9);
        let b = kolmogorov_sf(1.18 + 1e-9);
        assert!((a - b).abs() < 1e-7);
        // Tabulated 5% critical value.
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 1e-3);
    }

    #[test]
    fn ks_accepts_uniform_grid() {
        let s: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let (d, p) = ks_test(&s, |x| x.clamp(0.0, 1.0));
        assert!(d < 1e-3 + 1e-12);
        assert!(p > 0.99);
    }

    #[test]
    fn log_sum_exp_handles_large_values() {
        let v = [1000.0, 1000.0];
        assert!((log_sum_exp(&v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
