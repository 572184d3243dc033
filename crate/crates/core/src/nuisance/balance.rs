use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Stopping rule for entropy balancing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BalanceConfig {
    /// Largest allowed absolute gap between weighted source means and target
    /// means.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

/// Entropy-balancing weights, normalized to mean one.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceWeights {
    pub w: Vec<f64>,
    /// Dual multipliers on the original covariate scale, one per balanced
    /// column (see `used`).
    pub dual: Vec<f64>,
    /// Columns that entered the balancing constraints.
    pub used: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest absolute moment gap at the returned iterate.
    pub max_imbalance: f64,
    /// Dual objective after each accepted Newton step, starting at zero.
    pub objective: Vec<f64>,
}

impl BalanceWeights {
    /// Kish effective sample size.
    pub fn effective_sample_size(&self) -> f64 {
        let s: f64 = self.w.iter().sum();
        let s2: f64 = self.w.iter().map(|w| w * w).sum();
        s * s / s2
    }

    /// True when the mass sits on very few units.
    pub fn is_extreme(&self) -> bool {
        let n = self.w.len() as f64;
        self.effective_sample_size() < (0.01 * n).max(2.0)
    }
}

// log(mean(exp(eta))) and the softmax probabilities.
fn dual_value(z: &DMatrix<f64>, lambda: &DVector<f64>) -> (f64, Vec<f64>) {
    let eta: Vec<f64> = (z * lambda).iter().copied().collect();
    let lse = stats::log_sum_exp(&eta);
    let p: Vec<f64> = eta.iter().map(|e| (e - lse).exp()).collect();
    (lse - (eta.len() as f64).ln(), p)
}

/// Maximum-entropy weights `w_i ∝ exp(lambda' x_i)` with `mean(w) = 1` whose
/// weighted source covariate means equal `target_means`.
///
/// Solved by damped Newton on the convex dual. Columns with zero source
/// variance are skipped. If the tolerance is not met within `max_iter` steps
/// the last iterate is returned with `converged = false`.
pub fn entropy_balance(source_x: &DMatrix<f64>, target_means: &[f64], cfg: &BalanceConfig) -> Result<BalanceWeights> {
    let n = source_x.nrows();
    if n == 0 {
        return Err(Error::EmptyInput("entropy balancing needs source rows"));
    }
    if target_means.len() != source_x.ncols() {
        return Err(Error::DimensionMismatch {
            expected: source_x.ncols(),
            got: target_means.len(),
        });
    }
    let sds = crate::data::column_sds(source_x);
    let used: Vec<usize> = (0..source_x.ncols()).filter(|&j| sds[j] > 0.0).collect();
    let p = used.len();
    if p == 0 {
        return Ok(BalanceWeights {
            w: vec![1.0; n],
            dual: Vec::new(),
            used,
            converged: true,
            iterations: 0,
            max_imbalance: 0.0,
            objective: vec![0.0],
        });
    }
    let z = DMatrix::from_fn(n, p, |i, k| {
        let j = used[k];
        (source_x[(i, j)] - target_means[j]) / sds[j]
    });
    let scale: Vec<f64> = used.iter().map(|&j| sds[j]).collect();

    let mut lambda = DVector::zeros(p);
    let (mut f, mut prob) = dual_value(&z, &lambda);
    let mut objective = vec![f];
    let mut converged = false;
    let mut iterations = 0;
    let mut imbalance;
    loop {
        let g = z.tr_mul(&DVector::from_column_slice(&prob));
        imbalance = g.iter().zip(&scale).map(|(g, s)| (g * s).abs()).fold(0.0, f64::max);
        if imbalance < cfg.tol {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iter {
            break;
        }
        let mut h = -(&g * g.transpose());
        for i in 0..n {
            let pi = prob[i];
            let row = z.row(i);
            for a in 0..p {
                let v = pi * row[a];
                for b in a..p {
                    h[(a, b)] += v * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        let mut ridge = 1e-12;
        let step = loop {
            let mut hr = h.clone();
            for a in 0..p {
                hr[(a, a)] += ridge;
            }
            if let Some(ch) = hr.cholesky() {
                break ch.solve(&(-&g));
            }
            ridge *= 100.0;
            if ridge > 1e6 {
                break -&g;
            }
        };
        let slope = g.dot(&step);
        let mut moved = false;
        if -slope < 1e-12 {
            // Inside the quadratic region the dual is flat to rounding and a
            // sufficient-decrease test only sees noise; judge the full step by
            // the gradient instead.
            let cand = &lambda + &step;
            let (fc, pc) = dual_value(&z, &cand);
            let gc = z.tr_mul(&DVector::from_column_slice(&pc));
            let ic = gc.iter().zip(&scale).map(|(g, s)| (g * s).abs()).fold(0.0, f64::max);
            if fc.is_finite() && ic < imbalance {
                lambda = cand;
                f = fc;
                prob = pc;
                moved = true;
            }
        } else {
            let mut t = 1.0;
            while t > 1e-12 {
                let cand = &lambda + &step * t;
                let (fc, pc) = dual_value(&z, &cand);
                if fc.is_finite() && fc <= f + 1e-4 * t * slope {
                    lambda = cand;
                    f = fc;
                    prob = pc;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
        }
        if !moved {
            break;
        }
        iterations += 1;
        objective.push(f);
    }
    let w: Vec<f64> = prob.iter().map(|p| p * n as f64).collect();
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalOverflow("entropy balancing weights"));
    }
    if !converged {
        log::warn!("entropy balancing stopped after {iterations} steps with imbalance {imbalance:.3e}");
    }
    Ok(BalanceWeights {
        w,
        dual: lambda.iter().zip(&scale).map(|(l, s)| l / s).collect(),
        used,
        converged,
        iterations,
        max_imbalance: imbalance,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_closed_form() {
        let x = DMatrix::from_column_slice(10, 1, &[1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let b = entropy_balance(&x, &[0.6], &BalanceConfig::default()).unwrap();
        assert!(b.converged);
        for (i, w) in b.w.iter().enumerate() {
            let want = if i < 5 { 1.2 } else { 0.8 };
            assert!((w - want).abs() < 1e-8);
        }
    }

    #[test]
    fn matching_means_give_unit_weights() {
        let x = DMatrix::from_fn(50, 2, |i, j| ((i * (j + 2)) as f64 * 0.91).cos());
        let m = crate::data::column_means(&x);
        let b = entropy_balance(&x, &m, &BalanceConfig::default()).unwrap();
        assert!(b.w.iter().all(|w| (w - 1.0).abs() < 1e-10));
        assert_eq!(b.iterations, 0);
    }

    #[test]
    fn constant_column_is_skipped() {
        let x = DMatrix::from_fn(20, 2, |i, j| if j == 0 { 3.0 } else { i as f64 });
        let b = entropy_balance(&x, &[3.0, 12.0], &BalanceConfig::default()).unwrap();
        assert_eq!(b.used, vec![1]);
        assert!(b.converged);
        let m: f64 = b.w.iter().enumerate().map(|(i, w)| w * i as f64).sum::<f64>() / 20.0;
        assert!((m - 12.0).abs() < 1e-8);
    }

    #[test]
    fn boundary_target_is_flagged() {
        let x = DMatrix::from_fn(30, 1, |i, _| i as f64);
        let b = entropy_balance(&x, &[29.0], &BalanceConfig::default()).unwrap();
        assert!(!b.converged || b.is_extreme());
    }
}
