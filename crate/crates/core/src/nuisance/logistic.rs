use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Standardizer;
use crate::error::{Error, Result};

const MAX_ITER: usize = 100;

/// Ridge-penalized logistic regression fitted by Newton-Raphson (IRLS) with
/// step halving. Slopes live on the standardized scale.
#[derive(Debug, Clone)]
pub struct LogisticFit {
    std: Standardizer,
    active: Vec<usize>,
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub iterations: usize,
}

fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Fit `P(label = 1 | x)`. The penalty applies to slopes only.
pub fn fit_logistic(x: &DMatrix<f64>, labels: &[bool], penalty: f64) -> Result<LogisticFit> {
    let n = labels.len();
    if x.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.nrows(),
        });
    }
    let n1 = labels.iter().filter(|&&l| l).count();
    if n1 == 0 || n1 == n {
        return Err(Error::EmptyInput("logistic regression needs both classes"));
    }
    let std = Standardizer::fit(x);
    let active: Vec<usize> = (0..x.ncols()).filter(|&j| std.active(j)).collect();
    let z = std.transform(x);
    let p = active.len() + 1;
    let a = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { z[(i, active[j - 1])] });
    let yv: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();

    let objective = |beta: &DVector<f64>| -> f64 {
        let eta = &a * beta;
        let nll: f64 = eta.iter().zip(&yv).map(|(e, y)| softplus(*e) - y * e).sum();
        let pen: f64 = beta.iter().skip(1).map(|b| b * b).sum::<f64>();
        nll + 0.5 * penalty * pen
    };

    let mut beta = DVector::zeros(p);
    beta[0] = (n1 as f64 / (n - n1) as f64).ln();
    let mut obj = objective(&beta);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=MAX_ITER {
        iterations = it;
        let eta = &a * &beta;
        let mu: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::<f64>::zeros(p, p);
        for i in 0..n {
            let r = mu[i] - yv[i];
            let w = mu[i] * (1.0 - mu[i]);
            let row = a.row(i);
            for j in 0..p {
                grad[j] += row[j] * r;
                let wj = w * row[j];
                for k in j..p {
                    hess[(j, k)] += wj * row[k];
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                hess[(j, k)] = hess[(k, j)];
            }
        }
        for j in 1..p {
            grad[j] += penalty * beta[j];
            hess[(j, j)] += penalty;
        }
        hess[(0, 0)] += 1e-12;
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&(-&grad)),
            None => match hess.lu().solve(&(-&grad)) {
                Some(s) => s,
                None => break,
            },
        };
        let decrement = -grad.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let cand = &beta + &step * t;
            let c = objective(&cand);
            if c <= obj - 1e-4 * t * decrement || (c - obj).abs() <= 1e-14 * obj.abs().max(1.0) {
                let change = (&cand - &beta).amax();
                beta = cand;
                let old = obj;
                obj = c;
                accepted = true;
                if change < 1e-8 * (1.0 + beta.amax()) || (old - obj).abs() < 1e-13 * (1.0 + obj.abs()) {
                    converged = true;
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            converged = decrement.abs() < 1e-10 * (1.0 + obj.abs());
            break;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(Error::SeparableClasses { iterations });
    }
    Ok(LogisticFit {
        std,
        active,
        intercept: beta[0],
        coef: beta.iter().skip(1).copied().collect(),
        iterations,
    })
}

impl LogisticFit {
    /// Linear predictor `log(p / (1 - p))` for each row.
    pub fn logits(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| {
                let mut v = self.intercept;
                for (k, &j) in self.active.iter().enumerate() {
                    v += self.coef[k] * (x[(i, j)] - self.std.means[j]) / self.std.sds[j];
                }
                v
            })
            .collect()
    }
}

/// Clipping range for estimated density ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub lo: f64,
    pub hi: f64,
}

impl Default for Clip {
    fn default() -> Self {
        Self { lo: 0.05, hi: 20.0 }
    }
}

const RATIO_PENALTY: f64 = 1e-6;

/// Density ratio `dQ_X / dP_X` from a classifier of target (1) against
/// source (0): `w(x) = (n_P / n_Q) * p(x) / (1 - p(x))`.
#[derive(Debug, Clone)]
pub struct DensityRatio {
    pub fit: LogisticFit,
    log_scale: f64,
    pub clip: Clip,
}

pub fn fit_density_ratio(source_x: &DMatrix<f64>, target_x: &DMatrix<f64>, clip: Clip) -> Result<DensityRatio> {
    let (ns, nt) = (source_x.nrows(), target_x.nrows());
    if ns == 0 || nt == 0 {
        return Err(Error::EmptyInput("density ratio needs source and target rows"));
    }
    if source_x.ncols() != target_x.ncols() {
        return Err(Error::DimensionMismatch {
            expected: source_x.ncols(),
            got: target_x.ncols(),
        });
    }
    let x = DMatrix::from_fn(ns + nt, source_x.ncols(), |i, j| {
        if i < ns {
            source_x[(i, j)]
        } else {
            target_x[(i - ns, j)]
        }
    });
    let labels: Vec<bool> = (0..ns + nt).map(|i| i >= ns).collect();
    let fit = fit_logistic(&x, &labels, RATIO_PENALTY)?;
    Ok(DensityRatio {
        fit,
        log_scale: (ns as f64 / nt as f64).ln(),
        clip,
    })
}

impl DensityRatio {
    /// Unclipped `log w(x)`.
    pub fn log_ratio(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.fit
            .logits(x)
            .into_iter()
            .map(|l| l + self.log_scale)
            .collect()
    }

    /// Clipped weights.
    pub fn weights(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.log_ratio(x)
            .into_iter()
            .map(|l| l.exp().clamp(self.clip.lo, self.clip.hi))
            .collect()
    }
}
