use nalgebra::{DMatrix, DVector};

use super::Standardizer;
use crate::error::{Error, Result};
use crate::stats;

/// Ridge fit reported on the original covariate scale.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub intercept: f64,
    pub coef: Vec<f64>,
    /// Penalty on the standardized slopes.
    pub lambda: f64,
}

impl RidgeFit {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| {
                self.intercept
                    + self
                        .coef
                        .iter()
                        .enumerate()
                        .map(|(j, b)| b * x[(i, j)])
                        .sum::<f64>()
            })
            .collect()
    }
}

// Penalty grid relative to n, in log10 steps of 0.25.
fn lambda_grid(n: usize) -> impl Iterator<Item = f64> {
    (-24..=12).map(move |e| n as f64 * 10f64.powf(e as f64 / 4.0))
}

/// Ridge regression of `y` on standardized `x` with an unpenalized intercept.
/// With `lambda = None` the penalty minimizes generalized cross-validation.
pub fn fit_ridge(x: &DMatrix<f64>, y: &[f64], lambda: Option<f64>) -> Result<RidgeFit> {
    let n = y.len();
    if n == 0 {
        return Err(Error::EmptyInput("ridge training set"));
    }
    if x.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.nrows(),
        });
    }
    let p = x.ncols();
    let ybar = stats::mean(y);
    let std = Standardizer::fit(x);
    if let Some(l) = lambda {
        if l < 0.0 || !l.is_finite() {
            return Err(Error::Config(format!("ridge penalty {l} must be finite and >= 0")));
        }
        if l == 0.0 && (std.n_active() < p || n <= p) {
            return Err(Error::DegenerateDesign);
        }
    }
    if n == 1 || std.n_active() == 0 {
        return Ok(RidgeFit {
            intercept: ybar,
            coef: vec![0.0; p],
            lambda: lambda.unwrap_or(0.0),
        });
    }

    let z = std.transform(x);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - ybar));
    let svd = z.svd(true, true);
    let u = svd.u.as_ref().expect("left singular vectors");
    let vt = svd.v_t.as_ref().expect("right singular vectors");
    let s = &svd.singular_values;
    let uty = u.transpose() * &yc;

    let chosen = match lambda {
        Some(l) => {
            if l == 0.0 {
                let smax = s.max();
                if s.iter().any(|&v| v <= 1e-10 * smax) {
                    return Err(Error::DegenerateDesign);
                }
            }
            l
        }
        None => {
            let yy = yc.norm_squared();
            let proj = uty.norm_squared();
            let mut best = (f64::INFINITY, 1.0);
            for l in lambda_grid(n) {
                let mut df = 1.0;
                // Residual = component outside span(U) plus shrunken part.
                let mut rss = yy - proj;
                for (k, &sv) in s.iter().enumerate() {
                    let s2 = sv * sv;
                    let shrink = s2 / (s2 + l);
                    df += shrink;
                    let r = (1.0 - shrink) * uty[k];
                    rss += r * r;
                }
                let denom = n as f64 - df;
                if denom <= 0.0 {
                    continue;
                }
                let gcv = n as f64 * rss.max(0.0) / (denom * denom);
                if gcv < best.0 {
                    best = (gcv, l);
                }
            }
            best.1
        }
    };

    let mut scaled = DVector::zeros(s.len());
    for k in 0..s.len() {
        let sv = s[k];
        let denom = sv * sv + chosen;
        scaled[k] = if denom > 0.0 { sv / denom * uty[k] } else { 0.0 };
    }
    let bz = vt.transpose() * scaled;
    let mut coef = vec![0.0; p];
    let mut intercept = ybar;
    for j in 0..p {
        if std.active(j) {
            coef[j] = bz[j] / std.sds[j];
            intercept -= coef[j] * std.means[j];
        }
    }
    Ok(RidgeFit {
        intercept,
        coef,
        lambda: chosen,
    })
}
