//! Nuisance models: conditional-mean regressors, density ratios and
//! entropy-balancing weights.

mod balance;
mod knn;
mod logistic;
mod ridge;

pub use balance::{entropy_balance, BalanceConfig, BalanceWeights};
pub use knn::{fit_knn, KnnFit};
pub use logistic::{fit_density_ratio, fit_logistic, Clip, DensityRatio, LogisticFit};
pub use ridge::{fit_ridge, RidgeFit};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Column centering and scaling learned from training rows. Columns with zero
/// spread map to zero.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Standardizer {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let means = crate::data::column_means(x);
        let sds = (0..x.ncols())
            .map(|j| crate::stats::population_variance(x.column(j).as_slice()).sqrt())
            .collect();
        Self { means, sds }
    }

    pub fn active(&self, j: usize) -> bool {
        self.sds[j] > 0.0 && self.sds[j].is_finite()
    }

    pub fn n_active(&self) -> usize {
        (0..self.sds.len()).filter(|&j| self.active(j)).count()
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            if self.active(j) {
                (x[(i, j)] - self.means[j]) / self.sds[j]
            } else {
                0.0
            }
        })
    }
}

/// Conditional-mean learner used for `phi_hat`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regressor {
    /// Ridge regression on standardized covariates with an unpenalized
    /// intercept; `lambda = None` selects the penalty by GCV.
    Ridge { lambda: Option<f64> },
    /// k-nearest-neighbour average on standardized covariates; `k = None`
    /// uses `ceil(sqrt(n))`.
    Knn { k: Option<usize> },
}

impl Default for Regressor {
    fn default() -> Self {
        Regressor::Ridge { lambda: None }
    }
}

/// A fitted conditional-mean model.
#[derive(Debug, Clone)]
pub enum OutcomeModel {
    Ridge(RidgeFit),
    Knn(KnnFit),
}

impl OutcomeModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        match self {
            OutcomeModel::Ridge(m) => m.predict(x),
            OutcomeModel::Knn(m) => m.predict(x),
        }
    }
}

/// Fit the configured regressor of `phi` on `x`.
pub fn fit_outcome_model(x: &DMatrix<f64>, phi: &[f64], reg: &Regressor) -> Result<OutcomeModel> {
    Ok(match *reg {
        Regressor::Ridge { lambda } => OutcomeModel::Ridge(fit_ridge(x, phi, lambda)?),
        Regressor::Knn { k } => OutcomeModel::Knn(fit_knn(x, phi, k)?),
    })
}
