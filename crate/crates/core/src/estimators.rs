//! Transported estimates of a target-site parameter from source-site data:
//! the cross-fitted doubly robust estimator and the entropy-balancing
//! estimator, each with its plug-in standard error.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::data::{column_means, exclude_unbalanceable_covariates, split_folds, PairTask};
use crate::error::Result;
use crate::influence::{influence_values, Estimand};
use crate::nuisance::{entropy_balance, fit_density_ratio, fit_outcome_model, BalanceConfig, BalanceWeights, Clip, Regressor};
use crate::stats;

/// A function of one covariate row.
pub type RowFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Where the density ratio comes from.
#[derive(Clone, Default)]
pub enum WeightSource {
    #[default]
    Fitted,
    /// Every weight is one.
    Unit,
    Oracle(RowFn),
}

/// Where the conditional mean `phi_hat` comes from.
#[derive(Clone, Default)]
pub enum OutcomeSource {
    #[default]
    Fitted,
    /// `phi_hat` is identically zero.
    Zero,
    Oracle(RowFn),
}

impl fmt::Debug for WeightSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightSource::Fitted => "Fitted",
            WeightSource::Unit => "Unit",
            WeightSource::Oracle(_) => "Oracle",
        })
    }
}

impl fmt::Debug for OutcomeSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutcomeSource::Fitted => "Fitted",
            OutcomeSource::Zero => "Zero",
            OutcomeSource::Oracle(_) => "Oracle",
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct NuisanceConfig {
    pub regressor: Regressor,
    pub clip: Clip,
    pub balance: BalanceConfig,
    pub weights: WeightSource,
    pub outcome: OutcomeSource,
}

/// Point estimate with its covariate-shift standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub theta: f64,
    pub sigma: f64,
    pub n_source: usize,
    pub n_target: usize,
}

/// Entropy-balancing estimate along with the weighted source sample.
#[derive(Debug, Clone)]
pub struct EbEstimate {
    pub estimate: Estimate,
    /// Source weights, in source row order.
    pub weights: Vec<f64>,
    /// Source influence values.
    pub phi: Vec<f64>,
    /// Covariates retained after the support check.
    pub kept: Vec<usize>,
    pub balance: Option<BalanceWeights>,
}

fn apply_rows(x: &DMatrix<f64>, rows: &[usize], f: &RowFn) -> Vec<f64> {
    rows.iter()
        .map(|&i| {
            let r: Vec<f64> = x.row(i).iter().copied().collect();
            f(&r)
        })
        .collect()
}

/// Plug-in variance `mean(w^2 r^2) / n_s + mean(w r^2) / n_t` of the
/// difference between the transported estimate and the target estimate.
pub fn covshift_variance(w: &[f64], resid: &[f64], n_target: usize) -> f64 {
    let n = w.len() as f64;
    let a: f64 = w.iter().zip(resid).map(|(w, r)| w * w * r * r).sum::<f64>() / n;
    let b: f64 = w.iter().zip(resid).map(|(w, r)| w * r * r).sum::<f64>() / n;
    a / n + b / n_target as f64
}

// Samples this small are fitted without cross-fitting.
const MIN_CROSSFIT: usize = 4;

/// Out-of-fold predictions of `phi` given `x` from a two-fold split.
pub fn cross_fit_outcome(x: &DMatrix<f64>, phi: &[f64], cfg: &NuisanceConfig, seed: u64) -> Result<Vec<f64>> {
    let n = phi.len();
    match &cfg.outcome {
        OutcomeSource::Zero => return Ok(vec![0.0; n]),
        OutcomeSource::Oracle(f) => return Ok(apply_rows(x, &(0..n).collect::<Vec<_>>(), f)),
        OutcomeSource::Fitted => {}
    }
    if n < MIN_CROSSFIT {
        return Ok(fit_outcome_model(x, phi, &cfg.regressor)?.predict(x));
    }
    let split = split_folds(n, seed);
    let mut out = vec![0.0; n];
    for k in 0..2 {
        let train = &split.folds[k];
        let apply = &split.folds[1 - k];
        let ys: Vec<f64> = train.iter().map(|&i| phi[i]).collect();
        let model = fit_outcome_model(&x.select_rows(train), &ys, &cfg.regressor)?;
        for (&i, v) in apply.iter().zip(model.predict(&x.select_rows(apply))) {
            out[i] = v;
        }
    }
    Ok(out)
}

/// Cross-fitted doubly robust estimate of the target parameter:
/// `mean_i w(X_i) (phi_i - phi_hat(X_i)) + mean_j phi_hat(X_j)`, with both
/// nuisances fitted on one half of the source and target samples and applied
/// to the other half.
pub fn dr_estimate(task: &PairTask, estimand: &Estimand, cfg: &NuisanceConfig, seed: u64) -> Result<Estimate> {
    task.ensure_covariates_only("dr_estimate")?;
    let src = task.source;
    let xs = &src.x;
    let xt = task.target_x;
    let phi = influence_values(src, estimand)?;
    let (ns, nt) = (phi.len(), xt.nrows());

    let all_s: Vec<usize> = (0..ns).collect();
    let all_t: Vec<usize> = (0..nt).collect();
    let plan: Vec<(Vec<usize>, Vec<usize>, Vec<usize>, Vec<usize>)> = if ns < MIN_CROSSFIT || nt < MIN_CROSSFIT {
        vec![(all_s.clone(), all_t.clone(), all_s, all_t)]
    } else {
        let sf = split_folds(ns, seed);
        let tf = split_folds(nt, seed);
        (0..2)
            .map(|k| {
                (
                    sf.folds[k].clone(),
                    tf.folds[k].clone(),
                    sf.folds[1 - k].clone(),
                    tf.folds[1 - k].clone(),
                )
            })
            .collect()
    };

    let mut w = vec![1.0; ns];
    let mut fs = vec![0.0; ns];
    let mut ft = vec![0.0; nt];
    for (train_s, train_t, apply_s, apply_t) in &plan {
        match &cfg.weights {
            WeightSource::Unit => {}
            WeightSource::Oracle(f) => {
                for (&i, v) in apply_s.iter().zip(apply_rows(xs, apply_s, f)) {
                    w[i] = v;
                }
            }
            WeightSource::Fitted => {
                let dr = fit_density_ratio(&xs.select_rows(train_s), &xt.select_rows(train_t), cfg.clip)?;
                for (&i, v) in apply_s.iter().zip(dr.weights(&xs.select_rows(apply_s))) {
                    w[i] = v;
                }
            }
        }
        match &cfg.outcome {
            OutcomeSource::Zero => {}
            OutcomeSource::Oracle(f) => {
                for (&i, v) in apply_s.iter().zip(apply_rows(xs, apply_s, f)) {
                    fs[i] = v;
                }
                for (&j, v) in apply_t.iter().zip(apply_rows(xt, apply_t, f)) {
                    ft[j] = v;
                }
            }
            OutcomeSource::Fitted => {
                let ys: Vec<f64> = train_s.iter().map(|&i| phi[i]).collect();
                let model = fit_outcome_model(&xs.select_rows(train_s), &ys, &cfg.regressor)?;
                for (&i, v) in apply_s.iter().zip(model.predict(&xs.select_rows(apply_s))) {
                    fs[i] = v;
                }
                for (&j, v) in apply_t.iter().zip(model.predict(&xt.select_rows(apply_t))) {
                    ft[j] = v;
                }
            }
        }
    }

    let resid: Vec<f64> = phi.iter().zip(&fs).map(|(p, f)| p - f).collect();
    let terms: Vec<f64> = w.iter().zip(&resid).map(|(w, r)| w * r).collect();
    let theta = stats::mean(&terms) + stats::mean(&ft);
    let sigma = covshift_variance(&w, &resid, nt).sqrt();
    Ok(Estimate {
        theta,
        sigma,
        n_source: ns,
        n_target: nt,
    })
}

/// Entropy-balancing estimate `sum_i w_i phi_i / sum_i w_i`, with weights
/// that match the target covariate means. Covariates whose target mean falls
/// outside the source range are left out of the balancing constraints.
pub fn eb_estimate(task: &PairTask, estimand: &Estimand, cfg: &NuisanceConfig, seed: u64) -> Result<EbEstimate> {
    task.ensure_covariates_only("eb_estimate")?;
    let src = task.source;
    let phi = influence_values(src, estimand)?;
    let (ns, nt) = (phi.len(), task.target_x.nrows());
    let target_means = column_means(task.target_x);
    let kept = exclude_unbalanceable_covariates(&src.x, &target_means);

    let (weights, balance) = match &cfg.weights {
        WeightSource::Unit => (vec![1.0; ns], None),
        WeightSource::Oracle(f) => (apply_rows(&src.x, &(0..ns).collect::<Vec<_>>(), f), None),
        WeightSource::Fitted => {
            if kept.is_empty() {
                log::warn!("{}/{}: no balanceable covariates, using unit weights", src.hypothesis, src.site);
                (vec![1.0; ns], None)
            } else {
                let xk = src.x.select_columns(&kept);
                let mk: Vec<f64> = kept.iter().map(|&j| target_means[j]).collect();
                let b = entropy_balance(&xk, &mk, &cfg.balance)?;
                (b.w.clone(), Some(b))
            }
        }
    };

    let theta = stats::weighted_mean(&phi, &weights);
    let fitted = cross_fit_outcome(&src.x, &phi, cfg, seed)?;
    let resid: Vec<f64> = phi.iter().zip(&fitted).map(|(p, f)| p - f).collect();
    let sigma = covshift_variance(&weights, &resid, nt).sqrt();
    Ok(EbEstimate {
        estimate: Estimate {
            theta,
            sigma,
            n_source: ns,
            n_target: nt,
        },
        weights,
        phi,
        kept,
        balance,
    })
}
