use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{Center, HarnessConfig, Method};
use crate::data::{Corpus, HypothesisData, PairTask, SiteDataset};
use crate::error::Result;
use crate::estimators::{dr_estimate, eb_estimate, Estimate};
use crate::influence::{iid_sd, site_estimate, Estimand};
use crate::intervals::{covshift_interval, iid_interval, predictive_interval, Interval};
use crate::measures::{alternative_measures, conditional_shift, conditional_variances, shift_ratio, stabilized_covariate_shift, AlternativeMeasures, ConditionalVariances, ShiftMeasures};
use crate::rng::SeedTree;
use crate::worstcase::{estimate_conditional_kl, kl_worstcase_interval};

/// Everything computed for one ordered (source, target) pair of a hypothesis.
/// The fields above `theta_target` are built from the source data and the
/// target covariates only.
#[derive(Debug, Clone)]
pub struct PairStats {
    pub hypothesis: usize,
    pub source: usize,
    pub target: usize,
    pub theta_source: f64,
    pub sd_source: f64,
    pub n_source: usize,
    pub n_target: usize,
    pub eb: Estimate,
    pub dr: Option<Estimate>,
    /// Entropy-balancing weights and influence values of the source.
    pub eb_weights: Vec<f64>,
    pub phi: Vec<f64>,
    pub cv: ConditionalVariances,
    pub t_x: Option<f64>,
    /// Centre of the predictive intervals.
    pub theta_w: f64,

    pub theta_target: f64,
    pub t_yx: Option<f64>,
    pub ratio: Option<f64>,
    pub alt: AlternativeMeasures,
    pub kl: Option<f64>,
}

/// Label-free quantities of a pair.
struct PairFit {
    theta_source: f64,
    sd_source: f64,
    eb: Estimate,
    dr: Option<Estimate>,
    eb_weights: Vec<f64>,
    phi: Vec<f64>,
    cv: ConditionalVariances,
    t_x: Option<f64>,
    theta_w: f64,
}

fn fit_pair(task: &PairTask, estimand: &Estimand, cfg: &HarnessConfig, seed: u64) -> Result<PairFit> {
    task.ensure_covariates_only("pair fit")?;
    let src = task.source;
    let (theta_source, phi_src) = site_estimate(src, estimand)?;
    let eb = eb_estimate(task, estimand, &cfg.nuisance, seed)?;
    let want_dr = cfg.center == Center::Dr || cfg.methods.contains(&Method::CovShiftDr);
    let dr = if want_dr {
        match dr_estimate(task, estimand, &cfg.nuisance, seed) {
            Ok(e) => Some(e),
            Err(e) => {
                log::warn!("{}/{}: doubly robust estimate failed: {e}", src.hypothesis, src.site);
                None
            }
        }
    } else {
        None
    };
    let cv = conditional_variances(src, estimand, &cfg.nuisance, seed)?;
    let t_x = match stabilized_covariate_shift(&src.x, task.target_x, cfg.shift.mahalanobis) {
        Ok(v) => Some(v),
        Err(e) => {
            log::warn!("{}/{}: covariate shift unavailable: {e}", src.hypothesis, src.site);
            None
        }
    };
    let theta_w = match (cfg.center, dr) {
        (Center::Dr, Some(d)) => d.theta,
        _ => eb.estimate.theta,
    };
    Ok(PairFit {
        theta_source,
        sd_source: iid_sd(&phi_src),
        eb: eb.estimate,
        dr,
        eb_weights: eb.weights,
        phi: eb.phi,
        cv,
        t_x,
        theta_w,
    })
}

/// Fit a pair from the source and the target covariates, then evaluate it
/// against the target's own estimate.
pub fn compute_pair(h: &HypothesisData, hk: usize, i: usize, j: usize, cfg: &HarnessConfig, seed: u64) -> Result<PairStats> {
    let source = &h.sites[i];
    let target = &h.sites[j];
    let fit = fit_pair(&PairTask::new(source, &target.x)?, &h.estimand, cfg, seed)?;

    let (theta_target, _) = site_estimate(target, &h.estimand)?;
    let t_yx = conditional_shift(theta_target, fit.theta_w, fit.cv.s_yx()).ok();
    let ratio = match (t_yx, fit.t_x) {
        (Some(a), Some(b)) => shift_ratio(a, b).ok(),
        _ => None,
    };
    let alt = alternative_measures(theta_target, fit.theta_w, fit.theta_source, fit.cv.s_x());
    let kl = if cfg.methods.contains(&Method::WorstCaseKl) {
        match estimate_conditional_kl(source, target) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("{}: KL estimate {}->{} failed: {e}", h.id, source.site, target.site);
                None
            }
        }
    } else {
        None
    };
    Ok(PairStats {
        hypothesis: hk,
        source: i,
        target: j,
        theta_source: fit.theta_source,
        sd_source: fit.sd_source,
        n_source: source.n(),
        n_target: target.n(),
        eb: fit.eb,
        dr: fit.dr,
        eb_weights: fit.eb_weights,
        phi: fit.phi,
        cv: fit.cv,
        t_x: fit.t_x,
        theta_w: fit.theta_w,
        theta_target,
        t_yx,
        ratio,
        alt,
        kl,
    })
}

/// All ordered pairs of every hypothesis, computed in parallel. Pair seeds
/// come from the substream `hyp/<k>/pair/<i>-<j>`.
pub fn compute_pairs(corpus: &Corpus, cfg: &HarnessConfig) -> Result<Vec<Vec<PairStats>>> {
    let tree = SeedTree::new(cfg.seed);
    corpus
        .hypotheses
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let n = h.sites.len();
            let idx: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect();
            idx.par_iter()
                .map(|&(i, j)| compute_pair(h, k, i, j, cfg, tree.seed(&format!("hyp/{k}/pair/{i}-{j}"))))
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

impl PairStats {
    /// Interval of `method` given calibrated bounds (for `Oracle` and
    /// `Adaptive`) and KL radius (for `WorstCaseKL`). `None` when an input is
    /// unavailable for this pair.
    pub fn interval(&self, method: Method, alpha: f64, bounds: Option<(f64, f64)>, rho: Option<f64>) -> Option<Interval> {
        match method {
            Method::Iid => Some(iid_interval(self.theta_source, self.sd_source, self.n_source, self.n_target, alpha)),
            Method::CovShiftDr => self.dr.map(|d| covshift_interval(&d, alpha)),
            Method::CovShiftEb => Some(covshift_interval(&self.eb, alpha)),
            Method::Const => self.t_x.map(|t| predictive_interval(self.theta_w, t, self.cv.s_yx(), (-1.0, 1.0))),
            Method::Oracle | Method::Adaptive => {
                let b = bounds?;
                self.t_x.map(|t| predictive_interval(self.theta_w, t, self.cv.s_yx(), b))
            }
            Method::WorstCaseKl => kl_worstcase_interval(&self.phi, &self.eb_weights, rho?).ok(),
        }
    }

    pub fn measures(&self, h: &HypothesisData) -> ShiftMeasures {
        ShiftMeasures {
            source: h.sites[self.source].site.clone(),
            target: h.sites[self.target].site.clone(),
            hypothesis: h.id.clone(),
            t_yx: self.t_yx.unwrap_or(f64::NAN),
            t_x: self.t_x.unwrap_or(f64::NAN),
            ratio: self.ratio.unwrap_or(f64::NAN),
            delta_yx: self.alt.delta_yx,
            delta_x: self.alt.delta_x,
            rel_x: self.alt.rel_x,
        }
    }
}

/// Intervals for one pair that need no calibration data.
#[derive(Debug, Clone)]
pub struct PairIntervals {
    pub theta_source: f64,
    pub eb: Estimate,
    pub dr: Option<Estimate>,
    pub t_x: Option<f64>,
    pub s_yx: f64,
    pub intervals: Vec<(Method, Interval)>,
}

/// Generalize from `source` to a target known only through its covariates.
pub fn generalize_pair(source: &SiteDataset, target_x: &DMatrix<f64>, estimand: &Estimand, cfg: &HarnessConfig, seed: u64) -> Result<PairIntervals> {
    let fit = fit_pair(&PairTask::new(source, target_x)?, estimand, cfg, seed)?;
    let stats = PairStats {
        hypothesis: 0,
        source: 0,
        target: 0,
        theta_source: fit.theta_source,
        sd_source: fit.sd_source,
        n_source: source.n(),
        n_target: target_x.nrows(),
        eb: fit.eb,
        dr: fit.dr,
        eb_weights: fit.eb_weights,
        phi: fit.phi,
        cv: fit.cv,
        t_x: fit.t_x,
        theta_w: fit.theta_w,
        theta_target: f64::NAN,
        t_yx: None,
        ratio: None,
        alt: alternative_measures(f64::NAN, fit.theta_w, fit.theta_source, fit.cv.s_x()),
        kl: None,
    };
    let intervals = [Method::Iid, Method::CovShiftDr, Method::CovShiftEb, Method::Const]
        .into_iter()
        .filter(|m| cfg.methods.contains(m))
        .filter_map(|m| {
            let iv = if cfg.infinite_bounds {
                Some(Interval::unbounded())
            } else {
                stats.interval(m, cfg.alpha, None, None)
            };
            iv.map(|iv| (m, iv))
        })
        .collect();
    Ok(PairIntervals {
        theta_source: stats.theta_source,
        eb: stats.eb,
        dr: stats.dr,
        t_x: stats.t_x,
        s_yx: stats.cv.s_yx(),
        intervals,
    })
}
