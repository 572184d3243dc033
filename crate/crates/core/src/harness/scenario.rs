use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use serde::Serialize;

use super::pairs::{compute_pairs, PairStats};
use super::{HarnessConfig, Method, Scenario};
use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::intervals::{calibrate_bounds, BoundRule, Interval};
use crate::rng::SeedTree;
use crate::worstcase::calibrate_kl_bound;

/// One interval of one method for one pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalRecord {
    pub method: Method,
    pub source: String,
    pub target: String,
    pub hypothesis: String,
    pub lo: f64,
    pub hi: f64,
    pub covered: u8,
    pub width: f64,
}

/// Coverage and width of one method, within one hypothesis or overall.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub hypothesis: String,
    pub method: Method,
    pub pairs: usize,
    pub coverage: f64,
    pub mean_width: f64,
    /// Mean width divided by the largest finite mean width among the methods.
    pub normalized_width: f64,
}

#[derive(Debug, Clone)]
pub struct DirectResult {
    pub pairs: Vec<Vec<PairStats>>,
    pub rows: Vec<IntervalRecord>,
    pub per_hypothesis: Vec<MethodSummary>,
    /// Coverage pooled over all pairs; normalized width averaged over
    /// hypotheses.
    pub overall: Vec<MethodSummary>,
}

impl DirectResult {
    pub fn overall_for(&self, m: Method) -> Option<&MethodSummary> {
        self.overall.iter().find(|s| s.method == m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioRow {
    pub scenario: Scenario,
    /// Revealed hypotheses (over-study), revealed sites (over-site), or the
    /// over-both step `t` with `t + 1` hypotheses and `3t` sites revealed.
    pub step: usize,
    pub method: Method,
    pub coverage: f64,
    pub mean_width: f64,
    pub normalized_width: f64,
    /// Average number of evaluated pairs per permutation.
    pub pairs: f64,
    pub permutations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub rows: Vec<ScenarioRow>,
}

impl ScenarioResult {
    pub fn row(&self, step: usize, m: Method) -> Option<&ScenarioRow> {
        self.rows.iter().find(|r| r.step == step && r.method == m)
    }
}

fn check_methods(cfg: &HarnessConfig) -> Result<()> {
    if cfg.methods.is_empty() {
        return Err(Error::Config("no interval methods selected".into()));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", cfg.alpha)));
    }
    Ok(())
}

fn check_corpus(corpus: &Corpus, scenario: Scenario) -> Result<()> {
    if let Some(h) = corpus.hypotheses.iter().find(|h| h.sites.len() < 2) {
        return Err(Error::Config(format!("hypothesis {} has {} site(s), need at least two", h.id, h.sites.len())));
    }
    let k = corpus.hypotheses.len();
    let n = corpus.sites().map(|s| s.site.as_str()).collect::<HashSet<_>>().len();
    // Every step must leave at least one hypothesis and two sites to evaluate.
    let (min_k, min_n) = match scenario {
        Scenario::Direct => (1, 2),
        Scenario::OverStudy => (2, 2),
        Scenario::OverSite => (1, 4),
        Scenario::OverBoth => (3, 5),
    };
    if k < min_k || n < min_n {
        return Err(Error::Config(format!(
            "{scenario:?} needs at least {min_k} hypotheses and {min_n} sites, got {k} and {n}"
        )));
    }
    Ok(())
}

fn finite_ratios<'a>(pairs: impl Iterator<Item = &'a PairStats>) -> Vec<f64> {
    pairs.filter_map(|p| p.ratio).filter(|r| r.is_finite()).collect()
}

fn finite_kls<'a>(pairs: impl Iterator<Item = &'a PairStats>) -> Vec<f64> {
    pairs.filter_map(|p| p.kl).filter(|r| r.is_finite()).collect()
}

fn oracle_bounds(pairs: &[PairStats], alpha: f64) -> Option<(f64, f64)> {
    calibrate_bounds(&BoundRule::Quantile { alpha }, &finite_ratios(pairs.iter())).ok()
}

fn interval_for(p: &PairStats, m: Method, cfg: &HarnessConfig, bounds: Option<(f64, f64)>, rho: Option<f64>) -> Option<Interval> {
    if cfg.infinite_bounds {
        return Some(Interval::unbounded());
    }
    p.interval(m, cfg.alpha, bounds, rho)
}

#[derive(Default, Clone, Copy)]
struct Tally {
    covered: usize,
    width: f64,
    n: usize,
}

impl Tally {
    fn add(&mut self, iv: &Interval, truth: f64) {
        self.covered += iv.contains(truth) as usize;
        self.width += iv.width();
        self.n += 1;
    }

    fn coverage(&self) -> f64 {
        self.covered as f64 / self.n as f64
    }

    fn mean_width(&self) -> f64 {
        self.width / self.n as f64
    }
}

fn normalizer(widths: impl Iterator<Item = f64>) -> f64 {
    widths.filter(|w| w.is_finite()).fold(0.0, f64::max)
}

/// Evaluate every ordered pair of every hypothesis. `Oracle` bounds and the
/// `WorstCaseKL` radius come from all pairs of the hypothesis being evaluated.
pub fn evaluate_direct(corpus: &Corpus, cfg: &HarnessConfig) -> Result<DirectResult> {
    check_methods(cfg)?;
    check_corpus(corpus, Scenario::Direct)?;
    if cfg.methods.contains(&Method::Adaptive) {
        return Err(Error::Config("Adaptive needs a scenario that reveals calibration data".into()));
    }
    let pairs = compute_pairs(corpus, cfg)?;
    let mut rows = Vec::new();
    let mut per_hypothesis = Vec::new();
    let mut pooled: BTreeMap<Method, Tally> = BTreeMap::new();
    let mut norm_sum: BTreeMap<Method, (f64, usize)> = BTreeMap::new();

    for (h, hp) in corpus.hypotheses.iter().zip(&pairs) {
        let bounds = oracle_bounds(hp, cfg.alpha);
        let rho = if cfg.methods.contains(&Method::WorstCaseKl) {
            calibrate_kl_bound(&finite_kls(hp.iter()), cfg.kl_quantile).ok()
        } else {
            None
        };
        let mut tallies: BTreeMap<Method, Tally> = BTreeMap::new();
        for p in hp {
            for &m in &cfg.methods {
                let Some(iv) = interval_for(p, m, cfg, bounds, rho) else { continue };
                tallies.entry(m).or_default().add(&iv, p.theta_target);
                pooled.entry(m).or_default().add(&iv, p.theta_target);
                rows.push(IntervalRecord {
                    method: m,
                    source: h.sites[p.source].site.clone(),
                    target: h.sites[p.target].site.clone(),
                    hypothesis: h.id.clone(),
                    lo: iv.lo,
                    hi: iv.hi,
                    covered: iv.contains(p.theta_target) as u8,
                    width: iv.width(),
                });
            }
        }
        let top = normalizer(tallies.values().map(Tally::mean_width));
        for (&m, t) in &tallies {
            let nw = t.mean_width() / top;
            let e = norm_sum.entry(m).or_default();
            e.0 += nw;
            e.1 += 1;
            per_hypothesis.push(MethodSummary {
                hypothesis: h.id.clone(),
                method: m,
                pairs: t.n,
                coverage: t.coverage(),
                mean_width: t.mean_width(),
                normalized_width: nw,
            });
        }
    }
    let overall = pooled
        .iter()
        .map(|(&m, t)| {
            let (s, k) = norm_sum.get(&m).copied().unwrap_or((f64::NAN, 1));
            MethodSummary {
                hypothesis: "all".into(),
                method: m,
                pairs: t.n,
                coverage: t.coverage(),
                mean_width: t.mean_width(),
                normalized_width: s / k as f64,
            }
        })
        .collect();
    Ok(DirectResult {
        pairs,
        rows,
        per_hypothesis,
        overall,
    })
}

/// One reveal step: which hypotheses and sites are visible for calibration,
/// and which are evaluated.
struct Step {
    index: usize,
    calib_h: HashSet<usize>,
    calib_s: HashSet<String>,
    eval_h: HashSet<usize>,
    eval_s: HashSet<String>,
}

fn steps(scenario: Scenario, hyp_order: &[usize], site_order: &[String]) -> Vec<Step> {
    let k = hyp_order.len();
    let n = site_order.len();
    let all_h: HashSet<usize> = hyp_order.iter().copied().collect();
    let all_s: HashSet<String> = site_order.iter().cloned().collect();
    let split_h = |t: usize| (hyp_order[..t].iter().copied().collect(), hyp_order[t..].iter().copied().collect());
    let split_s = |t: usize| (site_order[..t].iter().cloned().collect(), site_order[t..].iter().cloned().collect());
    match scenario {
        Scenario::Direct => Vec::new(),
        Scenario::OverStudy => (1..k)
            .map(|t| {
                let (calib_h, eval_h) = split_h(t);
                Step {
                    index: t,
                    calib_h,
                    calib_s: all_s.clone(),
                    eval_h,
                    eval_s: all_s.clone(),
                }
            })
            .collect(),
        Scenario::OverSite => (2..=n.saturating_sub(2))
            .map(|t| {
                let (calib_s, eval_s) = split_s(t);
                Step {
                    index: t,
                    calib_h: all_h.clone(),
                    calib_s,
                    eval_h: all_h.clone(),
                    eval_s,
                }
            })
            .collect(),
        Scenario::OverBoth => (1..k.saturating_sub(1))
            .take_while(|t| 3 * t + 2 <= n)
            .map(|t| {
                let (calib_h, eval_h) = split_h(t + 1);
                let (calib_s, eval_s) = split_s(3 * t);
                Step {
                    index: t,
                    calib_h,
                    calib_s,
                    eval_h,
                    eval_s,
                }
            })
            .collect(),
    }
}

/// Run a reveal scenario over `cfg.permutations` random orderings. Pair fits
/// are computed once and reused across permutations.
pub fn run_scenario(corpus: &Corpus, scenario: Scenario, cfg: &HarnessConfig) -> Result<ScenarioResult> {
    check_methods(cfg)?;
    if scenario == Scenario::Direct {
        return Err(Error::Config("use the direct evaluation for the direct scenario".into()));
    }
    if cfg.permutations == 0 {
        return Err(Error::Config("permutations must be positive".into()));
    }
    check_corpus(corpus, scenario)?;
    let pairs = compute_pairs(corpus, cfg)?;
    run_scenario_with(corpus, &pairs, scenario, cfg)
}

pub(crate) fn run_scenario_with(corpus: &Corpus, pairs: &[Vec<PairStats>], scenario: Scenario, cfg: &HarnessConfig) -> Result<ScenarioResult> {
    let mut site_names: Vec<String> = Vec::new();
    for h in &corpus.hypotheses {
        for s in &h.sites {
            if !site_names.contains(&s.site) {
                site_names.push(s.site.clone());
            }
        }
    }
    let name_of = |k: usize, i: usize| corpus.hypotheses[k].sites[i].site.as_str();
    let oracle: Vec<Option<(f64, f64)>> = pairs.iter().map(|hp| oracle_bounds(hp, cfg.alpha)).collect();
    let tree = SeedTree::new(cfg.seed);

    // (step, method) -> per-permutation (coverage, width, normalized width, pairs)
    let mut acc: BTreeMap<(usize, Method), Vec<(f64, f64, f64, usize)>> = BTreeMap::new();
    for perm in 0..cfg.permutations {
        let mut rng = tree.rng(&format!("perm/{perm}"));
        let mut hyp_order: Vec<usize> = (0..corpus.hypotheses.len()).collect();
        hyp_order.shuffle(&mut rng);
        let mut site_order = site_names.clone();
        site_order.shuffle(&mut rng);

        for step in steps(scenario, &hyp_order, &site_order) {
            let in_calib = |p: &&PairStats| {
                step.calib_h.contains(&p.hypothesis)
                    && step.calib_s.contains(name_of(p.hypothesis, p.source))
                    && step.calib_s.contains(name_of(p.hypothesis, p.target))
            };
            let in_eval = |p: &&PairStats| {
                step.eval_h.contains(&p.hypothesis)
                    && step.eval_s.contains(name_of(p.hypothesis, p.source))
                    && step.eval_s.contains(name_of(p.hypothesis, p.target))
            };
            let pool: Vec<&PairStats> = pairs.iter().flatten().filter(in_calib).collect();
            let adaptive = calibrate_bounds(&BoundRule::Quantile { alpha: cfg.alpha }, &finite_ratios(pool.iter().copied())).ok();
            let rho = calibrate_kl_bound(&finite_kls(pool.iter().copied()), cfg.kl_quantile).ok();
            if adaptive.is_none() && cfg.methods.contains(&Method::Adaptive) {
                log::warn!("{scenario:?} step {}: no calibration ratios revealed", step.index);
            }

            let mut tallies: HashMap<Method, Tally> = HashMap::new();
            for p in pairs.iter().flatten().filter(in_eval) {
                for &m in &cfg.methods {
                    let bounds = match m {
                        Method::Oracle => oracle[p.hypothesis],
                        _ => adaptive,
                    };
                    if let Some(iv) = interval_for(p, m, cfg, bounds, rho) {
                        tallies.entry(m).or_default().add(&iv, p.theta_target);
                    }
                }
            }
            let top = normalizer(tallies.values().map(Tally::mean_width));
            for (m, t) in tallies {
                acc.entry((step.index, m))
                    .or_default()
                    .push((t.coverage(), t.mean_width(), t.mean_width() / top, t.n));
            }
        }
    }

    let rows = acc
        .into_iter()
        .map(|((step, method), v)| {
            let k = v.len() as f64;
            ScenarioRow {
                scenario,
                step,
                method,
                coverage: v.iter().map(|x| x.0).sum::<f64>() / k,
                mean_width: v.iter().map(|x| x.1).sum::<f64>() / k,
                normalized_width: v.iter().map(|x| x.2).sum::<f64>() / k,
                pairs: v.iter().map(|x| x.3 as f64).sum::<f64>() / k,
                permutations: v.len(),
            }
        })
        .collect();
    Ok(ScenarioResult { scenario, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn over_study_steps_leave_something_to_evaluate() {
        let st = steps(Scenario::OverStudy, &[2, 0, 1, 3], &names(5));
        assert_eq!(st.iter().map(|s| s.index).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(st[0].calib_h, HashSet::from([2]));
        assert_eq!(st[2].eval_h, HashSet::from([3]));
    }

    #[test]
    fn over_site_keeps_two_sites_for_evaluation() {
        let st = steps(Scenario::OverSite, &[0], &names(10));
        assert_eq!(st.first().unwrap().index, 2);
        assert_eq!(st.last().unwrap().index, 8);
        assert_eq!(st.last().unwrap().eval_s.len(), 2);
    }

    #[test]
    fn over_both_reveals_three_sites_per_step() {
        let st = steps(Scenario::OverBoth, &[0, 1, 2, 3, 4], &names(10));
        assert_eq!(st.len(), 2);
        assert_eq!(st[0].calib_s.len(), 3);
        assert_eq!(st[0].calib_h.len(), 2);
        assert_eq!(st[1].calib_s.len(), 6);
        assert_eq!(st[1].calib_h.len(), 3);
        assert!(st[1].calib_s.is_disjoint(&st[1].eval_s));
    }
}
