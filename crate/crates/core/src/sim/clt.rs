use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{perturb, OutcomeSpec, PerturbedDistribution, Population, WeightLaw};
use crate::error::{Error, Result};
use crate::rng::SeedTree;
use crate::stats;

/// Function whose source-to-target mean difference is studied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PsiSpec {
    /// The influence value `phi` of the outcome design.
    Influence,
    /// `phi - E[phi | X]`.
    Residual,
    /// Covariate `index` (zero-based).
    Covariate { index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CltConfig {
    pub pieces: usize,
    pub atoms_per_piece: usize,
    pub n_p: usize,
    pub n_q: usize,
    pub replicates: usize,
    pub covariates: usize,
    pub unobserved: usize,
    pub law: WeightLaw,
    pub outcome: OutcomeSpec,
    pub psi: PsiSpec,
    pub seed: u64,
}

impl Default for CltConfig {
    fn default() -> Self {
        Self {
            pieces: 2000,
            atoms_per_piece: 1,
            n_p: 1000,
            n_q: 1000,
            replicates: 5000,
            covariates: 5,
            unobserved: 1,
            law: WeightLaw::UniformInterval { a: 0.5, b: 1.5 },
            outcome: OutcomeSpec::with_kappa(5, 0.5, 0.2),
            psi: PsiSpec::Influence,
            seed: 1,
        }
    }
}

/// Statistics of one replicate: source drawn from the base law, target from
/// a fresh perturbation of it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateDraw {
    /// `mean_Q(psi) - mean_P(psi)`.
    pub diff: f64,
    /// Per covariate, `(mean_Q x - mean_P x)^2 / var_P(x)`.
    pub covariate_stats: Vec<f64>,
    /// Average of `covariate_stats`: the squared stabilized covariate shift.
    pub stabilized_sq: f64,
    /// Signed `(mean_Q r - mean_P r) / sd_P(r)` with `r = phi - E[phi | X]`.
    pub t_yx: f64,
    /// `t_yx / sqrt(stabilized_sq)`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CltReport {
    pub replicates: usize,
    pub pieces: usize,
    pub n_p: usize,
    pub n_q: usize,
    /// Sample variance of `diff` across replicates.
    pub empirical_var: f64,
    /// `(1/n_P + 1/n_Q) Var_P(psi) + delta_M^2 Var_P(E[psi | X, U])`.
    pub theory_var: f64,
    pub var_ratio: f64,
    /// KS p-value of `diff / sqrt(theory_var)` against N(0, 1).
    pub ks_pvalue: f64,
    /// `Var(W) / (M E[W]^2)`.
    pub delta_m_sq: f64,
    /// `E[W^2] / (M E[W]^2)`, for comparison.
    pub delta_m_sq_second_moment: f64,
    pub var_psi: f64,
    pub var_cond_mean_psi: f64,
    /// `Var_P(E[psi | X, U]) / Var_P(psi)`.
    pub kappa: f64,
    /// The same share for `phi - E[phi | X]`.
    pub kappa_residual: f64,
    /// `1/n_P + 1/n_Q + delta_M^2`.
    pub normalizer: f64,
    /// KS p-value of the first covariate statistic over `normalizer` against
    /// chi-square(1).
    pub covariate_ks_pvalue: f64,
    /// Mean of `stabilized_sq` over `normalizer`.
    pub stabilized_mean_ratio: f64,
    /// Coefficient of variation of `stabilized_sq`.
    pub stabilized_cv: f64,
    /// Fraction of replicates with `|ratio| <= 1`.
    pub frac_ratio_within_one: f64,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone)]
pub struct CltExperiment {
    pub report: CltReport,
    pub draws: Vec<ReplicateDraw>,
}

struct AtomTable {
    m: Vec<f64>,
    d: Vec<f64>,
    proj: Vec<f64>,
    l: usize,
    x: Vec<f64>,
}

fn psi_moments(spec: &OutcomeSpec, t: &AtomTable, psi: PsiSpec, a: usize) -> (f64, f64) {
    match psi {
        PsiSpec::Influence => spec.phi_moments(t.m[a], t.d[a]),
        PsiSpec::Residual => {
            let (mu, v) = spec.phi_moments(t.m[a], t.d[a]);
            (mu - t.proj[a], v)
        }
        PsiSpec::Covariate { index } => (t.x[a * t.l + index], 0.0),
    }
}

// (Var_P(psi), Var_P(E[psi | atom])) under atom masses.
fn exact_variances(spec: &OutcomeSpec, t: &AtomTable, psi: PsiSpec, mass: &[f64]) -> (f64, f64) {
    let mut e1 = 0.0;
    let mut e2 = 0.0;
    let mut ev = 0.0;
    for (a, &w) in mass.iter().enumerate() {
        let (mu, v) = psi_moments(spec, t, psi, a);
        e1 += w * mu;
        e2 += w * mu * mu;
        ev += w * v;
    }
    let vc = e2 - e1 * e1;
    (vc + ev, vc)
}

#[derive(Default)]
struct Moments {
    n: f64,
    psi: f64,
    res: f64,
    res2: f64,
    x: Vec<f64>,
    x2: Vec<f64>,
}

fn accumulate(
    dist: &PerturbedDistribution,
    n: usize,
    spec: &OutcomeSpec,
    table: &AtomTable,
    psi: PsiSpec,
    rng: &mut rand_chacha::ChaCha20Rng,
) -> Moments {
    let l = table.l;
    let mut mo = Moments {
        n: n as f64,
        x: vec![0.0; l],
        x2: vec![0.0; l],
        ..Default::default()
    };
    for _ in 0..n {
        let a = dist.sample_atom(rng);
        let (_, _, phi) = spec.draw(table.m[a], table.d[a], rng);
        let r = phi - table.proj[a];
        let row = &table.x[a * l..(a + 1) * l];
        mo.psi += match psi {
            PsiSpec::Influence => phi,
            PsiSpec::Residual => r,
            PsiSpec::Covariate { index } => row[index],
        };
        mo.res += r;
        mo.res2 += r * r;
        for (k, &v) in row.iter().enumerate() {
            mo.x[k] += v;
            mo.x2[k] += v * v;
        }
    }
    mo
}

fn sample_var(sum: f64, sum2: f64, n: f64) -> f64 {
    ((sum2 - sum * sum / n) / (n - 1.0)).max(0.0)
}

/// Monte Carlo study of the source-to-target mean difference under random
/// perturbations of the base law.
pub fn run_clt_experiment(cfg: &CltConfig) -> Result<CltExperiment> {
    cfg.law.validate()?;
    if cfg.replicates < 2 || cfg.n_p < 2 || cfg.n_q < 2 {
        return Err(Error::Config("need at least two replicates and two units per site".into()));
    }
    if let PsiSpec::Covariate { index } = cfg.psi {
        if index >= cfg.covariates {
            return Err(Error::Config(format!("covariate {index} out of range")));
        }
    }
    let start = Instant::now();
    let tree = SeedTree::new(cfg.seed);
    let pop = Population::draw(cfg.pieces, cfg.atoms_per_piece, cfg.covariates, cfg.unobserved, tree.seed("population"))?;
    let atoms = pop.atoms();
    let l = cfg.covariates;
    let spec = &cfg.outcome;
    let mut table = AtomTable {
        m: Vec::with_capacity(atoms),
        d: Vec::with_capacity(atoms),
        proj: Vec::with_capacity(atoms),
        l,
        x: Vec::with_capacity(atoms * l),
    };
    for a in 0..atoms {
        let (m, d) = spec.atom_terms(&pop, a);
        table.m.push(m);
        table.d.push(d);
        table.proj.push(spec.projection(pop.x.row(a).iter().copied()));
        table.x.extend(pop.x.row(a).iter().copied());
    }
    let mass = pop.atom_mass();
    let (var_psi, var_cond) = exact_variances(spec, &table, cfg.psi, &mass);
    let (var_res, var_res_cond) = exact_variances(spec, &table, PsiSpec::Residual, &mass);
    let delta = cfg.law.delta_m_sq(cfg.pieces);
    let a_n = 1.0 / cfg.n_p as f64 + 1.0 / cfg.n_q as f64;
    let theory_var = a_n * var_psi + delta * var_cond;
    let base = PerturbedDistribution::unperturbed(pop.pieces.clone())?;

    let draws: Vec<ReplicateDraw> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| -> Result<ReplicateDraw> {
            let rt = tree.child(&format!("rep/{r}"));
            let q = perturb(pop.pieces.clone(), &cfg.law, rt.seed("perturb"))?;
            let p = accumulate(&base, cfg.n_p, spec, &table, cfg.psi, &mut rt.rng("source"));
            let t = accumulate(&q, cfg.n_q, spec, &table, cfg.psi, &mut rt.rng("target"));
            let diff = t.psi / t.n - p.psi / p.n;
            let covariate_stats: Vec<f64> = (0..l)
                .map(|k| {
                    let d = t.x[k] / t.n - p.x[k] / p.n;
                    d * d / sample_var(p.x[k], p.x2[k], p.n)
                })
                .collect();
            let stabilized_sq = stats::mean(&covariate_stats);
            let sd_res = sample_var(p.res, p.res2, p.n).sqrt();
            let t_yx = (t.res / t.n - p.res / p.n) / sd_res;
            Ok(ReplicateDraw {
                diff,
                covariate_stats,
                stabilized_sq,
                t_yx,
                ratio: t_yx / stabilized_sq.sqrt(),
            })
        })
        .collect::<Result<_>>()?;

    let diffs: Vec<f64> = draws.iter().map(|d| d.diff).collect();
    let empirical_var = stats::sample_variance(&diffs);
    let sd = theory_var.sqrt();
    let (_, ks_pvalue) = stats::ks_test(&diffs.iter().map(|d| d / sd).collect::<Vec<_>>(), stats::normal_cdf);
    let normalizer = a_n + delta;
    let first: Vec<f64> = draws.iter().map(|d| d.covariate_stats[0] / normalizer).collect();
    let (_, covariate_ks_pvalue) = stats::ks_test(&first, |x| if x <= 0.0 { 0.0 } else { stats::chi_squared_cdf(x, 1.0) });
    let stab: Vec<f64> = draws.iter().map(|d| d.stabilized_sq).collect();
    let stab_mean = stats::mean(&stab);
    let within = draws.iter().filter(|d| d.ratio.abs() <= 1.0).count();

    let report = CltReport {
        replicates: cfg.replicates,
        pieces: cfg.pieces,
        n_p: cfg.n_p,
        n_q: cfg.n_q,
        empirical_var,
        theory_var,
        var_ratio: empirical_var / theory_var,
        ks_pvalue,
        delta_m_sq: delta,
        delta_m_sq_second_moment: cfg.law.delta_m_sq_second_moment(cfg.pieces),
        var_psi,
        var_cond_mean_psi: var_cond,
        kappa: var_cond / var_psi,
        kappa_residual: var_res_cond / var_res,
        normalizer,
        covariate_ks_pvalue,
        stabilized_mean_ratio: stab_mean / normalizer,
        stabilized_cv: stats::sample_sd(&stab) / stab_mean,
        frac_ratio_within_one: within as f64 / cfg.replicates as f64,
        elapsed_secs: start.elapsed().as_secs_f64(),
    };
    Ok(CltExperiment { report, draws })
}
