use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{perturb, sample_from, Design, OutcomeSpec, Population, WeightLaw};
use crate::data::{Corpus, HypothesisData};
use crate::error::{Error, Result};
use crate::rng::SeedTree;

/// A simulated hypothesis: a name and its outcome model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisSim {
    pub name: String,
    pub outcome: OutcomeSpec,
}

/// Multi-site corpus in which every site is an independent random
/// perturbation of one shared base law. A site's perturbation is shared by all
/// hypotheses; each (hypothesis, site) cell draws its own participants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub sites: usize,
    pub pieces: usize,
    pub atoms_per_piece: usize,
    pub covariates: usize,
    pub unobserved: usize,
    pub law: WeightLaw,
    /// Per-cell sample sizes are uniform on `[n_min, n_max]`.
    pub n_min: usize,
    pub n_max: usize,
    pub hypotheses: Vec<HypothesisSim>,
    pub seed: u64,
}

/// Coefficients with squared norm `norm2`, varying in sign and size across
/// the `len` positions.
fn spread(len: usize, norm2: f64, phase: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|j| (1.3 * j as f64 + phase).cos()).collect();
    let s: f64 = raw.iter().map(|v| v * v).sum();
    raw.iter().map(|v| v * (norm2 / s).sqrt()).collect()
}

fn unit(len: usize, at: usize, value: f64) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[at] = value;
    v
}

impl Default for CorpusConfig {
    fn default() -> Self {
        let l = 10;
        let du = 5;
        let mean = |mu0: f64, b2: f64, g: f64, sigma: f64, k: usize| OutcomeSpec {
            design: Design::Mean,
            mu0,
            beta: spread(l, b2, k as f64),
            gamma: unit(du, k, g),
            sigma,
            ..Default::default()
        };
        let ate = |mu0: f64, b2: f64, g: f64, tau0: f64, t2: f64, tu: f64, sigma: f64, k: usize| OutcomeSpec {
            design: Design::Ate { pi: 0.5 },
            mu0,
            beta: spread(l, b2, k as f64),
            gamma: unit(du, k, g),
            tau0,
            tau_x: spread(l, t2, 0.5 + k as f64),
            tau_u: unit(du, k, tu),
            sigma,
        };
        let hypotheses = vec![
            HypothesisSim {
                name: "h1".into(),
                outcome: mean(0.3, 0.5, 0.15, 0.7, 0),
            },
            HypothesisSim {
                name: "h2".into(),
                outcome: mean(-0.2, 0.8, 0.2, 0.9, 1),
            },
            HypothesisSim {
                name: "h3".into(),
                outcome: mean(1.0, 0.3, 0.1, 0.5, 2),
            },
            HypothesisSim {
                name: "h4".into(),
                outcome: ate(0.0, 0.3, 0.3, 0.4, 0.5, 0.3, 0.5, 3),
            },
            HypothesisSim {
                name: "h5".into(),
                outcome: ate(0.5, 0.2, 0.2, 0.2, 0.3, 0.25, 0.6, 4),
            },
        ];
        Self {
            sites: 10,
            pieces: 100,
            atoms_per_piece: 1,
            covariates: l,
            unobserved: du,
            law: WeightLaw::TwoPoint { w0: 0.2, w1: 5.0, p: 0.2 },
            n_min: 200,
            n_max: 400,
            hypotheses,
            seed: 2024,
        }
    }
}

impl CorpusConfig {
    pub fn delta_m_sq(&self) -> f64 {
        self.law.delta_m_sq(self.pieces)
    }
}

/// Simulate the corpus. Sites are named `s1..sN`.
pub fn simulate_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.law.validate()?;
    if cfg.sites < 2 || cfg.hypotheses.is_empty() {
        return Err(Error::Config("a corpus needs at least two sites and one hypothesis".into()));
    }
    if cfg.n_min == 0 || cfg.n_min > cfg.n_max {
        return Err(Error::Config(format!("invalid sample size range [{}, {}]", cfg.n_min, cfg.n_max)));
    }
    let tree = SeedTree::new(cfg.seed);
    let pop = Population::draw(cfg.pieces, cfg.atoms_per_piece, cfg.covariates, cfg.unobserved, tree.seed("population"))?;
    let dists = (0..cfg.sites)
        .map(|j| perturb(Arc::clone(&pop.pieces), &cfg.law, tree.seed(&format!("site/{j}"))))
        .collect::<Result<Vec<_>>>()?;
    let hypotheses = cfg
        .hypotheses
        .par_iter()
        .enumerate()
        .map(|(k, h)| {
            let sites = (0..cfg.sites)
                .map(|j| {
                    let cell = tree.child(&format!("hyp/{k}/site/{j}"));
                    let n = cell.rng("n").random_range(cfg.n_min..=cfg.n_max);
                    sample_from(&dists[j], &pop, &h.outcome, n, cell.seed("draw"), &format!("s{}", j + 1), &h.name)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(HypothesisData {
                id: h.name.clone(),
                estimand: h.outcome.estimand(),
                sites,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { hypotheses })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_corpus_shape() {
        let c = simulate_corpus(&CorpusConfig::default()).unwrap();
        assert_eq!(c.hypotheses.len(), 5);
        for h in &c.hypotheses {
            assert_eq!(h.sites.len(), 10);
            for s in &h.sites {
                assert!((200..=400).contains(&s.n()));
                assert_eq!(s.n_covariates(), 10);
            }
        }
        let again = simulate_corpus(&CorpusConfig::default()).unwrap();
        assert_eq!(again.hypotheses[3].sites[7], c.hypotheses[3].sites[7]);
    }

    #[test]
    fn spread_has_requested_norm() {
        let v = spread(10, 0.5, 1.0);
        assert!((v.iter().map(|x| x * x).sum::<f64>() - 0.5).abs() < 1e-12);
    }
}
