//! Random distributional shift simulator.
//!
//! The base law is a finite population of atoms `(X, U)` with
//! `X ~ N(0, I_L)` and `U ~ N(0, I_du)`, grouped into `M` equal-mass pieces
//! by quantile bins of one coordinate. A perturbed law gives piece `m` mass
//! proportional to an i.i.d. weight `W_m`; within a piece atoms stay uniform.
//! Outcomes are drawn fresh for every sampled unit: a treatment
//! `T ~ Bernoulli(pi)` independent of everything else (for two-arm designs)
//! and `Y = mu0 + beta'X + gamma'U + T (tau0 + tau_x'X + tau_u'U) + sigma eps`.
//! `U` is never observed.
//!
//! With one atom per piece every function of `(X, U)` is a step function on
//! the pieces, so the perturbation acts on `E[psi | X, U]` in full.

mod clt;
mod corpus;

pub use clt::{run_clt_experiment, CltConfig, CltExperiment, CltReport, PsiSpec, ReplicateDraw};
pub use corpus::{simulate_corpus, CorpusConfig, HypothesisSim};

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::SiteDataset;
use crate::error::{Error, Result};
use crate::influence::Estimand;
use crate::rng::SeedTree;

/// Law of the i.i.d. piece weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightLaw {
    /// `Uniform(a, b)` with `0 < a <= b`.
    UniformInterval { a: f64, b: f64 },
    /// `w1` with probability `p`, otherwise `w0`.
    TwoPoint { w0: f64, w1: f64, p: f64 },
}

impl WeightLaw {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            WeightLaw::UniformInterval { a, b } => a > 0.0 && a <= b && b.is_finite(),
            WeightLaw::TwoPoint { w0, w1, p } => w0 > 0.0 && w1 > 0.0 && w0.is_finite() && w1.is_finite() && (0.0..=1.0).contains(&p),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidWeightLaw(format!("{self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            WeightLaw::UniformInterval { a, b } => 0.5 * (a + b),
            WeightLaw::TwoPoint { w0, w1, p } => (1.0 - p) * w0 + p * w1,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            WeightLaw::UniformInterval { a, b } => (b - a) * (b - a) / 12.0,
            WeightLaw::TwoPoint { w0, w1, p } => p * (1.0 - p) * (w1 - w0) * (w1 - w0),
        }
    }

    pub fn second_moment(&self) -> f64 {
        self.variance() + self.mean() * self.mean()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            WeightLaw::UniformInterval { a, b } => {
                if a == b {
                    a
                } else {
                    rng.sample(Uniform::new(a, b).expect("a < b"))
                }
            }
            WeightLaw::TwoPoint { w0, w1, p } => {
                if rng.random::<f64>() < p {
                    w1
                } else {
                    w0
                }
            }
        }
    }

    /// `Var(W) / (M E[W]^2)`: the variance of the perturbation of a mean,
    /// per unit of `Var(E[psi | X, U])`.
    pub fn delta_m_sq(&self, pieces: usize) -> f64 {
        self.variance() / (self.mean() * self.mean()) / pieces as f64
    }

    /// `E[W^2] / (M E[W]^2)`.
    pub fn delta_m_sq_second_moment(&self, pieces: usize) -> f64 {
        self.second_moment() / (self.mean() * self.mean()) / pieces as f64
    }
}

/// Equal-mass pieces of a base sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecePartition {
    /// Column of the base sample used as the scalar index.
    pub coordinate: usize,
    /// `M - 1` cut points between consecutive pieces.
    pub boundaries: Vec<f64>,
    /// Row indices of each piece.
    pub members: Vec<Vec<usize>>,
}

impl PiecePartition {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Piece holding a point whose index coordinate equals `v`.
    pub fn piece_of(&self, v: f64) -> usize {
        self.boundaries.partition_point(|&b| b < v)
    }
}

/// `M` quantile bins of column 0 of `base`.
pub fn build_pieces(base: &DMatrix<f64>, m: usize) -> Result<PiecePartition> {
    build_pieces_on(base, m, 0)
}

/// `M` quantile bins of column `coordinate`. Bin sizes differ by at most one
/// row.
pub fn build_pieces_on(base: &DMatrix<f64>, m: usize, coordinate: usize) -> Result<PiecePartition> {
    let rows = base.nrows();
    if m == 0 || rows < m {
        return Err(Error::TooFewSamples { rows, pieces: m });
    }
    if coordinate >= base.ncols() {
        return Err(Error::DimensionMismatch {
            expected: base.ncols(),
            got: coordinate + 1,
        });
    }
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&a, &b| base[(a, coordinate)].total_cmp(&base[(b, coordinate)]).then(a.cmp(&b)));
    let mut members = Vec::with_capacity(m);
    let mut boundaries = Vec::with_capacity(m - 1);
    for k in 0..m {
        let lo = k * rows / m;
        let hi = (k + 1) * rows / m;
        members.push(order[lo..hi].to_vec());
        if k + 1 < m {
            let a = base[(order[hi - 1], coordinate)];
            let b = base[(order[hi], coordinate)];
            boundaries.push(0.5 * (a + b));
        }
    }
    Ok(PiecePartition {
        coordinate,
        boundaries,
        members,
    })
}

/// A perturbed law over the pieces of a partition.
#[derive(Debug, Clone)]
pub struct PerturbedDistribution {
    pub partition: Arc<PiecePartition>,
    /// Piece weights normalized to mean one.
    pub weights: Vec<f64>,
    index: WeightedIndex<f64>,
}

impl PerturbedDistribution {
    /// The base law itself: every piece has weight one.
    pub fn unperturbed(partition: Arc<PiecePartition>) -> Result<Self> {
        let weights = vec![1.0; partition.len()];
        Self::with_weights(partition, weights)
    }

    fn with_weights(partition: Arc<PiecePartition>, weights: Vec<f64>) -> Result<Self> {
        let index = WeightedIndex::new(&weights).map_err(|e| Error::InvalidWeightLaw(e.to_string()))?;
        Ok(Self {
            partition,
            weights,
            index,
        })
    }

    /// `dQ/dP` at a covariate row: the weight of the row's piece.
    pub fn density_ratio(&self, row: &[f64]) -> f64 {
        self.weights[self.partition.piece_of(row[self.partition.coordinate])]
    }

    /// Draw one atom index.
    pub fn sample_atom<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let piece = &self.partition.members[self.index.sample(rng)];
        if piece.len() == 1 {
            piece[0]
        } else {
            piece[rng.random_range(0..piece.len())]
        }
    }
}

/// Draw i.i.d. piece weights from `law` and normalize them by their mean.
pub fn perturb(partition: Arc<PiecePartition>, law: &WeightLaw, seed: u64) -> Result<PerturbedDistribution> {
    law.validate()?;
    let mut rng = SeedTree::new(seed).rng("weights");
    let raw: Vec<f64> = (0..partition.len()).map(|_| law.sample(&mut rng)).collect();
    let first = raw[0];
    let weights = if raw.iter().all(|&w| w == first) {
        vec![1.0; raw.len()]
    } else {
        let m = crate::stats::mean(&raw);
        raw.iter().map(|w| w / m).collect()
    };
    PerturbedDistribution::with_weights(partition, weights)
}

/// The finite base population and its pieces.
#[derive(Debug, Clone)]
pub struct Population {
    /// Atoms by covariates, row-major in spirit: `x[(a, l)]`.
    pub x: DMatrix<f64>,
    /// Unobserved coordinates of each atom.
    pub u: DMatrix<f64>,
    pub pieces: Arc<PiecePartition>,
}

impl Population {
    /// `pieces * atoms_per_piece` standard normal atoms, cut into `pieces`
    /// bins of the first covariate.
    pub fn draw(pieces: usize, atoms_per_piece: usize, covariates: usize, unobserved: usize, seed: u64) -> Result<Self> {
        if covariates == 0 {
            return Err(Error::Config("the simulator needs at least one covariate".into()));
        }
        let atoms = pieces * atoms_per_piece.max(1);
        let mut rng = SeedTree::new(seed).rng("population");
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let x = DMatrix::from_fn(atoms, covariates, |_, _| normal());
        let u = DMatrix::from_fn(atoms, unobserved, |_, _| normal());
        let pieces = Arc::new(build_pieces(&x, pieces)?);
        Ok(Self { x, u, pieces })
    }

    pub fn atoms(&self) -> usize {
        self.x.nrows()
    }

    /// Probability of each atom under the base law.
    pub fn atom_mass(&self) -> Vec<f64> {
        let m = self.pieces.len() as f64;
        let mut mass = vec![0.0; self.atoms()];
        for piece in &self.pieces.members {
            for &a in piece {
                mass[a] = 1.0 / (m * piece.len() as f64);
            }
        }
        mass
    }
}

/// One-sample or randomized two-arm design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Design {
    Mean,
    Ate { pi: f64 },
}

/// Outcome model of a simulated hypothesis. Coefficient vectors shorter than
/// the number of covariates (or unobserved coordinates) are zero-padded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutcomeSpec {
    pub design: Design,
    pub mu0: f64,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub tau0: f64,
    pub tau_x: Vec<f64>,
    pub tau_u: Vec<f64>,
    pub sigma: f64,
}

impl Default for OutcomeSpec {
    fn default() -> Self {
        Self {
            design: Design::Mean,
            mu0: 0.0,
            beta: vec![1.0],
            gamma: vec![],
            tau0: 0.0,
            tau_x: vec![],
            tau_u: vec![],
            sigma: 1.0,
        }
    }
}

fn dot(coef: &[f64], row: impl Iterator<Item = f64>) -> f64 {
    coef.iter().zip(row).map(|(c, v)| c * v).sum()
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum()
}

impl OutcomeSpec {
    /// Mean design with `Y = beta'X + gamma U_0 + sigma eps` where the
    /// explained share `(|beta|^2 + gamma^2) / Var(Y)` equals `kappa` and
    /// `gamma^2 = u_share (|beta|^2 + gamma^2)`. The signal is spread evenly
    /// over the covariates.
    pub fn with_kappa(covariates: usize, kappa: f64, u_share: f64) -> Self {
        let signal = kappa;
        let b = ((1.0 - u_share) * signal / covariates as f64).sqrt();
        Self {
            design: Design::Mean,
            mu0: 0.0,
            beta: vec![b; covariates],
            gamma: vec![(u_share * signal).sqrt()],
            sigma: (1.0 - kappa).sqrt(),
            ..Default::default()
        }
    }

    pub fn estimand(&self) -> Estimand {
        match self.design {
            Design::Mean => Estimand::Mean,
            Design::Ate { pi } => Estimand::Ate { pi },
        }
    }

    /// Share of `Var(Y)` explained by `(X, U)` for a mean design under the
    /// standard normal generative law.
    pub fn analytic_kappa(&self) -> f64 {
        let s = norm2(&self.beta) + norm2(&self.gamma);
        s / (s + self.sigma * self.sigma)
    }

    /// Baseline mean and treatment effect of atom `a`.
    pub fn atom_terms(&self, pop: &Population, a: usize) -> (f64, f64) {
        let m = self.mu0 + dot(&self.beta, pop.x.row(a).iter().copied()) + dot(&self.gamma, pop.u.row(a).iter().copied());
        let d = match self.design {
            Design::Mean => 0.0,
            Design::Ate { .. } => self.tau0 + dot(&self.tau_x, pop.x.row(a).iter().copied()) + dot(&self.tau_u, pop.u.row(a).iter().copied()),
        };
        (m, d)
    }

    /// Mean and variance of the influence value `phi` given an atom with
    /// baseline `m` and effect `d`.
    pub fn phi_moments(&self, m: f64, d: f64) -> (f64, f64) {
        let s2 = self.sigma * self.sigma;
        match self.design {
            Design::Mean => (m, s2),
            Design::Ate { pi } => {
                let second = ((m + d) * (m + d) + s2) / pi + (m * m + s2) / (1.0 - pi);
                (d, second - d * d)
            }
        }
    }

    /// `E[phi | X = x]` under the generative law, where `U` is independent of
    /// `X` with mean zero.
    pub fn projection(&self, x: impl Iterator<Item = f64>) -> f64 {
        match self.design {
            Design::Mean => self.mu0 + dot(&self.beta, x),
            Design::Ate { .. } => self.tau0 + dot(&self.tau_x, x),
        }
    }

    /// Draw `(T, Y)` for an atom and return them with the influence value.
    pub fn draw<R: Rng + ?Sized>(&self, m: f64, d: f64, rng: &mut R) -> (Option<f64>, f64, f64) {
        let eps: f64 = StandardNormal.sample(rng);
        match self.design {
            Design::Mean => {
                let y = m + self.sigma * eps;
                (None, y, y)
            }
            Design::Ate { pi } => {
                let t = if rng.random::<f64>() < pi { 1.0 } else { 0.0 };
                let y = m + t * d + self.sigma * eps;
                let phi = t * y / pi - (1.0 - t) * y / (1.0 - pi);
                (Some(t), y, phi)
            }
        }
    }
}

/// Draw `n` units from `dist` as a site dataset. `U` is discarded.
pub fn sample_from(
    dist: &PerturbedDistribution,
    pop: &Population,
    outcome: &OutcomeSpec,
    n: usize,
    seed: u64,
    site: &str,
    hypothesis: &str,
) -> Result<SiteDataset> {
    if n == 0 {
        return Err(Error::EmptyDataset(format!("{hypothesis}/{site}")));
    }
    let mut rng = SeedTree::new(seed).rng("sample");
    let atoms: Vec<usize> = (0..n).map(|_| dist.sample_atom(&mut rng)).collect();
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for &a in &atoms {
        let (m, d) = outcome.atom_terms(pop, a);
        let (ti, yi, _) = outcome.draw(m, d, &mut rng);
        if let Some(ti) = ti {
            t.push(ti);
        }
        y.push(yi);
    }
    let x = pop.x.select_rows(&atoms);
    let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
    let t = match outcome.design {
        Design::Mean => None,
        Design::Ate { .. } => Some(t),
    };
    SiteDataset::new(site, hypothesis, names, x, t, y)
}
