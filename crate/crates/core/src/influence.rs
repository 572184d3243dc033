//! Influence values and single-site estimates.

use serde::{Deserialize, Serialize};

use crate::data::SiteDataset;
use crate::error::{Error, Result};
use crate::stats;

/// Target parameter of a hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimand {
    /// Average treatment effect in a randomized experiment with known
    /// treatment probability `pi`.
    Ate { pi: f64 },
    /// Mean of the outcome.
    Mean,
}

impl Estimand {
    /// ATE with `pi` set to the observed treated fraction of `ds`.
    pub fn ate_observed(ds: &SiteDataset) -> Result<Estimand> {
        let t = ds.t.as_ref().ok_or(Error::MissingTreatment)?;
        let pi = stats::mean(t);
        log::warn!(
            "{}/{}: treatment probability not configured, using observed fraction {pi:.4}",
            ds.hypothesis,
            ds.site
        );
        Ok(Estimand::Ate { pi })
    }
}

/// Per-unit influence values `phi`.
///
/// For the ATE, `phi = T Y / pi - (1 - T) Y / (1 - pi)`; for the mean,
/// `phi = Y`.
pub fn influence_values(ds: &SiteDataset, estimand: &Estimand) -> Result<Vec<f64>> {
    match *estimand {
        Estimand::Mean => Ok(ds.y.clone()),
        Estimand::Ate { pi } => {
            if !(pi > 0.0 && pi < 1.0) {
                return Err(Error::InvalidPropensity(pi));
            }
            let t = ds.t.as_ref().ok_or(Error::MissingTreatment)?;
            Ok(t.iter()
                .zip(&ds.y)
                .map(|(&t, &y)| t * y / pi - (1.0 - t) * y / (1.0 - pi))
                .collect())
        }
    }
}

/// Site estimate `mean(phi)` and the influence values.
pub fn site_estimate(ds: &SiteDataset, estimand: &Estimand) -> Result<(f64, Vec<f64>)> {
    let phi = influence_values(ds, estimand)?;
    Ok((stats::mean(&phi), phi))
}

/// Sample standard deviation of `phi` (zero for a single unit).
pub fn iid_sd(phi: &[f64]) -> f64 {
    stats::sample_sd(phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn ds(t: Option<Vec<f64>>, y: Vec<f64>) -> SiteDataset {
        let n = y.len();
        SiteDataset::new("s", "h", vec!["x1".into()], DMatrix::zeros(n, 1), t, y).unwrap()
    }

    #[test]
    fn ate_influence_values() {
        let d = ds(Some(vec![1.0, 0.0]), vec![3.0, 1.0]);
        let (theta, phi) = site_estimate(&d, &Estimand::Ate { pi: 0.5 }).unwrap();
        assert_eq!(phi, vec![6.0, -2.0]);
        assert_eq!(theta, 2.0);
    }

    #[test]
    fn mean_influence_is_outcome() {
        let d = ds(None, vec![1.0, 2.0, 3.0]);
        let (theta, phi) = site_estimate(&d, &Estimand::Mean).unwrap();
        assert_eq!(phi, vec![1.0, 2.0, 3.0]);
        assert_eq!(theta, 2.0);
    }

    #[test]
    fn all_treated_doubles_outcome() {
        let d = ds(Some(vec![1.0, 1.0]), vec![1.5, -2.0]);
        let phi = influence_values(&d, &Estimand::Ate { pi: 0.5 }).unwrap();
        assert_eq!(phi, vec![3.0, -4.0]);
    }

    #[test]
    fn ate_without_treatment_fails() {
        let d = ds(None, vec![1.0]);
        assert!(matches!(
            influence_values(&d, &Estimand::Ate { pi: 0.5 }),
            Err(Error::MissingTreatment)
        ));
    }

    #[test]
    fn invalid_propensity() {
        let d = ds(Some(vec![1.0]), vec![1.0]);
        assert!(matches!(
            influence_values(&d, &Estimand::Ate { pi: 1.0 }),
            Err(Error::InvalidPropensity(_))
        ));
    }

    #[test]
    fn single_unit_sd_is_zero() {
        assert_eq!(iid_sd(&[4.0]), 0.0);
    }
}
