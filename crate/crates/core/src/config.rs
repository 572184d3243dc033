//! TOML run configuration. Each table is named after the stage it controls:
//!
//! ```toml
//! [data_model]
//! default_estimand = "mean"
//! [data_model.hypotheses.h4]
//! estimand = "ate"
//! pi = 0.5
//!
//! [nuisance.regressor]
//! kind = "ridge"
//!
//! [intervals]
//! alpha = 0.05
//! methods = ["IID", "CovShiftEB", "Const", "WorstCaseKL"]
//!
//! [harness_cli]
//! permutations = 10
//! seed = 7
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{CsvSchema, SiteDataset};
use crate::error::{Error, Result};
use crate::estimators::NuisanceConfig;
use crate::harness::{Center, HarnessConfig, Method};
use crate::influence::Estimand;
use crate::measures::ShiftConfig;
use crate::nuisance::{BalanceConfig, Clip, Regressor};
use crate::sim::{CltConfig, CorpusConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimandKind {
    /// Average treatment effect when the data carry a treatment column, mean
    /// otherwise.
    #[default]
    Auto,
    Mean,
    Ate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HypothesisEntry {
    pub estimand: EstimandKind,
    /// Known treatment probability. When absent the pooled treated fraction
    /// is used.
    pub pi: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataModelSection {
    pub schema: CsvSchema,
    pub default_estimand: EstimandKind,
    pub hypotheses: BTreeMap<String, HypothesisEntry>,
}

impl DataModelSection {
    /// Estimand for hypothesis `id` observed at `sites`.
    pub fn estimand(&self, id: &str, sites: &[SiteDataset]) -> Result<Estimand> {
        let entry = self.hypotheses.get(id).cloned().unwrap_or(HypothesisEntry {
            estimand: self.default_estimand,
            pi: None,
        });
        let has_t = sites.iter().all(|s| s.t.is_some());
        let kind = match entry.estimand {
            EstimandKind::Auto if has_t => EstimandKind::Ate,
            EstimandKind::Auto => EstimandKind::Mean,
            k => k,
        };
        match kind {
            EstimandKind::Mean => Ok(Estimand::Mean),
            _ if !has_t => Err(Error::MissingTreatment),
            _ => match entry.pi {
                Some(pi) if pi > 0.0 && pi < 1.0 => Ok(Estimand::Ate { pi }),
                Some(pi) => Err(Error::InvalidPropensity(pi)),
                None => {
                    let (treated, n) = sites.iter().fold((0.0, 0usize), |(a, n), s| {
                        (a + s.t.as_ref().map_or(0.0, |t| t.iter().sum::<f64>()), n + s.n())
                    });
                    let pi = treated / n as f64;
                    log::warn!("{id}: treatment probability not configured, using pooled fraction {pi:.4}");
                    if pi > 0.0 && pi < 1.0 {
                        Ok(Estimand::Ate { pi })
                    } else {
                        Err(Error::InvalidPropensity(pi))
                    }
                }
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NuisanceSection {
    pub regressor: Regressor,
    pub clip: Clip,
    pub balance: BalanceConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorsSection {
    pub center: Center,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntervalsSection {
    pub alpha: f64,
    pub methods: Vec<Method>,
}

impl Default for IntervalsSection {
    fn default() -> Self {
        let h = HarnessConfig::default();
        Self {
            alpha: h.alpha,
            methods: h.methods,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorstCaseSection {
    pub quantile: f64,
}

impl Default for WorstCaseSection {
    fn default() -> Self {
        Self { quantile: 0.99 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub clt: CltConfig,
    pub corpus: CorpusConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessSection {
    pub permutations: usize,
    pub seed: u64,
    /// Debug override that makes every interval the whole real line.
    pub infinite_bounds: bool,
}

impl Default for HarnessSection {
    fn default() -> Self {
        Self {
            permutations: 10,
            seed: 1,
            infinite_bounds: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data_model: DataModelSection,
    pub nuisance: NuisanceSection,
    pub estimators: EstimatorsSection,
    pub shift_measures: ShiftConfig,
    pub intervals: IntervalsSection,
    pub worstcase_kl: WorstCaseSection,
    pub randshift_sim: SimSection,
    pub harness_cli: HarnessSection,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.intervals.alpha;
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::Config(format!("intervals.alpha must lie in (0, 1), got {a}")));
        }
        let q = self.worstcase_kl.quantile;
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::Config(format!("worstcase_kl.quantile must lie in (0, 1], got {q}")));
        }
        let c = self.nuisance.clip;
        if !(c.lo > 0.0 && c.lo < c.hi) {
            return Err(Error::Config(format!("nuisance.clip needs 0 < lo < hi, got [{}, {}]", c.lo, c.hi)));
        }
        if self.nuisance.balance.tol <= 0.0 || self.nuisance.balance.max_iter == 0 {
            return Err(Error::Config("nuisance.balance needs a positive tol and max_iter".into()));
        }
        for (id, h) in &self.data_model.hypotheses {
            if let Some(pi) = h.pi {
                if !(pi > 0.0 && pi < 1.0) {
                    return Err(Error::Config(format!("data_model.hypotheses.{id}.pi must lie in (0, 1), got {pi}")));
                }
            }
        }
        Ok(())
    }

    pub fn nuisance_config(&self) -> NuisanceConfig {
        NuisanceConfig {
            regressor: self.nuisance.regressor,
            clip: self.nuisance.clip,
            balance: self.nuisance.balance,
            ..Default::default()
        }
    }

    pub fn harness(&self) -> HarnessConfig {
        HarnessConfig {
            alpha: self.intervals.alpha,
            methods: self.intervals.methods.clone(),
            center: self.estimators.center,
            nuisance: self.nuisance_config(),
            shift: self.shift_measures,
            kl_quantile: self.worstcase_kl.quantile,
            permutations: self.harness_cli.permutations,
            seed: self.harness_cli.seed,
            infinite_bounds: self.harness_cli.infinite_bounds,
        }
    }
}
