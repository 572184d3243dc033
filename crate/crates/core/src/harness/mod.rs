//! Evaluation of interval methods across site pairs and hypotheses.

mod pairs;
mod report;
mod scenario;

pub use pairs::{compute_pair, compute_pairs, generalize_pair, PairIntervals, PairStats};
pub use report::{emit_direct, emit_measures, emit_scenario, write_csv};
pub use scenario::{evaluate_direct, run_scenario, DirectResult, IntervalRecord, MethodSummary, ScenarioResult, ScenarioRow};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::estimators::NuisanceConfig;
use crate::measures::ShiftConfig;

/// Interval constructions under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "IID")]
    Iid,
    #[serde(rename = "CovShiftDR")]
    CovShiftDr,
    #[serde(rename = "CovShiftEB")]
    CovShiftEb,
    Const,
    Oracle,
    #[serde(rename = "WorstCaseKL")]
    WorstCaseKl,
    Adaptive,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Iid,
        Method::CovShiftDr,
        Method::CovShiftEb,
        Method::Const,
        Method::Oracle,
        Method::WorstCaseKl,
        Method::Adaptive,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Iid => "IID",
            Method::CovShiftDr => "CovShiftDR",
            Method::CovShiftEb => "CovShiftEB",
            Method::Const => "Const",
            Method::Oracle => "Oracle",
            Method::WorstCaseKl => "WorstCaseKL",
            Method::Adaptive => "Adaptive",
        }
    }

    /// Methods whose bounds are learned from other pairs.
    pub fn needs_calibration(&self) -> bool {
        matches!(self, Method::Adaptive | Method::WorstCaseKl)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.name().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// How the calibration data is revealed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// All pairs of a hypothesis are evaluated at once.
    Direct,
    /// Hypotheses are revealed one at a time.
    OverStudy,
    /// Sites are revealed one at a time.
    OverSite,
    /// Three sites and one hypothesis are revealed per step, starting from
    /// two hypotheses.
    OverBoth,
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "direct" => Ok(Scenario::Direct),
            "overstudy" => Ok(Scenario::OverStudy),
            "oversite" => Ok(Scenario::OverSite),
            "overboth" => Ok(Scenario::OverBoth),
            _ => Err(Error::Config(format!("unknown scenario `{s}`"))),
        }
    }
}

/// Which transported estimate centres the predictive intervals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Center {
    #[default]
    Eb,
    Dr,
}

#[derive(Debug, Clone)]
pub struct HarnessConfig {
    pub alpha: f64,
    pub methods: Vec<Method>,
    pub center: Center,
    pub nuisance: NuisanceConfig,
    pub shift: ShiftConfig,
    /// Quantile of pairwise divergences used as the KL radius.
    pub kl_quantile: f64,
    pub permutations: usize,
    pub seed: u64,
    /// Debug override: every interval is the whole real line.
    pub infinite_bounds: bool,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            methods: vec![
                Method::Iid,
                Method::CovShiftDr,
                Method::CovShiftEb,
                Method::Const,
                Method::Oracle,
                Method::WorstCaseKl,
            ],
            center: Center::Eb,
            nuisance: NuisanceConfig::default(),
            shift: ShiftConfig::default(),
            kl_quantile: 0.99,
            permutations: 10,
            seed: 1,
            infinite_bounds: false,
        }
    }
}
