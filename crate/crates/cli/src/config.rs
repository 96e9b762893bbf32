//! Run configuration: one TOML file, overridable from the command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rerand_core::{DesignSpec, ModelMatrix, RunOrder, ThresholdMode, Tier};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DEFAULT_CALIBRATION_DRAWS: usize = 10_000;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_draws: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub design: DesignConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<CovariateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<RuleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub factors: usize,
    #[serde(default = "one")]
    pub replicates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor_names: Option<Vec<String>>,
    #[serde(default)]
    pub order: RunOrder,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateConfig {
    pub path: PathBuf,
    /// Columns used for balance; all columns when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<String>>,
    #[serde(default = "comma")]
    pub delimiter: char,
}

fn comma() -> char {
    ','
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleConfig {
    #[serde(default)]
    pub mode: ThresholdMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_draws: Option<usize>,
    pub tiers: Vec<TierConfig>,
}

/// Effects come from `effects` (names such as `"AB"`), `order` (all effects
/// of that order), or both. Exactly one of `a` and `joint_prob` is required.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effects: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_prob: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Extra covariate-file columns whose mean differences are tracked.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub report_columns: Vec<String>,
    /// Pure draws for the independence report; skipped when zero.
    #[serde(default)]
    pub independence_draws: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<OutcomeConfig>,
}

fn default_replications() -> usize {
    1000
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeConfig {
    /// Effect sizes by name; `mean` sets the intercept.
    #[serde(default)]
    pub effects: BTreeMap<String, f64>,
    pub beta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_squared: Option<f64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Parse(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Parse(format!("config: {e}")))
    }

    /// Reads a config file; relative paths inside it resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(cov) = &mut cfg.covariates {
            if cov.path.is_relative() {
                cov.path = base.join(&cov.path);
            }
        }
        if let Some(dir) = &mut cfg.output_dir {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        Ok(cfg)
    }

    pub fn design_spec(&self) -> Result<DesignSpec, CliError> {
        let d = &self.design;
        let mut spec = DesignSpec::new(d.factors, d.replicates)?.with_order(d.order);
        if let Some(names) = &d.factor_names {
            spec = spec.with_factor_names(names)?;
        }
        Ok(spec)
    }

    pub fn rule(&self) -> Result<&RuleConfig, CliError> {
        self.rule.as_ref().ok_or_else(|| CliError::Usage("config has no [rule] section".into()))
    }

    pub fn covariates(&self) -> Result<&CovariateConfig, CliError> {
        self.covariates
            .as_ref()
            .ok_or_else(|| CliError::Usage("config has no [covariates] section".into()))
    }
}

impl RuleConfig {
    pub fn tiers(&self, mm: &ModelMatrix) -> Result<Vec<Tier>, CliError> {
        self.tiers.iter().map(|t| t.resolve(mm)).collect()
    }
}

impl TierConfig {
    pub fn resolve(&self, mm: &ModelMatrix) -> Result<Tier, CliError> {
        let mut effects = match &self.effects {
            Some(names) => mm.resolve_effects(names)?,
            None => Vec::new(),
        };
        if let Some(order) = self.order {
            let of_order = mm.effects_of_order(order);
            if of_order.is_empty() {
                return Err(CliError::Usage(format!("tier `{}`: no effects of order {order}", self.name)));
            }
            effects.extend(of_order);
        }
        if effects.is_empty() {
            return Err(CliError::Usage(format!("tier `{}` lists no effects", self.name)));
        }
        effects.sort_unstable();
        effects.dedup();
        match (self.a, self.joint_prob) {
            (Some(a), None) => Ok(Tier::threshold(&self.name, effects, a)),
            (None, Some(q)) => Ok(Tier::joint(&self.name, effects, q)),
            _ => Err(CliError::Usage(format!(
                "tier `{}` needs exactly one of `a` and `joint_prob`",
                self.name
            ))),
        }
    }
}

impl OutcomeConfig {
    pub fn model(&self, mm: &ModelMatrix) -> Result<rerand_core::simlab::OutcomeModel, CliError> {
        let mut theta = vec![0.0; mm.size()];
        for (name, v) in &self.effects {
            let f = if name == "mean" { 0 } else { mm.effect_index(name)? };
            theta[f] = *v;
        }
        let mut model = rerand_core::simlab::OutcomeModel::new(theta, self.beta.clone());
        if let Some(s) = self.sigma {
            model = model.with_sigma(s);
        }
        if let Some(r2) = self.r_squared {
            model = model.with_r_squared(r2);
        }
        Ok(model)
    }
}
