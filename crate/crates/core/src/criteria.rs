//! Tiered acceptance rules and the theoretical variance-reduction factor.
//!
//! A rule groups monitored effects into tiers. Each tier carries either a
//! threshold `a` directly or a joint acceptance probability `q`; the latter
//! resolves to the per-effect chi-squared quantile at `q^(1/m)` for a tier of
//! `m` effects. That factorisation assumes the distances are independent,
//! which holds in the large-sample normal limit; the empirical mode replaces
//! the chi-squared quantile with calibrated ones.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::balance::BalanceProfile;
use crate::error::{Error, Result};
use crate::special::{chi2_cdf, chi2_quantile, lower_gamma_ratio};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TierBound {
    Threshold(f64),
    JointProbability(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tier {
    pub name: String,
    pub effects: Vec<usize>,
    pub bound: TierBound,
}

impl Tier {
    pub fn threshold(name: impl Into<String>, effects: Vec<usize>, a: f64) -> Self {
        Self {
            name: name.into(),
            effects,
            bound: TierBound::Threshold(a),
        }
    }

    pub fn joint(name: impl Into<String>, effects: Vec<usize>, q: f64) -> Self {
        Self {
            name: name.into(),
            effects,
            bound: TierBound::JointProbability(q),
        }
    }

    /// Per-effect acceptance probability implied by a joint target.
    pub fn per_effect_probability(&self) -> Option<f64> {
        match self.bound {
            TierBound::JointProbability(q) => Some(q.powf(1.0 / self.effects.len() as f64)),
            TierBound::Threshold(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    #[default]
    #[serde(rename = "chi2")]
    ChiSquared,
    Empirical,
}

/// A resolved rule: every monitored effect has a threshold `a_f > 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct AcceptanceRule {
    tiers: Vec<Tier>,
    covariates: usize,
    mode: ThresholdMode,
    thresholds: BTreeMap<usize, f64>,
}

fn validate_tiers(tiers: &[Tier], allow_unit_prob: bool) -> Result<()> {
    let mut seen = BTreeMap::new();
    for tier in tiers {
        if tier.effects.is_empty() {
            return Err(Error::InvalidRule(format!("tier `{}` has no effects", tier.name)));
        }
        for &f in &tier.effects {
            if f == 0 {
                return Err(Error::InvalidRule(format!(
                    "tier `{}` lists the mean column",
                    tier.name
                )));
            }
            if let Some(other) = seen.insert(f, tier.name.clone()) {
                return Err(Error::InvalidRule(format!(
                    "effect {f} appears in tiers `{other}` and `{}`",
                    tier.name
                )));
            }
        }
        match tier.bound {
            TierBound::Threshold(a) if !(a > 0.0) => {
                return Err(Error::InvalidRule(format!(
                    "tier `{}` threshold must be positive, got {a}",
                    tier.name
                )))
            }
            TierBound::JointProbability(q)
                if !(q > 0.0 && (q < 1.0 || (allow_unit_prob && q == 1.0))) =>
            {
                return Err(Error::InvalidRule(format!(
                    "tier `{}` joint probability {q} outside (0, 1)",
                    tier.name
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

/// Resolves joint probabilities through chi-squared quantiles with `p`
/// degrees of freedom.
pub fn resolve_thresholds(tiers: Vec<Tier>, covariates: usize) -> Result<AcceptanceRule> {
    validate_tiers(&tiers, false)?;
    let mut thresholds = BTreeMap::new();
    for tier in &tiers {
        let a = match tier.bound {
            TierBound::Threshold(a) => a,
            TierBound::JointProbability(_) => {
                chi2_quantile(covariates, tier.per_effect_probability().unwrap())?
            }
        };
        for &f in &tier.effects {
            thresholds.insert(f, a);
        }
    }
    Ok(AcceptanceRule {
        tiers,
        covariates,
        mode: ThresholdMode::ChiSquared,
        thresholds,
    })
}

/// Effects that need calibration and the per-effect probability each must hit.
pub fn calibration_targets(tiers: &[Tier]) -> Result<Vec<(usize, f64)>> {
    validate_tiers(tiers, true)?;
    Ok(tiers
        .iter()
        .filter_map(|t| t.per_effect_probability().map(|q| (t, q)))
        .flat_map(|(t, q)| t.effects.iter().map(move |&f| (f, q)))
        .collect())
}

/// Builds an empirical-mode rule from calibrated per-effect thresholds.
/// Tiers with a direct threshold keep it.
pub fn resolve_empirical(
    tiers: Vec<Tier>,
    covariates: usize,
    calibrated: &BTreeMap<usize, f64>,
) -> Result<AcceptanceRule> {
    validate_tiers(&tiers, true)?;
    let mut thresholds = BTreeMap::new();
    for tier in &tiers {
        for &f in &tier.effects {
            let a = match tier.bound {
                TierBound::Threshold(a) => a,
                TierBound::JointProbability(_) => *calibrated.get(&f).ok_or_else(|| {
                    Error::InvalidRule(format!("no calibrated threshold for effect {f}"))
                })?,
            };
            if !(a > 0.0) {
                return Err(Error::InvalidRule(format!(
                    "calibrated threshold for effect {f} is {a}"
                )));
            }
            thresholds.insert(f, a);
        }
    }
    Ok(AcceptanceRule {
        tiers,
        covariates,
        mode: ThresholdMode::Empirical,
        thresholds,
    })
}

impl AcceptanceRule {
    pub fn tiers(&self) -> &[Tier] {
        &self.tiers
    }

    pub fn covariates(&self) -> usize {
        self.covariates
    }

    pub fn mode(&self) -> ThresholdMode {
        self.mode
    }

    pub fn threshold(&self, f: usize) -> Option<f64> {
        self.thresholds.get(&f).copied()
    }

    /// `(effect, a_f)` in effect order.
    pub fn thresholds(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.thresholds.iter().map(|(&f, &a)| (f, a))
    }

    pub fn monitored(&self) -> Vec<usize> {
        self.thresholds.keys().copied().collect()
    }

    /// Threshold shared by the tier's effects (the first one's, for
    /// empirically calibrated tiers whose thresholds differ).
    pub fn tier_threshold(&self, tier: &Tier) -> f64 {
        self.thresholds[&tier.effects[0]]
    }

    /// Acceptance probability under the chi-squared approximation with
    /// independent distances.
    pub fn implied_acceptance(&self) -> Result<f64> {
        self.thresholds
            .values()
            .map(|&a| {
                if a.is_infinite() {
                    Ok(1.0)
                } else {
                    chi2_cdf(self.covariates, a)
                }
            })
            .product()
    }

    /// `M_f <= a_f` for every monitored effect, with `distance` supplying `M_f`.
    #[inline]
    pub fn accepts_with<F: FnMut(usize) -> f64>(&self, mut distance: F) -> bool {
        self.thresholds.iter().all(|(&f, &a)| distance(f) <= a)
    }
}

pub fn accept(profile: &BalanceProfile, rule: &AcceptanceRule) -> Result<bool> {
    for (f, a) in rule.thresholds() {
        let m = profile
            .distance(f)
            .ok_or_else(|| Error::MissingEffect(f.to_string()))?;
        if m > a {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Shrinkage of the covariance of each mean-difference vector when
/// rerandomizing with `M_f <= a` and `p` covariates under normality.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VarianceFactor {
    pub covariates: usize,
    pub threshold: f64,
    pub value: f64,
}

impl VarianceFactor {
    /// `100 (1 - v_a)`.
    pub fn percent_reduction(&self) -> f64 {
        100.0 * (1.0 - self.value)
    }

    /// Variance ratio of an estimator whose outcome has squared multiple
    /// correlation `r2` with the covariates: `1 - (1 - v_a) R^2`.
    pub fn estimator_ratio(&self, r2: f64) -> f64 {
        1.0 - (1.0 - self.value) * r2
    }
}

/// `v_a = (2/p) gamma(p/2 + 1, a/2) / gamma(p/2, a/2)`, which equals
/// `P(p/2 + 1, a/2) / P(p/2, a/2)` in regularized form.
pub fn variance_factor(covariates: usize, a: f64) -> Result<VarianceFactor> {
    if covariates == 0 {
        return Err(Error::Domain("variance factor needs at least one covariate".into()));
    }
    if !(a > 0.0) {
        return Err(Error::Domain(format!("threshold must be positive, got {a}")));
    }
    let value = if a.is_infinite() {
        1.0
    } else {
        lower_gamma_ratio(covariates as f64 / 2.0, a / 2.0)?
    };
    Ok(VarianceFactor {
        covariates,
        threshold: a,
        value,
    })
}
