//! Potential outcomes under a linear model with constant factorial effects.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::balance::CovariateMatrix;
use crate::design::ModelMatrix;
use crate::error::{Error, Result};

/// `Y_i(j) = theta_0 + sum_f (theta_f / 2) G_jf + x_i beta + eps_i` with iid
/// normal `eps_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeModel {
    /// `theta[0]` is the mean, `theta[f]` the effect of model column `f`.
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub sigma: f64,
    /// When set, `sigma` is solved from it.
    pub r_squared: Option<f64>,
}

impl OutcomeModel {
    pub fn new(theta: Vec<f64>, beta: Vec<f64>) -> Self {
        Self {
            theta,
            beta,
            sigma: 0.0,
            r_squared: None,
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self.r_squared = None;
        self
    }

    pub fn with_r_squared(mut self, r2: f64) -> Self {
        self.r_squared = Some(r2);
        self
    }

    /// Noise scale for covariate part `xb`. With `V = var(xb)` over the
    /// units, `R^2 = V / (V + sigma^2)` gives `sigma^2 = V (1 - R^2) / R^2`.
    pub fn resolve_sigma(&self, xb: &[f64]) -> Result<f64> {
        let Some(r2) = self.r_squared else {
            if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
                return Err(Error::InvalidArgument(format!("noise scale must be nonnegative, got {}", self.sigma)));
            }
            return Ok(self.sigma);
        };
        if !(0.0..1.0).contains(&r2) {
            return Err(Error::InvalidRSquared(r2));
        }
        let n = xb.len() as f64;
        let mean = xb.iter().sum::<f64>() / n;
        let v = xb.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        match (r2 == 0.0, v == 0.0) {
            (true, true) => Ok(self.sigma),
            (false, false) => Ok((v * (1.0 - r2) / r2).sqrt()),
            _ => Err(Error::InvalidRSquared(r2)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PotentialOutcomes {
    units: usize,
    size: usize,
    /// `n x 2^K`, row-major.
    table: Vec<f64>,
    /// `x_i beta + eps_i`.
    residual: Vec<f64>,
    sigma: f64,
}

impl PotentialOutcomes {
    /// Wraps an explicit `n x 2^K` table.
    pub fn from_table(units: usize, size: usize, table: Vec<f64>) -> Result<Self> {
        if table.len() != units * size {
            return Err(Error::DimensionMismatch {
                what: "potential outcome table",
                expected: units * size,
                found: table.len(),
            });
        }
        Ok(Self {
            units,
            size,
            residual: vec![0.0; units],
            table,
            sigma: 0.0,
        })
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn combinations(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.table[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.table[i * self.size..(i + 1) * self.size]
    }

    /// Covariate and noise part of each unit's outcome.
    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Observed outcome of each unit under an allocation.
    pub fn observed(&self, combos: &[u32]) -> Vec<f64> {
        combos.iter().enumerate().map(|(i, &c)| self.get(i, c as usize)).collect()
    }

    /// Unit-level effects `(theta_i0, theta_i1, ...)` recovered from row `i`.
    pub fn unit_effects(&self, i: usize, mm: &ModelMatrix) -> Vec<f64> {
        effects_of(self.row(i).iter().copied(), mm)
    }
}

fn effects_of(row: impl Iterator<Item = f64> + Clone, mm: &ModelMatrix) -> Vec<f64> {
    let half = (mm.size() / 2) as f64;
    (0..mm.size())
        .map(|f| {
            let s: f64 = row.clone().enumerate().map(|(j, y)| mm.entry(j, f) as f64 * y).sum();
            if f == 0 {
                s / mm.size() as f64
            } else {
                s / half
            }
        })
        .collect()
}

pub fn generate_potential_outcomes<R: Rng + ?Sized>(
    model: &OutcomeModel,
    x: &CovariateMatrix,
    mm: &ModelMatrix,
    rng: &mut R,
) -> Result<PotentialOutcomes> {
    if model.theta.len() != mm.size() {
        return Err(Error::DimensionMismatch {
            what: "effect vector length",
            expected: mm.size(),
            found: model.theta.len(),
        });
    }
    if model.beta.len() != x.covariates() {
        return Err(Error::DimensionMismatch {
            what: "coefficient vector length",
            expected: x.covariates(),
            found: model.beta.len(),
        });
    }
    let n = x.units();
    let xb: Vec<f64> = (0..n)
        .map(|i| x.row(i).iter().zip(&model.beta).map(|(a, b)| a * b).sum())
        .collect();
    let sigma = model.resolve_sigma(&xb)?;
    let residual: Vec<f64> = xb
        .iter()
        .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let cell: Vec<f64> = (0..mm.size())
        .map(|j| {
            model.theta[0]
                + (1..mm.size())
                    .map(|f| model.theta[f] / 2.0 * mm.entry(j, f) as f64)
                    .sum::<f64>()
        })
        .collect();
    let table = residual
        .iter()
        .flat_map(|u| cell.iter().map(move |c| c + u))
        .collect();
    Ok(PotentialOutcomes {
        units: n,
        size: mm.size(),
        table,
        residual,
        sigma,
    })
}

/// Population estimands: `[theta_0, theta_1, ...]` with
/// `theta_f = Ybar G_f / 2^(K-1)` and `theta_0 = Ybar G_0 / 2^K`.
pub fn true_estimands(po: &PotentialOutcomes, mm: &ModelMatrix) -> Result<Vec<f64>> {
    if po.combinations() != mm.size() {
        return Err(Error::DimensionMismatch {
            what: "potential outcome columns",
            expected: mm.size(),
            found: po.combinations(),
        });
    }
    let n = po.units() as f64;
    let ybar: Vec<f64> = (0..po.combinations())
        .map(|j| (0..po.units()).map(|i| po.get(i, j)).sum::<f64>() / n)
        .collect();
    Ok(effects_of(ybar.into_iter(), mm))
}
