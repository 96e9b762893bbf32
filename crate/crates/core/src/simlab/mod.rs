//! Simulation studies: potential outcomes, variance and independence
//! studies, empirical threshold calibration, and a synthetic school dataset.

mod nyde;
mod outcomes;
mod studies;

pub use nyde::{nyde_spec, nyde_tiers, synthetic_nyde, NYDE_MONITORED, NYDE_REPLICATES};
pub use outcomes::{generate_potential_outcomes, true_estimands, OutcomeModel, PotentialOutcomes};
pub use studies::{
    calibrate_empirical_thresholds, calibrated_rule, independence_study, variance_study, CovariateStudy,
    EffectStudy, EstimatorStudy, IndependenceReport, IndicatorPair, PairCorrelation, PlotRow, StudyOptions,
    StudyReport, TierRate,
};

use crate::balance::{fit_covariance, CovariateMatrix};
use crate::error::{Error, Result};

/// Quantile of sorted data with linear interpolation between order
/// statistics: position `(n - 1) q`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Squared multiple correlation of `u` on the columns of `x` (least squares
/// with intercept, in sample).
pub fn r_squared(x: &CovariateMatrix, u: &[f64]) -> Result<f64> {
    if u.len() != x.units() {
        return Err(Error::DimensionMismatch {
            what: "response length",
            expected: x.units(),
            found: u.len(),
        });
    }
    let cm = fit_covariance(x)?;
    let z = cm.whiten(x)?;
    let p = x.covariates();
    let n = u.len() as f64;
    let mean = u.iter().sum::<f64>() / n;
    let total: f64 = u.iter().map(|v| (v - mean).powi(2)).sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    // whitened columns satisfy Z^T Z = (n - 1) I
    let mut proj = vec![0.0; p];
    for (row, v) in z.chunks_exact(p).zip(u) {
        for (acc, zk) in proj.iter_mut().zip(row) {
            *acc += zk * (v - mean);
        }
    }
    let explained = proj.iter().map(|v| v * v).sum::<f64>() / (n - 1.0);
    Ok((explained / total).clamp(0.0, 1.0))
}

/// Maps `f` over `0..count` on `workers` threads; the output order follows
/// the index, so results do not depend on the worker count.
pub(crate) fn par_map<T, F>(count: u64, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    use rayon::prelude::*;
    if workers <= 1 {
        return Ok((0..count).map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| (0..count).into_par_iter().map(f).collect()))
}

/// Sample mean and variance (divisor `n - 1`).
pub(crate) fn mean_var(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

pub(crate) fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, va) = mean_var(a.iter().copied());
    let (mb, vb) = mean_var(b.iter().copied());
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 - 1.0);
    cov / (va * vb).sqrt()
}
