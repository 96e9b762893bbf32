//! Covariate balance: per-effect mean differences and squared Mahalanobis
//! distances.
//!
//! The covariance used throughout is the sample covariance of the full
//! covariate matrix with divisor `n - 1`, fitted once per experiment and
//! independent of any allocation. With that choice,
//! `cov[d_f] = (4/n) cov[X]` holds exactly over balanced allocations, so
//! `M_f = (n/4) d_f^T cov[X]^{-1} d_f` has mean `p` under pure randomization.

use std::io::Write;

use crate::assignment::AssignmentMatrix;
use crate::contrasts::ContrastWorkspace;
use crate::design::ModelMatrix;
use crate::error::{Error, Result};
use crate::linalg::{condition_number, Cholesky};

/// Columns whose pivot falls below this fraction of their variance are
/// treated as linear combinations of earlier columns.
const MIN_RELATIVE_PIVOT: f64 = 1e-12;
/// Largest accepted condition number of the covariate correlation matrix.
pub const MAX_CONDITION: f64 = 1e12;

/// `n x p` covariates, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CovariateMatrix {
    names: Vec<String>,
    rows: usize,
    data: Vec<f64>,
}

impl CovariateMatrix {
    pub fn new(names: Vec<String>, data: Vec<f64>) -> Result<Self> {
        let p = names.len();
        if p == 0 {
            return Err(Error::InvalidArgument("covariate matrix needs at least one column".into()));
        }
        if data.len() % p != 0 {
            return Err(Error::DimensionMismatch {
                what: "covariate data length",
                expected: (data.len() / p + 1) * p,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / p,
                column: names[pos % p].clone(),
            });
        }
        Ok(Self {
            rows: data.len() / p,
            names,
            data,
        })
    }

    pub fn from_columns(names: Vec<String>, columns: &[Vec<f64>]) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if let Some(bad) = columns.iter().find(|c| c.len() != n) {
            return Err(Error::DimensionMismatch {
                what: "covariate column length",
                expected: n,
                found: bad.len(),
            });
        }
        let mut data = Vec::with_capacity(n * columns.len());
        for i in 0..n {
            data.extend(columns.iter().map(|c| c[i]));
        }
        Self::new(names, data)
    }

    pub fn units(&self) -> usize {
        self.rows
    }

    pub fn covariates(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.covariates() + k]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.covariates();
        &self.data[i * p..(i + 1) * p]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, k)).collect()
    }

    /// Keeps the named columns, in the given order.
    pub fn select<S: AsRef<str>>(&self, names: &[S]) -> Result<CovariateMatrix> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.names
                    .iter()
                    .position(|c| c == n.as_ref())
                    .ok_or_else(|| Error::InvalidArgument(format!("no covariate named `{}`", n.as_ref())))
            })
            .collect::<Result<_>>()?;
        let cols: Vec<Vec<f64>> = idx.iter().map(|&k| self.column(k)).collect();
        CovariateMatrix::from_columns(idx.iter().map(|&k| self.names[k].clone()).collect(), &cols)
    }

    fn check_units(&self, n: usize) -> Result<()> {
        if self.rows != n {
            return Err(Error::DimensionMismatch {
                what: "covariate rows",
                expected: n,
                found: self.rows,
            });
        }
        Ok(())
    }
}

/// Fixed covariance of the covariates and its Cholesky factor.
#[derive(Clone, Debug)]
pub struct CovarianceModel {
    names: Vec<String>,
    units: usize,
    means: Vec<f64>,
    cov: Vec<f64>,
    chol: Cholesky,
    condition: f64,
}

pub fn fit_covariance(x: &CovariateMatrix) -> Result<CovarianceModel> {
    let (n, p) = (x.units(), x.covariates());
    if n < p + 1 {
        return Err(Error::SingularCovariance {
            column: None,
            reason: format!("{n} units cannot support {p} covariates"),
        });
    }
    let means: Vec<f64> = (0..p)
        .map(|k| (0..n).map(|i| x.get(i, k)).sum::<f64>() / n as f64)
        .collect();
    let mut cov = vec![0.0; p * p];
    let mut centered = vec![0.0; p];
    for i in 0..n {
        for k in 0..p {
            centered[k] = x.get(i, k) - means[k];
        }
        for a in 0..p {
            for b in 0..=a {
                cov[a * p + b] += centered[a] * centered[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..=a {
            let v = cov[a * p + b] / (n - 1) as f64;
            cov[a * p + b] = v;
            cov[b * p + a] = v;
        }
    }
    for k in 0..p {
        // relative to the column's magnitude, so constant-but-large columns count as constant
        let scale = means[k].abs().max(1.0);
        if cov[k * p + k] <= (1e-14 * scale).powi(2) {
            return Err(Error::SingularCovariance {
                column: Some(x.names()[k].clone()),
                reason: format!("covariate `{}` has zero variance", x.names()[k]),
            });
        }
    }
    let chol = Cholesky::factor(&cov, p, MIN_RELATIVE_PIVOT).map_err(|fail| {
        let name = x.names()[fail.index].clone();
        Error::SingularCovariance {
            reason: format!("covariate `{name}` is (nearly) a linear combination of the preceding columns"),
            column: Some(name),
        }
    })?;

    // condition of the correlation matrix: M_f does not depend on column scale
    let sd: Vec<f64> = (0..p).map(|k| cov[k * p + k].sqrt()).collect();
    let corr: Vec<f64> = (0..p * p).map(|i| cov[i] / (sd[i / p] * sd[i % p])).collect();
    let condition = match Cholesky::factor(&corr, p, 0.0) {
        Ok(c) => condition_number(&corr, &c),
        Err(_) => f64::INFINITY,
    };
    if condition > MAX_CONDITION {
        return Err(Error::SingularCovariance {
            column: None,
            reason: format!("covariate correlation matrix has condition number {condition:.3e}"),
        });
    }
    Ok(CovarianceModel {
        names: x.names().to_vec(),
        units: n,
        means,
        cov,
        chol,
        condition,
    })
}

impl CovarianceModel {
    pub fn covariates(&self) -> usize {
        self.means.len()
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    /// Row-major `p x p` covariance.
    pub fn covariance(&self) -> &[f64] {
        &self.cov
    }

    pub fn cholesky(&self) -> &Cholesky {
        &self.chol
    }

    /// Condition number of the covariate correlation matrix.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Rows `L^{-1}(x_i - mean)`. Under this map `M_f = |sum_i W_if z_i|^2 / n`.
    pub fn whiten(&self, x: &CovariateMatrix) -> Result<Vec<f64>> {
        x.check_units(self.units)?;
        let p = self.covariates();
        if x.covariates() != p {
            return Err(Error::DimensionMismatch {
                what: "covariate columns",
                expected: p,
                found: x.covariates(),
            });
        }
        let mut out = Vec::with_capacity(x.units() * p);
        for i in 0..x.units() {
            let mut z: Vec<f64> = x.row(i).iter().zip(&self.means).map(|(v, m)| v - m).collect();
            self.chol.forward_solve(&mut z);
            out.extend(z);
        }
        Ok(out)
    }
}

/// `d_f = xbar_{f+} - xbar_{f-} = (2/n) X^T W_f`.
pub fn mean_difference(x: &CovariateMatrix, w: &AssignmentMatrix, f: usize) -> Result<Vec<f64>> {
    if f == 0 || f >= w.columns() {
        return Err(Error::NotAnEffect(f));
    }
    x.check_units(w.units())?;
    let n = w.units() as f64;
    let mut d = vec![0.0; x.covariates()];
    for (i, s) in w.column(f).enumerate() {
        let s = s as f64;
        for (acc, v) in d.iter_mut().zip(x.row(i)) {
            *acc += s * v;
        }
    }
    d.iter_mut().for_each(|v| *v *= 2.0 / n);
    Ok(d)
}

/// `M_f = (n/4) d_f^T cov[X]^{-1} d_f`, by forward substitution.
pub fn mahalanobis(cm: &CovarianceModel, d: &[f64], units: usize) -> Result<f64> {
    if d.len() != cm.covariates() {
        return Err(Error::DimensionMismatch {
            what: "mean difference length",
            expected: cm.covariates(),
            found: d.len(),
        });
    }
    Ok(units as f64 / 4.0 * cm.chol.inverse_quadratic_form(d))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EffectBalance {
    pub effect: usize,
    pub mean_difference: Vec<f64>,
    pub distance: f64,
}

/// Mean differences and distances for a chosen set of effects.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct BalanceProfile {
    entries: Vec<EffectBalance>,
}

impl BalanceProfile {
    pub fn from_entries(entries: Vec<EffectBalance>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[EffectBalance] {
        &self.entries
    }

    pub fn get(&self, f: usize) -> Option<&EffectBalance> {
        self.entries.iter().find(|e| e.effect == f)
    }

    pub fn distance(&self, f: usize) -> Option<f64> {
        self.get(f).map(|e| e.distance)
    }

    /// One row per (effect, covariate) mean difference followed by one
    /// `mahalanobis` row per effect: `effect,covariate,statistic,value`.
    pub fn write_csv<W: Write>(&self, mm: &ModelMatrix, covariates: &[String], w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["effect", "covariate", "statistic", "value"])?;
        for e in &self.entries {
            for (name, d) in covariates.iter().zip(&e.mean_difference) {
                wtr.write_record([mm.label(e.effect), name, "mean_difference", &d.to_string()])?;
            }
        }
        for e in &self.entries {
            wtr.write_record([mm.label(e.effect), "", "mahalanobis", &e.distance.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub fn balance_profile(
    x: &CovariateMatrix,
    cm: &CovarianceModel,
    w: &AssignmentMatrix,
    effects: &[usize],
) -> Result<BalanceProfile> {
    if effects.is_empty() {
        return Err(Error::InvalidArgument("no effects requested".into()));
    }
    let entries = effects
        .iter()
        .map(|&f| {
            let d = mean_difference(x, w, f)?;
            let m = mahalanobis(cm, &d, w.units())?;
            Ok(EffectBalance {
                effect: f,
                mean_difference: d,
                distance: m,
            })
        })
        .collect::<Result<_>>()?;
    Ok(BalanceProfile { entries })
}

/// Precomputed state for scoring many allocations against one covariate matrix.
#[derive(Clone, Debug)]
pub struct BalanceScorer {
    mm: ModelMatrix,
    cm: CovarianceModel,
    raw: Vec<f64>,
    whitened: Vec<f64>,
    units: usize,
}

impl BalanceScorer {
    pub fn new(x: &CovariateMatrix, mm: &ModelMatrix, units: usize) -> Result<Self> {
        x.check_units(units)?;
        let cm = fit_covariance(x)?;
        let whitened = cm.whiten(x)?;
        Ok(Self {
            mm: mm.clone(),
            raw: x.data().to_vec(),
            cm,
            whitened,
            units,
        })
    }

    pub fn model(&self) -> &ModelMatrix {
        &self.mm
    }

    pub fn covariance(&self) -> &CovarianceModel {
        &self.cm
    }

    pub fn covariates(&self) -> usize {
        self.cm.covariates()
    }

    pub fn units(&self) -> usize {
        self.units
    }

    /// Whitened covariate rows, `n x p`.
    pub fn whitened(&self) -> &[f64] {
        &self.whitened
    }

    pub fn workspace(&self) -> ContrastWorkspace {
        ContrastWorkspace::new(self.mm.size(), self.covariates())
    }

    /// Fills `ws` with the whitened contrasts of `combos`.
    pub fn load(&self, combos: &[u32], ws: &mut ContrastWorkspace) {
        ws.compute(combos, &self.whitened);
    }

    /// `M_f` from a workspace filled by [`BalanceScorer::load`].
    #[inline]
    pub fn distance(&self, ws: &ContrastWorkspace, f: usize) -> f64 {
        ws.squared_norm(&self.mm, f, 0..self.covariates()) / self.units as f64
    }

    /// Full profile of an allocation (mean differences on the original scale).
    pub fn profile(&self, combos: &[u32], effects: &[usize]) -> BalanceProfile {
        let p = self.covariates();
        let mut ws = self.workspace();
        self.load(combos, &mut ws);
        let mut raw_ws = ContrastWorkspace::new(self.mm.size(), p);
        raw_ws.compute(combos, &self.raw);
        let scale = 2.0 / self.units as f64;
        let entries = effects
            .iter()
            .map(|&f| {
                let mut d = vec![0.0; p];
                raw_ws.contrast(&self.mm, f, &mut d);
                d.iter_mut().for_each(|v| *v *= scale);
                EffectBalance {
                    effect: f,
                    mean_difference: d,
                    distance: self.distance(&ws, f),
                }
            })
            .collect();
        BalanceProfile { entries }
    }
}
