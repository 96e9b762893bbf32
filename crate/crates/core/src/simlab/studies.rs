//! Monte Carlo studies comparing rerandomization with pure randomization.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use serde::Serialize;

use super::{correlation, mean_var, par_map, quantile_sorted, r_squared, OutcomeModel, PotentialOutcomes};
use crate::assignment::balanced_multiset;
use crate::balance::{BalanceScorer, CovariateMatrix};
use crate::contrasts::ContrastWorkspace;
use crate::criteria::{calibration_targets, resolve_empirical, variance_factor, AcceptanceRule, Tier};
use crate::design::{DesignSpec, ModelMatrix};
use crate::engine::{tier_records, Rerandomizer, TierRecord, DEFAULT_MAX_DRAWS};
use crate::error::{Error, Result};
use crate::streams::{Purpose, StreamSeeder};

pub const MIN_STUDY_REPLICATIONS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StudyOptions {
    pub replications: usize,
    pub seed: u64,
    pub workers: usize,
    /// Per accepted replication.
    pub max_draws: u64,
}

impl StudyOptions {
    pub fn new(seed: u64, replications: usize) -> Self {
        Self {
            replications,
            seed,
            workers: 1,
            max_draws: DEFAULT_MAX_DRAWS,
        }
    }

    pub fn workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CovariateStudy {
    pub covariate: String,
    /// Squared multiple correlation with the rule's covariates.
    pub r_squared_on_rule: f64,
    pub mean_pure: f64,
    pub mean_accepted: f64,
    pub se_accepted: f64,
    pub var_pure: f64,
    pub var_accepted: f64,
    pub percent_reduction: f64,
    pub theoretical_percent_reduction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimatorStudy {
    pub true_effect: f64,
    pub mean_pure: f64,
    pub mean_accepted: f64,
    pub se_accepted: f64,
    pub var_pure: f64,
    pub var_accepted: f64,
    pub variance_ratio: f64,
    pub theoretical_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EffectStudy {
    pub effect: String,
    pub index: usize,
    pub order: usize,
    pub monitored: bool,
    pub threshold: Option<f64>,
    pub variance_factor: Option<f64>,
    pub covariates: Vec<CovariateStudy>,
    pub estimator: Option<EstimatorStudy>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairCorrelation {
    pub first: String,
    pub second: String,
    pub pure: f64,
    pub accepted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyReport {
    pub seed: u64,
    pub replications: usize,
    pub units: usize,
    pub rule_covariates: Vec<String>,
    pub tiers: Vec<TierRecord>,
    pub target_r_squared: Option<f64>,
    pub realized_r_squared: Option<f64>,
    pub mean_draws_per_acceptance: f64,
    pub effects: Vec<EffectStudy>,
    pub estimator_correlations: Vec<PairCorrelation>,
    /// Largest `|corr|` between mean differences of one covariate for two
    /// different effects, over accepted replications.
    pub max_cross_effect_mean_difference_correlation: f64,
}

/// One line of a percent-reduction dot chart.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlotRow {
    pub covariate: String,
    pub effect: String,
    pub percent_reduction: f64,
    pub theoretical_line: f64,
}

impl StudyReport {
    pub fn effect(&self, label: &str) -> Option<&EffectStudy> {
        self.effects.iter().find(|e| e.effect == label)
    }

    pub fn plot_rows(&self) -> Vec<PlotRow> {
        self.effects
            .iter()
            .flat_map(|e| {
                e.covariates.iter().map(move |c| PlotRow {
                    covariate: c.covariate.clone(),
                    effect: e.effect.clone(),
                    percent_reduction: c.percent_reduction,
                    theoretical_line: c.theoretical_percent_reduction,
                })
            })
            .collect()
    }

    pub fn write_plot_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in self.plot_rows() {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Long table `covariate,effect,statistic,value`; estimator rows use an
    /// empty covariate.
    pub fn write_long_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["covariate", "effect", "statistic", "value"])?;
        for e in &self.effects {
            for c in &e.covariates {
                for (stat, v) in [
                    ("mean_pure", c.mean_pure),
                    ("mean_accepted", c.mean_accepted),
                    ("var_pure", c.var_pure),
                    ("var_accepted", c.var_accepted),
                    ("percent_reduction", c.percent_reduction),
                    ("theoretical_percent_reduction", c.theoretical_percent_reduction),
                ] {
                    out.write_record([c.covariate.as_str(), &e.effect, stat, &v.to_string()])?;
                }
            }
            if let Some(t) = &e.estimator {
                for (stat, v) in [
                    ("true_effect", t.true_effect),
                    ("estimate_mean_accepted", t.mean_accepted),
                    ("estimate_var_pure", t.var_pure),
                    ("estimate_var_accepted", t.var_accepted),
                    ("variance_ratio", t.variance_ratio),
                    ("theoretical_ratio", t.theoretical_ratio),
                ] {
                    out.write_record(["", &e.effect, stat, &v.to_string()])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Per-replication record: mean differences (`effect-major`, `F x q`) and
/// estimates (`F`), with `F` counting effects from 1.
struct Sample {
    d: Vec<f64>,
    est: Vec<f64>,
    draws: u64,
}

struct Sampler<'a> {
    mm: &'a ModelMatrix,
    report: &'a CovariateMatrix,
    outcomes: Option<&'a PotentialOutcomes>,
}

impl Sampler<'_> {
    fn width(&self) -> usize {
        self.report.covariates() + usize::from(self.outcomes.is_some())
    }

    fn sample(&self, combos: &[u32], draws: u64) -> Sample {
        let q = self.report.covariates();
        let w = self.width();
        let n = combos.len();
        let mut rows = Vec::with_capacity(n * w);
        for (i, &c) in combos.iter().enumerate() {
            rows.extend_from_slice(self.report.row(i));
            if let Some(po) = self.outcomes {
                rows.push(po.get(i, c as usize));
            }
        }
        let mut ws = ContrastWorkspace::new(self.mm.size(), w);
        ws.compute(combos, &rows);
        let scale = 2.0 / n as f64;
        let effects = self.mm.size() - 1;
        let mut d = Vec::with_capacity(effects * q);
        let mut est = Vec::with_capacity(effects);
        let mut buf = vec![0.0; w];
        for f in 1..self.mm.size() {
            ws.contrast(self.mm, f, &mut buf);
            d.extend(buf[..q].iter().map(|v| v * scale));
            if self.outcomes.is_some() {
                est.push(buf[q] * scale);
            }
        }
        Sample { d, est, draws }
    }
}

/// Runs pure and accepted replications and compares mean-difference and
/// estimator variances with their theoretical reductions.
///
/// `report` chooses the covariates whose mean differences are tracked
/// (defaults to `x`); `model`, when given, adds effect estimates.
pub fn variance_study(
    spec: &DesignSpec,
    x: &CovariateMatrix,
    report: Option<&CovariateMatrix>,
    rule: &AcceptanceRule,
    model: Option<&OutcomeModel>,
    opts: &StudyOptions,
) -> Result<StudyReport> {
    if opts.replications < MIN_STUDY_REPLICATIONS {
        return Err(Error::InvalidArgument(format!(
            "a variance study needs at least {MIN_STUDY_REPLICATIONS} replications, got {}",
            opts.replications
        )));
    }
    let report = report.unwrap_or(x);
    if report.units() != spec.units() {
        return Err(Error::DimensionMismatch {
            what: "report covariate rows",
            expected: spec.units(),
            found: report.units(),
        });
    }
    let rr = Rerandomizer::new(x, spec, rule.clone())?;
    let mm = rr.model();
    let seeder = StreamSeeder::new(opts.seed);

    let (outcomes, truth, realized) = match model {
        Some(m) => {
            let mut rng = seeder.stream(Purpose::Outcomes, 0);
            let po = super::generate_potential_outcomes(m, x, mm, &mut rng)?;
            let truth = super::true_estimands(&po, mm)?;
            let r2 = r_squared(x, po.residual())?;
            (Some(po), Some(truth), Some(r2))
        }
        None => (None, None, None),
    };
    let sampler = Sampler {
        mm,
        report,
        outcomes: outcomes.as_ref(),
    };

    let base = balanced_multiset(spec);
    let pure_seeds = seeder.child(Purpose::Replication, 0);
    let pure = par_map(opts.replications as u64, opts.workers, |rep| {
        let mut rng = pure_seeds.stream(Purpose::Replication, rep);
        let mut combos = base.clone();
        combos.shuffle(&mut rng);
        sampler.sample(&combos, 1)
    })?;
    let accepted_seeds = seeder.child(Purpose::Replication, 1);
    let accepted = par_map(opts.replications as u64, opts.workers, |rep| {
        let mut rng = accepted_seeds.stream(Purpose::Replication, rep);
        let mut scratch = rr.scratch();
        rr.draw_accepted(&mut rng, &mut scratch, opts.max_draws)
            .map(|draws| sampler.sample(scratch.combinations(), draws))
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let q = report.covariates();
    let reps = opts.replications as f64;
    let rule_names = x.names();
    let report_r2: Vec<f64> = (0..q)
        .map(|k| {
            if rule_names.contains(&report.names()[k]) {
                Ok(1.0)
            } else {
                r_squared(x, &report.column(k))
            }
        })
        .collect::<Result<_>>()?;

    let mut effects = Vec::new();
    for f in mm.effect_ids() {
        let slot = f - 1;
        let threshold = rule.threshold(f);
        let factor = threshold
            .map(|a| variance_factor(rule.covariates(), a).map(|v| v.value))
            .transpose()?;
        let shrink = factor.map_or(0.0, |v| 1.0 - v);
        let covariates = (0..q)
            .map(|k| {
                let at = slot * q + k;
                let (mp, vp) = mean_var(pure.iter().map(|s| s.d[at]));
                let (ma, va) = mean_var(accepted.iter().map(|s| s.d[at]));
                CovariateStudy {
                    covariate: report.names()[k].clone(),
                    r_squared_on_rule: report_r2[k],
                    mean_pure: mp,
                    mean_accepted: ma,
                    se_accepted: (va / reps).sqrt(),
                    var_pure: vp,
                    var_accepted: va,
                    percent_reduction: 100.0 * (1.0 - va / vp),
                    theoretical_percent_reduction: 100.0 * shrink * report_r2[k],
                }
            })
            .collect();
        let estimator = match (&truth, realized) {
            (Some(truth), Some(r2)) => {
                let (mp, vp) = mean_var(pure.iter().map(|s| s.est[slot]));
                let (ma, va) = mean_var(accepted.iter().map(|s| s.est[slot]));
                Some(EstimatorStudy {
                    true_effect: truth[f],
                    mean_pure: mp,
                    mean_accepted: ma,
                    se_accepted: (va / reps).sqrt(),
                    var_pure: vp,
                    var_accepted: va,
                    variance_ratio: va / vp,
                    theoretical_ratio: 1.0 - shrink * r2,
                })
            }
            _ => None,
        };
        effects.push(EffectStudy {
            effect: mm.label(f).to_string(),
            index: f,
            order: mm.effects()[f].order(),
            monitored: threshold.is_some(),
            threshold,
            variance_factor: factor,
            covariates,
            estimator,
        });
    }

    let mut estimator_correlations = Vec::new();
    let mut max_cross = 0.0f64;
    let column = |samples: &[Sample], at: usize, est: bool| -> Vec<f64> {
        samples.iter().map(|s| if est { s.est[at] } else { s.d[at] }).collect()
    };
    let total = mm.size() - 1;
    for a in 0..total {
        for b in a + 1..total {
            if outcomes.is_some() {
                estimator_correlations.push(PairCorrelation {
                    first: mm.label(a + 1).to_string(),
                    second: mm.label(b + 1).to_string(),
                    pure: correlation(&column(&pure, a, true), &column(&pure, b, true)),
                    accepted: correlation(&column(&accepted, a, true), &column(&accepted, b, true)),
                });
            }
            for k in 0..q {
                let c = correlation(&column(&accepted, a * q + k, false), &column(&accepted, b * q + k, false));
                max_cross = max_cross.max(c.abs());
            }
        }
    }

    Ok(StudyReport {
        seed: opts.seed,
        replications: opts.replications,
        units: spec.units(),
        rule_covariates: rule_names.to_vec(),
        tiers: tier_records(rule, mm),
        target_r_squared: model.and_then(|m| m.r_squared),
        realized_r_squared: realized,
        mean_draws_per_acceptance: accepted.iter().map(|s| s.draws as f64).sum::<f64>() / reps,
        effects,
        estimator_correlations,
        max_cross_effect_mean_difference_correlation: max_cross,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IndicatorPair {
    pub first: String,
    pub second: String,
    pub correlation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TierRate {
    pub tier: String,
    pub rate: f64,
    pub product_of_marginals: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IndependenceReport {
    pub seed: u64,
    pub draws: usize,
    pub units: usize,
    /// `n < 16 p`: the normal approximation is too rough to expect
    /// independence, so deviations are reported, not asserted.
    pub below_sample_floor: bool,
    pub marginal_rates: BTreeMap<String, f64>,
    pub joint_rate: f64,
    pub product_of_marginals: f64,
    pub implied_acceptance: Option<f64>,
    pub tier_rates: Vec<TierRate>,
    pub indicator_correlations: Vec<IndicatorPair>,
    pub max_indicator_correlation: f64,
    pub max_cross_effect_mean_difference_correlation: f64,
}

/// Pure randomizations scored against `rule`: pass indicators and
/// mean differences across effects, and joint against marginal rates.
pub fn independence_study(
    spec: &DesignSpec,
    x: &CovariateMatrix,
    rule: &AcceptanceRule,
    draws: usize,
    seed: u64,
    workers: usize,
) -> Result<IndependenceReport> {
    if draws < 2 {
        return Err(Error::InvalidArgument("an independence study needs at least 2 draws".into()));
    }
    let mm = ModelMatrix::for_design(spec);
    let scorer = BalanceScorer::new(x, &mm, spec.units())?;
    let monitored = rule.monitored();
    if let Some(&f) = monitored.iter().find(|&&f| f >= mm.size()) {
        return Err(Error::NotAnEffect(f));
    }
    let p = x.covariates();
    let base = balanced_multiset(spec);
    let seeds = StreamSeeder::new(seed);
    let raw = x.data();
    // (indicators over monitored, raw mean differences over all effects)
    let samples = par_map(draws as u64, workers, |i| {
        let mut rng = seeds.stream(Purpose::Replication, i);
        let mut combos = base.clone();
        combos.shuffle(&mut rng);
        let mut ws = scorer.workspace();
        scorer.load(&combos, &mut ws);
        let ind: Vec<bool> = monitored
            .iter()
            .map(|&f| scorer.distance(&ws, f) <= rule.threshold(f).unwrap())
            .collect();
        let mut raw_ws = ContrastWorkspace::new(mm.size(), p);
        raw_ws.compute(&combos, raw);
        let mut d = vec![0.0; (mm.size() - 1) * p];
        for f in 1..mm.size() {
            raw_ws.contrast(&mm, f, &mut d[(f - 1) * p..f * p]);
        }
        (ind, d)
    })?;

    let n = draws as f64;
    let as_f = |k: usize| -> Vec<f64> { samples.iter().map(|(ind, _)| f64::from(u8::from(ind[k]))).collect() };
    let rate = |k: usize| samples.iter().filter(|(ind, _)| ind[k]).count() as f64 / n;
    let pos: BTreeMap<usize, usize> = monitored.iter().enumerate().map(|(k, &f)| (f, k)).collect();

    let marginal_rates = monitored.iter().enumerate().map(|(k, &f)| (mm.label(f).to_string(), rate(k))).collect();
    let joint_rate = samples.iter().filter(|(ind, _)| ind.iter().all(|&b| b)).count() as f64 / n;
    let product_of_marginals = (0..monitored.len()).map(rate).product();

    let tier_rates = rule
        .tiers()
        .iter()
        .map(|t| {
            let ks: Vec<usize> = t.effects.iter().map(|f| pos[f]).collect();
            TierRate {
                tier: t.name.clone(),
                rate: samples.iter().filter(|(ind, _)| ks.iter().all(|&k| ind[k])).count() as f64 / n,
                product_of_marginals: ks.iter().map(|&k| rate(k)).product(),
            }
        })
        .collect();

    let mut indicator_correlations = Vec::new();
    let mut max_ind = 0.0f64;
    for a in 0..monitored.len() {
        for b in a + 1..monitored.len() {
            let c = correlation(&as_f(a), &as_f(b));
            max_ind = max_ind.max(c.abs());
            indicator_correlations.push(IndicatorPair {
                first: mm.label(monitored[a]).to_string(),
                second: mm.label(monitored[b]).to_string(),
                correlation: c,
            });
        }
    }
    let mut max_cross = 0.0f64;
    let total = mm.size() - 1;
    for a in 0..total {
        for b in a + 1..total {
            for k in 0..p {
                let ca: Vec<f64> = samples.iter().map(|(_, d)| d[a * p + k]).collect();
                let cb: Vec<f64> = samples.iter().map(|(_, d)| d[b * p + k]).collect();
                max_cross = max_cross.max(correlation(&ca, &cb).abs());
            }
        }
    }

    Ok(IndependenceReport {
        seed,
        draws,
        units: spec.units(),
        below_sample_floor: spec.units() < 16 * p,
        marginal_rates,
        joint_rate,
        product_of_marginals,
        implied_acceptance: match rule.mode() {
            crate::criteria::ThresholdMode::ChiSquared => rule.implied_acceptance().ok(),
            crate::criteria::ThresholdMode::Empirical => None,
        },
        tier_rates,
        indicator_correlations,
        max_indicator_correlation: max_ind,
        max_cross_effect_mean_difference_correlation: max_cross,
    })
}

/// `a_f` = interpolated `q_f`-quantile of `M_f` over pure randomizations.
pub fn calibrate_empirical_thresholds(
    spec: &DesignSpec,
    x: &CovariateMatrix,
    targets: &[(usize, f64)],
    draws: usize,
    seed: u64,
    workers: usize,
) -> Result<BTreeMap<usize, f64>> {
    if draws < MIN_STUDY_REPLICATIONS {
        return Err(Error::InvalidArgument(format!(
            "calibration needs at least {MIN_STUDY_REPLICATIONS} draws, got {draws}"
        )));
    }
    let mm = ModelMatrix::for_design(spec);
    for &(f, q) in targets {
        if f == 0 || f >= mm.size() {
            return Err(Error::NotAnEffect(f));
        }
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::InvalidRule(format!("calibration probability {q} outside (0, 1]")));
        }
    }
    let scorer = BalanceScorer::new(x, &mm, spec.units())?;
    let base = balanced_multiset(spec);
    let seeds = StreamSeeder::new(seed);
    let distances = par_map(draws as u64, workers, |i| {
        let mut rng = seeds.stream(Purpose::Calibration, i);
        let mut combos = base.clone();
        combos.shuffle(&mut rng);
        let mut ws = scorer.workspace();
        scorer.load(&combos, &mut ws);
        targets.iter().map(|&(f, _)| scorer.distance(&ws, f)).collect::<Vec<f64>>()
    })?;
    Ok(targets
        .iter()
        .enumerate()
        .map(|(k, &(f, q))| {
            let mut m: Vec<f64> = distances.iter().map(|d| d[k]).collect();
            m.sort_by(f64::total_cmp);
            (f, quantile_sorted(&m, q))
        })
        .collect())
}

/// Calibrates every joint-probability tier and builds the empirical rule.
pub fn calibrated_rule(
    spec: &DesignSpec,
    x: &CovariateMatrix,
    tiers: Vec<Tier>,
    draws: usize,
    seed: u64,
    workers: usize,
) -> Result<AcceptanceRule> {
    let targets = calibration_targets(&tiers)?;
    let calibrated = calibrate_empirical_thresholds(spec, x, &targets, draws, seed, workers)?;
    resolve_empirical(tiers, x.covariates(), &calibrated)
}
