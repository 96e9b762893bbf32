//! The rerandomization loop, effect estimation, and randomization tests that
//! only use allocations the acceptance rule admits.
//!
//! Candidates are whole balanced allocations drawn independently; a rejected
//! candidate is discarded, never repaired. Draws are numbered globally and
//! grouped into batches of [`BATCH_SIZE`], each batch reading its own stream
//! keyed by batch index. Workers process batches concurrently and the
//! accepted draw with the smallest global index wins, so the output equals
//! that of the sequential loop for any worker count.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::assignment::{balanced_multiset, expand_assignment, Allocation, AssignmentMatrix, DrawOrigin};
use crate::balance::{BalanceProfile, BalanceScorer, CovariateMatrix};
use crate::contrasts::ContrastWorkspace;
use crate::criteria::{accept, AcceptanceRule, ThresholdMode, TierBound};
use crate::design::{DesignSpec, ModelMatrix, RunOrder};
use crate::error::{Error, Result};
use crate::streams::{Purpose, StreamSeeder};

pub const BATCH_SIZE: u64 = 64;
pub const DEFAULT_MAX_DRAWS: u64 = 1_000_000;

/// Reusable buffers for one sequential drawing loop.
#[derive(Clone, Debug)]
pub struct Scratch {
    combos: Vec<u32>,
    ws: ContrastWorkspace,
}

impl Scratch {
    pub fn combinations(&self) -> &[u32] {
        &self.combos
    }
}

/// Covariates, design and resolved rule, prepared for repeated drawing.
#[derive(Clone, Debug)]
pub struct Rerandomizer {
    spec: DesignSpec,
    scorer: BalanceScorer,
    rule: AcceptanceRule,
    base: Vec<u32>,
}

impl Rerandomizer {
    pub fn new(x: &CovariateMatrix, spec: &DesignSpec, rule: AcceptanceRule) -> Result<Self> {
        let mm = ModelMatrix::for_design(spec);
        if rule.covariates() != x.covariates() {
            return Err(Error::DimensionMismatch {
                what: "rule covariate count",
                expected: x.covariates(),
                found: rule.covariates(),
            });
        }
        if let Some(f) = rule.monitored().into_iter().find(|&f| f >= mm.size()) {
            return Err(Error::InvalidRule(format!(
                "effect index {f} does not exist in a 2^{} design",
                spec.factors()
            )));
        }
        let scorer = BalanceScorer::new(x, &mm, spec.units())?;
        Ok(Self {
            spec: spec.clone(),
            scorer,
            rule,
            base: balanced_multiset(spec),
        })
    }

    pub fn spec(&self) -> &DesignSpec {
        &self.spec
    }

    pub fn model(&self) -> &ModelMatrix {
        self.scorer.model()
    }

    pub fn scorer(&self) -> &BalanceScorer {
        &self.scorer
    }

    pub fn rule(&self) -> &AcceptanceRule {
        &self.rule
    }

    pub fn scratch(&self) -> Scratch {
        Scratch {
            combos: self.base.clone(),
            ws: self.scorer.workspace(),
        }
    }

    /// Expected number of draws per acceptance under the chi-squared
    /// approximation, when the rule is in chi-squared mode.
    pub fn expected_draws(&self) -> Option<f64> {
        match self.rule.mode() {
            ThresholdMode::ChiSquared => self.rule.implied_acceptance().ok().map(|q| 1.0 / q),
            ThresholdMode::Empirical => None,
        }
    }

    /// A warning when the expected draw count exceeds a tenth of `max_draws`.
    pub fn preflight(&self, max_draws: u64) -> Option<String> {
        let expected = self.expected_draws()?;
        (expected > max_draws as f64 / 10.0).then(|| {
            format!(
                "implied acceptance probability {:.3e} needs about {expected:.0} draws per acceptance; max_draws is {max_draws}",
                1.0 / expected
            )
        })
    }

    /// Whether the allocation in `combos` passes the rule.
    pub fn accepts(&self, combos: &[u32], ws: &mut ContrastWorkspace) -> bool {
        self.scorer.load(combos, ws);
        self.rule.accepts_with(|f| self.scorer.distance(ws, f))
    }

    /// Draws one candidate into `scratch`; true when it is accepted.
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, scratch: &mut Scratch) -> bool {
        scratch.combos.shuffle(rng);
        self.scorer.load(&scratch.combos, &mut scratch.ws);
        let ws = &scratch.ws;
        self.rule.accepts_with(|f| self.scorer.distance(ws, f))
    }

    /// Sequential loop: draws until acceptance, leaving the accepted
    /// allocation in `scratch`. Returns the number of draws used.
    pub fn draw_accepted<R: Rng + ?Sized>(&self, rng: &mut R, scratch: &mut Scratch, max_draws: u64) -> Result<u64> {
        scratch.combos.copy_from_slice(&self.base);
        for attempt in 1..=max_draws {
            if self.draw(rng, scratch) {
                return Ok(attempt);
            }
        }
        Err(Error::MaxDrawsExceeded { max_draws })
    }

    /// Finds the first accepted draw of the seeded sequence.
    pub fn run(&self, opts: &RunOptions) -> Result<RerandomizationResult> {
        if opts.max_draws == 0 {
            return Err(Error::InvalidArgument("max_draws must be at least 1".into()));
        }
        let started = Instant::now();
        let seeder = StreamSeeder::new(opts.seed);
        let (found, _) = self.scan(&seeder, Purpose::Allocation, opts.workers, opts.max_draws, 1, |c| c.to_vec())?;
        let (index, combos) = found.into_iter().next().ok_or(Error::MaxDrawsExceeded {
            max_draws: opts.max_draws,
        })?;
        let allocation = Allocation::from_parts_unchecked(
            &self.spec,
            combos,
            Some(DrawOrigin {
                seed: opts.seed,
                draw_index: index,
            }),
        );
        let assignment = expand_assignment(&allocation, self.model())?;
        let all: Vec<usize> = self.model().effect_ids().collect();
        let profile = self.scorer.profile(allocation.combinations(), &all);
        debug_assert!(accept(&profile, &self.rule).unwrap_or(false));
        Ok(RerandomizationResult {
            allocation,
            assignment,
            profile,
            draws_attempted: index + 1,
            elapsed: started.elapsed(),
            seed: opts.seed,
            workers: opts.workers.max(1),
        })
    }

    /// Scans the global draw sequence for up to `want` accepted draws,
    /// mapping each through `on_accept`. Returns them in draw order together
    /// with the number of draws consumed.
    fn scan<T, F>(
        &self,
        seeder: &StreamSeeder,
        purpose: Purpose,
        workers: usize,
        max_draws: u64,
        want: usize,
        on_accept: F,
    ) -> Result<(Vec<(u64, T)>, u64)>
    where
        T: Send,
        F: Fn(&[u32]) -> T + Sync,
    {
        let workers = workers.max(1);
        let total_batches = max_draws.div_ceil(BATCH_SIZE);
        let run_batch = |batch: u64| -> Vec<(u64, T)> {
            let mut rng = seeder.stream(purpose, batch);
            let mut scratch = self.scratch();
            let start = batch * BATCH_SIZE;
            let end = (start + BATCH_SIZE).min(max_draws);
            let mut out = Vec::new();
            for index in start..end {
                if self.draw(&mut rng, &mut scratch) {
                    out.push((index, on_accept(&scratch.combos)));
                    if want == 1 {
                        break;
                    }
                }
            }
            out
        };
        let pool = if workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?,
            )
        } else {
            None
        };
        let mut found: Vec<(u64, T)> = Vec::new();
        let mut next_batch = 0u64;
        // each round hands several batches to every worker
        let per_round = (workers as u64) * 4;
        while next_batch < total_batches {
            let last = (next_batch + per_round).min(total_batches);
            let round: Vec<Vec<(u64, T)>> = match &pool {
                Some(pool) => pool.install(|| (next_batch..last).into_par_iter().map(run_batch).collect()),
                None => {
                    let mut v = Vec::new();
                    for b in next_batch..last {
                        let r = run_batch(b);
                        let hit = !r.is_empty();
                        v.push(r);
                        if hit && want == 1 {
                            break;
                        }
                    }
                    v
                }
            };
            found.extend(round.into_iter().flatten());
            next_batch = last;
            if found.len() >= want {
                found.truncate(want);
                let used = found.last().map_or(0, |(i, _)| i + 1);
                return Ok((found, used));
            }
        }
        Ok((found, max_draws))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub seed: u64,
    pub max_draws: u64,
    pub workers: usize,
}

impl RunOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            max_draws: DEFAULT_MAX_DRAWS,
            workers: 1,
        }
    }

    pub fn max_draws(mut self, max_draws: u64) -> Self {
        self.max_draws = max_draws;
        self
    }

    pub fn workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }
}

#[derive(Clone, Debug)]
pub struct RerandomizationResult {
    pub allocation: Allocation,
    pub assignment: AssignmentMatrix,
    /// Balance of every factorial effect at acceptance.
    pub profile: BalanceProfile,
    pub draws_attempted: u64,
    pub elapsed: Duration,
    pub seed: u64,
    pub workers: usize,
}

/// Convenience wrapper around [`Rerandomizer::run`].
pub fn rerandomize(
    x: &CovariateMatrix,
    spec: &DesignSpec,
    rule: AcceptanceRule,
    opts: &RunOptions,
) -> Result<RerandomizationResult> {
    Rerandomizer::new(x, spec, rule)?.run(opts)
}

/// Structured record of an allocation run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunManifest {
    pub software: String,
    pub version: String,
    pub seed: u64,
    pub workers: usize,
    pub design: DesignRecord,
    pub covariates: Vec<String>,
    pub threshold_mode: ThresholdMode,
    pub tiers: Vec<TierRecord>,
    pub implied_acceptance: Option<f64>,
    pub max_draws: u64,
    pub draws_attempted: u64,
    pub accepted_draw_index: u64,
    pub elapsed_seconds: f64,
    pub effects: Vec<EffectRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DesignRecord {
    pub factors: usize,
    pub replicates: usize,
    pub units: usize,
    pub order: RunOrder,
    pub factor_names: Vec<String>,
}

impl DesignRecord {
    pub fn new(spec: &DesignSpec) -> Self {
        Self {
            factors: spec.factors(),
            replicates: spec.replicates(),
            units: spec.units(),
            order: spec.order(),
            factor_names: spec.factor_names().to_vec(),
        }
    }
}

/// A tier as run: the joint target `q` (when given), the per-effect
/// probability it implies, and the threshold `a` actually applied.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TierRecord {
    pub name: String,
    pub effects: Vec<String>,
    pub joint_prob: Option<f64>,
    pub per_effect_prob: Option<f64>,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EffectRecord {
    pub effect: String,
    pub mahalanobis: f64,
    pub threshold: Option<f64>,
    pub pass: Option<bool>,
}

pub fn tier_records(rule: &AcceptanceRule, mm: &ModelMatrix) -> Vec<TierRecord> {
    rule.tiers()
        .iter()
        .map(|t| TierRecord {
            name: t.name.clone(),
            effects: t.effects.iter().map(|&f| mm.label(f).to_string()).collect(),
            joint_prob: match t.bound {
                TierBound::JointProbability(q) => Some(q),
                TierBound::Threshold(_) => None,
            },
            per_effect_prob: t.per_effect_probability(),
            threshold: rule.tier_threshold(t),
        })
        .collect()
}

pub fn effect_records(profile: &BalanceProfile, rule: &AcceptanceRule, mm: &ModelMatrix) -> Vec<EffectRecord> {
    profile
        .entries()
        .iter()
        .map(|e| {
            let threshold = rule.threshold(e.effect);
            EffectRecord {
                effect: mm.label(e.effect).to_string(),
                mahalanobis: e.distance,
                threshold,
                pass: threshold.map(|a| e.distance <= a),
            }
        })
        .collect()
}

impl RerandomizationResult {
    pub fn manifest(&self, rr: &Rerandomizer, max_draws: u64) -> RunManifest {
        let mm = rr.model();
        RunManifest {
            software: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: self.seed,
            workers: self.workers,
            design: DesignRecord::new(rr.spec()),
            covariates: rr.scorer().covariance().names().to_vec(),
            threshold_mode: rr.rule().mode(),
            tiers: tier_records(rr.rule(), mm),
            implied_acceptance: rr.expected_draws().map(|e| 1.0 / e),
            max_draws,
            draws_attempted: self.draws_attempted,
            accepted_draw_index: self.draws_attempted - 1,
            elapsed_seconds: self.elapsed.as_secs_f64(),
            effects: effect_records(&self.profile, rr.rule(), mm),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EffectEstimate {
    pub effect: usize,
    pub estimate: f64,
    pub mean_high: f64,
    pub mean_low: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EffectEstimates {
    pub y_obs: Vec<f64>,
    pub entries: Vec<EffectEstimate>,
}

impl EffectEstimates {
    pub fn get(&self, f: usize) -> Option<&EffectEstimate> {
        self.entries.iter().find(|e| e.effect == f)
    }
}

/// `theta_hat_f = ybar_{f+} - ybar_{f-} = (2/n) y^T W_f`.
pub fn estimate_effects(y_obs: &[f64], w: &AssignmentMatrix, effects: &[usize]) -> Result<EffectEstimates> {
    if y_obs.len() != w.units() {
        return Err(Error::DimensionMismatch {
            what: "outcome length",
            expected: w.units(),
            found: y_obs.len(),
        });
    }
    let n = w.units() as f64;
    let entries = effects
        .iter()
        .map(|&f| {
            if f == 0 || f >= w.columns() {
                return Err(Error::NotAnEffect(f));
            }
            let (mut hi, mut lo, mut n_hi, mut dot) = (0.0, 0.0, 0usize, 0.0);
            for (y, s) in y_obs.iter().zip(w.column(f)) {
                dot += s as f64 * y;
                if s > 0 {
                    hi += y;
                    n_hi += 1;
                } else {
                    lo += y;
                }
            }
            Ok(EffectEstimate {
                effect: f,
                estimate: 2.0 * dot / n,
                mean_high: hi / n_hi as f64,
                mean_low: lo / (w.units() - n_hi) as f64,
            })
        })
        .collect::<Result<_>>()?;
    Ok(EffectEstimates {
        y_obs: y_obs.to_vec(),
        entries,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TestOptions {
    /// Accepted reference allocations to collect.
    pub reference_draws: usize,
    pub max_draws: u64,
    pub seed: u64,
    pub workers: usize,
}

impl TestOptions {
    pub fn new(seed: u64, reference_draws: usize) -> Self {
        Self {
            reference_draws,
            max_draws: DEFAULT_MAX_DRAWS.max(reference_draws as u64 * 1000),
            seed,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NullSummary {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub q025: f64,
    pub q975: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EffectTest {
    pub effect: usize,
    pub estimate: f64,
    pub p_value: f64,
    pub reference_draws: usize,
    pub null: NullSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RandomizationTestResult {
    pub effects: Vec<EffectTest>,
    pub draws_scanned: u64,
    pub seed: u64,
}

fn contrast_estimates(mm: &ModelMatrix, combos: &[u32], y: &[f64], effects: &[usize]) -> Vec<f64> {
    let mut ws = ContrastWorkspace::new(mm.size(), 1);
    ws.compute(combos, y);
    let scale = 2.0 / combos.len() as f64;
    effects
        .iter()
        .map(|&f| {
            let (sign, v) = ws.raw(mm, f);
            sign * v[0] * scale
        })
        .collect()
}

/// Two-sided test of the sharp null of no effect on any unit, per effect,
/// with the reference distribution built only from accepted allocations.
/// `p = (1 + #{|theta*| >= |theta_obs|}) / (1 + draws)`.
pub fn randomization_test(
    y_obs: &[f64],
    observed: &Allocation,
    rr: &Rerandomizer,
    effects: &[usize],
    opts: &TestOptions,
) -> Result<RandomizationTestResult> {
    if opts.reference_draws < 100 {
        return Err(Error::InvalidArgument(format!(
            "at least 100 reference draws required, got {}",
            opts.reference_draws
        )));
    }
    let n = rr.spec().units();
    if y_obs.len() != n {
        return Err(Error::DimensionMismatch {
            what: "outcome length",
            expected: n,
            found: y_obs.len(),
        });
    }
    if observed.spec() != rr.spec() {
        return Err(Error::InvalidArgument("observed allocation uses a different design".into()));
    }
    if effects.is_empty() {
        return Err(Error::InvalidArgument("no effects to test".into()));
    }
    let mm = rr.model();
    if let Some(&f) = effects.iter().find(|&&f| f == 0 || f >= mm.size()) {
        return Err(Error::NotAnEffect(f));
    }
    let mut ws = rr.scorer().workspace();
    if !rr.accepts(observed.combinations(), &mut ws) {
        return Err(Error::ObservedAllocationRejected);
    }
    let observed_est = contrast_estimates(mm, observed.combinations(), y_obs, effects);
    let seeder = StreamSeeder::new(opts.seed);
    let (found, scanned) = rr.scan(
        &seeder,
        Purpose::ReferenceDraws,
        opts.workers,
        opts.max_draws,
        opts.reference_draws,
        |c| contrast_estimates(mm, c, y_obs, effects),
    )?;
    if found.len() < opts.reference_draws {
        return Err(Error::MaxDrawsExceeded {
            max_draws: opts.max_draws,
        });
    }
    let y_scale = y_obs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * y_scale;
    let draws = found.len();
    let tests = effects
        .iter()
        .enumerate()
        .map(|(k, &f)| {
            let obs = observed_est[k];
            let mut null: Vec<f64> = found.iter().map(|(_, est)| est[k]).collect();
            let extreme = null.iter().filter(|v| v.abs() >= obs.abs() - tol).count();
            null.sort_by(f64::total_cmp);
            EffectTest {
                effect: f,
                estimate: obs,
                p_value: (1 + extreme) as f64 / (1 + draws) as f64,
                reference_draws: draws,
                null: summarize(&null),
            }
        })
        .collect();
    Ok(RandomizationTestResult {
        effects: tests,
        draws_scanned: scanned,
        seed: opts.seed,
    })
}

fn summarize(sorted: &[f64]) -> NullSummary {
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    NullSummary {
        mean,
        sd: var.sqrt(),
        min: sorted[0],
        q025: crate::simlab::quantile_sorted(sorted, 0.025),
        q975: crate::simlab::quantile_sorted(sorted, 0.975),
        max: sorted[sorted.len() - 1],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criteria::{resolve_thresholds, Tier};
    use crate::streams::StreamSeeder;
    use rand_distr::StandardNormal;

    fn normal_covariates(n: usize, p: usize, seed: u64) -> CovariateMatrix {
        let mut rng = StreamSeeder::new(seed).stream(Purpose::Synthetic, 0);
        let data = (0..n * p).map(|_| rng.sample(StandardNormal)).collect();
        CovariateMatrix::new((0..p).map(|k| format!("x{k}")).collect(), data).unwrap()
    }

    fn all_effects_rule(spec: &DesignSpec, p: usize, a: f64) -> AcceptanceRule {
        let effects = (1..spec.combinations()).collect();
        resolve_thresholds(vec![Tier::threshold("all", effects, a)], p).unwrap()
    }

    #[test]
    fn infinite_thresholds_accept_the_first_draw() {
        let spec = DesignSpec::new(3, 4).unwrap();
        let x = normal_covariates(32, 2, 1);
        let rr = Rerandomizer::new(&x, &spec, all_effects_rule(&spec, 2, f64::INFINITY)).unwrap();
        let res = rr.run(&RunOptions::new(5)).unwrap();
        assert_eq!(res.draws_attempted, 1);
        assert!(accept(&res.profile, rr.rule()).unwrap());
    }

    #[test]
    fn impossible_thresholds_exhaust_max_draws() {
        let spec = DesignSpec::new(2, 4).unwrap();
        let x = normal_covariates(16, 2, 2);
        let rr = Rerandomizer::new(&x, &spec, all_effects_rule(&spec, 2, 1e-12)).unwrap();
        assert!(matches!(
            rr.run(&RunOptions::new(1).max_draws(1)),
            Err(Error::MaxDrawsExceeded { max_draws: 1 })
        ));
        assert!(rr.preflight(1).is_some());
    }

    #[test]
    fn accepted_allocation_is_balanced_and_passes() {
        let spec = DesignSpec::new(3, 4).unwrap();
        let x = normal_covariates(32, 3, 3);
        let rule = resolve_thresholds(vec![Tier::joint("all", (1..8).collect(), 0.05)], 3).unwrap();
        let rr = Rerandomizer::new(&x, &spec, rule).unwrap();
        let res = rr.run(&RunOptions::new(11)).unwrap();
        Allocation::from_combinations(&spec, res.allocation.combinations().to_vec()).unwrap();
        assert!(accept(&res.profile, rr.rule()).unwrap());
        assert_eq!(res.allocation.origin().unwrap().draw_index + 1, res.draws_attempted);
    }

    #[test]
    fn worker_count_does_not_change_the_result() {
        let spec = DesignSpec::new(3, 4).unwrap();
        let x = normal_covariates(32, 3, 4);
        let rule = resolve_thresholds(vec![Tier::joint("all", (1..8).collect(), 0.01)], 3).unwrap();
        let rr = Rerandomizer::new(&x, &spec, rule).unwrap();
        let one = rr.run(&RunOptions::new(77)).unwrap();
        let again = rr.run(&RunOptions::new(77)).unwrap();
        let four = rr.run(&RunOptions::new(77).workers(4)).unwrap();
        assert_eq!(one.allocation, again.allocation);
        assert_eq!(one.allocation, four.allocation);
        assert_eq!(one.draws_attempted, four.draws_attempted);
    }

    #[test]
    fn estimates_by_hand() {
        let spec = DesignSpec::new(2, 1).unwrap();
        let mm = ModelMatrix::for_design(&spec);
        let alloc = Allocation::from_combinations(&spec, vec![0, 1, 2, 3]).unwrap();
        let w = expand_assignment(&alloc, &mm).unwrap();
        let est = estimate_effects(&[1.0, 2.0, 3.0, 4.0], &w, &[1, 2, 3]).unwrap();
        let values: Vec<f64> = est.entries.iter().map(|e| e.estimate).collect();
        assert_eq!(values, vec![2.0, 1.0, 0.0]);
        let a = est.get(1).unwrap();
        assert_eq!(a.mean_high - a.mean_low, a.estimate);

        let flat = estimate_effects(&[5.0; 4], &w, &[1, 2, 3]).unwrap();
        assert!(flat.entries.iter().all(|e| e.estimate == 0.0));

        // negating every column negates every estimate
        let neg = estimate_effects(&[1.0, 2.0, 3.0, 4.0], &w.negated(), &[1, 2, 3]).unwrap();
        for (x, y) in est.entries.iter().zip(&neg.entries) {
            assert_eq!(x.estimate, -y.estimate);
        }
        assert!(estimate_effects(&[1.0; 3], &w, &[1]).is_err());
        assert!(estimate_effects(&[1.0; 4], &w, &[0]).is_err());
    }

    #[test]
    fn fast_estimates_match_inner_products() {
        let spec = DesignSpec::new(3, 3).unwrap();
        let mm = ModelMatrix::for_design(&spec);
        let mut rng = StreamSeeder::new(8).stream(Purpose::Allocation, 0);
        let alloc = crate::assignment::random_allocation(&spec, &mut rng);
        let y: Vec<f64> = (0..24).map(|_| rng.sample(StandardNormal)).collect();
        let w = expand_assignment(&alloc, &mm).unwrap();
        let effects: Vec<usize> = (1..8).collect();
        let direct = estimate_effects(&y, &w, &effects).unwrap();
        let fast = contrast_estimates(&mm, alloc.combinations(), &y, &effects);
        for (d, f) in direct.entries.iter().zip(&fast) {
            assert!((d.estimate - f).abs() < 1e-13);
            assert!((d.mean_high - d.mean_low - d.estimate).abs() < 1e-13);
        }
    }

    #[test]
    fn constant_outcomes_give_p_one() {
        let spec = DesignSpec::new(2, 4).unwrap();
        let x = normal_covariates(16, 2, 9);
        let rule = resolve_thresholds(vec![Tier::joint("mains", vec![1, 2], 0.5)], 2).unwrap();
        let rr = Rerandomizer::new(&x, &spec, rule).unwrap();
        let observed = rr.run(&RunOptions::new(3)).unwrap().allocation;
        let res = randomization_test(&[0.7; 16], &observed, &rr, &[1, 2, 3], &TestOptions::new(4, 200)).unwrap();
        for e in &res.effects {
            assert_eq!(e.p_value, 1.0);
            assert_eq!(e.reference_draws, 200);
        }
    }

    #[test]
    fn randomization_test_preconditions() {
        let spec = DesignSpec::new(2, 4).unwrap();
        let x = normal_covariates(16, 2, 10);
        let rule = resolve_thresholds(vec![Tier::threshold("mains", vec![1, 2], 0.5)], 2).unwrap();
        let rr = Rerandomizer::new(&x, &spec, rule).unwrap();
        let observed = rr.run(&RunOptions::new(3)).unwrap().allocation;
        assert!(randomization_test(&[0.0; 16], &observed, &rr, &[1], &TestOptions::new(1, 99)).is_err());
        assert!(randomization_test(&[0.0; 15], &observed, &rr, &[1], &TestOptions::new(1, 100)).is_err());
        // find an allocation the rule rejects
        let mut rng = StreamSeeder::new(12).stream(Purpose::Allocation, 0);
        let mut ws = rr.scorer().workspace();
        let rejected = loop {
            let a = crate::assignment::random_allocation(&spec, &mut rng);
            if !rr.accepts(a.combinations(), &mut ws) {
                break a;
            }
        };
        assert!(matches!(
            randomization_test(&[0.0; 16], &rejected, &rr, &[1], &TestOptions::new(1, 100)),
            Err(Error::ObservedAllocationRejected)
        ));
    }
}
