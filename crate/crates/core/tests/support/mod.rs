//! Shared oracles and property checks for the integration tests.
#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::Rng;
use rand_distr::StandardNormal;
use rerand_core::{
    accept, balance_profile, expand_assignment, fit_covariance, mean_difference, random_allocation, resolve_thresholds,
    Allocation, CovariateMatrix, DesignSpec, ModelMatrix, Purpose, RunOrder, StreamSeeder, Tier,
};

pub fn normal_covariates(n: usize, p: usize, seed: u64) -> CovariateMatrix {
    let mut rng = StreamSeeder::new(seed).stream(Purpose::Synthetic, 0);
    let data = (0..n * p).map(|_| rng.sample(StandardNormal)).collect();
    CovariateMatrix::new((0..p).map(|k| format!("x{k}")).collect(), data).unwrap()
}

/// `Gamma(k/2)` from the recurrences at 1 and 1/2.
fn gamma_half(k: usize) -> f64 {
    let (mut g, mut s) = if k % 2 == 0 { (1.0, 1.0) } else { (std::f64::consts::PI.sqrt(), 0.5) };
    while s < k as f64 / 2.0 {
        g *= s;
        s += 1.0;
    }
    g
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
}

/// Chi-squared CDF by adaptive Simpson quadrature of the density after the
/// substitution `t = s^2`, which removes the singularity at zero for one
/// degree of freedom.
pub fn chi2_cdf_quadrature(k: usize, x: f64) -> f64 {
    let norm = 2.0f64.powf(k as f64 / 2.0) * gamma_half(k);
    let f = move |s: f64| 2.0 * s.powi(k as i32 - 1) * (-s * s / 2.0).exp() / norm;
    let b = x.sqrt();
    // split into panels so the adaptive rule sees the peak
    let panels = 16;
    (0..panels)
        .map(|i| {
            let lo = b * i as f64 / panels as f64;
            let hi = b * (i + 1) as f64 / panels as f64;
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            simpson(&f, lo, hi, fa, fm, fb, whole, 1e-15, 40)
        })
        .sum()
}

pub fn order_strategy() -> impl Strategy<Value = RunOrder> {
    prop_oneof![Just(RunOrder::Lexicographic), Just(RunOrder::Yates)]
}

/// Every drawn allocation is balanced and its effect columns are
/// orthogonal with zero sums.
pub fn check_allocation_balance(k: usize, r: usize, order: RunOrder, seed: u64) -> Result<(), TestCaseError> {
    let spec = DesignSpec::new(k, r).unwrap().with_order(order);
    let mm = ModelMatrix::for_design(&spec);
    let mut rng = StreamSeeder::new(seed).stream(Purpose::Allocation, 0);
    let alloc = random_allocation(&spec, &mut rng);
    let mut counts = vec![0usize; spec.combinations()];
    for &c in alloc.combinations() {
        counts[c as usize] += 1;
    }
    prop_assert!(counts.iter().all(|&c| c == r));
    let w = expand_assignment(&alloc, &mm).unwrap();
    let n = spec.units() as i64;
    for f in mm.effect_ids() {
        prop_assert_eq!(w.column(f).map(i64::from).sum::<i64>(), 0);
        for g in mm.effect_ids() {
            let dot: i64 = w.column(f).zip(w.column(g)).map(|(a, b)| i64::from(a) * i64::from(b)).sum();
            prop_assert_eq!(dot, if f == g { n } else { 0 });
        }
    }
    Ok(())
}

/// `G^T G = 2^K I` in integer arithmetic.
pub fn check_model_orthogonality(k: usize, order: RunOrder) -> Result<(), TestCaseError> {
    let mm = ModelMatrix::for_design(&DesignSpec::new(k, 1).unwrap().with_order(order));
    let size = mm.size();
    let cols: Vec<Vec<i8>> = (0..size).map(|f| mm.column(f)).collect();
    for a in 0..size {
        for b in a..size {
            let dot: i64 = cols[a].iter().zip(&cols[b]).map(|(x, y)| i64::from(*x) * i64::from(*y)).sum();
            prop_assert_eq!(dot, if a == b { size as i64 } else { 0 });
        }
    }
    Ok(())
}

/// `d_f` equals the difference of direct group means, to 1e-12.
pub fn check_mean_difference_identity(k: usize, r: usize, p: usize, seed: u64) -> Result<(), TestCaseError> {
    let spec = DesignSpec::new(k, r).unwrap();
    let mm = ModelMatrix::for_design(&spec);
    let x = normal_covariates(spec.units(), p, seed);
    let mut rng = StreamSeeder::new(seed).stream(Purpose::Allocation, 1);
    let alloc = random_allocation(&spec, &mut rng);
    let w = expand_assignment(&alloc, &mm).unwrap();
    let cm = fit_covariance(&x).unwrap();
    let effects: Vec<usize> = mm.effect_ids().collect();
    let fast = rerand_core::BalanceScorer::new(&x, &mm, spec.units())
        .unwrap()
        .profile(alloc.combinations(), &effects);
    let direct_profile = balance_profile(&x, &cm, &w, &effects).unwrap();
    for f in mm.effect_ids() {
        let d = mean_difference(&x, &w, f).unwrap();
        for c in 0..p {
            let (mut hi, mut lo, mut nh, mut nl) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..spec.units() {
                if w.get(i, f) > 0 {
                    hi += x.get(i, c);
                    nh += 1.0;
                } else {
                    lo += x.get(i, c);
                    nl += 1.0;
                }
            }
            let group = hi / nh - lo / nl;
            prop_assert!((d[c] - group).abs() <= 1e-12, "f={} c={} {} vs {}", f, c, d[c], group);
            prop_assert!((fast.get(f).unwrap().mean_difference[c] - group).abs() <= 1e-12);
        }
        let (m_fast, m_direct) = (fast.distance(f).unwrap(), direct_profile.distance(f).unwrap());
        prop_assert!((m_fast - m_direct).abs() <= 1e-10 * (1.0 + m_direct));
    }
    Ok(())
}

/// `M_f` is unchanged by `X -> X A + b` with invertible `A`, to 1e-8 relative.
pub fn check_affine_invariance(k: usize, r: usize, p: usize, seed: u64, a: Vec<f64>, shift: Vec<f64>) -> Result<(), TestCaseError> {
    let spec = DesignSpec::new(k, r).unwrap();
    let mm = ModelMatrix::for_design(&spec);
    let x = normal_covariates(spec.units(), p, seed);
    // diagonal dominance keeps A well conditioned
    let a: Vec<f64> = (0..p * p).map(|i| a[i] + if i / p == i % p { 3.0 } else { 0.0 }).collect();
    let mut data = Vec::with_capacity(spec.units() * p);
    for i in 0..spec.units() {
        for col in 0..p {
            data.push((0..p).map(|j| x.get(i, j) * a[j * p + col]).sum::<f64>() + shift[col]);
        }
    }
    let y = CovariateMatrix::new(x.names().to_vec(), data).unwrap();
    let mut rng = StreamSeeder::new(seed).stream(Purpose::Allocation, 2);
    let alloc = random_allocation(&spec, &mut rng);
    let w = expand_assignment(&alloc, &mm).unwrap();
    let effects: Vec<usize> = mm.effect_ids().collect();
    let before = balance_profile(&x, &fit_covariance(&x).unwrap(), &w, &effects).unwrap();
    let after = balance_profile(&y, &fit_covariance(&y).unwrap(), &w, &effects).unwrap();
    for f in effects {
        let (m0, m1) = (before.distance(f).unwrap(), after.distance(f).unwrap());
        prop_assert!((m0 - m1).abs() <= 1e-8 * m0.max(1e-300), "f={} {} vs {}", f, m0, m1);
    }
    Ok(())
}

/// Negating every column of the assignment leaves each `M_f` and the
/// acceptance decision unchanged; so does the mirror allocation.
pub fn check_negation_symmetry(k: usize, r: usize, p: usize, seed: u64, q: f64) -> Result<(), TestCaseError> {
    let spec = DesignSpec::new(k, r).unwrap();
    let mm = ModelMatrix::for_design(&spec);
    let x = normal_covariates(spec.units(), p, seed);
    let cm = fit_covariance(&x).unwrap();
    let effects: Vec<usize> = mm.effect_ids().collect();
    let rule = resolve_thresholds(vec![Tier::joint("all", effects.clone(), q)], p).unwrap();
    let mut rng = StreamSeeder::new(seed).stream(Purpose::Allocation, 3);
    let alloc = random_allocation(&spec, &mut rng);
    let w = expand_assignment(&alloc, &mm).unwrap();
    let pos = balance_profile(&x, &cm, &w, &effects).unwrap();
    let neg = balance_profile(&x, &cm, &w.negated(), &effects).unwrap();
    for f in &effects {
        prop_assert_eq!(pos.distance(*f), neg.distance(*f));
    }
    prop_assert_eq!(accept(&pos, &rule).unwrap(), accept(&neg, &rule).unwrap());
    let mirrored: Allocation = alloc.negate(&mm);
    let wm = expand_assignment(&mirrored, &mm).unwrap();
    let mir = balance_profile(&x, &cm, &wm, &effects).unwrap();
    for f in &effects {
        let (a, b) = (pos.distance(*f).unwrap(), mir.distance(*f).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
    }
    Ok(())
}
