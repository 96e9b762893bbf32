//! Synthetic school-level covariates shaped like a 32-arm education study:
//! 1376 schools, nine balance covariates plus two extra report columns.
//!
//! The data are synthetic. Marginals: lognormal enrollment counts, Dirichlet
//! race shares, logit-normal rates, tied together by a Gaussian copula.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::balance::CovariateMatrix;
use crate::criteria::Tier;
use crate::design::{DesignSpec, ModelMatrix};
use crate::error::Result;

pub const NYDE_REPLICATES: usize = 43;

/// Balance covariates, in column order.
pub const NYDE_MONITORED: [&str; 9] = [
    "total_students",
    "share_asian",
    "share_black",
    "share_hispanic",
    "share_white",
    "share_multiracial",
    "share_female",
    "enrollment_rate",
    "poverty_rate",
];

const TEACHERS: &str = "teachers";
const TEMPORARY_HOUSING: &str = "temporary_housing";
const TEACHER_R2: f64 = 0.95;
const HOUSING_R2: f64 = 0.1;

pub fn nyde_spec() -> DesignSpec {
    DesignSpec::new(5, NYDE_REPLICATES).expect("valid design")
}

/// Main effects jointly at 1% and two-way interactions jointly at 10%.
pub fn nyde_tiers(mm: &ModelMatrix) -> Vec<Tier> {
    vec![
        Tier::joint("main", mm.effects_of_order(1), 0.01),
        Tier::joint("two_way", mm.effects_of_order(2), 0.1),
    ]
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// 1376 x 11: [`NYDE_MONITORED`] then `teachers` (squared correlation near
/// 0.95 with `total_students`) and `temporary_housing` (near 0.1 with the
/// latent poverty factor).
pub fn synthetic_nyde<R: Rng + ?Sized>(rng: &mut R) -> Result<CovariateMatrix> {
    let n = 32 * NYDE_REPLICATES;
    // race shape parameters: asian, black, hispanic, white, multiracial, other
    let alphas = [1.2, 2.5, 3.0, 1.5, 0.4, 0.3];
    let gammas: Vec<Gamma<f64>> = alphas.iter().map(|&a| Gamma::new(a, 1.0).expect("valid gamma")).collect();

    let mut students = Vec::with_capacity(n);
    let mut shares = vec![Vec::with_capacity(n); 5];
    let mut female = Vec::with_capacity(n);
    let mut enrollment = Vec::with_capacity(n);
    let mut poverty = Vec::with_capacity(n);
    let mut poverty_latent = Vec::with_capacity(n);
    for _ in 0..n {
        let z: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        // copula: size, female, poverty, enrollment (poverty lowers enrollment)
        let z_size = z[0];
        let z_female = 0.1 * z[0] + (1.0f64 - 0.01).sqrt() * z[1];
        let z_pov = -0.2 * z[0] + (1.0f64 - 0.04).sqrt() * z[2];
        let z_enr = -0.35 * z_pov + (1.0f64 - 0.1225).sqrt() * z[3];
        students.push((6.3 + 0.55 * z_size).exp().round().max(20.0));
        female.push(logistic(0.0 + 0.12 * z_female));
        enrollment.push(logistic(2.6 + 0.45 * z_enr));
        poverty.push(logistic(0.9 + 0.8 * z_pov));
        poverty_latent.push(z_pov);

        let g: Vec<f64> = gammas.iter().map(|d| d.sample(rng)).collect();
        let total: f64 = g.iter().sum();
        for (col, v) in shares.iter_mut().zip(&g) {
            col.push(v / total);
        }
    }

    // teachers = students / 14 + noise sized for the target squared correlation
    let mean_s = students.iter().sum::<f64>() / n as f64;
    let var_ratio = students.iter().map(|s| (s / 14.0 - mean_s / 14.0).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let teacher_sd = (var_ratio * (1.0 - TEACHER_R2) / TEACHER_R2).sqrt();
    let teachers: Vec<f64> = students
        .iter()
        .map(|s| (s / 14.0 + teacher_sd * rng.sample::<f64, _>(StandardNormal)).round().max(1.0))
        .collect();
    let rho = HOUSING_R2.sqrt();
    let housing: Vec<f64> = poverty_latent
        .iter()
        .map(|&zp| {
            let e: f64 = rng.sample(StandardNormal);
            (30.0 + 10.0 * (rho * zp + (1.0 - HOUSING_R2).sqrt() * e)).round().max(0.0)
        })
        .collect();

    let mut columns = vec![students];
    columns.extend(shares);
    columns.extend([female, enrollment, poverty, teachers, housing]);
    let names = NYDE_MONITORED
        .iter()
        .copied()
        .chain([TEACHERS, TEMPORARY_HOUSING])
        .map(String::from)
        .collect();
    CovariateMatrix::from_columns(names, &columns)
}
