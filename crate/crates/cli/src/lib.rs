//! Command-line workflows: design export, allocation, diagnostics,
//! randomization tests, simulation studies and threshold calibration.
//!
//! Settings come from a TOML config file; command-line flags override the
//! file, which overrides built-in defaults.

pub mod config;
pub mod error;
pub mod input;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rerand_core::engine::{effect_records, tier_records, DEFAULT_MAX_DRAWS};
use rerand_core::simlab::{self, StudyOptions};
use rerand_core::{
    estimate_effects, expand_assignment, randomization_test, resolve_thresholds, AcceptanceRule, Allocation,
    BalanceScorer, CovariateMatrix, DesignSpec, ModelMatrix, Purpose, Rerandomizer, RunOptions, RunOrder,
    StreamSeeder, TestOptions, ThresholdMode,
};
use serde::Serialize;

use crate::config::{RunConfig, DEFAULT_CALIBRATION_DRAWS};
pub use crate::error::{exit, CliError};
use crate::input::{read_outcomes, Table};

#[derive(Debug, Parser)]
#[command(name = "rerand", version, about = "Rerandomization for balanced 2^K factorial designs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OrderArg {
    Lexicographic,
    Yates,
}

impl From<OrderArg> for RunOrder {
    fn from(o: OrderArg) -> Self {
        match o {
            OrderArg::Lexicographic => RunOrder::Lexicographic,
            OrderArg::Yates => RunOrder::Yates,
        }
    }
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub max_draws: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the labeled model matrix of a 2^K design.
    Design {
        #[arg(long)]
        factors: Option<usize>,
        #[arg(long, value_enum)]
        order: Option<OrderArg>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long, short)]
        config: Option<PathBuf>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw an accepted allocation and write it with a run manifest.
    Allocate(Common),
    /// Report the balance of an existing allocation.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        allocation: PathBuf,
    },
    /// Randomization test of the sharp null using accepted allocations only.
    Test {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        allocation: PathBuf,
        #[arg(long)]
        outcomes: PathBuf,
        #[arg(long)]
        outcome_column: Option<String>,
        /// Effects to test, comma separated; all effects when absent.
        #[arg(long, value_delimiter = ',')]
        effects: Vec<String>,
        /// Accepted reference allocations.
        #[arg(long, default_value_t = 999)]
        draws: usize,
    },
    /// Compare rerandomization with pure randomization by simulation.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Calibrate empirical thresholds for the configured tiers.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        draws: Option<usize>,
    },
    /// Write a synthetic 1376-school covariate file.
    Synth {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Resolved settings shared by the data-driven commands.
struct Session {
    cfg: RunConfig,
    spec: DesignSpec,
    mm: ModelMatrix,
    seed: u64,
    workers: usize,
    max_draws: u64,
    output_dir: PathBuf,
}

impl Session {
    fn open(common: &Common) -> Result<Self, CliError> {
        let cfg = RunConfig::load(&common.config)?;
        let spec = cfg.design_spec()?;
        let mm = ModelMatrix::for_design(&spec);
        let seed = match common.seed.or(cfg.seed) {
            Some(s) => s,
            None => {
                let s = rand::random::<u64>();
                eprintln!("seed: {s}");
                s
            }
        };
        let workers = common.workers.or(cfg.workers).unwrap_or(1);
        if workers == 0 {
            return Err(CliError::Usage("workers must be at least 1".into()));
        }
        let output_dir = common
            .output_dir
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self {
            max_draws: common.max_draws.or(cfg.max_draws).unwrap_or(DEFAULT_MAX_DRAWS),
            cfg,
            spec,
            mm,
            seed,
            workers,
            output_dir,
        })
    }

    fn table(&self) -> Result<Table, CliError> {
        let cov = self.cfg.covariates()?;
        let table = Table::read(&cov.path, cov.delimiter)?;
        if table.rows() != self.spec.units() {
            return Err(rerand_core::Error::DimensionMismatch {
                what: "covariate rows",
                expected: self.spec.units(),
                found: table.rows(),
            }
            .into());
        }
        Ok(table)
    }

    fn balance_columns(&self, table: &Table) -> Result<Vec<String>, CliError> {
        Ok(self.cfg.covariates()?.columns.clone().unwrap_or_else(|| table.names.clone()))
    }

    fn covariates(&self) -> Result<CovariateMatrix, CliError> {
        let table = self.table()?;
        table.select(&self.balance_columns(&table)?)
    }

    /// Chi-squared rules resolve directly; empirical rules calibrate on a
    /// stream derived from the run seed.
    fn rule(&self, x: &CovariateMatrix) -> Result<AcceptanceRule, CliError> {
        let rc = self.cfg.rule()?;
        let tiers = rc.tiers(&self.mm)?;
        Ok(match rc.mode {
            ThresholdMode::ChiSquared => resolve_thresholds(tiers, x.covariates())?,
            ThresholdMode::Empirical => simlab::calibrated_rule(
                &self.spec,
                x,
                tiers,
                rc.calibration_draws.unwrap_or(DEFAULT_CALIBRATION_DRAWS),
                self.calibration_seed(),
                self.workers,
            )?,
        })
    }

    fn calibration_seed(&self) -> u64 {
        StreamSeeder::new(self.seed).child(Purpose::Calibration, 0).master()
    }

    fn output(&self, name: &str) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.output_dir)
            .map_err(|e| CliError::Io(format!("{}: {e}", self.output_dir.display())))?;
        Ok(self.output_dir.join(name))
    }

    fn read_allocation(&self, path: &Path) -> Result<Allocation, CliError> {
        let file = fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(Allocation::read_csv(&self.spec, file)?)
    }
}

fn create(path: &Path) -> Result<fs::File, CliError> {
    fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Design {
            factors,
            order,
            replicates,
            config,
            out,
        } => cmd_design(factors, order, replicates, config, out),
        Command::Allocate(common) => cmd_allocate(&common),
        Command::Diagnose { common, allocation } => cmd_diagnose(&common, &allocation),
        Command::Test {
            common,
            allocation,
            outcomes,
            outcome_column,
            effects,
            draws,
        } => cmd_test(&common, &allocation, &outcomes, outcome_column.as_deref(), &effects, draws),
        Command::Simulate { common, replications } => cmd_simulate(&common, replications),
        Command::Calibrate { common, draws } => cmd_calibrate(&common, draws),
        Command::Synth { seed, out } => cmd_synth(seed, &out),
    }
}

fn cmd_design(
    factors: Option<usize>,
    order: Option<OrderArg>,
    replicates: Option<usize>,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut design = match &config {
        Some(path) => RunConfig::load(path)?.design,
        None => config::DesignConfig {
            replicates: 1,
            ..Default::default()
        },
    };
    if let Some(r) = replicates {
        design.replicates = r;
    }
    if let Some(k) = factors {
        design.factors = k;
    }
    if let Some(o) = order {
        design.order = o.into();
    }
    if design.factors == 0 && factors.is_none() && config.is_none() {
        return Err(CliError::Usage("give --factors or --config".into()));
    }
    let cfg = RunConfig {
        design,
        ..Default::default()
    };
    let mm = ModelMatrix::for_design(&cfg.design_spec()?);
    match out {
        Some(path) => mm.write_table(create(&path)?)?,
        None => mm.write_table(std::io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_allocate(common: &Common) -> Result<(), CliError> {
    let s = Session::open(common)?;
    let x = s.covariates()?;
    let rule = s.rule(&x)?;
    let rr = Rerandomizer::new(&x, &s.spec, rule)?;
    if let Some(warning) = rr.preflight(s.max_draws) {
        eprintln!("warning: {warning}");
    }
    let res = rr.run(&RunOptions::new(s.seed).max_draws(s.max_draws).workers(s.workers))?;
    res.allocation.write_csv(create(&s.output("allocation.csv")?)?)?;
    res.profile
        .write_csv(&s.mm, x.names(), create(&s.output("balance.csv")?)?)?;
    write_json(&s.output("manifest.json")?, &res.manifest(&rr, s.max_draws))?;
    println!(
        "accepted draw {} of seed {} after {} draws ({:.3}s)",
        res.draws_attempted - 1,
        s.seed,
        res.draws_attempted,
        res.elapsed.as_secs_f64()
    );
    for t in tier_records(rr.rule(), &s.mm) {
        match t.joint_prob {
            Some(q) => println!("tier {}: joint q = {q}, per-effect q = {:.6}, a = {:.6}", t.name, t.per_effect_prob.unwrap(), t.threshold),
            None => println!("tier {}: a = {:.6}", t.name, t.threshold),
        }
    }
    println!("wrote {}", s.output_dir.display());
    Ok(())
}

#[derive(Serialize)]
struct DiagnoseReport {
    covariates: Vec<String>,
    accepted: Option<bool>,
    effects: Vec<rerand_core::engine::EffectRecord>,
}

fn cmd_diagnose(common: &Common, allocation: &Path) -> Result<(), CliError> {
    let s = Session::open(common)?;
    let x = s.covariates()?;
    let alloc = s.read_allocation(allocation)?;
    let scorer = BalanceScorer::new(&x, &s.mm, s.spec.units())?;
    let effects: Vec<usize> = s.mm.effect_ids().collect();
    let profile = scorer.profile(alloc.combinations(), &effects);
    let rule = match &s.cfg.rule {
        Some(_) => Some(s.rule(&x)?),
        None => None,
    };
    let no_rule = resolve_thresholds(Vec::new(), x.covariates())?;
    let records = effect_records(&profile, rule.as_ref().unwrap_or(&no_rule), &s.mm);
    let accepted = match &rule {
        Some(r) => Some(rerand_core::accept(&profile, r)?),
        None => None,
    };
    profile.write_csv(&s.mm, x.names(), create(&s.output("balance.csv")?)?)?;
    write_json(
        &s.output("diagnose.json")?,
        &DiagnoseReport {
            covariates: x.names().to_vec(),
            accepted,
            effects: records.clone(),
        },
    )?;
    for r in &records {
        let verdict = match r.pass {
            Some(true) => "pass",
            Some(false) => "FAIL",
            None => "-",
        };
        match r.threshold {
            Some(a) => println!("{:>10}  M = {:<14.6} a = {:<12.6} {verdict}", r.effect, r.mahalanobis, a),
            None => println!("{:>10}  M = {:<14.6}", r.effect, r.mahalanobis),
        }
    }
    if let Some(ok) = accepted {
        println!("rule {}", if ok { "satisfied" } else { "violated" });
    }
    Ok(())
}

#[derive(Serialize)]
struct PValueRow<'a> {
    effect: &'a str,
    estimate: f64,
    mean_high: f64,
    mean_low: f64,
    p_value: f64,
    reference_draws: usize,
    null_mean: f64,
    null_sd: f64,
    null_q025: f64,
    null_q975: f64,
}

fn cmd_test(
    common: &Common,
    allocation: &Path,
    outcomes: &Path,
    column: Option<&str>,
    effect_names: &[String],
    draws: usize,
) -> Result<(), CliError> {
    let s = Session::open(common)?;
    let x = s.covariates()?;
    let rule = s.rule(&x)?;
    let rr = Rerandomizer::new(&x, &s.spec, rule)?;
    let alloc = s.read_allocation(allocation)?;
    let delimiter = s.cfg.covariates.as_ref().map_or(',', |c| c.delimiter);
    let y = read_outcomes(outcomes, column, delimiter)?;
    let effects = s.mm.resolve_effects(effect_names)?;
    let mut opts = TestOptions::new(s.seed, draws);
    opts.workers = s.workers;
    if common.max_draws.is_some() || s.cfg.max_draws.is_some() {
        opts.max_draws = s.max_draws;
    }
    let res = randomization_test(&y, &alloc, &rr, &effects, &opts)?;
    let w = expand_assignment(&alloc, &s.mm)?;
    let est = estimate_effects(&y, &w, &effects)?;
    let mut out = csv::Writer::from_writer(create(&s.output("pvalues.csv")?)?);
    for t in &res.effects {
        let e = est.get(t.effect).expect("estimated effect");
        out.serialize(PValueRow {
            effect: s.mm.label(t.effect),
            // Adding zero turns -0.0 into 0.0.
            estimate: t.estimate + 0.0,
            mean_high: e.mean_high,
            mean_low: e.mean_low,
            p_value: t.p_value,
            reference_draws: t.reference_draws,
            null_mean: t.null.mean,
            null_sd: t.null.sd,
            null_q025: t.null.q025,
            null_q975: t.null.q975,
        })?;
        println!("{:>10}  estimate {:<12.6} p = {:.4}", s.mm.label(t.effect), t.estimate, t.p_value);
    }
    out.flush()?;
    Ok(())
}

fn cmd_simulate(common: &Common, replications: Option<usize>) -> Result<(), CliError> {
    let s = Session::open(common)?;
    let sim = s.cfg.simulate.clone().unwrap_or_default();
    let table = s.table()?;
    let balance = s.balance_columns(&table)?;
    let x = table.select(&balance)?;
    let mut report_names = balance.clone();
    report_names.extend(sim.report_columns.iter().filter(|c| !balance.contains(c)).cloned());
    let report = table.select(&report_names)?;
    let rule = s.rule(&x)?;
    let model = sim.outcome.as_ref().map(|o| o.model(&s.mm)).transpose()?;
    let mut opts = StudyOptions::new(s.seed, replications.unwrap_or(sim.replications)).workers(s.workers);
    opts.max_draws = s.max_draws;
    let study = simlab::variance_study(&s.spec, &x, Some(&report), &rule, model.as_ref(), &opts)?;
    write_json(&s.output("study_report.json")?, &study)?;
    study.write_plot_csv(create(&s.output("percent_reduction.csv")?)?)?;
    study.write_long_csv(create(&s.output("study_table.csv")?)?)?;
    if sim.independence_draws > 0 {
        let ind = simlab::independence_study(&s.spec, &x, &rule, sim.independence_draws, s.seed, s.workers)?;
        write_json(&s.output("independence.json")?, &ind)?;
    }
    println!(
        "{} replications, mean draws per acceptance {:.1}; wrote {}",
        study.replications,
        study.mean_draws_per_acceptance,
        s.output_dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct CalibrationReport {
    seed: u64,
    draws: usize,
    covariates: Vec<String>,
    thresholds: BTreeMap<String, CalibratedThreshold>,
}

#[derive(Serialize)]
struct CalibratedThreshold {
    tier: String,
    per_effect_prob: f64,
    a: f64,
}

fn cmd_calibrate(common: &Common, draws: Option<usize>) -> Result<(), CliError> {
    let s = Session::open(common)?;
    let x = s.covariates()?;
    let rc = s.cfg.rule()?;
    let draws = draws.or(rc.calibration_draws).unwrap_or(DEFAULT_CALIBRATION_DRAWS);
    let tiers = rc.tiers(&s.mm)?;
    let targets = rerand_core::calibration_targets(&tiers)?;
    let a = simlab::calibrate_empirical_thresholds(&s.spec, &x, &targets, draws, s.calibration_seed(), s.workers)?;
    let thresholds = tiers
        .iter()
        .filter_map(|t| t.per_effect_probability().map(|q| (t, q)))
        .flat_map(|(t, q)| {
            let a = &a;
            let mm = &s.mm;
            t.effects.iter().map(move |f| {
                (
                    mm.label(*f).to_string(),
                    CalibratedThreshold {
                        tier: t.name.clone(),
                        per_effect_prob: q,
                        a: a[f],
                    },
                )
            })
        })
        .collect::<BTreeMap<_, _>>();
    for (effect, t) in &thresholds {
        println!("{effect:>10}  q = {:.6}  a = {:.6}", t.per_effect_prob, t.a);
    }
    write_json(
        &s.output("thresholds.json")?,
        &CalibrationReport {
            seed: s.seed,
            draws,
            covariates: x.names().to_vec(),
            thresholds,
        },
    )?;
    Ok(())
}

fn cmd_synth(seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let seed = seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("seed: {s}");
        s
    });
    let mut rng = StreamSeeder::new(seed).stream(Purpose::Synthetic, 0);
    let x = simlab::synthetic_nyde(&mut rng)?;
    let mut w = csv::Writer::from_writer(create(out)?);
    w.write_record(x.names())?;
    for i in 0..x.units() {
        w.write_record(x.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
