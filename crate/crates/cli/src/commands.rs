//! The three subcommands.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use lionsderiv::estimator::{AtomFailure, EstimatorError, SchedulePolicy};
use lionsderiv::io::{parse_sample, write_grid_csv, write_study_csv};
use lionsderiv::measure::MeasureError;
use lionsderiv::verify::{
    check_against_oracle, check_law_invariance, check_lemma2_all_atoms, check_structure, convergence_study,
    DEFAULT_FRACTIONS,
};
use lionsderiv::{
    lions_derivative_grid, refine_until_converged, EmpiricalSample, Functional, QuantizationLevel, Registry,
    Status, VerificationReport,
};
use serde::Serialize;
use serde_json::Value;

use crate::config::{self, RunConfig, DEFAULT_ESTIMATE_LEVELS, DEFAULT_LEVEL, DEFAULT_STUDY_LEVELS, DEFAULT_TOL};
use crate::CliError;

pub const EXIT_OK: u8 = 0;
pub const EXIT_NOT_CONVERGED: u8 = 3;
pub const EXIT_CHECK_FAILED: u8 = 4;

pub const STRUCTURE_DIRECTIONS: usize = 32;
pub const INVARIANCE_TRANSFORMS: usize = 20;

fn functional(cfg: &RunConfig) -> Result<Arc<dyn Functional>, CliError> {
    let spec = cfg
        .functional
        .as_ref()
        .ok_or_else(|| CliError::Config("no functional given".into()))?;
    Registry::with_builtins()
        .from_spec(spec)
        .map_err(|e| CliError::Config(e.to_string()))
}

fn input_path(cfg: &RunConfig) -> Result<&Path, CliError> {
    cfg.input
        .as_deref()
        .ok_or_else(|| CliError::Config("no input file given".into()))
}

fn load_sample(path: &Path) -> Result<EmpiricalSample, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    parse_sample(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn policy(cfg: &RunConfig) -> SchedulePolicy {
    SchedulePolicy {
        eps0: cfg.eps0,
        ratio: config::ratio(cfg),
        count: config::count(cfg),
        mode: cfg.mode.unwrap_or_default(),
    }
}

fn estimator_error(e: EstimatorError) -> CliError {
    match e {
        EstimatorError::InvalidConfig(_)
        | EstimatorError::InvalidSchedule(_)
        | EstimatorError::Measure(MeasureError::LevelTooFine(_)) => CliError::Config(e.to_string()),
        other => CliError::Input(other.to_string()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn level(n: u32) -> Result<QuantizationLevel, CliError> {
    QuantizationLevel::new(n).map_err(|e| CliError::Config(e.to_string()))
}

#[derive(Debug, Serialize)]
struct ScheduleInfo {
    eps0: Option<f64>,
    ratio: f64,
    count: usize,
    mode: lionsderiv::DifferenceMode,
}

impl From<&SchedulePolicy> for ScheduleInfo {
    fn from(p: &SchedulePolicy) -> Self {
        Self {
            eps0: p.eps0,
            ratio: p.ratio,
            count: p.count,
            mode: p.mode,
        }
    }
}

#[derive(Debug, Serialize)]
struct EstimateReport {
    functional: Value,
    input: PathBuf,
    schedule: ScheduleInfo,
    levels: Vec<u32>,
    distances: Vec<f64>,
    tol: Option<f64>,
    /// `None` for a single-level run.
    converged: Option<bool>,
    final_level: u32,
    atoms: usize,
    max_error_estimate: f64,
    failures: Vec<AtomFailure>,
}

/// Writes the grid CSV and the JSON report. Without `--out` the CSV goes
/// to stdout and the report to stderr.
pub fn estimate(cfg: &RunConfig) -> Result<u8, CliError> {
    let f = functional(cfg)?;
    let input = input_path(cfg)?;
    if cfg.level.is_some() && cfg.levels.is_some() {
        return Err(CliError::Config("give either level or levels, not both".into()));
    }
    let sample = load_sample(input)?;
    let policy = policy(cfg);

    let (est, levels, distances, tol, converged) = match cfg.level {
        Some(n) => {
            let lvl = level(n)?;
            let schedule = policy.schedule_for(lvl).map_err(estimator_error)?;
            let est = lions_derivative_grid(f.as_ref(), &sample, lvl, &schedule).map_err(estimator_error)?;
            (est, vec![n], Vec::new(), None, None)
        }
        None => {
            let range = cfg.levels.unwrap_or(DEFAULT_ESTIMATE_LEVELS);
            let tol = cfg.tol.unwrap_or(DEFAULT_TOL);
            let (est, rep) = refine_until_converged(f.as_ref(), &sample, tol, range.start, range.end, &policy)
                .map_err(estimator_error)?;
            (est, rep.levels, rep.distances, Some(tol), Some(rep.converged))
        }
    };

    let report = EstimateReport {
        functional: f.spec(),
        input: input.to_path_buf(),
        schedule: (&policy).into(),
        final_level: est.level().n(),
        levels,
        distances,
        tol,
        converged,
        atoms: est.len(),
        max_error_estimate: est.max_error_estimate(),
        failures: est.failures().to_vec(),
    };
    let csv = write_grid_csv(&est);
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    match &cfg.out {
        Some(out) => {
            write_file(out, &csv)?;
            write_file(&out.with_extension("json"), &json)?;
        }
        None => {
            print!("{csv}");
            eprint!("{json}");
        }
    }
    for failure in est.failures() {
        eprintln!("warning: atom {} at x = {}: {}", failure.index, failure.x, failure.reason);
    }
    Ok(if converged == Some(false) {
        EXIT_NOT_CONVERGED
    } else {
        EXIT_OK
    })
}

#[derive(Debug, Serialize)]
struct VerifyOutput {
    functional: Value,
    input: PathBuf,
    level: u32,
    seed: u64,
    schedule: ScheduleInfo,
    passed: bool,
    checks: Vec<VerificationReport>,
}

/// Runs the structure, law-invariance, partial-mass and oracle checks at a
/// single level. A skipped check does not count as a failure.
pub fn verify(cfg: &RunConfig) -> Result<u8, CliError> {
    let f = functional(cfg)?;
    let input = input_path(cfg)?;
    if cfg.levels.is_some() {
        return Err(CliError::Config("verify takes a single level, not a range".into()));
    }
    let sample = load_sample(input)?;
    let policy = policy(cfg);
    let lvl = level(cfg.level.unwrap_or(DEFAULT_LEVEL))?;
    let seed = cfg.seed.unwrap_or(0);
    let schedule = policy.schedule_for(lvl).map_err(estimator_error)?;
    let f = f.as_ref();

    let est = lions_derivative_grid(f, &sample, lvl, &schedule).map_err(estimator_error)?;
    let law = sample.quantize(lvl).map_err(|e| estimator_error(e.into()))?.law();
    let checks = vec![
        check_structure(f, &sample, &est, STRUCTURE_DIRECTIONS, seed).map_err(estimator_error)?,
        check_law_invariance(f, &sample, lvl, &schedule, INVARIANCE_TRANSFORMS, seed).map_err(estimator_error)?,
        check_lemma2_all_atoms(f, &law, &DEFAULT_FRACTIONS, &schedule).map_err(estimator_error)?,
        check_against_oracle(f, &sample, lvl, &schedule).map_err(estimator_error)?,
    ];
    let passed = checks.iter().all(|c| c.status != Status::Fail);
    let output = VerifyOutput {
        functional: f.spec(),
        input: input.to_path_buf(),
        level: lvl.n(),
        seed,
        schedule: (&policy).into(),
        passed,
        checks,
    };
    let json = serde_json::to_string_pretty(&output).expect("report serializes") + "\n";
    match &cfg.out {
        Some(out) => write_file(out, &json)?,
        None => print!("{json}"),
    }
    for c in output.checks.iter().filter(|c| c.status == Status::Fail) {
        eprintln!(
            "check `{}` failed: discrepancy {} exceeds tolerance {}",
            c.check, c.discrepancy, c.tolerance
        );
    }
    Ok(if passed { EXIT_OK } else { EXIT_CHECK_FAILED })
}

/// Writes the `n,w2_quant,succ_diff,oracle_err` table.
pub fn study(cfg: &RunConfig) -> Result<u8, CliError> {
    let f = functional(cfg)?;
    let input = input_path(cfg)?;
    if cfg.level.is_some() && cfg.levels.is_some() {
        return Err(CliError::Config("give either level or levels, not both".into()));
    }
    let sample = load_sample(input)?;
    let levels = match cfg.level {
        Some(n) => vec![level(n)?.n()],
        None => cfg.levels.unwrap_or(DEFAULT_STUDY_LEVELS).levels(),
    };
    let rows = convergence_study(f.as_ref(), &sample, &levels, &policy(cfg)).map_err(estimator_error)?;
    let csv = write_study_csv(&rows);
    match &cfg.out {
        Some(out) => write_file(out, &csv)?,
        None => print!("{csv}"),
    }
    Ok(EXIT_OK)
}
