//! Finite-difference construction of the Lions derivative.
//!
//! For a discrete law `μ = Σ p_j δ_{x_j}` the derivative at an atom is the
//! limit of
//!
//! ```text
//! [ f(Σ_{j≠i} p_j δ_{x_j} + p_i δ_{x_i+ε}) − f(μ) ] / (ε p_i)
//! ```
//!
//! as `ε → 0`. A general sample is first floored onto the dyadic grid
//! `i·2⁻ⁿ`, the quotient is taken at every positive-mass grid atom, and the
//! result is extended piecewise-constantly over the cells `[x_i, x_i + 2⁻ⁿ)`
//! to give `g̃ₙ`. Raising `n` until `g̃ₙ` stops moving in `L²(law)` yields the
//! derivative of the original law.
//!
//! Limits are taken by Richardson extrapolation over a geometric step
//! schedule. Every probe is a measure-level evaluation, so a shifted atom
//! that lands on a neighbour is merged with it; that is the exact semantics
//! of `f`, not an approximation.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functionals::Functional;
use crate::measure::{DiscreteMeasure, EmpiricalSample, MeasureError, QuantizationLevel};
use crate::numeric::NeumaierSum;

/// Steps are never smaller than `STEP_FLOOR_REL · max(1, |x|)`.
pub const STEP_FLOOR_REL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("invalid step schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("functional returned a non-finite value at step {step:e}")]
    NonFiniteValue { step: f64 },
    #[error("mass fraction {0} is not in (0, 1]")]
    InvalidFraction(f64),
    #[error("direction has {got} entries, sample has {expected}")]
    DirectionLength { expected: usize, got: usize },
    #[error("direction entry {0} is not finite")]
    NonFiniteDirection(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifferenceMode {
    /// `[f(+ε) − f(0)] / ε`, the plain forward quotient.
    OneSided,
    /// `[f(+ε) − f(−ε)] / 2ε`.
    #[default]
    Central,
}

impl DifferenceMode {
    /// Leading power of `ε` in the truncation error.
    pub fn order(self) -> i32 {
        match self {
            DifferenceMode::OneSided => 1,
            DifferenceMode::Central => 2,
        }
    }
}

impl fmt::Display for DifferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DifferenceMode::OneSided => "one_sided",
            DifferenceMode::Central => "central",
        })
    }
}

impl FromStr for DifferenceMode {
    type Err = EstimatorError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "one_sided" => Ok(DifferenceMode::OneSided),
            "central" => Ok(DifferenceMode::Central),
            other => Err(EstimatorError::InvalidSchedule(format!(
                "unknown mode `{other}` (expected one_sided or central)"
            ))),
        }
    }
}

pub const DEFAULT_RATIO: f64 = 0.5;
pub const DEFAULT_COUNT: usize = 4;

/// Geometric steps `eps0 · ratio^k`, `k = 0..count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepSchedule {
    eps0: f64,
    ratio: f64,
    count: usize,
    mode: DifferenceMode,
}

impl StepSchedule {
    pub fn new(eps0: f64, ratio: f64, count: usize, mode: DifferenceMode) -> Result<Self, EstimatorError> {
        if !(eps0.is_finite() && eps0 > 0.0) {
            return Err(EstimatorError::InvalidSchedule(format!("eps0 must be positive, got {eps0}")));
        }
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(EstimatorError::InvalidSchedule(format!("ratio must lie in (0, 1), got {ratio}")));
        }
        if count < 2 {
            return Err(EstimatorError::InvalidSchedule(format!(
                "extrapolation needs at least 2 steps, got {count}"
            )));
        }
        let last = eps0 * ratio.powi(count as i32 - 1);
        if !(last > 0.0) {
            return Err(EstimatorError::InvalidSchedule("steps underflow to zero".into()));
        }
        Ok(Self { eps0, ratio, count, mode })
    }

    /// Default ratio ½, four steps, central mode.
    pub fn with_eps0(eps0: f64) -> Result<Self, EstimatorError> {
        Self::new(eps0, DEFAULT_RATIO, DEFAULT_COUNT, DifferenceMode::Central)
    }

    pub fn with_mode(mut self, mode: DifferenceMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn eps0(&self) -> f64 {
        self.eps0
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mode(&self) -> DifferenceMode {
        self.mode
    }

    /// The nominal steps, decreasing.
    pub fn steps(&self) -> Vec<f64> {
        (0..self.count)
            .map(|k| self.eps0 * self.ratio.powi(k as i32))
            .collect()
    }

    /// Steps used around a point of magnitude `|x|`: the nominal schedule,
    /// scaled up as a whole if its smallest step would fall under
    /// `STEP_FLOOR_REL · max(1, |x|)`.
    pub fn steps_near(&self, x: f64) -> Vec<f64> {
        let floor = STEP_FLOOR_REL * x.abs().max(1.0);
        let steps = self.steps();
        let smallest = steps[steps.len() - 1];
        if smallest >= floor {
            steps
        } else {
            let scale = floor / smallest;
            steps.into_iter().map(|s| s * scale).collect()
        }
    }

    pub fn smallest_step_near(&self, x: f64) -> f64 {
        *self.steps_near(x).last().expect("count >= 2")
    }
}

/// How to build a [`StepSchedule`] for each quantization level.
///
/// Without an explicit `eps0` the first step is `2⁻ⁿ/8`, so shifted atoms
/// stay well inside their own cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulePolicy {
    pub eps0: Option<f64>,
    pub ratio: f64,
    pub count: usize,
    pub mode: DifferenceMode,
}

impl Default for SchedulePolicy {
    fn default() -> Self {
        Self {
            eps0: None,
            ratio: DEFAULT_RATIO,
            count: DEFAULT_COUNT,
            mode: DifferenceMode::Central,
        }
    }
}

impl SchedulePolicy {
    pub fn schedule_for(&self, level: QuantizationLevel) -> Result<StepSchedule, EstimatorError> {
        let eps0 = self.eps0.unwrap_or(level.cell_width() / 8.0);
        StepSchedule::new(eps0, self.ratio, self.count, self.mode)
    }
}

/// An extrapolated limit with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AtomDerivative {
    pub value: f64,
    /// Magnitude of the last extrapolation increment plus a propagated
    /// bound on the rounding error of the quotients.
    pub error: f64,
}

/// Relative error allowed per functional evaluation when bounding the
/// rounding error of a difference quotient.
const EVAL_ROUNDOFF: f64 = 8.0 * f64::EPSILON;

/// Richardson extrapolation of quotients taken at steps `eps0·ratio^k`.
///
/// Column `j` eliminates the `ε^{j·order}` term. The returned error is the
/// size of the final correction `|R[m][m] − R[m][m−1]|`.
pub fn richardson(quotients: &[f64], ratio: f64, mode: DifferenceMode) -> AtomDerivative {
    extrapolate(quotients, &vec![0.0; quotients.len()], ratio, mode)
}

/// Richardson table over `quotients`, carrying per-quotient rounding
/// bounds through the same linear recursion.
fn extrapolate(quotients: &[f64], bounds: &[f64], ratio: f64, mode: DifferenceMode) -> AtomDerivative {
    let m = quotients.len();
    assert!(m >= 1, "no quotients to extrapolate");
    let mut col = quotients.to_vec();
    let mut bnd = bounds.to_vec();
    let mut before_last = col[m - 1];
    for j in 1..m {
        let factor = (1.0 / ratio).powi(j as i32 * mode.order()) - 1.0;
        before_last = col[m - 1];
        for k in (j..m).rev() {
            col[k] += (col[k] - col[k - 1]) / factor;
            bnd[k] += (bnd[k] + bnd[k - 1]) / factor.abs();
        }
    }
    let value = col[m - 1];
    AtomDerivative {
        value,
        error: (value - before_last).abs() + bnd[m - 1],
    }
}

fn probe_value(value: f64, step: f64) -> Result<f64, EstimatorError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(EstimatorError::NonFiniteValue { step })
    }
}

/// Difference quotients with rounding bounds, one per step.
struct Quotients {
    values: Vec<f64>,
    roundoff: Vec<f64>,
}

impl Quotients {
    fn extrapolate(&self, schedule: &StepSchedule) -> AtomDerivative {
        extrapolate(&self.values, &self.roundoff, schedule.ratio(), schedule.mode())
    }
}

/// Raw difference quotients over `steps`. `probe(δ)` evaluates the
/// perturbed functional, `base` is `f` at the unperturbed point and
/// `realized(δ)` the displacement actually applied once rounding of
/// `x + δ` is accounted for.
fn quotients_with<P, R>(
    steps: &[f64],
    mode: DifferenceMode,
    denom: f64,
    base: impl FnOnce() -> f64,
    mut probe: P,
    realized: R,
) -> Result<Quotients, EstimatorError>
where
    P: FnMut(f64) -> Result<f64, EstimatorError>,
    R: Fn(f64) -> f64,
{
    let mut values = Vec::with_capacity(steps.len());
    let mut roundoff = Vec::with_capacity(steps.len());
    match mode {
        DifferenceMode::OneSided => {
            let f0 = probe_value(base(), 0.0)?;
            for &eps in steps {
                let fp = probe_value(probe(eps)?, eps)?;
                let h = realized(eps) * denom;
                values.push((fp - f0) / h);
                roundoff.push(EVAL_ROUNDOFF * (fp.abs() + f0.abs()) / h.abs());
            }
        }
        DifferenceMode::Central => {
            for &eps in steps {
                let fp = probe_value(probe(eps)?, eps)?;
                let fm = probe_value(probe(-eps)?, -eps)?;
                let h = (realized(eps) - realized(-eps)) * denom;
                values.push((fp - fm) / h);
                roundoff.push(EVAL_ROUNDOFF * (fp.abs() + fm.abs()) / h.abs());
            }
        }
    }
    Ok(Quotients { values, roundoff })
}

fn shift_quotients(
    f: &dyn Functional,
    mu: &DiscreteMeasure,
    index: usize,
    schedule: &StepSchedule,
) -> Result<Quotients, EstimatorError> {
    if index >= mu.len() {
        return Err(MeasureError::IndexOutOfRange { index, len: mu.len() }.into());
    }
    let (x, p) = (mu.atoms()[index], mu.weights()[index]);
    if p <= 0.0 {
        return Err(MeasureError::InvalidMass { mass: p, available: p }.into());
    }
    let steps = schedule.steps_near(x);
    quotients_with(
        &steps,
        schedule.mode(),
        p,
        || f.eval(mu),
        |delta| Ok(f.eval(&mu.shift_atom(index, delta)?)),
        |delta| (x + delta) - x,
    )
}

/// The unextrapolated atom-shift quotients
/// `[f(μ with atom i moved by ε) − f(μ)] / (ε p_i)` (or their central
/// counterparts), one per schedule step.
pub fn atom_shift_quotients(
    f: &dyn Functional,
    mu: &DiscreteMeasure,
    index: usize,
    schedule: &StepSchedule,
) -> Result<Vec<f64>, EstimatorError> {
    Ok(shift_quotients(f, mu, index, schedule)?.values)
}

/// `ĝ(x_i)`: the extrapolated Dirac-shift quotient at atom `index`.
pub fn lions_derivative_at_atom(
    f: &dyn Functional,
    mu: &DiscreteMeasure,
    index: usize,
    schedule: &StepSchedule,
) -> Result<AtomDerivative, EstimatorError> {
    Ok(shift_quotients(f, mu, index, schedule)?.extrapolate(schedule))
}

/// Moves the fraction `q` of the mass at atom `index` by `ε` and returns the
/// extrapolated `[f(μ_ε) − f(μ)] / ε`, which approximates `E[DF(ξ) 1_A]`
/// for an event `A ⊂ {ξ = x_i}` of probability `q·p_i`.
pub fn partial_mass_perturbation(
    f: &dyn Functional,
    mu: &DiscreteMeasure,
    index: usize,
    q: f64,
    schedule: &StepSchedule,
) -> Result<AtomDerivative, EstimatorError> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(EstimatorError::InvalidFraction(q));
    }
    if index >= mu.len() {
        return Err(MeasureError::IndexOutOfRange { index, len: mu.len() }.into());
    }
    let (x, p) = (mu.atoms()[index], mu.weights()[index]);
    let mass = if q == 1.0 { p } else { q * p };
    let steps = schedule.steps_near(x);
    let quotients = quotients_with(
        &steps,
        schedule.mode(),
        1.0,
        || f.eval(mu),
        |delta| Ok(f.eval(&mu.move_mass(index, mass, delta)?)),
        |delta| (x + delta) - x,
    )?;
    Ok(quotients.extrapolate(schedule))
}

/// Per-sample displacement `η`, aligned with a sample's values.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Direction(Vec<f64>);

impl Direction {
    pub fn new(values: Vec<f64>) -> Result<Self, EstimatorError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EstimatorError::NonFiniteDirection(i));
        }
        Ok(Self(values))
    }

    pub fn zero(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// `η_k = 1` where `pred(v_k)` holds, else 0.
    pub fn indicator(sample: &EmpiricalSample, pred: impl Fn(f64) -> bool) -> Self {
        Self(
            sample
                .values()
                .iter()
                .map(|&v| if pred(v) { 1.0 } else { 0.0 })
                .collect(),
        )
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `(Σ w_k η_k²)^{1/2}` under the sample weights.
    pub fn l2_norm(&self, sample: &EmpiricalSample) -> f64 {
        let mut acc = NeumaierSum::new();
        for (&e, &w) in self.0.iter().zip(sample.weights()) {
            acc.add(w * e * e);
        }
        acc.value().sqrt()
    }
}

fn directional_raw(
    f: &dyn Functional,
    sample: &EmpiricalSample,
    eta: &Direction,
    schedule: &StepSchedule,
) -> Result<Quotients, EstimatorError> {
    if eta.len() != sample.len() {
        return Err(EstimatorError::DirectionLength {
            expected: sample.len(),
            got: eta.len(),
        });
    }
    let anchor = sample.values().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let steps = schedule.steps_near(anchor);
    quotients_with(
        &steps,
        schedule.mode(),
        1.0,
        || f.eval(&sample.law()),
        |delta| {
            let moved: Vec<f64> = sample
                .values()
                .iter()
                .zip(eta.values())
                .map(|(&v, &e)| v + delta * e)
                .collect();
            Ok(f.eval(&sample.with_values(moved)?.law()))
        },
        |delta| delta,
    )
}

/// The raw quotients of `F(ξ + εη)`, one per schedule step.
pub fn directional_quotients(
    f: &dyn Functional,
    sample: &EmpiricalSample,
    eta: &Direction,
    schedule: &StepSchedule,
) -> Result<Vec<f64>, EstimatorError> {
    Ok(directional_raw(f, sample, eta, schedule)?.values)
}

/// `lim [F(ξ + εη) − F(ξ)] / ε` with `F(ξ) = f(law(ξ))`.
pub fn directional_derivative(
    f: &dyn Functional,
    sample: &EmpiricalSample,
    eta: &Direction,
    schedule: &StepSchedule,
) -> Result<AtomDerivative, EstimatorError> {
    Ok(directional_raw(f, sample, eta, schedule)?.extrapolate(schedule))
}

/// An atom whose estimate could not be formed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomFailure {
    pub index: usize,
    pub x: f64,
    pub reason: String,
}

/// `ĝ` on the positive-mass atoms of a quantized law, i.e. `gₙ`, together
/// with its piecewise-constant extension `g̃ₙ`.
///
/// Grid cells carrying no mass have no entry; [`DerivativeEstimate::g_tilde`]
/// returns 0 on them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivativeEstimate {
    level: QuantizationLevel,
    schedule: StepSchedule,
    grid_atoms: Vec<f64>,
    masses: Vec<f64>,
    g_values: Vec<f64>,
    error_estimates: Vec<f64>,
    failures: Vec<AtomFailure>,
}

impl DerivativeEstimate {
    pub fn level(&self) -> QuantizationLevel {
        self.level
    }

    pub fn schedule(&self) -> &StepSchedule {
        &self.schedule
    }

    pub fn grid_atoms(&self) -> &[f64] {
        &self.grid_atoms
    }

    /// Weight of each grid atom under the quantized law.
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn g_values(&self) -> &[f64] {
        &self.g_values
    }

    pub fn error_estimates(&self) -> &[f64] {
        &self.error_estimates
    }

    /// Atoms whose probes failed; their `g_values` entry is NaN.
    pub fn failures(&self) -> &[AtomFailure] {
        &self.failures
    }

    pub fn len(&self) -> usize {
        self.grid_atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid_atoms.is_empty()
    }

    /// `g̃ₙ(x)`: the value at the grid atom of the cell containing `x`,
    /// 0 if that cell carries no mass.
    pub fn g_tilde(&self, x: f64) -> f64 {
        let cell = self.level.floor(x);
        match self.grid_atoms.binary_search_by(|a| a.total_cmp(&cell)) {
            Ok(i) => self.g_values[i],
            Err(_) => 0.0,
        }
    }

    /// Error estimate of the cell containing `x` (0 on empty cells).
    pub fn error_at(&self, x: f64) -> f64 {
        let cell = self.level.floor(x);
        match self.grid_atoms.binary_search_by(|a| a.total_cmp(&cell)) {
            Ok(i) => self.error_estimates[i],
            Err(_) => 0.0,
        }
    }

    pub fn max_error_estimate(&self) -> f64 {
        self.error_estimates.iter().fold(0.0, |a: f64, &e| a.max(e))
    }

    /// Equality of every stored float by bit pattern (NaN-safe).
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        fn same(a: &[f64], b: &[f64]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        self.level == other.level
            && self.schedule == other.schedule
            && same(&self.grid_atoms, &other.grid_atoms)
            && same(&self.masses, &other.masses)
            && same(&self.g_values, &other.g_values)
            && same(&self.error_estimates, &other.error_estimates)
            && self.failures == other.failures
    }
}

/// `evaluate_g_tilde`.
pub fn evaluate_g_tilde(est: &DerivativeEstimate, x: f64) -> f64 {
    est.g_tilde(x)
}

/// Estimates `gₙ` at every positive-mass atom of an already-canonical law
/// supported on the level's grid.
fn grid_from_law(
    f: &dyn Functional,
    law: &DiscreteMeasure,
    level: QuantizationLevel,
    schedule: &StepSchedule,
) -> DerivativeEstimate {
    // Per-atom work is independent; collecting an indexed parallel iterator
    // keeps sorted-atom order, so the result matches a sequential run bit
    // for bit.
    let per_atom: Vec<Result<AtomDerivative, EstimatorError>> = (0..law.len())
        .into_par_iter()
        .map(|i| lions_derivative_at_atom(f, law, i, schedule))
        .collect();

    let mut g_values = Vec::with_capacity(law.len());
    let mut error_estimates = Vec::with_capacity(law.len());
    let mut failures = Vec::new();
    for (index, r) in per_atom.into_iter().enumerate() {
        match r {
            Ok(d) => {
                g_values.push(d.value);
                error_estimates.push(d.error);
            }
            Err(e) => {
                g_values.push(f64::NAN);
                error_estimates.push(f64::INFINITY);
                failures.push(AtomFailure {
                    index,
                    x: law.atoms()[index],
                    reason: e.to_string(),
                });
            }
        }
    }
    DerivativeEstimate {
        level,
        schedule: *schedule,
        grid_atoms: law.atoms().to_vec(),
        masses: law.weights().to_vec(),
        g_values,
        error_estimates,
        failures,
    }
}

/// Quantizes `sample` at `level` and estimates the derivative at every
/// positive-mass grid atom of the quantized law.
///
/// Probe failures are recorded per atom rather than aborting the grid.
pub fn lions_derivative_grid(
    f: &dyn Functional,
    sample: &EmpiricalSample,
    level: QuantizationLevel,
    schedule: &StepSchedule,
) -> Result<DerivativeEstimate, EstimatorError> {
    let law = sample.quantize(level)?.law();
    Ok(grid_from_law(f, &law, level, schedule))
}

/// `E[|a(ξ) − b(ξ)|²]^{1/2}` with both piecewise-constant extensions
/// evaluated at the sample's own values.
pub fn l2_distance_on(sample: &EmpiricalSample, a: &DerivativeEstimate, b: &DerivativeEstimate) -> f64 {
    sample
        .expectation(|v| {
            let d = a.g_tilde(v) - b.g_tilde(v);
            d * d
        })
        .sqrt()
}

/// Outcome of [`refine_until_converged`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    /// Levels visited, in order.
    pub levels: Vec<u32>,
    /// `distances[k]` is the `L²(law)` distance between the estimates at
    /// `levels[k]` and `levels[k + 1]`.
    pub distances: Vec<f64>,
    pub tol: f64,
    pub converged: bool,
    pub final_level: u32,
}

/// Estimates at levels `n_min, n_min + 1, …` until two consecutive
/// extensions are within `tol` in `L²(law)`, or `n_max` is reached.
///
/// Non-convergence is reported through [`ConvergenceReport::converged`],
/// not as an error. With `n_min == n_max` no pair is compared and the run
/// reports non-convergence.
pub fn refine_until_converged(
    f: &dyn Functional,
    sample: &EmpiricalSample,
    tol: f64,
    n_min: u32,
    n_max: u32,
    policy: &SchedulePolicy,
) -> Result<(DerivativeEstimate, ConvergenceReport), EstimatorError> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(EstimatorError::InvalidConfig(format!("tolerance must be positive, got {tol}")));
    }
    if n_min > n_max {
        return Err(EstimatorError::InvalidConfig(format!(
            "level range {n_min}..{n_max} is reversed"
        )));
    }
    let first = QuantizationLevel::new(n_min)?;
    QuantizationLevel::new(n_max)?;

    let mut current = lions_derivative_grid(f, sample, first, &policy.schedule_for(first)?)?;
    let mut report = ConvergenceReport {
        levels: vec![n_min],
        distances: Vec::new(),
        tol,
        converged: false,
        final_level: n_min,
    };
    for n in n_min + 1..=n_max {
        let level = QuantizationLevel::new(n)?;
        let next = lions_derivative_grid(f, sample, level, &policy.schedule_for(level)?)?;
        let d = l2_distance_on(sample, &current, &next);
        report.levels.push(n);
        report.distances.push(d);
        report.final_level = n;
        current = next;
        if d < tol {
            report.converged = true;
            break;
        }
    }
    Ok((current, report))
}
