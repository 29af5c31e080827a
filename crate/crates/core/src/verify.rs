//! Executable checks of the structural properties of the Lions derivative.
//!
//! Each check returns a [`VerificationReport`] whose status is `pass`
//! exactly when the measured discrepancy is within the tolerance. Reports
//! record their inputs (seed, level, schedule) so they can be re-run, and
//! serialize to JSON with a fixed field order.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use serde_json::{json, Value};

use crate::estimator::{
    directional_derivative, lions_derivative_at_atom, lions_derivative_grid,
    partial_mass_perturbation, DerivativeEstimate, Direction, EstimatorError, SchedulePolicy,
    StepSchedule,
};
use crate::functionals::Functional;
use crate::measure::{
    wasserstein2, DiscreteMeasure, EmpiricalSample, MeasureError, QuantizationLevel,
};
use crate::numeric::NeumaierSum;

/// Floor on structural-check tolerances.
pub const STRUCTURE_TOL_FLOOR: f64 = 1e-6;
/// Multiplier on reported error estimates in structural checks.
pub const ERROR_MULTIPLIER: f64 = 4.0;
/// Law-invariance tolerance; the designed outcome is an exact zero.
pub const LAW_INVARIANCE_TOL: f64 = 1e-12;
/// Relative residual allowed in the mass-linearity fit.
pub const LINEARITY_TOL: f64 = 1e-6;
/// Oracle floor for functionals on which central differences are exact.
pub const ORACLE_TOL_FLOOR: f64 = 1e-8;
/// Slack on the Taylor truncation bound in oracle checks.
pub const TAYLOR_SLACK: f64 = 1.5;
/// Mass fractions used by default in the constancy check.
pub const DEFAULT_FRACTIONS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Case {
    pub label: String,
    pub values: Value,
}

impl Case {
    fn new(label: impl Into<String>, values: Value) -> Self {
        Self {
            label: label.into(),
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub check: String,
    pub status: Status,
    /// What `discrepancy` measures.
    pub metric: String,
    pub discrepancy: f64,
    pub tolerance: f64,
    pub inputs: Value,
    pub cases: Vec<Case>,
    pub note: Option<String>,
}

impl VerificationReport {
    fn measured(
        check: &str,
        metric: &str,
        discrepancy: f64,
        tolerance: f64,
        inputs: Value,
        cases: Vec<Case>,
        note: Option<String>,
    ) -> Self {
        // NaN never passes
        let status = if discrepancy <= tolerance {
            Status::Pass
        } else {
            Status::Fail
        };
        Self {
            check: check.to_string(),
            status,
            metric: metric.to_string(),
            discrepancy,
            tolerance,
            inputs,
            cases,
            note,
        }
    }

    pub fn skipped(check: &str, inputs: Value, reason: impl Into<String>) -> Self {
        Self {
            check: check.to_string(),
            status: Status::Skipped,
            metric: String::new(),
            discrepancy: 0.0,
            tolerance: 0.0,
            inputs,
            cases: Vec::new(),
            note: Some(reason.into()),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn schedule_json(s: &StepSchedule) -> Value {
    json!({ "eps0": s.eps0(), "ratio": s.ratio(), "count": s.count(), "mode": s.mode() })
}

/// `DF(ξₙ) = gₙ(ξₙ)` in weak form: for seeded standard-normal directions
/// `η`, compares the directional derivative of `F` at the quantized sample
/// with `E[g̃ₙ(ξ) η]`.
///
/// The relative discrepancy is scaled by `‖g̃ₙ(ξ)‖·‖η‖` (the Cauchy–Schwarz
/// bound on both sides). The tolerance is
/// `max(1e-6, 4 × combined error estimate)` with the combined estimate
/// taken from the directional quotient and the per-atom grid errors.
pub fn check_structure(
    f: &dyn Functional,
    sample: &EmpiricalSample,
    est: &DerivativeEstimate,
    directions: usize,
    seed: u64,
) -> Result<VerificationReport, EstimatorError> {
    let quantized = sample.quantize(est.level())?;
    let g_norm = sample
        .expectation(|v| {
            let g = est.g_tilde(v);
            g * g
        })
        .sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    let mut worst_err = 0.0_f64;
    let mut cases = Vec::with_capacity(directions);
    for d in 0..directions {
        let eta: Vec<f64> = (0..sample.len()).map(|_| rng.sample(StandardNormal)).collect();
        let eta = Direction::new(eta)?;
        let dd = directional_derivative(f, &quantized, &eta, est.schedule())?;

        let mut pred = NeumaierSum::new();
        let mut pred_err = NeumaierSum::new();
        for ((&v, &w), &e) in sample.values().iter().zip(sample.weights()).zip(eta.values()) {
            pred.add(w * est.g_tilde(v) * e);
            pred_err.add(w * est.error_at(v) * e.abs());
        }
        let pred = pred.value();
        let scale = g_norm * eta.l2_norm(sample);
        let scale = if scale > 0.0 { scale } else { 1.0 };
        let rel = (dd.value - pred).abs() / scale;
        let rel_err = (dd.error + pred_err.value()) / scale;
        worst = if rel.is_nan() { f64::NAN } else { worst.max(rel) };
        worst_err = worst_err.max(rel_err);
        cases.push(Case::new(
            format!("direction {d}"),
            json!({
                "directional": dd.value,
                "directional_err": dd.error,
                "predicted": pred,
                "relative_error": rel,
            }),
        ));
    }
    let tolerance = STRUCTURE_TOL_FLOOR.max(ERROR_MULTIPLIER * worst_err);
    Ok(VerificationReport::measured(
        "structure",
        "max relative |dF(ξₙ)[η] − E[g̃ₙ(ξ)η]| / (‖g̃ₙ‖‖η‖)",
        worst,
        tolerance,
        json!({
            "functional": f.spec(),
            "level": est.level().n(),
            "schedule": schedule_json(est.schedule()),
            "directions": directions,
            "seed": seed,
        }),
        cases,
        None,
    ))
}

fn estimate_difference(a: &DerivativeEstimate, b: &DerivativeEstimate) -> f64 {
    let same_atoms = a.grid_atoms().len() == b.grid_atoms().len()
        && a
            .grid_atoms()
            .iter()
            .zip(b.grid_atoms())
            .all(|(x, y)| x.to_bits() == y.to_bits());
    if !same_atoms {
        return f64::INFINITY;
    }
    a.g_values()
        .iter()
        .zip(b.g_values())
        .map(|(x, y)| {
            if x.to_bits() == y.to_bits() {
                0.0
            } else {
                let d = (x - y).abs();
                if d.is_nan() {
                    f64::INFINITY
                } else {
                    d
                }
            }
        })
        .fold(0.0, f64::max)
}

/// Splits each entry with probability ½ into `(v, w₁)` and `(v, w − w₁)`
/// where `w₁ = w·u`, `u ∈ [½, 1)`. Sterbenz's lemma makes `w − w₁` exact, so
/// the split preserves the variable's law in floating point too.
fn random_split(sample: &EmpiricalSample, rng: &mut ChaCha8Rng) -> Result<EmpiricalSample, MeasureError> {
    let mut values = sample.values().to_vec();
    let mut weights = sample.weights().to_vec();
    let mut extra_v = Vec::new();
    let mut extra_w = Vec::new();
    for k in 0..sample.len() {
        if !rng.gen_bool(0.5) {
            continue;
        }
        let w = weights[k];
        let u: f64 = rng.gen_range(0.5..1.0);
        let w1 = w * u;
        let w2 = w - w1;
        if w2 <= 0.0 || w1 + w2 != w {
            continue;
        }
        let (keep, moved) = if rng.gen_bool(0.5) { (w1, w2) } else { (w2, w1) };
        weights[k] = keep;
        extra_v.push(values[k]);
        extra_w.push(moved);
    }
    values.extend(extra_v);
    weights.extend(extra_w);
    EmpiricalSample::new(values, weights)
}

fn permuted(sample: &EmpiricalSample, rng: &mut ChaCha8Rng) -> Result<EmpiricalSample, MeasureError> {
    let mut idx: Vec<usize> = (0..sample.len()).collect();
    idx.shuffle(rng);
    EmpiricalSample::new(
        idx.iter().map(|&i| sample.values()[i]).collect(),
        idx.iter().map(|&i| sample.weights()[i]).collect(),
    )
}

/// Recomputes the derivative grid for `transforms` random permutations and
/// `transforms` random exact weight-splittings of `sample` and reports the
/// largest change of `ĝ` on any grid atom.
pub fn check_law_invariance(
    f: &dyn Functional,
    sample: &EmpiricalSample,
    level: QuantizationLevel,
    schedule: &StepSchedule,
    transforms: usize,
    seed: u64,
) -> Result<VerificationReport, EstimatorError> {
    let base = lions_derivative_grid(f, sample, level, schedule)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    let mut all_bitwise = true;
    let mut cases = Vec::with_capacity(2 * transforms);
    for kind in ["permutation", "split"] {
        for t in 0..transforms {
            let other = if kind == "permutation" {
                permuted(sample, &mut rng)?
            } else {
                random_split(sample, &mut rng)?
            };
            let est = lions_derivative_grid(f, &other, level, schedule)?;
            let diff = estimate_difference(&base, &est);
            let bitwise = base.bitwise_eq(&est);
            all_bitwise &= bitwise;
            worst = worst.max(diff);
            cases.push(Case::new(
                format!("{kind} {t}"),
                json!({ "sample_len": other.len(), "max_abs_diff": diff, "bitwise_identical": bitwise }),
            ));
        }
    }
    Ok(VerificationReport::measured(
        "law_invariance",
        "max |ĝ(transformed) − ĝ(original)| over grid atoms",
        worst,
        LAW_INVARIANCE_TOL,
        json!({
            "functional": f.spec(),
            "level": level.n(),
            "schedule": schedule_json(schedule),
            "transforms": transforms,
            "seed": seed,
        }),
        cases,
        Some(format!(
            "evaluation is measure-level, so identical laws give identical grids; \
             all transforms bitwise identical: {all_bitwise}"
        )),
    ))
}

/// Mass linearity at one atom: moving a fraction `q` of the atom's mass
/// must change `f` at rate `q·p_i·ĝ(x_i)`.
///
/// Fits `value = slope · (q p_i)` through the origin. Two criteria are
/// folded into the reported discrepancy as ratios to their allowances:
/// the fit's relative residual against `1e-6`, and `|slope − ĝ(x_i)|`
/// against the combined error estimates (plus a few ulps of `ĝ`). The check
/// passes when the larger ratio is at most 1.
pub fn check_lemma2_constancy(
    f: &dyn Functional,
    mu: &DiscreteMeasure,
    index: usize,
    fractions: &[f64],
    schedule: &StepSchedule,
) -> Result<VerificationReport, EstimatorError> {
    let g = lions_derivative_at_atom(f, mu, index, schedule)?;
    let p = mu.weights()[index];
    let mut masses = Vec::with_capacity(fractions.len());
    let mut values = Vec::with_capacity(fractions.len());
    let mut combined = g.error;
    let mut cases = Vec::with_capacity(fractions.len());
    for &q in fractions {
        let d = partial_mass_perturbation(f, mu, index, q, schedule)?;
        let m = if q == 1.0 { p } else { q * p };
        combined = combined.max(g.error + d.error / m);
        masses.push(m);
        values.push(d.value);
        cases.push(Case::new(
            format!("q = {q}"),
            json!({ "moved_mass": m, "value": d.value, "error": d.error }),
        ));
    }
    let num: f64 = crate::numeric::compensated_sum(masses.iter().zip(&values).map(|(m, y)| m * y));
    let den: f64 = crate::numeric::compensated_sum(masses.iter().map(|m| m * m));
    let slope = if den > 0.0 { num / den } else { f64::NAN };
    let residual = masses
        .iter()
        .zip(&values)
        .map(|(m, y)| (y - slope * m).abs())
        .fold(0.0, f64::max);
    let scale = values.iter().fold(0.0_f64, |a, y| a.max(y.abs()));
    let rel_residual = if scale > 0.0 {
        residual / scale
    } else if residual == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let slope_allowance = combined + 16.0 * f64::EPSILON * g.value.abs().max(1.0);
    let slope_gap = (slope - g.value).abs();
    let discrepancy = (rel_residual / LINEARITY_TOL).max(slope_gap / slope_allowance);
    let discrepancy = if slope_gap.is_nan() || rel_residual.is_nan() {
        f64::NAN
    } else {
        discrepancy
    };
    cases.push(Case::new(
        "fit",
        json!({
            "slope": slope,
            "g_hat": g.value,
            "g_hat_error": g.error,
            "relative_residual": rel_residual,
            "slope_gap": slope_gap,
            "slope_allowance": slope_allowance,
        }),
    ));
    Ok(VerificationReport::measured(
        "lemma2_constancy",
        "max(relative fit residual / 1e-6, |slope − ĝ| / combined error)",
        discrepancy,
        1.0,
        json!({
            "functional": f.spec(),
            "atom": mu.atoms()[index],
            "mass": p,
            "fractions": fractions,
            "schedule": schedule_json(schedule),
        }),
        cases,
        None,
    ))
}

/// [`check_lemma2_constancy`] at every atom of `mu`, folded into one
/// report whose discrepancy is the worst per-atom ratio.
pub fn check_lemma2_all_atoms(
    f: &dyn Functional,
    mu: &DiscreteMeasure,
    fractions: &[f64],
    schedule: &StepSchedule,
) -> Result<VerificationReport, EstimatorError> {
    let mut worst = 0.0_f64;
    let mut cases = Vec::with_capacity(mu.len());
    for i in 0..mu.len() {
        let r = check_lemma2_constancy(f, mu, i, fractions, schedule)?;
        worst = if r.discrepancy.is_nan() { f64::NAN } else { worst.max(r.discrepancy) };
        let fit = r.cases.last().map(|c| c.values.clone()).unwrap_or(Value::Null);
        cases.push(Case::new(
            format!("x = {}", mu.atoms()[i]),
            json!({ "ratio": r.discrepancy, "passed": r.passed(), "fit": fit }),
        ));
    }
    Ok(VerificationReport::measured(
        "lemma2_constancy",
        "max over atoms of max(relative fit residual / 1e-6, |slope − ĝ| / combined error)",
        worst,
        1.0,
        json!({
            "functional": f.spec(),
            "atoms": mu.len(),
            "fractions": fractions,
            "schedule": schedule_json(schedule),
        }),
        cases,
        None,
    ))
}

/// The bound an oracle comparison is held to: `1e-8`, or 1.5 times the
/// functional's Taylor truncation bound at the smallest step, whichever is
/// larger.
pub fn oracle_tolerance(f: &dyn Functional, law: &DiscreteMeasure, schedule: &StepSchedule) -> Option<f64> {
    let eps_min = law
        .atoms()
        .iter()
        .map(|&x| schedule.smallest_step_near(x))
        .fold(0.0, f64::max);
    f.truncation_bound(law, eps_min)
        .map(|b| ORACLE_TOL_FLOOR.max(TAYLOR_SLACK * b))
}

/// `ĝ` against the closed form evaluated at the quantized law, which
/// isolates finite-difference error from quantization error. Reports the
/// sup error over grid atoms as the discrepancy, with the `L²(law)` error
/// alongside.
pub fn check_against_oracle(
    f: &dyn Functional,
    sample: &EmpiricalSample,
    level: QuantizationLevel,
    schedule: &StepSchedule,
) -> Result<VerificationReport, EstimatorError> {
    let inputs = json!({
        "functional": f.spec(),
        "level": level.n(),
        "schedule": schedule_json(schedule),
    });
    let law = sample.quantize(level)?.law();
    if law.atoms().first().and_then(|&x| f.analytic_g(&law, x)).is_none() {
        return Ok(VerificationReport::skipped(
            "oracle",
            inputs,
            format!("`{}` has no closed-form derivative", f.name()),
        ));
    }
    let est = lions_derivative_grid(f, sample, level, schedule)?;
    let mut sup = 0.0_f64;
    let mut l2 = NeumaierSum::new();
    let mut cases = Vec::with_capacity(est.len());
    for ((&x, &p), &g) in est.grid_atoms().iter().zip(est.masses()).zip(est.g_values()) {
        let exact = f.analytic_g(&law, x).unwrap_or(f64::NAN);
        let e = (g - exact).abs();
        sup = if e.is_nan() { f64::NAN } else { sup.max(e) };
        l2.add(p * e * e);
        cases.push(Case::new(format!("x = {x}"), json!({ "g_hat": g, "exact": exact, "abs_error": e })));
    }
    let tolerance = oracle_tolerance(f, &law, schedule).unwrap_or(ORACLE_TOL_FLOOR);
    let mut report = VerificationReport::measured(
        "oracle",
        "sup over grid atoms of |ĝ − g(law(ξₙ), ·)|",
        sup,
        tolerance,
        inputs,
        cases,
        Some(format!("L2(law) error {}", l2.value().sqrt())),
    );
    report.cases.insert(0, Case::new("l2", json!({ "l2_error": l2.value().sqrt() })));
    Ok(report)
}

/// One level of a convergence study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StudyRow {
    pub n: u32,
    /// `W₂(law(ξ), law(ξₙ))`, bounded by `2⁻ⁿ`.
    pub w2_quant: f64,
    /// `‖g̃ₙ(ξ) − g̃ₙ₋₁(ξ)‖` in `L²(law)`; absent on the first row.
    pub succ_diff: Option<f64>,
    /// `‖g̃ₙ(ξ) − g(law(ξ), ξ)‖` in `L²(law)` when a closed form exists.
    pub oracle_err: Option<f64>,
}

/// Per-level quantization distance, successive-difference and oracle error
/// for `n` in `levels` (ascending, non-empty).
pub fn convergence_study(
    f: &dyn Functional,
    sample: &EmpiricalSample,
    levels: &[u32],
    policy: &SchedulePolicy,
) -> Result<Vec<StudyRow>, EstimatorError> {
    if levels.is_empty() {
        return Err(EstimatorError::InvalidConfig("empty level range".into()));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EstimatorError::InvalidConfig("levels must be strictly ascending".into()));
    }
    let law = sample.law();
    let has_oracle = law.atoms().first().and_then(|&x| f.analytic_g(&law, x)).is_some();
    let mut rows = Vec::with_capacity(levels.len());
    let mut prev: Option<DerivativeEstimate> = None;
    for &n in levels {
        let level = QuantizationLevel::new(n)?;
        let quantized = sample.quantize(level)?;
        let w2 = wasserstein2(&law, &quantized.law());
        let est = lions_derivative_grid(f, sample, level, &policy.schedule_for(level)?)?;
        let succ = prev
            .as_ref()
            .map(|p| crate::estimator::l2_distance_on(sample, p, &est));
        let oracle = has_oracle.then(|| {
            sample
                .expectation(|v| {
                    let d = est.g_tilde(v) - f.analytic_g(&law, v).unwrap_or(f64::NAN);
                    d * d
                })
                .sqrt()
        });
        rows.push(StudyRow {
            n,
            w2_quant: w2,
            succ_diff: succ,
            oracle_err: oracle,
        });
        prev = Some(est);
    }
    Ok(rows)
}
