//! Acceptance suite. Prints one PASS/FAIL line per criterion; run with
//! `cargo test -p lionsderiv-cli --test acceptance -- --nocapture`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;

use lionsderiv::estimator::{atom_shift_quotients, l2_distance_on, richardson, DifferenceMode, SchedulePolicy};
use lionsderiv::functionals::{Interaction, Linear, MeanSquare, Variance};
use lionsderiv::verify::{check_lemma2_all_atoms, check_structure, DEFAULT_FRACTIONS};
use lionsderiv::{
    dyadic_quantize, law_of, lions_derivative_at_atom, lions_derivative_grid, refine_until_converged,
    wasserstein2, DiscreteMeasure, EmpiricalSample, Functional, Polynomial, QuantizationLevel, StepSchedule,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_measure(rng: &mut ChaCha8Rng, max_atoms: usize) -> DiscreteMeasure {
    let k = rng.gen_range(1..=max_atoms);
    let atoms: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..=2.0)).collect();
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    DiscreteMeasure::new(atoms, raw.iter().map(|w| w / total).collect()).unwrap()
}

fn cube() -> Linear {
    Linear::new(Polynomial::new(vec![0.0, 0.0, 0.0, 1.0]).unwrap())
}

fn half_square() -> Interaction {
    Interaction::new(Polynomial::new(vec![0.0, 0.0, 0.5]).unwrap())
}

const LEVEL: u32 = 4;

/// Sup error of the grid against the closed form at the quantized law,
/// together with the largest smallest-step used.
fn grid_sup_error(f: &dyn Functional, mu: &DiscreteMeasure) -> (f64, f64) {
    let level = QuantizationLevel::new(LEVEL).unwrap();
    let schedule = SchedulePolicy::default().schedule_for(level).unwrap();
    let sample = EmpiricalSample::from_measure(mu);
    let law = sample.quantize(level).unwrap().law();
    let est = lions_derivative_grid(f, &sample, level, &schedule).unwrap();
    assert_eq!(est.grid_atoms(), law.atoms());
    let mut sup = 0.0_f64;
    let mut eps_min = 0.0_f64;
    for (&x, &g) in est.grid_atoms().iter().zip(est.g_values()) {
        sup = sup.max((g - f.analytic_g(&law, x).unwrap()).abs());
        eps_min = eps_min.max(schedule.smallest_step_near(x));
    }
    (sup, eps_min)
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0_f64;
    for _ in 0..50 {
        let mu = random_measure(&mut rng, 16);
        for f in [&Variance as &dyn Functional, &MeanSquare] {
            let (sup, _) = grid_sup_error(f, &mu);
            ensure(sup <= 1e-8, || format!("{} sup error {sup:e} on {mu:?}", f.name()))?;
            worst = worst.max(sup);
        }
    }
    Ok(format!("worst sup error {worst:e} (tol 1e-8)"))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = cube();
    let mut worst_ratio = 0.0_f64;
    for _ in 0..50 {
        let mu = random_measure(&mut rng, 16);
        let (sup, eps_min) = grid_sup_error(&f, &mu);
        // max|φ‴| = 6
        let bound = eps_min * eps_min * 6.0 / 6.0 * 1.5;
        ensure(sup <= bound, || format!("sup error {sup:e} exceeds {bound:e}"))?;
        worst_ratio = worst_ratio.max(sup / bound);
    }
    Ok(format!("worst sup error / bound = {worst_ratio:e}"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let values: Vec<f64> = (0..200).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let sample = EmpiricalSample::uniform(values).unwrap();
    let level = QuantizationLevel::new(LEVEL).unwrap();
    let schedule = SchedulePolicy::default().schedule_for(level).unwrap();
    let cube = cube();
    let inter = half_square();
    let mut summary = Vec::new();
    for f in [&Variance as &dyn Functional, &inter, &cube] {
        let est = lions_derivative_grid(f, &sample, level, &schedule).unwrap();
        let report = check_structure(f, &sample, &est, 32, 33).unwrap();
        ensure(report.passed(), || format!("{}: {}", f.name(), report.to_json()))?;
        ensure(report.tolerance >= 1e-6, || "tolerance below floor".into())?;
        summary.push(format!("{} {:.1e}/{:.1e}", f.name(), report.discrepancy, report.tolerance));
    }
    Ok(summary.join(", "))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let functionals: Vec<Box<dyn Functional>> = vec![
        Box::new(Variance),
        Box::new(MeanSquare),
        Box::new(cube()),
        Box::new(half_square()),
        Box::new(Interaction::new(Polynomial::new(vec![0.0, 0.3, 0.5, 0.1, 0.05]).unwrap())),
    ];
    let schedule = StepSchedule::with_eps0(1.0 / 128.0).unwrap();
    let mut worst = 0.0_f64;
    for _ in 0..10 {
        let mu = random_measure(&mut rng, 8);
        for f in &functionals {
            let report = check_lemma2_all_atoms(f.as_ref(), &mu, &DEFAULT_FRACTIONS, &schedule).unwrap();
            ensure(report.passed(), || format!("{}: {}", f.name(), report.to_json()))?;
            worst = worst.max(report.discrepancy);
        }
    }
    Ok(format!("worst normalized discrepancy {worst:.3} (tol 1)"))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let values: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let sample = EmpiricalSample::uniform(values).unwrap();
    let level = QuantizationLevel::new(LEVEL).unwrap();
    let schedule = SchedulePolicy::default().schedule_for(level).unwrap();
    let f = Interaction::new(Polynomial::new(vec![0.0, 0.3, 0.5, 0.1, 0.05]).unwrap());
    let base = lions_derivative_grid(&f, &sample, level, &schedule).unwrap();
    for t in 0..20 {
        let mut idx: Vec<usize> = (0..sample.len()).collect();
        idx.shuffle(&mut rng);
        let permuted = EmpiricalSample::new(
            idx.iter().map(|&i| sample.values()[i]).collect(),
            idx.iter().map(|&i| sample.weights()[i]).collect(),
        )
        .unwrap();
        let est = lions_derivative_grid(&f, &permuted, level, &schedule).unwrap();
        ensure(base.bitwise_eq(&est), || format!("permutation {t} changed the estimate"))?;
    }
    for t in 0..20 {
        let mut values = Vec::new();
        let mut weights = Vec::new();
        for (&v, &w) in sample.values().iter().zip(sample.weights()) {
            if rng.gen_bool(0.5) {
                // w·u with u ∈ [0.5, 1) leaves an exact remainder
                let w1 = w * rng.gen_range(0.5..1.0);
                values.extend([v, v]);
                weights.extend([w1, w - w1]);
            } else {
                values.push(v);
                weights.push(w);
            }
        }
        let split = EmpiricalSample::new(values, weights).unwrap();
        ensure(law_of(&split) == law_of(&sample), || format!("split {t} changed the law"))?;
        let est = lions_derivative_grid(&f, &split, level, &schedule).unwrap();
        ensure(base.bitwise_eq(&est), || format!("split {t} changed the estimate"))?;
    }
    Ok("20 permutations and 20 splits bitwise identical".into())
}

/// Largest multiple of `2⁻ⁿ` not exceeding `v`, found by stepping.
fn brute_floor(v: f64, n: u32) -> f64 {
    let h = (-(n as f64)).exp2();
    let mut k = (v / h) as i64;
    while (k as f64) * h > v {
        k -= 1;
    }
    while ((k + 1) as f64) * h <= v {
        k += 1;
    }
    k as f64 * h
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0_f64;
    for _ in 0..50 {
        let len = rng.gen_range(1..=64);
        let scale = [1.0, 10.0, 1000.0][rng.gen_range(0..3)];
        let values: Vec<f64> = (0..len).map(|_| rng.gen_range(-scale..scale)).collect();
        let raw: Vec<f64> = (0..len).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let sample = EmpiricalSample::normalized(values, raw.iter().map(|w| w / total).collect()).unwrap();
        let law = law_of(&sample);
        for n in 0..=12 {
            let level = QuantizationLevel::new(n).unwrap();
            let q = dyadic_quantize(&sample, level).unwrap();
            for (&v, &qv) in sample.values().iter().zip(q.values()) {
                let b = brute_floor(v, n);
                ensure(qv.to_bits() == b.to_bits(), || format!("floor of {v} at n={n}: {qv} vs {b}"))?;
            }
            let d = wasserstein2(&law, &law_of(&q));
            let h = level.cell_width();
            ensure(d <= h, || format!("W2 {d:e} > 2^-{n}"))?;
            worst = worst.max(d / h);
        }
    }
    Ok(format!("worst W2 / 2^-n = {worst:.4}"))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let sample = EmpiricalSample::uniform((0..512).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let policy = SchedulePolicy::default();
    let estimates: Vec<_> = (2..=8)
        .map(|n| {
            let level = QuantizationLevel::new(n).unwrap();
            lions_derivative_grid(&Variance, &sample, level, &policy.schedule_for(level).unwrap()).unwrap()
        })
        .collect();
    let distances: Vec<f64> = estimates.windows(2).map(|w| l2_distance_on(&sample, &w[0], &w[1])).collect();
    let ratios: Vec<f64> = distances.windows(2).map(|w| w[0] / w[1]).collect();
    ensure(ratios.iter().all(|&r| r >= 1.8), || format!("ratios {ratios:?}"))?;
    let (_, report) = refine_until_converged(&Variance, &sample, 1e-5, 2, 30, &policy).unwrap();
    ensure(report.converged, || format!("not converged: {report:?}"))?;
    let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(format!(
        "min ratio {min:.3}; converged at n={} with distance {:e}",
        report.final_level,
        report.distances.last().unwrap()
    ))
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let inter = half_square();
    let schedule = StepSchedule::with_eps0(1.0 / 128.0).unwrap();
    let mut worst_value = 0.0_f64;
    let mut worst_deriv = 0.0_f64;
    for _ in 0..100 {
        let mu = random_measure(&mut rng, 16);
        let a = inter.eval(&mu);
        let b = Variance.eval(&mu);
        let rel = (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
        ensure(rel <= 1e-12 || (a - b).abs() == 0.0, || format!("values {a} vs {b}"))?;
        worst_value = worst_value.max(if a == b { 0.0 } else { rel });
        for i in 0..mu.len() {
            let da = lions_derivative_at_atom(&inter, &mu, i, &schedule).unwrap();
            let db = lions_derivative_at_atom(&Variance, &mu, i, &schedule).unwrap();
            let gap = (da.value - db.value).abs();
            let allowed = da.error + db.error;
            ensure(gap <= allowed, || format!("derivatives {da:?} vs {db:?}"))?;
            if allowed > 0.0 {
                worst_deriv = worst_deriv.max(gap / allowed);
            }
        }
    }
    Ok(format!(
        "worst value rel diff {worst_value:e}; worst derivative gap / combined error {worst_deriv:.3}"
    ))
}

fn criterion_9() -> Outcome {
    let mu = DiscreteMeasure::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
    let schedule = StepSchedule::with_eps0(0.25).unwrap().with_mode(DifferenceMode::OneSided);
    let i = mu.index_of(1.0).unwrap();
    let q = atom_shift_quotients(&Variance, &mu, i, &schedule).unwrap();
    for (&qk, &eps) in q.iter().zip(&schedule.steps()) {
        let hand = (2.0 + eps) / 2.0;
        ensure((qk - hand).abs() <= 1e-12, || format!("step {eps}: {qk} vs {hand}"))?;
    }
    let r = richardson(&q, schedule.ratio(), DifferenceMode::OneSided);
    ensure((r.value - 1.0).abs() <= 1e-9, || format!("extrapolated {r:?}"))?;
    let d = lions_derivative_at_atom(&Variance, &mu, i, &schedule).unwrap();
    ensure((d.value - 1.0).abs() <= 1e-9, || format!("estimated {d:?}"))?;
    Ok(format!("quotients {q:?}, extrapolated {}", d.value))
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_lionsderiv")
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn run_in(dir: &Path, args: &[&str]) -> (i32, String, String) {
    let out = Command::new(bin()).current_dir(dir).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn criterion_10() -> Outcome {
    let golden = golden_dir();
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let outputs = [
        ("estimate.json", "estimate", "grid.csv"),
        ("verify.json", "verify", "verify_report.json"),
        ("study.json", "study", "study.csv"),
    ];
    for round in 0..2 {
        for (config, cmd, out) in outputs {
            let dest = t.join(format!("{round}_{out}"));
            let (code, _, err) = run_in(
                &golden,
                &[cmd, "--config", config, "--out", dest.to_str().unwrap()],
            );
            ensure(code == 0, || format!("{cmd} exited {code}: {err}"))?;
            ensure(read(&dest) == read(&golden.join(out)), || format!("{cmd}: {out} differs from golden"))?;
        }
        let report = t.join(format!("{round}_grid.json"));
        ensure(read(&report) == read(&golden.join("grid.json")), || "estimate report differs from golden".into())?;
    }

    let bad_input = t.join("bad.csv");
    std::fs::write(&bad_input, "0.25\n0.5\nabc\n").unwrap();
    let (code, _, err) = run_in(t, &["estimate", "--functional", "variance", "--input", "bad.csv"]);
    ensure(code == 1 && err.contains("bad.csv") && err.contains("line 3"), || {
        format!("malformed input: exit {code}, stderr {err}")
    })?;
    let empty = t.join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let (code, _, err) = run_in(t, &["estimate", "--functional", "variance", "--input", "empty.csv"]);
    ensure(code == 1 && err.contains("empty.csv") && err.contains("line 1"), || {
        format!("empty input: exit {code}, stderr {err}")
    })?;

    let sample = golden.join("sample.csv");
    let sample = sample.to_str().unwrap();
    let bad_configs: [&[&str]; 5] = [
        &["estimate", "--functional", "variance", "--input", sample, "--tol", "-1"],
        &["study", "--functional", "variance", "--input", sample, "--levels", "8..2"],
        &["estimate", "--functional", "{\"name\":\"nope\"}", "--input", sample],
        &["estimate", "--functional", "variance", "--input", sample, "--mode", "sideways"],
        &["verify", "--functional", "{\"name\":\"variance\",\"extra\":1}", "--input", sample],
    ];
    for args in bad_configs {
        let (code, _, err) = run_in(t, args);
        ensure(code == 2, || format!("{args:?}: exit {code}, stderr {err}"))?;
    }
    std::fs::write(t.join("unknown_key.json"), r#"{"functional":{"name":"variance"},"tolerance":1}"#).unwrap();
    let (code, _, _) = run_in(t, &["estimate", "--config", "unknown_key.json", "--input", sample]);
    ensure(code == 2, || format!("unknown config key: exit {code}"))?;

    let forced = t.join("forced.csv");
    let (code, _, err) = run_in(
        t,
        &[
            "estimate", "--functional", "variance", "--input", sample, "--levels", "2..3", "--tol", "1e-12",
            "--out", forced.to_str().unwrap(),
        ],
    );
    ensure(code == 3, || format!("forced non-convergence: exit {code}, stderr {err}"))?;
    ensure(forced.exists() && forced.with_extension("json").exists(), || {
        "outputs missing after non-convergence".into()
    })?;
    let report: serde_json::Value = serde_json::from_str(&read(&forced.with_extension("json"))).unwrap();
    ensure(report["converged"] == serde_json::Value::Bool(false), || format!("report {report}"))?;

    Ok("golden outputs reproduced twice; exit codes 1, 2, 3 as expected".into())
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        ("1 oracle, quadratic family", criterion_1),
        ("2 oracle, cubic potential", criterion_2),
        ("3 structural identity", criterion_3),
        ("4 partial-mass linearity", criterion_4),
        ("5 law invariance", criterion_5),
        ("6 quantization bound", criterion_6),
        ("7 convergence rate", criterion_7),
        ("8 interaction equals variance", criterion_8),
        ("9 one-sided quotients", criterion_9),
        ("10 CLI determinism and exit codes", criterion_10),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                println!("FAIL criterion {name}: {detail}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
