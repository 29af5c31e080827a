//! Law-level functionals `f: P₂(ℝ) → ℝ` and the built-in registry.
//!
//! A functional takes a [`DiscreteMeasure`], never a sample, so its lift
//! `F(ξ) := f(law(ξ))` is law invariant by construction.
//!
//! Closed-form Lions derivatives of the built-ins (treated as hypotheses and
//! checked against finite differences of `eval` in the tests):
//!
//! | functional | `f(μ)` | `g(μ, x)` |
//! |---|---|---|
//! | `linear` | `∫ φ dμ` | `φ'(x)` |
//! | `mean_square` | `(∫ y dμ)²` | `2 m(μ)` |
//! | `variance` | `∫ y² dμ − m(μ)²` | `2x − 2 m(μ)` |
//! | `interaction` | `∬ w(y − z) μ(dy) μ(dz)` | `∫ [w'(x − z) − w'(z − x)] μ(dz)` |
//!
//! For the interaction term, moving the mass `p_i` at `x_i` by `ε` changes
//! both the `y = x_i` and the `z = x_i` slices, which produces the two `w'`
//! terms; the diagonal `w(0)` is unaffected.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::measure::DiscreteMeasure;
use crate::numeric::{compensated_sum, NeumaierSum};

/// Highest polynomial degree accepted for potentials.
pub const MAX_DEGREE: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FunctionalError {
    #[error("functional `{0}` has no closed-form derivative")]
    NoClosedForm(String),
    #[error("unknown functional `{0}`")]
    Unknown(String),
    #[error("functional `{0}` is already registered")]
    Duplicate(String),
    #[error("invalid parameters for `{name}`: {reason}")]
    InvalidParams { name: String, reason: String },
    #[error("functional spec must be a JSON object with a string `name` field")]
    MissingName,
    #[error("polynomial needs 1..={max} coefficients, got {got}", max = MAX_DEGREE + 1)]
    BadDegree { got: usize },
    #[error("polynomial coefficient {index} is not finite")]
    NonFiniteCoefficient { index: usize },
}

/// `f: P₂(ℝ) → ℝ`, evaluated on canonical measures.
///
/// `eval` must be pure and deterministic: identical canonical measures give
/// bitwise identical values.
pub trait Functional: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// Parameters as they appear in a functional spec (without `name`).
    fn params(&self) -> Value {
        Value::Object(Map::new())
    }

    fn eval(&self, mu: &DiscreteMeasure) -> f64;

    /// Closed-form `g(μ, x)`, when known.
    fn analytic_g(&self, _mu: &DiscreteMeasure, _x: f64) -> Option<f64> {
        None
    }

    /// Upper bound on `|central quotient at step eps − g(μ, x_i)|` over the
    /// atoms of `mu`, when the functional can provide one.
    fn truncation_bound(&self, _mu: &DiscreteMeasure, _eps: f64) -> Option<f64> {
        None
    }

    /// Free-text flag for nonsmooth behaviour.
    fn smoothness_note(&self) -> Option<&str> {
        None
    }

    /// The `{"name": ..., params...}` spec this functional answers to.
    fn spec(&self) -> Value {
        let mut obj = match self.params() {
            Value::Object(map) => map,
            _ => Map::new(),
        };
        obj.insert("name".into(), Value::String(self.name().to_string()));
        Value::Object(obj)
    }
}

/// `f(μ)`.
pub fn eval(f: &dyn Functional, mu: &DiscreteMeasure) -> f64 {
    f.eval(mu)
}

/// Closed-form Lions derivative or [`FunctionalError::NoClosedForm`].
pub fn analytic_g(f: &dyn Functional, mu: &DiscreteMeasure, x: f64) -> Result<f64, FunctionalError> {
    f.analytic_g(mu, x)
        .ok_or_else(|| FunctionalError::NoClosedForm(f.name().to_string()))
}

/// Polynomial `Σ c_j x^j` with ascending coefficients, degree at most
/// [`MAX_DEGREE`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Result<Self, FunctionalError> {
        if coeffs.is_empty() || coeffs.len() > MAX_DEGREE + 1 {
            return Err(FunctionalError::BadDegree { got: coeffs.len() });
        }
        if let Some(index) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(FunctionalError::NonFiniteCoefficient { index });
        }
        Ok(Self { coeffs })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs
            .iter()
            .rposition(|&c| c != 0.0)
            .unwrap_or(0)
    }

    /// Horner evaluation.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Self {
        let coeffs: Vec<f64> = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(j, &c)| j as f64 * c)
            .collect();
        if coeffs.is_empty() {
            Self { coeffs: vec![0.0] }
        } else {
            Self { coeffs }
        }
    }

    /// `Σ |c_j| r^j`, an upper bound of `|p|` on `[−r, r]`.
    pub fn abs_bound(&self, radius: f64) -> f64 {
        let r = radius.abs();
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * r + c.abs())
    }
}

/// `f(μ) = ∫ φ dμ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    phi: Polynomial,
    dphi: Polynomial,
    d3phi: Polynomial,
}

impl Linear {
    pub fn new(phi: Polynomial) -> Self {
        let dphi = phi.derivative();
        let d3phi = dphi.derivative().derivative();
        Self { phi, dphi, d3phi }
    }

    pub fn phi(&self) -> &Polynomial {
        &self.phi
    }
}

impl Functional for Linear {
    fn name(&self) -> &str {
        "linear"
    }

    fn params(&self) -> Value {
        serde_json::json!({ "phi": self.phi.coeffs })
    }

    fn eval(&self, mu: &DiscreteMeasure) -> f64 {
        compensated_sum(mu.iter().map(|(x, p)| p * self.phi.eval(x)))
    }

    fn analytic_g(&self, _mu: &DiscreteMeasure, x: f64) -> Option<f64> {
        Some(self.dphi.eval(x))
    }

    fn truncation_bound(&self, mu: &DiscreteMeasure, eps: f64) -> Option<f64> {
        // (φ(x+ε) − φ(x−ε))/(2ε) − φ'(x) = ε² φ‴(ζ)/6
        let radius = support_radius(mu) + eps;
        Some(eps * eps * self.d3phi.abs_bound(radius) / 6.0)
    }
}

/// `f(μ) = (∫ y dμ)²`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanSquare;

impl Functional for MeanSquare {
    fn name(&self) -> &str {
        "mean_square"
    }

    fn eval(&self, mu: &DiscreteMeasure) -> f64 {
        let m = mu.mean();
        m * m
    }

    fn analytic_g(&self, mu: &DiscreteMeasure, _x: f64) -> Option<f64> {
        Some(2.0 * mu.mean())
    }

    fn truncation_bound(&self, _mu: &DiscreteMeasure, _eps: f64) -> Option<f64> {
        Some(0.0)
    }
}

/// `f(μ) = ∫ (y − m)² dμ`, two-pass.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Variance;

impl Functional for Variance {
    fn name(&self) -> &str {
        "variance"
    }

    fn eval(&self, mu: &DiscreteMeasure) -> f64 {
        let m = mu.mean();
        compensated_sum(mu.iter().map(|(x, p)| {
            let d = x - m;
            p * d * d
        }))
    }

    fn analytic_g(&self, mu: &DiscreteMeasure, x: f64) -> Option<f64> {
        Some(2.0 * x - 2.0 * mu.mean())
    }

    fn truncation_bound(&self, _mu: &DiscreteMeasure, _eps: f64) -> Option<f64> {
        Some(0.0)
    }
}

/// `f(μ) = ∬ w(y − z) μ(dy) μ(dz)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    w: Polynomial,
    dw: Polynomial,
    d3w: Polynomial,
}

impl Interaction {
    pub fn new(w: Polynomial) -> Self {
        let dw = w.derivative();
        let d3w = dw.derivative().derivative();
        Self { w, dw, d3w }
    }

    pub fn kernel(&self) -> &Polynomial {
        &self.w
    }
}

impl Functional for Interaction {
    fn name(&self) -> &str {
        "interaction"
    }

    fn params(&self) -> Value {
        serde_json::json!({ "w": self.w.coeffs })
    }

    fn eval(&self, mu: &DiscreteMeasure) -> f64 {
        let mut outer = NeumaierSum::new();
        for (y, py) in mu.iter() {
            let inner = compensated_sum(mu.iter().map(|(z, pz)| pz * self.w.eval(y - z)));
            outer.add(py * inner);
        }
        outer.value()
    }

    fn analytic_g(&self, mu: &DiscreteMeasure, x: f64) -> Option<f64> {
        Some(compensated_sum(
            mu.iter()
                .map(|(z, p)| p * (self.dw.eval(x - z) - self.dw.eval(z - x))),
        ))
    }

    fn truncation_bound(&self, mu: &DiscreteMeasure, eps: f64) -> Option<f64> {
        // Two central quotients of w per neighbour, each off by ε² w‴/6.
        let spread = match (mu.atoms().first(), mu.atoms().last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        };
        Some(eps * eps * self.d3w.abs_bound(spread + eps) / 3.0)
    }
}

fn support_radius(mu: &DiscreteMeasure) -> f64 {
    mu.atoms().iter().fold(0.0_f64, |r, x| r.max(x.abs()))
}

/// Builds a functional from the parameter object of a spec.
pub type Factory =
    Arc<dyn Fn(&Map<String, Value>) -> Result<Arc<dyn Functional>, FunctionalError> + Send + Sync>;

/// Name → constructor table. Populated once at startup, then read-only.
#[derive(Clone, Default)]
pub struct Registry {
    entries: BTreeMap<String, Factory>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("names", &self.names())
            .finish()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoParams {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearParams {
    phi: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InteractionParams {
    w: Vec<f64>,
}

fn parse_params<T: for<'de> Deserialize<'de>>(
    name: &str,
    params: &Map<String, Value>,
) -> Result<T, FunctionalError> {
    serde_json::from_value(Value::Object(params.clone())).map_err(|e| FunctionalError::InvalidParams {
        name: name.to_string(),
        reason: e.to_string(),
    })
}

impl Registry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry holding exactly `linear`, `mean_square`, `variance` and
    /// `interaction`.
    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register(
            "linear",
            Arc::new(|params| {
                let p: LinearParams = parse_params("linear", params)?;
                Ok(Arc::new(Linear::new(Polynomial::new(p.phi)?)) as Arc<dyn Functional>)
            }),
        )
        .expect("fresh registry");
        reg.register(
            "mean_square",
            Arc::new(|params| {
                parse_params::<NoParams>("mean_square", params)?;
                Ok(Arc::new(MeanSquare) as Arc<dyn Functional>)
            }),
        )
        .expect("fresh registry");
        reg.register(
            "variance",
            Arc::new(|params| {
                parse_params::<NoParams>("variance", params)?;
                Ok(Arc::new(Variance) as Arc<dyn Functional>)
            }),
        )
        .expect("fresh registry");
        reg.register(
            "interaction",
            Arc::new(|params| {
                let p: InteractionParams = parse_params("interaction", params)?;
                Ok(Arc::new(Interaction::new(Polynomial::new(p.w)?)) as Arc<dyn Functional>)
            }),
        )
        .expect("fresh registry");
        reg
    }

    pub fn register(&mut self, name: &str, factory: Factory) -> Result<(), FunctionalError> {
        if self.entries.contains_key(name) {
            return Err(FunctionalError::Duplicate(name.to_string()));
        }
        self.entries.insert(name.to_string(), factory);
        Ok(())
    }

    /// Registers a fixed, parameterless functional under its own name.
    pub fn register_functional(&mut self, f: Arc<dyn Functional>) -> Result<(), FunctionalError> {
        let name = f.name().to_string();
        let factory_name = name.clone();
        self.register(
            &name,
            Arc::new(move |params| {
                parse_params::<NoParams>(&factory_name, params)?;
                Ok(f.clone())
            }),
        )
    }

    pub fn lookup(&self, name: &str, params: &Value) -> Result<Arc<dyn Functional>, FunctionalError> {
        let factory = self
            .entries
            .get(name)
            .ok_or_else(|| FunctionalError::Unknown(name.to_string()))?;
        match params {
            Value::Object(map) => factory(map),
            Value::Null => factory(&Map::new()),
            other => Err(FunctionalError::InvalidParams {
                name: name.to_string(),
                reason: format!("expected an object, got {other}"),
            }),
        }
    }

    /// Resolves `{"name": "...", ...params}`.
    pub fn from_spec(&self, spec: &Value) -> Result<Arc<dyn Functional>, FunctionalError> {
        let obj = spec.as_object().ok_or(FunctionalError::MissingName)?;
        let name = obj
            .get("name")
            .and_then(Value::as_str)
            .ok_or(FunctionalError::MissingName)?;
        let mut params = obj.clone();
        params.remove("name");
        self.lookup(name, &Value::Object(params))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }
}
