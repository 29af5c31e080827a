//! Finitely supported probability measures on the real line, weighted
//! samples standing in for random variables, and dyadic quantization.
//!
//! A [`DiscreteMeasure`] is always kept in canonical form: atoms strictly
//! increasing, exactly coincident atoms merged, every weight positive. Two
//! samples with the same law therefore produce bitwise identical measures,
//! which is what makes every measure-level computation downstream law
//! invariant by construction.
//!
//! Note on the underlying probability space: a sample is a proxy for a
//! random variable on an atomless space, indexed by its entries. Weight
//! splitting refines that index set without changing the variable, which is
//! the operation an atomless space always permits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{compensated_sum, exact_sum, NeumaierSum};

/// Tolerance on the weight sum accepted (and renormalized) by constructors.
pub const RENORMALIZE_TOL: f64 = 1e-9;
/// Tolerance on the weight sum of an already-normalized sample.
pub const SUM_TOL: f64 = 1e-12;
/// Finest supported quantization level.
pub const MAX_LEVEL: u32 = 52;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("no atoms or sample values given")]
    Empty,
    #[error("length mismatch: {values} values but {weights} weights")]
    LengthMismatch { values: usize, weights: usize },
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("negative weight {weight} at index {index}")]
    NegativeWeight { index: usize, weight: f64 },
    #[error("non-positive sample weight {weight} at index {index}")]
    NonPositiveWeight { index: usize, weight: f64 },
    #[error("all weights are zero")]
    ZeroMass,
    #[error("weights sum to {sum}, not within {tol:e} of 1")]
    NotNormalized { sum: f64, tol: f64 },
    #[error("atom index {index} out of range ({len} atoms)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("mass {mass} is not in (0, {available}]")]
    InvalidMass { mass: f64, available: f64 },
    #[error("quantization level {0} exceeds the maximum of {MAX_LEVEL}")]
    LevelTooFine(u32),
}

/// Finitely supported probability measure `Σ p_i δ_{x_i}` in canonical form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteMeasure {
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Builds a canonical measure: atoms sorted, exact duplicates merged,
    /// zero-weight atoms dropped, weights renormalized.
    ///
    /// The weights must sum to 1 within [`RENORMALIZE_TOL`]; anything worse
    /// is rejected rather than silently rescaled.
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        if atoms.len() != weights.len() {
            return Err(MeasureError::LengthMismatch {
                values: atoms.len(),
                weights: weights.len(),
            });
        }
        if atoms.is_empty() {
            return Err(MeasureError::Empty);
        }
        for (index, (&x, &w)) in atoms.iter().zip(&weights).enumerate() {
            if !x.is_finite() {
                return Err(MeasureError::NonFinite { index, value: x });
            }
            if !w.is_finite() {
                return Err(MeasureError::NonFinite { index, value: w });
            }
            if w < 0.0 {
                return Err(MeasureError::NegativeWeight { index, weight: w });
            }
        }
        let raw = Self::from_pairs(atoms.into_iter().zip(weights).collect());
        if raw.atoms.is_empty() {
            return Err(MeasureError::ZeroMass);
        }
        raw.renormalized(RENORMALIZE_TOL)
    }

    /// The Dirac mass at `x`.
    pub fn dirac(x: f64) -> Result<Self, MeasureError> {
        Self::new(vec![x], vec![1.0])
    }

    /// Sort, merge exactly equal atoms and drop zero weights. No
    /// normalization. Inputs are assumed finite.
    pub(crate) fn from_pairs(mut pairs: Vec<(f64, f64)>) -> Self {
        for p in pairs.iter_mut() {
            // -0.0 and 0.0 are the same point
            p.0 += 0.0;
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut atoms = Vec::with_capacity(pairs.len());
        let mut weights = Vec::with_capacity(pairs.len());
        let mut start = 0;
        while start < pairs.len() {
            let x = pairs[start].0;
            let mut end = start + 1;
            while end < pairs.len() && pairs[end].0 == x {
                end += 1;
            }
            let w = exact_sum(pairs[start..end].iter().map(|p| p.1));
            if w > 0.0 {
                atoms.push(x);
                weights.push(w);
            }
            start = end;
        }
        Self { atoms, weights }
    }

    fn renormalized(mut self, tol: f64) -> Result<Self, MeasureError> {
        let total = exact_sum(self.weights.iter().copied());
        if total <= 0.0 {
            return Err(MeasureError::ZeroMass);
        }
        if (total - 1.0).abs() > tol {
            return Err(MeasureError::NotNormalized { sum: total, tol });
        }
        for w in self.weights.iter_mut() {
            *w /= total;
        }
        Ok(self)
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `(x_i, p_i)` pairs in increasing atom order.
    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.atoms.iter().copied().zip(self.weights.iter().copied())
    }

    /// Index of the atom located exactly at `x`.
    pub fn index_of(&self, x: f64) -> Option<usize> {
        self.atoms.binary_search_by(|a| a.total_cmp(&(x + 0.0))).ok()
    }

    pub fn mean(&self) -> f64 {
        compensated_sum(self.iter().map(|(x, p)| p * x))
    }

    /// `Σ p_i x_i²`.
    pub fn second_moment(&self) -> f64 {
        second_moment(self)
    }

    fn check_index(&self, index: usize) -> Result<(), MeasureError> {
        if index >= self.len() {
            return Err(MeasureError::IndexOutOfRange {
                index,
                len: self.len(),
            });
        }
        Ok(())
    }

    /// The measure with atom `index` displaced by `delta`:
    /// `Σ_{j≠i} p_j δ_{x_j} + p_i δ_{x_i+delta}`, re-canonicalized (a
    /// shifted atom landing on a neighbour merges with it).
    pub fn shift_atom(&self, index: usize, delta: f64) -> Result<Self, MeasureError> {
        self.check_index(index)?;
        let moved = self.atoms[index] + delta;
        if !moved.is_finite() {
            return Err(MeasureError::NonFinite { index, value: moved });
        }
        let pairs = self
            .iter()
            .enumerate()
            .map(|(j, (x, p))| if j == index { (moved, p) } else { (x, p) })
            .collect();
        Ok(Self::from_pairs(pairs))
    }

    /// Moves `mass` (at most `p_i`) from atom `index` to `x_i + delta`,
    /// leaving `p_i - mass` behind.
    pub fn move_mass(&self, index: usize, mass: f64, delta: f64) -> Result<Self, MeasureError> {
        self.check_index(index)?;
        let available = self.weights[index];
        if !(mass > 0.0 && mass <= available) {
            return Err(MeasureError::InvalidMass { mass, available });
        }
        let moved = self.atoms[index] + delta;
        if !moved.is_finite() {
            return Err(MeasureError::NonFinite { index, value: moved });
        }
        let mut pairs: Vec<(f64, f64)> = self.iter().collect();
        pairs[index].1 = available - mass;
        pairs.push((moved, mass));
        Ok(Self::from_pairs(pairs))
    }
}

/// Weighted list of sample values: a random variable on a finite index set.
///
/// Order carries identity: two samples with the same sorted values have the
/// same law but are different variables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalSample {
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalSample {
    /// Weights must be positive and sum to 1 within [`SUM_TOL`].
    pub fn new(values: Vec<f64>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        Self::validate(&values, &weights)?;
        let total = exact_sum(weights.iter().copied());
        if (total - 1.0).abs() > SUM_TOL {
            return Err(MeasureError::NotNormalized {
                sum: total,
                tol: SUM_TOL,
            });
        }
        Ok(Self { values, weights })
    }

    /// Like [`EmpiricalSample::new`] but accepts weight sums within
    /// [`RENORMALIZE_TOL`] of 1 and rescales them.
    pub fn normalized(values: Vec<f64>, mut weights: Vec<f64>) -> Result<Self, MeasureError> {
        Self::validate(&values, &weights)?;
        let total = exact_sum(weights.iter().copied());
        if (total - 1.0).abs() > RENORMALIZE_TOL {
            return Err(MeasureError::NotNormalized {
                sum: total,
                tol: RENORMALIZE_TOL,
            });
        }
        if total != 1.0 {
            for w in weights.iter_mut() {
                *w /= total;
            }
        }
        Self::new(values, weights)
    }

    /// The sample `(x_i, p_i)` of a measure, one entry per atom.
    pub fn from_measure(mu: &DiscreteMeasure) -> Self {
        Self {
            values: mu.atoms.clone(),
            weights: mu.weights.clone(),
        }
    }

    /// Equal weights `1/N`.
    pub fn uniform(values: Vec<f64>) -> Result<Self, MeasureError> {
        if values.is_empty() {
            return Err(MeasureError::Empty);
        }
        let w = 1.0 / values.len() as f64;
        let weights = vec![w; values.len()];
        Self::new(values, weights)
    }

    fn validate(values: &[f64], weights: &[f64]) -> Result<(), MeasureError> {
        if values.len() != weights.len() {
            return Err(MeasureError::LengthMismatch {
                values: values.len(),
                weights: weights.len(),
            });
        }
        if values.is_empty() {
            return Err(MeasureError::Empty);
        }
        for (index, (&v, &w)) in values.iter().zip(weights).enumerate() {
            if !v.is_finite() {
                return Err(MeasureError::NonFinite { index, value: v });
            }
            if !w.is_finite() {
                return Err(MeasureError::NonFinite { index, value: w });
            }
            if w <= 0.0 {
                return Err(MeasureError::NonPositiveWeight { index, weight: w });
            }
        }
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same weights, new values. Used to build `ξ + εη`.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, MeasureError> {
        if values.len() != self.values.len() {
            return Err(MeasureError::LengthMismatch {
                values: values.len(),
                weights: self.weights.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(MeasureError::NonFinite { index, value });
        }
        Ok(Self {
            values,
            weights: self.weights.clone(),
        })
    }

    /// The law of the sample; see [`law_of`].
    pub fn law(&self) -> DiscreteMeasure {
        law_of(self)
    }

    /// `E[h(ξ)]` under the sample weights, summed in sample order.
    pub fn expectation(&self, mut h: impl FnMut(f64) -> f64) -> f64 {
        let mut acc = NeumaierSum::new();
        for (&v, &w) in self.values.iter().zip(&self.weights) {
            acc.add(w * h(v));
        }
        acc.value()
    }
}

/// Groups equal values and adds their weights.
///
/// Group weights and the normalizing total are correctly rounded sums, so the
/// result is bitwise invariant under any permutation of the `(value, weight)`
/// pairs and under splits `w = w₁ + w₂` that are exact in floating point.
pub fn law_of(sample: &EmpiricalSample) -> DiscreteMeasure {
    let pairs = sample
        .values
        .iter()
        .copied()
        .zip(sample.weights.iter().copied())
        .collect();
    let mut mu = DiscreteMeasure::from_pairs(pairs);
    let total = exact_sum(mu.weights.iter().copied());
    for w in mu.weights.iter_mut() {
        *w /= total;
    }
    mu
}

/// Dyadic resolution `n`: grid `{i·2⁻ⁿ : i ∈ ℤ}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct QuantizationLevel(u32);

impl QuantizationLevel {
    pub fn new(n: u32) -> Result<Self, MeasureError> {
        if n > MAX_LEVEL {
            return Err(MeasureError::LevelTooFine(n));
        }
        Ok(Self(n))
    }

    pub fn n(self) -> u32 {
        self.0
    }

    /// `2⁻ⁿ`, exact.
    pub fn cell_width(self) -> f64 {
        (-(self.0 as f64)).exp2()
    }

    /// `2ⁿ`, exact.
    pub fn scale(self) -> f64 {
        (self.0 as f64).exp2()
    }

    /// Left endpoint of the half-open cell `[i·2⁻ⁿ, (i+1)·2⁻ⁿ)` containing `x`.
    /// Exact: scaling by a power of two and flooring introduce no rounding.
    #[inline]
    pub fn floor(self, x: f64) -> f64 {
        (x * self.scale()).floor() * self.cell_width() + 0.0
    }

    pub fn next(self) -> Option<Self> {
        Self::new(self.0 + 1).ok()
    }
}

impl TryFrom<u32> for QuantizationLevel {
    type Error = MeasureError;
    fn try_from(n: u32) -> Result<Self, Self::Error> {
        Self::new(n)
    }
}

impl From<QuantizationLevel> for u32 {
    fn from(level: QuantizationLevel) -> u32 {
        level.0
    }
}

impl std::fmt::Display for QuantizationLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Replaces each value `v` by `floor(v·2ⁿ)·2⁻ⁿ`; weights are unchanged.
pub fn dyadic_quantize(
    sample: &EmpiricalSample,
    level: QuantizationLevel,
) -> Result<EmpiricalSample, MeasureError> {
    let values = sample
        .values
        .iter()
        .enumerate()
        .map(|(index, &v)| {
            let q = level.floor(v);
            if q.is_finite() {
                Ok(q)
            } else {
                Err(MeasureError::NonFinite { index, value: v })
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EmpiricalSample {
        values,
        weights: sample.weights.clone(),
    })
}

impl EmpiricalSample {
    pub fn quantize(&self, level: QuantizationLevel) -> Result<Self, MeasureError> {
        dyadic_quantize(self, level)
    }
}

/// `W₂(μ, ν)` through the quantile coupling.
///
/// Walks the merged partition of `[0, 1]` given by both cumulative weight
/// sequences; on each piece both quantile functions are constant, so the
/// integral of the squared difference is a finite sum.
pub fn wasserstein2(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    let ca = cumulative(mu);
    let cb = cumulative(nu);
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = 0.0;
    let mut acc = NeumaierSum::new();
    while i < ca.len() && j < cb.len() {
        let next = ca[i].min(cb[j]);
        let d = mu.atoms[i] - nu.atoms[j];
        acc.add((next - prev) * d * d);
        prev = next;
        if ca[i] == next {
            i += 1;
        }
        if cb[j] == next {
            j += 1;
        }
    }
    acc.value().max(0.0).sqrt()
}

fn cumulative(mu: &DiscreteMeasure) -> Vec<f64> {
    let mut acc = NeumaierSum::new();
    let mut out: Vec<f64> = mu
        .weights
        .iter()
        .map(|&w| {
            acc.add(w);
            acc.value().min(1.0)
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = 1.0;
    }
    out
}

/// `Σ p_i x_i²`, compensated, in sorted-atom order.
pub fn second_moment(mu: &DiscreteMeasure) -> f64 {
    compensated_sum(mu.iter().map(|(x, p)| p * x * x))
}
