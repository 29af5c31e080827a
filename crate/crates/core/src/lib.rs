//! Lions (Wasserstein) derivatives of law-invariant functionals on `P₂(ℝ)`.
//!
//! A functional `f` of a probability measure is lifted to random variables
//! by `F(ξ) := f(law(ξ))`. Its Fréchet derivative has the structure
//! `DF(ξ) = g(ξ)` for a deterministic `g` that depends on `ξ` only through
//! its law. This crate computes `g` constructively:
//!
//! 1. floor the sample onto the dyadic grid `i·2⁻ⁿ` ([`measure::dyadic_quantize`]);
//! 2. at every grid atom, shift that atom's mass by `ε` and take the
//!    extrapolated difference quotient divided by the atom's mass
//!    ([`estimator::lions_derivative_at_atom`]);
//! 3. extend piecewise-constantly and refine `n` until the extensions agree
//!    in `L²(law)` ([`estimator::refine_until_converged`]).
//!
//! [`verify`] turns the structural statements into executable checks and
//! [`io`] holds the CSV formats used by the command-line tool.

pub mod estimator;
pub mod functionals;
pub mod io;
pub mod measure;
pub mod numeric;
pub mod verify;

pub use estimator::{
    directional_derivative, lions_derivative_at_atom, lions_derivative_grid,
    partial_mass_perturbation, refine_until_converged, AtomDerivative, ConvergenceReport,
    DerivativeEstimate, DifferenceMode, Direction, EstimatorError, SchedulePolicy, StepSchedule,
};
pub use functionals::{Functional, FunctionalError, Polynomial, Registry};
pub use measure::{
    dyadic_quantize, law_of, second_moment, wasserstein2, DiscreteMeasure, EmpiricalSample,
    MeasureError, QuantizationLevel,
};
pub use verify::{Status, VerificationReport};
