//! Nonparametric estimation of natural direct and indirect mediation effects
//! under a general (binary, multi-valued, continuous, or mixed) treatment.
//!
//! The core idea: the mean cross-world potential outcome `mu(t, t')` is a
//! weighted conditional expectation of the observed outcome given the
//! treatment, where the stabilized weights `pi_Z(t, z) = f_T(t) / f_{T|Z}(t|z)`
//! (for `Z = X` and `Z = (M, X)`) are estimated *as a whole* by maximizing a
//! strictly concave entropy dual subject to an expanding set of balancing
//! moment conditions — no density ratios are ever formed explicitly.
//!
//! Modules:
//! - [`basis`]: sieve bases (power, B-spline, indicator, mixed, tensor).
//! - [`calibration`]: the entropy-balancing dual solver and weight evaluation.
//! - [`kernels`]: kernel primitives, bandwidth rules, conditional densities.
//! - [`estimators`]: series (CBS) and kernel (CBK) effect estimators plus
//!   OLS and IPW baselines and effect decompositions.
//! - [`inference`]: influence-function plug-in variance and bootstrap bands.
//! - [`tuning`]: generalized CV and leave-one-out CV for sieve dimensions.
//! - [`simlab`]: simulation designs, analytic oracles, and the Monte Carlo
//!   harness.
//! - [`data`]: dataset container and CSV ingestion.
//! - [`linops`]: shared dense linear algebra (SPD solves, least squares).

pub mod basis;
pub mod calibration;
pub mod data;
pub mod estimators;
pub mod kernels;
pub mod linops;
pub mod simlab;
pub mod inference;
pub mod tuning;

pub use basis::{Basis, BasisError, BasisFamily, BasisSpec};
pub use calibration::{CalibrationFit, CalibrationProblem, FittedWeights, SolverOptions};
pub use data::{DataError, Dataset, TreatmentKind};
pub use estimators::{EffectCurve, MediationFit, Method, Panel};
pub use inference::{PluginSettings, VarianceReport};
pub use kernels::{KernelFamily, KernelSpec};
pub use simlab::{DgpSpec, McConfig, McReport, Scenario};
pub use tuning::{TuningGrid, TuningResult};
