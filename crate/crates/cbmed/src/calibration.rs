//! Estimation of the stabilized weight functions
//! `pi_Z(t, z) = f_T(t) / f_{T|Z}(t | z)` by entropy balancing.
//!
//! The weights solve an entropy-maximization problem subject to sample
//! balancing constraints: the weighted cross-moments of the treatment basis
//! `u(T)` and the conditioning basis `v(Z)` must factor into the product of
//! their marginal means. We work with the dual: maximize the strictly concave
//!
//! `G(L) = N^{-1} sum rho(u_i' L v_i) - mean_u' L mean_v`,
//!
//! with `rho(v) = -exp(-v - 1)`, whose gradient is exactly the balancing
//! residual. Weights are `rho'(u' L v) = exp(-u' L v - 1) > 0`, so positivity
//! is structural. A damped Newton iteration with Armijo backtracking is
//! globally convergent here; the Hessian `-N^{-1} sum w_i x_i x_i'` (with
//! `x_i = v_i (x) u_i` and `w_i` the current weights) is negative definite
//! whenever the Kronecker design has full column rank.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::basis::{Basis, BasisError};
use crate::linops;

#[derive(Error, Debug)]
pub enum CalibrationError {
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Linops(#[from] linops::LinopsError),
    #[error("design has {rows} rows but {expected} observations were supplied")]
    RowMismatch { rows: usize, expected: usize },
    #[error("dual solver did not converge: gradient norm {grad_norm:.3e} after {iterations} iterations")]
    NotConverged { grad_norm: f64, iterations: usize },
}

/// Options for the dual solver.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Sup-norm gradient tolerance for declaring convergence.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Ridge floor applied to the (negated) Hessian when it fails to factor.
    pub ridge_floor: f64,
    /// Dual scores below this are floored inside `exp` when evaluating
    /// weights, to avoid overflow; floored evaluations are counted.
    pub score_floor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 100,
            ridge_floor: 1e-10,
            score_floor: -40.0,
        }
    }
}

/// The data of one balancing problem: bases and their design matrices.
#[derive(Debug, Clone)]
pub struct CalibrationProblem {
    pub u_basis: Basis,
    pub v_basis: Basis,
    pub design_u: DMatrix<f64>,
    pub design_v: DMatrix<f64>,
    pub mean_u: DVector<f64>,
    pub mean_v: DVector<f64>,
    /// Row `i` is `v_i (x) u_i` (column-major vec convention).
    kron: DMatrix<f64>,
}

impl CalibrationProblem {
    /// Build the problem from bases and raw data columns
    /// (`t` is N x 1 treatment, `z` is N x arity conditioning data).
    pub fn from_data(
        u_basis: Basis,
        t: &DVector<f64>,
        v_basis: Basis,
        z: &DMatrix<f64>,
    ) -> Result<Self, CalibrationError> {
        let n = t.len();
        if z.nrows() != n {
            return Err(CalibrationError::RowMismatch {
                rows: z.nrows(),
                expected: n,
            });
        }
        let t_matrix = DMatrix::from_column_slice(n, 1, t.as_slice());
        let (design_u, _) = u_basis.design_matrix(&t_matrix)?;
        let (design_v, _) = v_basis.design_matrix(z)?;
        Ok(Self::from_designs(u_basis, v_basis, design_u, design_v))
    }

    pub fn from_designs(
        u_basis: Basis,
        v_basis: Basis,
        design_u: DMatrix<f64>,
        design_v: DMatrix<f64>,
    ) -> Self {
        let n = design_u.nrows();
        let k1 = design_u.ncols();
        let kz = design_v.ncols();
        let mean_u = design_u.row_mean().transpose();
        let mean_v = design_v.row_mean().transpose();
        let mut kron = DMatrix::zeros(n, k1 * kz);
        for i in 0..n {
            for c in 0..kz {
                let vc = design_v[(i, c)];
                for j in 0..k1 {
                    kron[(i, c * k1 + j)] = vc * design_u[(i, j)];
                }
            }
        }
        Self {
            u_basis,
            v_basis,
            design_u,
            design_v,
            mean_u,
            mean_v,
            kron,
        }
    }

    pub fn n(&self) -> usize {
        self.design_u.nrows()
    }

    pub fn k1(&self) -> usize {
        self.design_u.ncols()
    }

    pub fn kz(&self) -> usize {
        self.design_v.ncols()
    }

    /// Kronecker regression design `[v (x) u]` row per observation, shared
    /// with the influence-function conditional-mean regressions.
    pub fn kron_design(&self) -> &DMatrix<f64> {
        &self.kron
    }

    fn mean_kron(&self) -> DVector<f64> {
        self.mean_v.kronecker(&self.mean_u)
    }

    /// Dual score `u(T_i)' L v(Z_i)` at a sample point, from the stored
    /// design rows (bitwise identical to re-evaluating the bases).
    fn score_at_row(&self, lambda: &DMatrix<f64>, i: usize) -> f64 {
        let mut s = 0.0;
        for c in 0..self.kz() {
            let vc = self.design_v[(i, c)];
            if vc == 0.0 {
                continue;
            }
            let mut acc = 0.0;
            for j in 0..self.k1() {
                acc += self.design_u[(i, j)] * lambda[(j, c)];
            }
            s += vc * acc;
        }
        s
    }
}

/// Result of the dual solve.
#[derive(Debug, Clone)]
pub struct CalibrationFit {
    /// Dual coefficient matrix, k1 x kZ.
    pub lambda: DMatrix<f64>,
    /// Final sup-norm of the gradient = the balancing residual.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `rho'(u_i' L v_i)` at the sample points; strictly positive.
    pub in_sample_weights: DVector<f64>,
    /// `N^{-1} sum w_i`; 1 up to the gradient tolerance when constants are in
    /// both spans.
    pub mean_weight: f64,
    /// Times the Hessian needed a ridge to factor.
    pub ridge_events: usize,
}

/// Value and gradient of the dual objective at `lambda`.
///
/// Returns `(-inf, zeros)` when a dual score is so negative that
/// `exp(-score - 1)` would overflow; a line search treats that as a rejected
/// step.
pub fn dual_objective(
    problem: &CalibrationProblem,
    lambda: &DMatrix<f64>,
) -> (f64, DMatrix<f64>) {
    let n = problem.n();
    let vec_lambda = DVector::from_column_slice(lambda.as_slice());
    let scores = &problem.kron * &vec_lambda;
    let mut value = 0.0;
    let mut weights = DVector::zeros(n);
    for i in 0..n {
        let s = scores[i];
        if s < -700.0 {
            return (f64::NEG_INFINITY, DMatrix::zeros(problem.k1(), problem.kz()));
        }
        let w = (-s - 1.0).exp();
        weights[i] = w;
        value -= w; // rho(s) = -exp(-s - 1)
    }
    value /= n as f64;
    value -= problem.mean_u.dot(&(lambda * &problem.mean_v));
    let grad_vec = problem.kron.transpose() * &weights / n as f64 - problem.mean_kron();
    let gradient = DMatrix::from_column_slice(problem.k1(), problem.kz(), grad_vec.as_slice());
    (value, gradient)
}

/// Maximize the dual objective by damped Newton with Armijo backtracking.
///
/// Initialization uses the constant-reproducing coefficients of both bases,
/// `L0 = -c_u c_v'`, so every initial weight is exactly 1. Convergence is
/// declared at `grad sup-norm <= tolerance`; the iteration keeps polishing
/// toward machine precision while progress is possible, so the final
/// residual is typically far below the tolerance.
pub fn solve_dual(
    problem: &CalibrationProblem,
    options: &SolverOptions,
) -> Result<CalibrationFit, CalibrationError> {
    let n = problem.n();
    let k1 = problem.k1();
    let kz = problem.kz();
    let dim = k1 * kz;
    let nf = n as f64;
    let kron = &problem.kron;
    let mean_kron = problem.mean_kron();

    let c_u = problem.u_basis.constant_coefficients();
    let c_v = problem.v_basis.constant_coefficients();
    let mut vec_lambda = -c_v.kronecker(&c_u);
    debug_assert_eq!(vec_lambda.len(), dim);

    let objective = |scores: &DVector<f64>, vec_l: &DVector<f64>| -> f64 {
        let mut value = 0.0;
        for i in 0..n {
            let s = scores[i];
            if s < -700.0 {
                return f64::NEG_INFINITY;
            }
            value -= (-s - 1.0).exp();
        }
        value / nf - mean_kron.dot(vec_l)
    };

    let mut scores = kron * &vec_lambda;
    let mut value = objective(&scores, &vec_lambda);
    let mut ridge_events = 0usize;
    let mut iterations = 0usize;
    let mut grad_norm;

    // Newton loop; `hard_target` keeps polishing past the user tolerance
    // while full steps still improve things.
    let hard_target = (options.tolerance * 1e-4).max(1e-14);
    while iterations < options.max_iterations {
        let weights = scores.map(|s| (-s - 1.0).exp());
        let grad = kron.transpose() * &weights / nf - &mean_kron;
        grad_norm = grad.amax();
        if grad_norm <= hard_target {
            break;
        }

        // Negated Hessian N^{-1} K' diag(w) K, positive definite.
        let mut kw = kron.clone();
        for i in 0..n {
            let w = weights[i];
            for c in 0..dim {
                kw[(i, c)] *= w;
            }
        }
        let neg_hessian = kron.transpose() * kw / nf;
        let factor = match linops::spd_cholesky(&neg_hessian, options.ridge_floor) {
            Ok(f) => {
                if f.diagnostics.ridge_applied {
                    ridge_events += 1;
                }
                f
            }
            Err(_) => return Err(CalibrationError::NotConverged {
                grad_norm,
                iterations,
            }),
        };
        let direction = factor.solve_vector(&grad);
        let slope = grad.dot(&direction);
        if !slope.is_finite() || slope <= 0.0 {
            break;
        }
        let dir_scores = kron * &direction;
        let lin_dir = mean_kron.dot(&direction);

        // Armijo backtracking on the concave objective.
        let mut alpha = 1.0f64;
        let mut accepted = false;
        for _ in 0..60 {
            let trial_scores = &scores + alpha * &dir_scores;
            let mut trial_value = 0.0;
            let mut overflow = false;
            for i in 0..n {
                let s = trial_scores[i];
                if s < -700.0 {
                    overflow = true;
                    break;
                }
                trial_value -= (-s - 1.0).exp();
            }
            if !overflow {
                trial_value = trial_value / nf - mean_kron.dot(&vec_lambda) - alpha * lin_dir;
                if trial_value >= value + 1e-4 * alpha * slope {
                    vec_lambda += alpha * &direction;
                    scores = trial_scores;
                    value = trial_value;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        iterations += 1;
        if !accepted {
            // Near the optimum the objective is flat to machine precision and
            // Armijo cannot resolve progress; the full Newton step still
            // contracts the gradient, so accept it on that evidence alone.
            let trial_scores = &scores + &dir_scores;
            if trial_scores.iter().all(|&s| s > -700.0) {
                let trial_weights = trial_scores.map(|s| (-s - 1.0).exp());
                let trial_grad = kron.transpose() * &trial_weights / nf - &mean_kron;
                if trial_grad.amax() < grad_norm {
                    vec_lambda += &direction;
                    scores = trial_scores;
                    value = objective(&scores, &vec_lambda);
                    continue;
                }
            }
            break; // genuinely stalled
        }
    }

    // Final gradient at the accepted point.
    let weights = scores.map(|s| (-s - 1.0).exp());
    let grad = kron.transpose() * &weights / nf - &mean_kron;
    grad_norm = grad.amax();
    let converged = grad_norm <= options.tolerance;

    let lambda = DMatrix::from_column_slice(k1, kz, vec_lambda.as_slice());
    // In-sample weights via the per-row score path so that out-of-sample
    // evaluation at a data point reproduces them bit for bit.
    let mut in_sample = DVector::zeros(n);
    for i in 0..n {
        let s = problem.score_at_row(&lambda, i);
        in_sample[i] = (-s.max(options.score_floor) - 1.0).exp();
    }
    let mean_weight = in_sample.mean();

    Ok(CalibrationFit {
        lambda,
        grad_norm,
        iterations,
        converged,
        in_sample_weights: in_sample,
        mean_weight,
        ridge_events,
    })
}

/// A calibration problem together with its solved fit; evaluates weights at
/// arbitrary (possibly shifted) arguments. Evaluation is read-only and
/// thread-safe; clip and extrapolation events are counted atomically.
#[derive(Debug)]
pub struct FittedWeights {
    pub problem: CalibrationProblem,
    pub fit: CalibrationFit,
    pub score_floor: f64,
    clip_events: AtomicUsize,
    extrapolations: AtomicUsize,
}

impl Clone for FittedWeights {
    fn clone(&self) -> Self {
        Self {
            problem: self.problem.clone(),
            fit: self.fit.clone(),
            score_floor: self.score_floor,
            clip_events: AtomicUsize::new(self.clip_events.load(Ordering::Relaxed)),
            extrapolations: AtomicUsize::new(self.extrapolations.load(Ordering::Relaxed)),
        }
    }
}

impl FittedWeights {
    pub fn new(problem: CalibrationProblem, fit: CalibrationFit, score_floor: f64) -> Self {
        Self {
            problem,
            fit,
            score_floor,
            clip_events: AtomicUsize::new(0),
            extrapolations: AtomicUsize::new(0),
        }
    }

    pub fn solve(
        u_basis: Basis,
        t: &DVector<f64>,
        v_basis: Basis,
        z: &DMatrix<f64>,
        options: &SolverOptions,
    ) -> Result<Self, CalibrationError> {
        let problem = CalibrationProblem::from_data(u_basis, t, v_basis, z)?;
        let fit = solve_dual(&problem, options)?;
        Ok(Self::new(problem, fit, options.score_floor))
    }

    fn score(&self, t: f64, z: &[f64]) -> Result<f64, CalibrationError> {
        let k1 = self.problem.k1();
        let kz = self.problem.kz();
        let mut ubuf = [0.0f64; 64];
        let mut vbuf = [0.0f64; 64];
        let (uslice, u_extrap): (&[f64], bool) = if k1 <= 64 {
            let e = self.problem.u_basis.evaluate_into(&[t], &mut ubuf[..k1])?;
            (&ubuf[..k1], e)
        } else {
            return self.score_alloc(t, z);
        };
        if kz > 64 {
            return self.score_alloc(t, z);
        }
        let v_extrap = self.problem.v_basis.evaluate_into(z, &mut vbuf[..kz])?;
        if u_extrap || v_extrap {
            self.extrapolations.fetch_add(1, Ordering::Relaxed);
        }
        let lambda = &self.fit.lambda;
        let mut s = 0.0;
        for c in 0..kz {
            let vc = vbuf[c];
            if vc == 0.0 {
                continue;
            }
            let mut acc = 0.0;
            for (j, uj) in uslice.iter().enumerate() {
                acc += uj * lambda[(j, c)];
            }
            s += vc * acc;
        }
        Ok(s)
    }

    fn score_alloc(&self, t: f64, z: &[f64]) -> Result<f64, CalibrationError> {
        let (u, eu) = self.problem.u_basis.evaluate(&[t])?;
        let (v, ev) = self.problem.v_basis.evaluate(z)?;
        if eu || ev {
            self.extrapolations.fetch_add(1, Ordering::Relaxed);
        }
        Ok(u.dot(&(&self.fit.lambda * v)))
    }

    /// `pi(t, z) = exp(-u(t)' L v(z) - 1) > 0`, with the score floored to
    /// avoid overflow (floored evaluations are counted).
    pub fn weight(&self, t: f64, z: &[f64]) -> Result<f64, CalibrationError> {
        let s = self.score(t, z)?;
        let floored = s.max(self.score_floor);
        if floored != s {
            self.clip_events.fetch_add(1, Ordering::Relaxed);
        }
        Ok((-floored - 1.0).exp())
    }

    /// `pi(t, z) / pi(t_shift, z) = exp(-(u(t) - u(t_shift))' L v(z))`;
    /// exactly 1 when `t == t_shift`. Computed on the combined exponent so
    /// the ratio of two extreme weights cannot overflow; the exponent is
    /// clipped symmetrically at the score floor.
    pub fn ratio(&self, t: f64, t_shift: f64, z: &[f64]) -> Result<f64, CalibrationError> {
        if t == t_shift {
            return Ok(1.0);
        }
        let d = self.score(t, z)? - self.score(t_shift, z)?;
        let bound = -self.score_floor;
        let clipped = d.clamp(-bound, bound);
        if clipped != d {
            self.clip_events.fetch_add(1, Ordering::Relaxed);
        }
        Ok((-clipped).exp())
    }

    pub fn clip_events(&self) -> usize {
        self.clip_events.load(Ordering::Relaxed)
    }

    pub fn extrapolation_events(&self) -> usize {
        self.extrapolations.load(Ordering::Relaxed)
    }
}
