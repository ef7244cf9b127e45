//! Influence-function plug-in variance for the series estimator, and
//! bootstrap confidence bands.
//!
//! For a weight target `Z` (either `X` or `(M, X)`), the first-order
//! expansion of the calibrated weights acts on a test function `phi` through
//! six terms per observation:
//!
//! ```text
//! IF_i{d, phi} = pi(T_i + d, Z_i) phi(T_i, .)
//!              - pi(T_i, Z_i) r_i E[phi(T - d, .) | T_i, Z_i]
//!              + E[g | Z_i] - E[g] + E[g | T_i] - E[g],
//! with r_i = f(T_i - d | Z_i) / f(T_i | Z_i),   g = pi(T, Z) r phi(T - d, .)
//! ```
//!
//! The plug-ins: `pi` is the calibrated weight (or an analytic truth in
//! simulation mode), the density ratio comes from kernel conditional
//! densities, conditional means are least-squares sieve regressions, and
//! outer means are sample averages. The variance of the series estimate at
//! `(t, t')` is then the sandwich quadratic form in the assembled
//! per-observation vectors.
//!
//! Nuisance evaluations at treatment levels with zero conditional mass can
//! be infinite; every such value enters multiplied by a factor that vanishes
//! on the same event (an out-of-support basis vector or a vanishing density
//! ratio), so products are formed with `0 * inf = 0` semantics. Estimated
//! nuisances are finite by construction and never hit that path.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::sync::atomic::{AtomicUsize, Ordering};
use thiserror::Error;

use crate::basis::{Basis, BasisError};
use crate::calibration::CalibrationError;
use crate::data::Dataset;
use crate::estimators::{EffectCurve, EstimatorError, MediationFit, Method, Panel};
use crate::kernels::{
    self, conditional_density_ratios, KernelError, KernelFamily, KernelSpec, TreatmentSmoothing,
};
use crate::linops::{self, SpdFactor};

#[derive(Error, Debug)]
pub enum InferenceError {
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Linops(#[from] linops::LinopsError),
    #[error(transparent)]
    Estimator(#[from] Box<EstimatorError>),
    #[error("{dropped} of {total} bootstrap replicates failed (more than 10%)")]
    TooManyDropped { dropped: usize, total: usize },
    #[error("bootstrap needs B >= 50, got {0}")]
    TooFewReplicates(usize),
}

impl From<EstimatorError> for InferenceError {
    fn from(e: EstimatorError) -> Self {
        InferenceError::Estimator(Box::new(e))
    }
}

/// Settings for the variance plug-ins.
#[derive(Debug, Clone, Copy)]
pub struct PluginSettings {
    /// Kernel family for the conditional-density plug-ins. Gaussian by
    /// default so the ratio denominators never vanish exactly.
    pub density_family: KernelFamily,
    /// Floor applied to the denominator density in the ratio.
    pub density_floor: f64,
}

impl Default for PluginSettings {
    fn default() -> Self {
        Self {
            density_family: KernelFamily::Gaussian,
            density_floor: 1e-12,
        }
    }
}

/// Supplier of weight and conditional-density-ratio evaluations, either the
/// fitted estimates or analytic truths (simulation mode).
pub trait NuisanceSource: Sync {
    /// `pi_X(t, X_i)`; finite for every `t`.
    fn pi_x(&self, t: f64, i: usize) -> f64;
    /// `pi_MX(t, M_i, X_i)`; may be `+inf` where level `t` has zero
    /// conditional mass given `(M_i, X_i)`.
    fn pi_mx(&self, t: f64, i: usize) -> f64;
    /// `pi_MX(a, M_i, X_i) / pi_MX(b, M_i, X_i)`, evaluated ratio-first:
    /// zero whenever either level has zero conditional mass.
    fn ratio_mx(&self, a: f64, b: f64, i: usize) -> f64;
    /// `pi_X(t, X_i) / pi_MX(t, M_i, X_i)`.
    fn x_over_mx(&self, t: f64, i: usize) -> f64;
    /// `f_{T|X}(T_i - delta | X_i) / f_{T|X}(T_i | X_i)` for all `i`.
    fn shift_ratio_x(&self, delta: f64) -> Result<Vec<f64>, InferenceError>;
    /// Same with `Z = (M, X)`.
    fn shift_ratio_mx(&self, delta: f64) -> Result<Vec<f64>, InferenceError>;
    /// Density-floor activations so far.
    fn floored(&self) -> usize {
        0
    }
}

/// Estimated nuisances: calibrated weights plus kernel density ratios with
/// rule-of-thumb bandwidths.
pub struct EstimatedNuisances<'a> {
    fit: &'a MediationFit,
    settings: PluginSettings,
    t_kernel_x: TreatmentSmoothing,
    t_kernel_mx: TreatmentSmoothing,
    z_kernels_x: Vec<KernelSpec>,
    z_kernels_mx: Vec<KernelSpec>,
    x_data: DMatrix<f64>,
    mx_data: DMatrix<f64>,
    floored: AtomicUsize,
}

impl<'a> EstimatedNuisances<'a> {
    pub fn new(fit: &'a MediationFit, settings: PluginSettings) -> Result<Self, InferenceError> {
        let data = &fit.dataset;
        let x_data = data.x_matrix();
        let mx_data = data.mx_matrix();
        let family = settings.density_family;
        let dim_x = 1 + data.r();
        let dim_mx = 1 + data.s() + data.r();
        let z_kernels_x = kernels::plugin_bandwidths(&x_data, dim_x, family)?;
        let z_kernels_mx = kernels::plugin_bandwidths(&mx_data, dim_mx, family)?;
        let t_slice = data.t.as_slice();
        let make_t = |joint_dim: usize| -> Result<TreatmentSmoothing, InferenceError> {
            Ok(match &data.treatment {
                crate::data::TreatmentKind::Discrete { .. } => TreatmentSmoothing::Discrete,
                _ => {
                    let n = data.n() as f64;
                    let sd = {
                        let mean = t_slice.iter().sum::<f64>() / n;
                        (t_slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                            / (n - 1.0))
                            .sqrt()
                    };
                    let h = family.rule_of_thumb_constant()
                        * sd
                        * n.powf(-1.0 / (4.0 + joint_dim as f64));
                    TreatmentSmoothing::Continuous(KernelSpec::new(family, h)?)
                }
            })
        };
        Ok(Self {
            fit,
            settings,
            t_kernel_x: make_t(dim_x)?,
            t_kernel_mx: make_t(dim_mx)?,
            z_kernels_x,
            z_kernels_mx,
            x_data,
            mx_data,
            floored: AtomicUsize::new(0),
        })
    }
}

impl NuisanceSource for EstimatedNuisances<'_> {
    fn pi_x(&self, t: f64, i: usize) -> f64 {
        self.fit
            .x_weights
            .weight(t, &self.fit.dataset.x_row(i))
            .expect("weight evaluation cannot fail on finite inputs")
    }

    fn pi_mx(&self, t: f64, i: usize) -> f64 {
        self.fit
            .mx_weights
            .weight(t, &self.fit.dataset.mx_row(i))
            .expect("weight evaluation cannot fail on finite inputs")
    }

    fn ratio_mx(&self, a: f64, b: f64, i: usize) -> f64 {
        self.fit
            .mx_weights
            .ratio(a, b, &self.fit.dataset.mx_row(i))
            .expect("weight evaluation cannot fail on finite inputs")
    }

    fn x_over_mx(&self, t: f64, i: usize) -> f64 {
        self.pi_x(t, i) / self.pi_mx(t, i)
    }

    fn shift_ratio_x(&self, delta: f64) -> Result<Vec<f64>, InferenceError> {
        let r = conditional_density_ratios(
            self.fit.dataset.t.as_slice(),
            &self.x_data,
            delta,
            &self.t_kernel_x,
            &self.z_kernels_x,
            self.settings.density_floor,
        )?;
        self.floored.fetch_add(r.floored, Ordering::Relaxed);
        Ok(r.ratios)
    }

    fn shift_ratio_mx(&self, delta: f64) -> Result<Vec<f64>, InferenceError> {
        let r = conditional_density_ratios(
            self.fit.dataset.t.as_slice(),
            &self.mx_data,
            delta,
            &self.t_kernel_mx,
            &self.z_kernels_mx,
            self.settings.density_floor,
        )?;
        self.floored.fetch_add(r.floored, Ordering::Relaxed);
        Ok(r.ratios)
    }

    fn floored(&self) -> usize {
        self.floored.load(Ordering::Relaxed)
    }
}

/// `a * b` with the overlap convention `0 * inf = 0`: an infinite weight is
/// only ever paired with a factor that vanishes on the same event.
#[inline]
fn safe_mul(a: f64, b: f64) -> f64 {
    if (a.is_infinite() && b == 0.0) || (b.is_infinite() && a == 0.0) {
        0.0
    } else {
        a * b
    }
}

/// Which conditioning set an influence term expands around.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightTarget {
    X,
    Mx,
}

/// Design matrices (and their factorizations) for the conditional-mean
/// regressions inside the influence terms.
pub struct RegressionDesigns {
    /// `u_{k1} (x) v_{kX}` design for `E[. | T, X]`.
    pub kron_x: DMatrix<f64>,
    /// `v_{kX}` design for `E[. | X]`.
    pub v_x: DMatrix<f64>,
    /// `u_{k1} (x) v_{kMX}` design for `E[. | T, M, X]`.
    pub kron_mx: DMatrix<f64>,
    /// `v_{kMX}` design for `E[. | M, X]`.
    pub v_mx: DMatrix<f64>,
    /// `u_{K0}` design for `E[. | T]`.
    pub u0: DMatrix<f64>,
    factors: [SpdFactor; 5],
    pub ridge_events: usize,
}

impl RegressionDesigns {
    pub fn new(
        kron_x: DMatrix<f64>,
        v_x: DMatrix<f64>,
        kron_mx: DMatrix<f64>,
        v_mx: DMatrix<f64>,
        u0: DMatrix<f64>,
    ) -> Result<Self, InferenceError> {
        let factor = |d: &DMatrix<f64>| -> Result<SpdFactor, InferenceError> {
            Ok(linops::spd_cholesky(
                &(d.transpose() * d),
                linops::RIDGE_FLOOR,
            )?)
        };
        let factors = [
            factor(&kron_x)?,
            factor(&v_x)?,
            factor(&kron_mx)?,
            factor(&v_mx)?,
            factor(&u0)?,
        ];
        let ridge_events = factors
            .iter()
            .filter(|f| f.diagnostics.ridge_applied)
            .count();
        Ok(Self {
            kron_x,
            v_x,
            kron_mx,
            v_mx,
            u0,
            factors,
            ridge_events,
        })
    }

    /// Reuse the fitted calibration designs of a mediation fit.
    pub fn from_fit(fit: &MediationFit) -> Result<Self, InferenceError> {
        Self::new(
            fit.x_weights.problem.kron_design().clone(),
            fit.x_weights.problem.design_v.clone(),
            fit.mx_weights.problem.kron_design().clone(),
            fit.mx_weights.problem.design_v.clone(),
            fit.outcome_design().clone(),
        )
    }

    fn fitted(&self, which: usize, response: &DMatrix<f64>) -> DMatrix<f64> {
        let design = match which {
            0 => &self.kron_x,
            1 => &self.v_x,
            2 => &self.kron_mx,
            3 => &self.v_mx,
            _ => &self.u0,
        };
        let coef = self.factors[which].solve_matrix(&(design.transpose() * response));
        design * coef
    }
}

/// One influence-term evaluation: the six-term expansion of the calibrated
/// weight functional applied to a (vector-valued) test function `phi`.
///
/// `phi(tau, i, out)` writes `phi` evaluated with the treatment argument
/// replaced by `tau` and all other arguments from observation `i`.
pub fn influence_term(
    data: &Dataset,
    nuis: &dyn NuisanceSource,
    designs: &RegressionDesigns,
    target: WeightTarget,
    delta: f64,
    phi: &dyn Fn(f64, usize, &mut [f64]),
    width: usize,
) -> Result<DMatrix<f64>, InferenceError> {
    let n = data.n();
    let nf = n as f64;
    let mut buf = vec![0.0f64; width];

    // term 1 and the shifted-phi response q
    let mut t1 = DMatrix::zeros(n, width);
    let mut q = DMatrix::zeros(n, width);
    for i in 0..n {
        let ti = data.t[i];
        let pz_shift = match target {
            WeightTarget::X => nuis.pi_x(ti + delta, i),
            WeightTarget::Mx => nuis.pi_mx(ti + delta, i),
        };
        phi(ti, i, &mut buf);
        for c in 0..width {
            t1[(i, c)] = safe_mul(pz_shift, buf[c]);
        }
        phi(ti - delta, i, &mut buf);
        for c in 0..width {
            q[(i, c)] = buf[c];
        }
    }

    let ratio = match target {
        WeightTarget::X => nuis.shift_ratio_x(delta)?,
        WeightTarget::Mx => nuis.shift_ratio_mx(delta)?,
    };

    // conditional mean of the shifted phi given (T, Z)
    let (tz_idx, z_idx) = match target {
        WeightTarget::X => (0usize, 1usize),
        WeightTarget::Mx => (2usize, 3usize),
    };
    let q_hat = designs.fitted(tz_idx, &q);

    let mut g = DMatrix::zeros(n, width);
    let mut t2 = DMatrix::zeros(n, width);
    for i in 0..n {
        let pz_own = match target {
            WeightTarget::X => nuis.pi_x(data.t[i], i),
            WeightTarget::Mx => nuis.pi_mx(data.t[i], i),
        };
        let scale = pz_own * ratio[i];
        for c in 0..width {
            t2[(i, c)] = scale * q_hat[(i, c)];
            g[(i, c)] = safe_mul(scale, q[(i, c)]);
        }
    }

    let t3 = designs.fitted(z_idx, &g);
    let t5 = designs.fitted(4, &g);
    let mean_g = RowDVector::from_fn(width, |_, c| g.column(c).sum() / nf);

    let mut out = DMatrix::zeros(n, width);
    for i in 0..n {
        for c in 0..width {
            out[(i, c)] =
                t1[(i, c)] - t2[(i, c)] + t3[(i, c)] + t5[(i, c)] - 2.0 * mean_g[c];
        }
    }
    Ok(out)
}

/// The three influence terms of the effect estimator plus the outcome
/// conditional-mean correction and the centering term; `d` is their
/// spec-defined combination.
pub struct InfluenceParts {
    pub if_x_delta: DMatrix<f64>,
    pub if_mx_zero: DMatrix<f64>,
    pub if_mx_delta: DMatrix<f64>,
    pub cond_mean: DMatrix<f64>,
    pub centering: RowDVector<f64>,
    pub d: DMatrix<f64>,
}

/// Assemble the per-observation expansion vectors `d_i` (N x K0) for shift
/// `delta`, with weights, density ratios and the outcome basis supplied by
/// `nuis` / `u0_basis`.
pub fn assemble_d(
    data: &Dataset,
    nuis: &dyn NuisanceSource,
    designs: &RegressionDesigns,
    u0_basis: &Basis,
    delta: f64,
) -> Result<InfluenceParts, InferenceError> {
    let n = data.n();
    let nf = n as f64;
    let k0 = u0_basis.dimension();

    let eval_u0 = |tau: f64, out: &mut [f64]| {
        u0_basis
            .evaluate_into(&[tau], out)
            .expect("outcome basis evaluation is total on finite inputs");
    };

    let phi_a = |tau: f64, i: usize, out: &mut [f64]| {
        eval_u0(tau, out);
        let r = nuis.ratio_mx(tau, tau + delta, i);
        let y = data.y[i];
        for v in out.iter_mut() {
            *v = safe_mul(r, *v) * y;
        }
    };
    let phi_b = |tau: f64, i: usize, out: &mut [f64]| {
        eval_u0(tau, out);
        let c = nuis.x_over_mx(tau + delta, i);
        let y = data.y[i];
        for v in out.iter_mut() {
            *v = safe_mul(c, *v) * y;
        }
    };
    let phi_c = |tau: f64, i: usize, out: &mut [f64]| {
        eval_u0(tau, out);
        let r = nuis.ratio_mx(tau, tau + delta, i);
        let c = nuis.x_over_mx(tau + delta, i);
        let scale = safe_mul(r, c);
        let y = data.y[i];
        for v in out.iter_mut() {
            *v = safe_mul(scale, *v) * y;
        }
    };

    let if_x_delta = influence_term(data, nuis, designs, WeightTarget::X, delta, &phi_a, k0)?;
    let if_mx_zero = influence_term(data, nuis, designs, WeightTarget::Mx, 0.0, &phi_b, k0)?;
    let if_mx_delta = influence_term(data, nuis, designs, WeightTarget::Mx, delta, &phi_c, k0)?;

    // weighted outcome response rho_i = w_i u0(T_i) Y_i with the full weight
    // product w_i = ratio_mx(T_i, T_i + delta) * pi_x(T_i + delta)
    let mut rho = DMatrix::zeros(n, k0);
    let mut buf = vec![0.0f64; k0];
    for i in 0..n {
        let ti = data.t[i];
        let w = safe_mul(
            nuis.ratio_mx(ti, ti + delta, i),
            nuis.pi_x(ti + delta, i),
        );
        eval_u0(ti, &mut buf);
        for c in 0..k0 {
            rho[(i, c)] = w * buf[c] * data.y[i];
        }
    }
    let cond_mean = designs.fitted(4, &rho);
    let centering = RowDVector::from_fn(k0, |_, c| rho.column(c).sum() / nf);

    let mut d = DMatrix::zeros(n, k0);
    for i in 0..n {
        for c in 0..k0 {
            d[(i, c)] = if_x_delta[(i, c)] + if_mx_zero[(i, c)] - if_mx_delta[(i, c)]
                - cond_mean[(i, c)]
                + centering[c];
        }
    }
    Ok(InfluenceParts {
        if_x_delta,
        if_mx_zero,
        if_mx_delta,
        cond_mean,
        centering,
        d,
    })
}

/// Plug-in variance report for a series estimate.
#[derive(Debug, Clone, serde::Serialize)]
pub struct VarianceReport {
    pub v_hat: f64,
    pub se: f64,
    pub floored_density: usize,
    pub ridge_events: usize,
}

/// Sandwich variance at `(t, t')` from pre-assembled expansion vectors:
/// `V = u(t)' Phi^{-1} [N^{-1} sum d_i d_i'] Phi^{-1} u(t)`, `se = sqrt(V/N)`.
pub fn variance_from_d(
    d: &DMatrix<f64>,
    u0_basis: &Basis,
    u0_design: &DMatrix<f64>,
    t: f64,
) -> Result<(f64, f64), InferenceError> {
    let n = d.nrows() as f64;
    let phi = u0_design.transpose() * u0_design / n;
    let factor = linops::spd_cholesky(&phi, linops::RIDGE_FLOOR)?;
    let (u_t, _) = u0_basis.evaluate(&[t])?;
    let a = factor.solve_vector(&u_t);
    let proj = d * a; // e_i = d_i' Phi^{-1} u(t)
    let v_hat = proj.iter().map(|e| e * e).sum::<f64>() / n;
    Ok((v_hat, (v_hat / n).sqrt()))
}

/// Plug-in variance of the CBS estimate at `(t, t')` with estimated
/// nuisances.
pub fn variance_cbs(
    fit: &MediationFit,
    t: f64,
    t_prime: f64,
    settings: PluginSettings,
) -> Result<VarianceReport, InferenceError> {
    let nuis = EstimatedNuisances::new(fit, settings)?;
    let designs = RegressionDesigns::from_fit(fit)?;
    let parts = assemble_d(&fit.dataset, &nuis, &designs, &fit.outcome_basis, t_prime - t)?;
    let (v_hat, se) = variance_from_d(&parts.d, &fit.outcome_basis, fit.outcome_design(), t)?;
    Ok(VarianceReport {
        v_hat,
        se,
        floored_density: nuis.floored(),
        ridge_events: designs.ridge_events,
    })
}

/// Per-observation influence of the CBS estimate at `(t, t')`:
/// `e_i = u(t)' Phi^{-1} d_i`. The variance of a difference of two estimates
/// is the variance of the difference of their influences.
pub fn cbs_point_influence(
    fit: &MediationFit,
    nuis: &dyn NuisanceSource,
    designs: &RegressionDesigns,
    t: f64,
    t_prime: f64,
) -> Result<DVector<f64>, InferenceError> {
    let parts = assemble_d(&fit.dataset, nuis, designs, &fit.outcome_basis, t_prime - t)?;
    let n = parts.d.nrows() as f64;
    let phi = fit.outcome_design().transpose() * fit.outcome_design() / n;
    let factor = linops::spd_cholesky(&phi, linops::RIDGE_FLOOR)?;
    let (u_t, _) = fit.outcome_basis.evaluate(&[t])?;
    let a = factor.solve_vector(&u_t);
    Ok(&parts.d * a)
}

/// Nonparametric pairs bootstrap: resample rows with replacement, re-run the
/// full estimation closure (including calibration refits) per replicate, and
/// report percentile 95% intervals per grid point. Deterministic given the
/// seed; failed replicates are dropped and counted, more than 10% drops is
/// an error.
pub fn bootstrap_ci<F>(
    estimator: F,
    data: &Dataset,
    method: Method,
    panel: Panel,
    grid: &[f64],
    t_prime: f64,
    b: usize,
    seed: u64,
) -> Result<(EffectCurve, usize), InferenceError>
where
    F: Fn(&Dataset) -> Result<Vec<f64>, EstimatorError> + Sync,
{
    if b < 50 {
        return Err(InferenceError::TooFewReplicates(b));
    }
    let n = data.n();
    let point = estimator(data)?;
    let replicates: Vec<Option<Vec<f64>>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64 + 1);
            let indices: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let resample = data.resample(&indices);
            estimator(&resample).ok()
        })
        .collect();
    let kept: Vec<&Vec<f64>> = replicates.iter().flatten().collect();
    let dropped = b - kept.len();
    if dropped * 10 > b {
        return Err(InferenceError::TooManyDropped { dropped, total: b });
    }
    let mut ci_low = Vec::with_capacity(grid.len());
    let mut ci_high = Vec::with_capacity(grid.len());
    let mut se = Vec::with_capacity(grid.len());
    for gi in 0..grid.len() {
        let mut values: Vec<f64> = kept.iter().map(|r| r[gi]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ci_low.push(percentile(&values, 0.025));
        ci_high.push(percentile(&values, 0.975));
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (values.len() - 1).max(1) as f64;
        se.push(var.sqrt());
    }
    let mut curve = EffectCurve::new(method, panel, t_prime, grid.to_vec(), point);
    curve.se = Some(se);
    curve.ci_low = Some(ci_low);
    curve.ci_high = Some(ci_high);
    Ok((curve, dropped))
}

/// Linear-interpolation percentile of pre-sorted values.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}
