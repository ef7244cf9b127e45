//! Effect estimators: the covariate-balancing series estimator (CBS), the
//! covariate-balancing kernel estimator (CBK), and OLS / IPW baselines,
//! together with effect decompositions and batch effect curves.
//!
//! Writing `delta = t' - t`, the target `mu(t, t')` is estimated by weighting
//! each observation with
//!
//! `w_i = [pi_mx(T_i, M_i, X_i) / pi_mx(T_i + delta, M_i, X_i)] * pi_x(T_i + delta, X_i)`
//!
//! and then either regressing `w_i Y_i` on the outcome sieve `u(T)` and
//! evaluating at `t` (CBS), or forming the locally weighted ratio around `t`
//! (CBK). Weight evaluation at `T_i + delta` may leave the observed treatment
//! range; the power basis extrapolates there and the event is counted.

use std::collections::HashMap;
use std::sync::Arc;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::basis::{Basis, BasisError};
use crate::calibration::{CalibrationError, FittedWeights};
use crate::data::{Dataset, TreatmentKind};
use crate::kernels::{KernelError, KernelSpec};
use crate::linops::{self, SpdFactor};

#[derive(Error, Debug)]
pub enum EstimatorError {
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Linops(#[from] linops::LinopsError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("kernel neighborhood around t = {0} is empty")]
    EmptyNeighborhood(f64),
    #[error("the kernel estimator requires a continuous treatment (got {0})")]
    KernelNeedsContinuous(String),
    #[error("IPW baseline requires a binary treatment with levels {{0, 1}}")]
    IpwNeedsBinary,
    #[error("IPW corners are defined on {{0, 1}} only, got ({0}, {1})")]
    IpwBadCorner(f64, f64),
    #[error("calibration fit for {0} did not converge")]
    WeightsNotConverged(&'static str),
    #[error("logistic regression did not converge")]
    LogitNotConverged,
    #[error("design is rank deficient: {0}")]
    RankDeficient(String),
}

/// Estimation method tag carried by effect curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cbs,
    Cbk,
    Ols,
    Ipw,
    Oracle,
}

/// The four decomposition panels (plus the raw curve). With benchmark `t'`,
/// the direct effects hold the mediator at `M(t)` or `M(t')`; the indirect
/// effects hold the treatment at `t` or `t'`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Panel {
    /// `mu(t, t')` itself.
    Mu,
    /// `mu(t,t) - mu(t',t)`
    DirectAtTreated,
    /// `mu(t,t') - mu(t',t')`
    DirectAtBenchmark,
    /// `mu(t,t) - mu(t,t')`
    IndirectAtTreated,
    /// `mu(t',t) - mu(t',t')`
    IndirectAtBenchmark,
}

impl Panel {
    /// The pairs whose difference forms this panel at grid point `t`:
    /// `first - second` (second is `None` for the raw curve).
    pub fn pairs(&self, t: f64, t_prime: f64) -> ((f64, f64), Option<(f64, f64)>) {
        match self {
            Panel::Mu => ((t, t_prime), None),
            Panel::DirectAtTreated => ((t, t), Some((t_prime, t))),
            Panel::DirectAtBenchmark => ((t, t_prime), Some((t_prime, t_prime))),
            Panel::IndirectAtTreated => ((t, t), Some((t, t_prime))),
            Panel::IndirectAtBenchmark => ((t_prime, t), Some((t_prime, t_prime))),
        }
    }

    /// True value of this panel under a true surface `mu`.
    pub fn truth(&self, mu: impl Fn(f64, f64) -> f64, t: f64, t_prime: f64) -> f64 {
        let (a, b) = self.pairs(t, t_prime);
        mu(a.0, a.1) - b.map(|p| mu(p.0, p.1)).unwrap_or(0.0)
    }

    pub fn all_decomposition() -> [Panel; 4] {
        [
            Panel::DirectAtTreated,
            Panel::DirectAtBenchmark,
            Panel::IndirectAtTreated,
            Panel::IndirectAtBenchmark,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Panel::Mu => "mu",
            Panel::DirectAtTreated => "direct_at_treated",
            Panel::DirectAtBenchmark => "direct_at_benchmark",
            Panel::IndirectAtTreated => "indirect_at_treated",
            Panel::IndirectAtBenchmark => "indirect_at_benchmark",
        }
    }
}

/// A grid of effect estimates for one method and panel.
#[derive(Debug, Clone, Serialize)]
pub struct EffectCurve {
    pub method: Method,
    pub panel: Panel,
    pub t_prime: f64,
    pub grid: Vec<f64>,
    pub estimate: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_low: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_high: Option<Vec<f64>>,
}

impl EffectCurve {
    pub fn new(method: Method, panel: Panel, t_prime: f64, grid: Vec<f64>, estimate: Vec<f64>) -> Self {
        Self {
            method,
            panel,
            t_prime,
            grid,
            estimate,
            se: None,
            ci_low: None,
            ci_high: None,
        }
    }
}

/// Total / direct / indirect decomposition at `(t, t')`; the identity
/// `total = direct + indirect` holds exactly by construction.
pub fn effect_decomposition<E>(
    mut mu: impl FnMut(f64, f64) -> Result<f64, E>,
    t: f64,
    t_prime: f64,
) -> Result<(f64, f64, f64), E> {
    let mu_tt = mu(t, t)?;
    let mu_pt = mu(t_prime, t)?;
    let mu_pp = mu(t_prime, t_prime)?;
    let direct = mu_tt - mu_pt;
    let indirect = mu_pt - mu_pp;
    Ok((direct + indirect, direct, indirect))
}

/// Both calibration fits plus the outcome sieve: everything needed to
/// evaluate CBS and CBK at arbitrary `(t, t')`.
#[derive(Debug)]
pub struct MediationFit {
    pub dataset: Dataset,
    pub x_weights: FittedWeights,
    pub mx_weights: FittedWeights,
    pub outcome_basis: Basis,
    outcome_design: DMatrix<f64>,
    outcome_factor: SpdFactor,
    /// Eq-9 weight vectors cached by the bit pattern of delta.
    weight_cache: Mutex<HashMap<u64, Arc<DVector<f64>>>>,
}

impl MediationFit {
    /// Assemble from already-solved calibration fits. Both fits must have
    /// converged and the outcome basis must reproduce constants.
    pub fn from_parts(
        dataset: Dataset,
        x_weights: FittedWeights,
        mx_weights: FittedWeights,
        outcome_basis: Basis,
    ) -> Result<Self, EstimatorError> {
        if !x_weights.fit.converged {
            return Err(EstimatorError::WeightsNotConverged("pi_X"));
        }
        if !mx_weights.fit.converged {
            return Err(EstimatorError::WeightsNotConverged("pi_MX"));
        }
        let n = dataset.n();
        let t_matrix = DMatrix::from_column_slice(n, 1, dataset.t.as_slice());
        let (outcome_design, _) = outcome_basis.design_matrix(&t_matrix)?;
        let gram = outcome_design.transpose() * &outcome_design;
        let outcome_factor = linops::spd_cholesky(&gram, linops::RIDGE_FLOOR)?;
        Ok(Self {
            dataset,
            x_weights,
            mx_weights,
            outcome_basis,
            outcome_design,
            outcome_factor,
            weight_cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn n(&self) -> usize {
        self.dataset.n()
    }

    pub fn outcome_design(&self) -> &DMatrix<f64> {
        &self.outcome_design
    }

    /// `N^{-1} sum u(T_i) u(T_i)'`.
    pub fn outcome_gram(&self) -> DMatrix<f64> {
        crate::basis::gram_matrix(&self.outcome_design)
    }

    /// The weight product of the series/kernel estimators at shift `delta`:
    /// `w_i = ratio_mx(T_i, T_i + delta, M_i, X_i) * pi_x(T_i + delta, X_i)`.
    pub fn shift_weights(&self, delta: f64) -> Result<Arc<DVector<f64>>, EstimatorError> {
        if let Some(hit) = self.weight_cache.lock().unwrap().get(&delta.to_bits()) {
            return Ok(hit.clone());
        }
        let n = self.n();
        let mut w = DVector::zeros(n);
        for i in 0..n {
            let t = self.dataset.t[i];
            let mx = self.dataset.mx_row(i);
            let x = self.dataset.x_row(i);
            let ratio = self.mx_weights.ratio(t, t + delta, &mx)?;
            let pix = self.x_weights.weight(t + delta, &x)?;
            w[i] = ratio * pix;
        }
        let arc = Arc::new(w);
        self.weight_cache
            .lock()
            .unwrap()
            .insert(delta.to_bits(), arc.clone());
        Ok(arc)
    }

    /// Series regression coefficients for the weighted outcome at shift
    /// `delta`; `mu_hat(t, t + delta) = u(t)' gamma`.
    pub fn cbs_coefficients(&self, delta: f64) -> Result<DVector<f64>, EstimatorError> {
        let w = self.shift_weights(delta)?;
        let response = DVector::from_fn(self.n(), |i, _| w[i] * self.dataset.y[i]);
        let rhs = self.outcome_design.transpose() * response;
        Ok(self.outcome_factor.solve_vector(&rhs))
    }

    /// The covariate-balancing series estimate of `mu(t, t')`.
    pub fn cbs_mu(&self, t: f64, t_prime: f64) -> Result<f64, EstimatorError> {
        let gamma = self.cbs_coefficients(t_prime - t)?;
        let (u, _) = self.outcome_basis.evaluate(&[t])?;
        Ok(u.dot(&gamma))
    }

    /// The covariate-balancing kernel (locally weighted ratio) estimate of
    /// `mu(t, t')`; continuous treatments only.
    pub fn cbk_mu(&self, t: f64, t_prime: f64, kernel: &KernelSpec) -> Result<f64, EstimatorError> {
        if !matches!(self.dataset.treatment, TreatmentKind::Continuous) {
            return Err(EstimatorError::KernelNeedsContinuous(
                self.dataset.treatment.to_string(),
            ));
        }
        let w = self.shift_weights(t_prime - t)?;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..self.n() {
            let k = kernel.eval(self.dataset.t[i] - t);
            if k != 0.0 {
                num += w[i] * k * self.dataset.y[i];
                den += w[i] * k;
            }
        }
        if !(den > 1e-12) {
            return Err(EstimatorError::EmptyNeighborhood(t));
        }
        Ok(num / den)
    }

    /// Batch panel curve for CBS or CBK over a grid of `t` values.
    pub fn effect_curve(
        &self,
        method: Method,
        panel: Panel,
        grid: &[f64],
        t_prime: f64,
        kernel: Option<&KernelSpec>,
    ) -> Result<EffectCurve, EstimatorError> {
        let mu = |a: f64, b: f64| -> Result<f64, EstimatorError> {
            match method {
                Method::Cbs => self.cbs_mu(a, b),
                Method::Cbk => {
                    let k = kernel.expect("cbk requires a kernel spec");
                    self.cbk_mu(a, b, k)
                }
                _ => unreachable!("effect_curve on MediationFit supports cbs/cbk"),
            }
        };
        let mut estimate = Vec::with_capacity(grid.len());
        for &t in grid {
            let ((a1, b1), second) = panel.pairs(t, t_prime);
            let mut v = mu(a1, b1)?;
            if let Some((a2, b2)) = second {
                v -= mu(a2, b2)?;
            }
            estimate.push(v);
        }
        Ok(EffectCurve::new(method, panel, t_prime, grid.to_vec(), estimate))
    }
}

/// The textbook product-of-coefficients mediation baseline: linear
/// regressions `M ~ (1, T, X)` and `Y ~ (1, T, M, X)`, combined at the
/// covariate means. Consistent only for linear, interaction-free designs.
#[derive(Debug, Clone)]
pub struct OlsMediation {
    /// Outcome equation: intercept, T, mediators, confounders.
    y_coef: DVector<f64>,
    /// Per-mediator equations: intercept, T, confounders (columns).
    m_coef: DMatrix<f64>,
    x_mean: DVector<f64>,
    s: usize,
    r: usize,
}

impl OlsMediation {
    pub fn fit(data: &Dataset) -> Result<Self, EstimatorError> {
        let n = data.n();
        let s = data.s();
        let r = data.r();
        // Y ~ (1, T, M, X)
        let mut design_y = DMatrix::zeros(n, 2 + s + r);
        for i in 0..n {
            design_y[(i, 0)] = 1.0;
            design_y[(i, 1)] = data.t[i];
            for j in 0..s {
                design_y[(i, 2 + j)] = data.m[(i, j)];
            }
            for j in 0..r {
                design_y[(i, 2 + s + j)] = data.x[(i, j)];
            }
        }
        let y = DMatrix::from_column_slice(n, 1, data.y.as_slice());
        let (yc, diag_y) = linops::least_squares(&design_y, &y, linops::RIDGE_FLOOR)?;
        if diag_y.ridge_applied {
            return Err(EstimatorError::RankDeficient("outcome regression".into()));
        }

        // M_j ~ (1, T, X)
        let mut design_m = DMatrix::zeros(n, 2 + r);
        for i in 0..n {
            design_m[(i, 0)] = 1.0;
            design_m[(i, 1)] = data.t[i];
            for j in 0..r {
                design_m[(i, 2 + j)] = data.x[(i, j)];
            }
        }
        let (mc, diag_m) = linops::least_squares(&design_m, &data.m, linops::RIDGE_FLOOR)?;
        if diag_m.ridge_applied {
            return Err(EstimatorError::RankDeficient("mediator regression".into()));
        }

        let x_mean = data.x.row_mean().transpose();
        Ok(Self {
            y_coef: DVector::from_column_slice(yc.as_slice()),
            m_coef: mc,
            x_mean,
            s,
            r,
        })
    }

    pub fn mu(&self, t: f64, t_prime: f64) -> f64 {
        let mut value = self.y_coef[0] + self.y_coef[1] * t;
        for j in 0..self.s {
            // E[M_j(t')] at the covariate means
            let mut mj = self.m_coef[(0, j)] + self.m_coef[(1, j)] * t_prime;
            for c in 0..self.r {
                mj += self.m_coef[(2 + c, j)] * self.x_mean[c];
            }
            value += self.y_coef[2 + j] * mj;
        }
        for c in 0..self.r {
            value += self.y_coef[2 + self.s + c] * self.x_mean[c];
        }
        value
    }
}

/// Per-coordinate quadratic polynomial design used by the sieve logit:
/// `(1, z_1, z_1^2, z_2, z_2^2, ...)`.
fn quadratic_design(z: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.nrows();
    let d = z.ncols();
    let mut out = DMatrix::zeros(n, 1 + 2 * d);
    for i in 0..n {
        out[(i, 0)] = 1.0;
        for j in 0..d {
            let v = z[(i, j)];
            out[(i, 1 + 2 * j)] = v;
            out[(i, 2 + 2 * j)] = v * v;
        }
    }
    out
}

/// Logistic regression by damped IRLS; returns fitted probabilities.
fn logistic_probabilities(
    design: &DMatrix<f64>,
    y01: &DVector<f64>,
) -> Result<DVector<f64>, EstimatorError> {
    let n = design.nrows();
    let k = design.ncols();
    let mut beta = DVector::zeros(k);
    let mut converged = false;
    for _ in 0..100 {
        let eta = design * &beta;
        let p = eta.map(|e| 1.0 / (1.0 + (-e).exp()));
        let grad = design.transpose() * (y01 - &p);
        if grad.amax() < 1e-10 * n as f64 {
            converged = true;
            break;
        }
        let mut weighted = design.clone();
        for i in 0..n {
            let w = (p[i] * (1.0 - p[i])).max(1e-10);
            for c in 0..k {
                weighted[(i, c)] *= w;
            }
        }
        let hess = design.transpose() * weighted;
        let factor = linops::spd_cholesky(&hess, 1e-8)?;
        let step = factor.solve_vector(&grad);
        // step halving against divergence (quasi-separation)
        let mut alpha = 1.0;
        let loglik = |b: &DVector<f64>| -> f64 {
            let eta = design * b;
            (0..n)
                .map(|i| {
                    let e = eta[i];
                    y01[i] * e - (1.0 + e.exp()).ln()
                })
                .sum()
        };
        let base = loglik(&beta);
        for _ in 0..30 {
            let trial = &beta + alpha * &step;
            if loglik(&trial) >= base {
                beta = trial;
                break;
            }
            alpha *= 0.5;
        }
    }
    if !converged {
        // accept a near-stationary point; quasi-separated fits get clipped
        // probabilities downstream
        let eta = design * &beta;
        let grad = design.transpose() * (y01 - eta.map(|e| 1.0 / (1.0 + (-e).exp())));
        if grad.amax() > 1e-3 * n as f64 {
            return Err(EstimatorError::LogitNotConverged);
        }
    }
    let eta = design * &beta;
    Ok(eta.map(|e| 1.0 / (1.0 + (-e).exp())))
}

/// Inverse-probability-weighting baseline for binary treatments, with
/// generalized propensity scores fitted by series logit on `(M, X)` and `X`.
#[derive(Debug, Clone)]
pub struct IpwBinary {
    mu: [[f64; 2]; 2],
    pub clipped: usize,
}

impl IpwBinary {
    /// Fit propensities by sieve logit and form the four corner estimates.
    /// `normalized` divides each weighted mean by the mean of its weights.
    pub fn fit(data: &Dataset, normalized: bool) -> Result<Self, EstimatorError> {
        match &data.treatment {
            TreatmentKind::Discrete { levels }
                if levels.len() == 2 && levels[0] == 0.0 && levels[1] == 1.0 => {}
            _ => return Err(EstimatorError::IpwNeedsBinary),
        }
        let y01 = DVector::from_fn(data.n(), |i, _| data.t[i]);
        let p_mx = logistic_probabilities(&quadratic_design(&data.mx_matrix()), &y01)?;
        let p_x = logistic_probabilities(&quadratic_design(&data.x_matrix()), &y01)?;
        Ok(Self::from_propensities(data, &p_mx, &p_x, normalized))
    }

    /// Corner estimates from externally supplied propensities (used by the
    /// hand-arithmetic tests and by anyone with a better propensity model).
    pub fn from_propensities(
        data: &Dataset,
        p_mx: &DVector<f64>,
        p_x: &DVector<f64>,
        normalized: bool,
    ) -> Self {
        const EPS: f64 = 1e-6;
        let n = data.n();
        let mut clipped = 0usize;
        let clip = |p: f64, clipped: &mut usize| -> f64 {
            if p < EPS || p > 1.0 - EPS {
                *clipped += 1;
                p.clamp(EPS, 1.0 - EPS)
            } else {
                p
            }
        };
        let mut mu = [[0.0f64; 2]; 2];
        for t in 0..2 {
            for tp in 0..2 {
                let mut num = 0.0;
                let mut den = 0.0;
                for i in 0..n {
                    let ti = data.t[i] as usize;
                    if ti != t {
                        continue;
                    }
                    let pmx = clip(p_mx[i], &mut clipped);
                    let px = clip(p_x[i], &mut clipped);
                    let w = if t == tp {
                        // plain corner: 1(T=t) / P(T=t | X)
                        1.0 / if t == 1 { px } else { 1.0 - px }
                    } else if t == 1 {
                        // mu(1,0): 1(T=1)/P(1|M,X) * P(0|M,X)/P(0|X)
                        (1.0 / pmx) * ((1.0 - pmx) / (1.0 - px))
                    } else {
                        // mu(0,1): 1(T=0)/P(0|M,X) * P(1|M,X)/P(1|X)
                        (1.0 / (1.0 - pmx)) * (pmx / px)
                    };
                    num += w * data.y[i];
                    den += w;
                }
                mu[t][tp] = if normalized {
                    num / den
                } else {
                    num / n as f64
                };
            }
        }
        Self { mu, clipped }
    }

    pub fn mu(&self, t: f64, t_prime: f64) -> Result<f64, EstimatorError> {
        let ok = |v: f64| v == 0.0 || v == 1.0;
        if !ok(t) || !ok(t_prime) {
            return Err(EstimatorError::IpwBadCorner(t, t_prime));
        }
        Ok(self.mu[t as usize][t_prime as usize])
    }
}
