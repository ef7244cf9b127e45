//! Simulation designs, analytic truths and oracles, and the Monte Carlo
//! harness.
//!
//! The continuous designs draw `X ~ U[-1.5, 1.5]`, `T = 0.3 X + eps` with
//! `eps ~ U[-2, 2]`, `M = 0.3 T + 0.3 X + V`, and an outcome that is linear
//! (with a treatment-mediator interaction), cubic, or both. The binary
//! design replaces the treatment equation by a conditional Bernoulli draw
//! with logistic success probability in `X` and uses the interaction-plus-
//! cubic outcome. Uniform noise makes every nuisance analytic: box-shaped
//! conditional densities, a trapezoid treatment margin, and closed-form
//! weight products, which powers the true-weight oracle estimator and the
//! efficient-influence-function cross-checks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::basis::Basis;
use crate::data::{Dataset, TreatmentKind};
use crate::estimators::{IpwBinary, Method, OlsMediation, Panel};
use crate::inference::{InferenceError, NuisanceSource};
use crate::kernels::KernelSpec;
use crate::linops::{self, SpdFactor};
use crate::tuning::{self, FitOverrides, TuningError, TuningGrid};
use crate::calibration::SolverOptions;

#[derive(Error, Debug)]
pub enum SimError {
    #[error(transparent)]
    Tuning(#[from] TuningError),
    #[error(transparent)]
    Estimator(#[from] Box<crate::estimators::EstimatorError>),
    #[error("observation {0} lies outside the design's analytic support")]
    OutsideSupport(usize),
    #[error("the oracle estimator is only defined for the continuous designs")]
    OracleNeedsContinuous,
    #[error("estimator {estimator} failed in {failures} of {trials} trials (> 5%)")]
    TooManyFailures {
        estimator: &'static str,
        failures: usize,
        trials: usize,
    },
    #[error("config error: {0}")]
    BadConfig(String),
}

impl From<crate::estimators::EstimatorError> for SimError {
    fn from(e: crate::estimators::EstimatorError) -> Self {
        SimError::Estimator(Box::new(e))
    }
}

/// Simulation scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scenario {
    /// Linear outcome with treatment-mediator interaction.
    I,
    /// Cubic outcome, no interaction.
    II,
    /// Interaction plus cubic.
    III,
    /// Binary treatment, interaction-plus-cubic outcome.
    Binary,
}

impl Scenario {
    pub fn is_binary(&self) -> bool {
        matches!(self, Scenario::Binary)
    }

    pub fn parse(s: &str) -> Option<Scenario> {
        match s.to_ascii_uppercase().as_str() {
            "I" | "1" => Some(Scenario::I),
            "II" | "2" => Some(Scenario::II),
            "III" | "3" => Some(Scenario::III),
            "BINARY" | "B" => Some(Scenario::Binary),
            _ => None,
        }
    }
}

/// One draw specification.
#[derive(Debug, Clone, Copy)]
pub struct DgpSpec {
    pub scenario: Scenario,
    pub n: usize,
    pub seed: u64,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn outcome(scenario: Scenario, t: f64, m: f64, x: f64, u: f64) -> f64 {
    match scenario {
        Scenario::I => 0.3 * t + 0.3 * m + 0.5 * t * m + 0.3 * x + u,
        Scenario::II => 0.3 * t + 0.3 * m + 0.3 * x + 0.25 * t * t * t + u,
        Scenario::III | Scenario::Binary => {
            0.3 * t + 0.3 * m + 0.5 * t * m + 0.3 * x + 0.25 * t * t * t + u
        }
    }
}

fn generate_with_rng(scenario: Scenario, n: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let mut y = DVector::zeros(n);
    let mut t = DVector::zeros(n);
    let mut m = DMatrix::zeros(n, 1);
    let mut x = DMatrix::zeros(n, 1);
    for i in 0..n {
        let xi = rng.gen_range(-1.5..=1.5);
        let ti = if scenario.is_binary() {
            if rng.gen::<f64>() < logistic(xi) {
                1.0
            } else {
                0.0
            }
        } else {
            0.3 * xi + rng.gen_range(-2.0..=2.0)
        };
        let vi = rng.gen_range(-2.0..=2.0);
        let mi = 0.3 * ti + 0.3 * xi + vi;
        let ui = rng.gen_range(-2.0..=2.0);
        x[(i, 0)] = xi;
        t[i] = ti;
        m[(i, 0)] = mi;
        y[i] = outcome(scenario, ti, mi, xi, ui);
    }
    let treatment = if scenario.is_binary() {
        TreatmentKind::Discrete {
            levels: vec![0.0, 1.0],
        }
    } else {
        TreatmentKind::Continuous
    };
    Dataset::new(y, t, m, x, treatment).expect("n >= 1")
}

/// Draw a dataset; deterministic given the spec.
pub fn generate(spec: &DgpSpec) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    generate_with_rng(spec.scenario, spec.n, &mut rng)
}

#[doc(hidden)]
pub fn generate_for_tests(scenario: Scenario, n: usize, rng: &mut ChaCha8Rng) -> Dataset {
    generate_with_rng(scenario, n, rng)
}

/// The true mean potential-outcome surface `mu(t, t')`.
pub fn true_mu(scenario: Scenario, t: f64, t_prime: f64) -> f64 {
    match scenario {
        Scenario::I => 0.3 * t + 0.09 * t_prime + 0.15 * t * t_prime,
        Scenario::II => 0.3 * t + 0.09 * t_prime + 0.25 * t * t * t,
        Scenario::III | Scenario::Binary => {
            0.3 * t + 0.09 * t_prime + 0.15 * t * t_prime + 0.25 * t * t * t
        }
    }
}

/// Marginal treatment density of the continuous designs: the convolution of
/// `0.3 X` (uniform on [-0.45, 0.45]) and `eps` (uniform on [-2, 2]) is a
/// trapezoid with plateau 1/4 on |t| <= 1.55 and support [-2.45, 2.45].
pub fn marginal_t_density(t: f64) -> f64 {
    let a = t.abs();
    if a <= 1.55 {
        0.25
    } else if a <= 2.45 {
        (2.45 - a) / 3.6
    } else {
        0.0
    }
}

/// True-weight oracle: the series estimator with the analytic weight
/// product. All density factors that cancel algebraically are cancelled
/// before evaluation, leaving
/// `w_i(delta) = 4 f_T(T_i) 1{|V_i - 0.3 delta| <= 2}`, `V_i` the mediator
/// noise recovered from the draw.
pub struct OracleSeries {
    data: Dataset,
    f_t: Vec<f64>,
    v_noise: Vec<f64>,
    basis: Basis,
    design: DMatrix<f64>,
    factor: SpdFactor,
}

impl OracleSeries {
    pub fn new(data: &Dataset, k0: usize) -> Result<Self, SimError> {
        if !matches!(data.treatment, TreatmentKind::Continuous) {
            return Err(SimError::OracleNeedsContinuous);
        }
        let n = data.n();
        let mut f_t = vec![0.0; n];
        let mut v_noise = vec![0.0; n];
        for i in 0..n {
            let eps = data.t[i] - 0.3 * data.x[(i, 0)];
            let v = data.m[(i, 0)] - 0.3 * data.t[i] - 0.3 * data.x[(i, 0)];
            if eps.abs() > 2.0 + 1e-9 || v.abs() > 2.0 + 1e-9 {
                return Err(SimError::OutsideSupport(i));
            }
            f_t[i] = marginal_t_density(data.t[i]);
            v_noise[i] = v;
        }
        let basis = tuning::default_treatment_basis(data, k0)?;
        let t_matrix = DMatrix::from_column_slice(n, 1, data.t.as_slice());
        let (design, _) = basis.design_matrix(&t_matrix).map_err(TuningError::from)?;
        let gram = design.transpose() * &design;
        let factor =
            linops::spd_cholesky(&gram, linops::RIDGE_FLOOR).map_err(TuningError::from)?;
        Ok(Self {
            data: data.clone(),
            f_t,
            v_noise,
            basis,
            design,
            factor,
        })
    }

    pub fn shift_weights(&self, delta: f64) -> DVector<f64> {
        DVector::from_fn(self.data.n(), |i, _| {
            if (self.v_noise[i] - 0.3 * delta).abs() <= 2.0 {
                4.0 * self.f_t[i]
            } else {
                0.0
            }
        })
    }

    pub fn mu(&self, t: f64, t_prime: f64) -> Result<f64, SimError> {
        let w = self.shift_weights(t_prime - t);
        let response = DVector::from_fn(self.data.n(), |i, _| w[i] * self.data.y[i]);
        let gamma = self.factor.solve_vector(&(self.design.transpose() * response));
        let (u, _) = self
            .basis
            .evaluate(&[t])
            .map_err(TuningError::from)?;
        Ok(u.dot(&gamma))
    }
}

/// Analytic nuisances of the binary design. Box-shaped mediator densities
/// of equal height make the conditional treatment probability given
/// `(M, X)` piecewise: the logistic `p(x)` on the overlap of the two boxes,
/// and 0 or 1 off it.
pub struct BinaryTruth<'a> {
    data: &'a Dataset,
}

impl<'a> BinaryTruth<'a> {
    pub fn new(data: &'a Dataset) -> Self {
        Self { data }
    }

    fn in_box(m: f64, t: f64, x: f64) -> bool {
        (m - 0.3 * t - 0.3 * x).abs() <= 2.0
    }

    /// `P(T = t | X = x)`; zero off the levels.
    pub fn prob_t_given_x(t: f64, x: f64) -> f64 {
        if t == 1.0 {
            logistic(x)
        } else if t == 0.0 {
            1.0 - logistic(x)
        } else {
            0.0
        }
    }

    /// `P(T = t | M = m, X = x)`; zero off the levels or off the box.
    pub fn prob_t_given_mx(t: f64, m: f64, x: f64) -> f64 {
        if t != 0.0 && t != 1.0 {
            return 0.0;
        }
        let p = logistic(x);
        let w1 = if Self::in_box(m, 1.0, x) { p } else { 0.0 };
        let w0 = if Self::in_box(m, 0.0, x) { 1.0 - p } else { 0.0 };
        let total = w1 + w0;
        if total == 0.0 {
            return 0.0;
        }
        if t == 1.0 {
            w1 / total
        } else {
            w0 / total
        }
    }

    /// `E[Y | X, M, T]` of the binary design (cubic term collapses to `T`).
    pub fn cond_mean_y(t: f64, m: f64, x: f64) -> f64 {
        0.55 * t + 0.3 * m + 0.5 * t * m + 0.3 * x
    }

    /// `eta(t, t', x) = int E[Y | x, m, t] f_{M | t', x}(m) dm`, exact for
    /// the uniform mediator noise.
    pub fn eta(t: f64, t_prime: f64, x: f64) -> f64 {
        let mean_m = 0.3 * t_prime + 0.3 * x;
        0.55 * t + 0.3 * x + (0.3 + 0.5 * t) * mean_m
    }

    /// The efficient influence function of `mu(t, t')` evaluated at one
    /// observation, with every nuisance analytic.
    pub fn eif(
        y: f64,
        t_obs: f64,
        m: f64,
        x: f64,
        t: f64,
        t_prime: f64,
    ) -> Result<f64, SimError> {
        let mu = true_mu(Scenario::Binary, t, t_prime);
        let eta = Self::eta(t, t_prime, x);
        let mut value = eta - mu;
        if t_obs == t {
            if !Self::in_box(m, t, x) {
                return Err(SimError::OutsideSupport(usize::MAX));
            }
            // f_{M|t',x}(m) / f_{M|t,x}(m) = 1{m in box(t')} (equal heights)
            let ratio = if Self::in_box(m, t_prime, x) { 1.0 } else { 0.0 };
            value += ratio * (y - Self::cond_mean_y(t, m, x)) / Self::prob_t_given_x(t, x);
        }
        if t_obs == t_prime {
            value += (Self::cond_mean_y(t, m, x) - eta) / Self::prob_t_given_x(t_prime, x);
        }
        Ok(value)
    }

    /// Monte Carlo estimate of `E[S^2]` for `mu(t, t')` over fresh draws.
    pub fn eif_second_moment(t: f64, t_prime: f64, draws: usize, seed: u64) -> f64 {
        let spec = DgpSpec {
            scenario: Scenario::Binary,
            n: draws,
            seed,
        };
        let data = generate(&spec);
        let mut acc = 0.0;
        for i in 0..draws {
            let s = Self::eif(data.y[i], data.t[i], data.m[(i, 0)], data.x[(i, 0)], t, t_prime)
                .expect("in-distribution draw");
            acc += s * s;
        }
        acc / draws as f64
    }

    fn pi_x_value(&self, t: f64, i: usize) -> f64 {
        if t == 0.0 || t == 1.0 {
            0.5 / Self::prob_t_given_x(t, self.data.x[(i, 0)])
        } else {
            // zero-mass level: any finite value, structurally multiplied by 0
            1.0
        }
    }

    fn pi_mx_value(&self, t: f64, i: usize) -> f64 {
        if t == 0.0 || t == 1.0 {
            let q = Self::prob_t_given_mx(t, self.data.m[(i, 0)], self.data.x[(i, 0)]);
            if q > 0.0 {
                0.5 / q
            } else {
                f64::INFINITY
            }
        } else {
            1.0
        }
    }
}

impl NuisanceSource for BinaryTruth<'_> {
    fn pi_x(&self, t: f64, i: usize) -> f64 {
        self.pi_x_value(t, i)
    }

    fn pi_mx(&self, t: f64, i: usize) -> f64 {
        self.pi_mx_value(t, i)
    }

    fn ratio_mx(&self, a: f64, b: f64, i: usize) -> f64 {
        let pa = self.pi_mx_value(a, i);
        let pb = self.pi_mx_value(b, i);
        if pa.is_infinite() || pb.is_infinite() {
            // no overlap: the reweighting integrand vanishes on this event
            0.0
        } else {
            pa / pb
        }
    }

    fn x_over_mx(&self, t: f64, i: usize) -> f64 {
        let pmx = self.pi_mx_value(t, i);
        if pmx.is_infinite() {
            0.0
        } else {
            self.pi_x_value(t, i) / pmx
        }
    }

    fn shift_ratio_x(&self, delta: f64) -> Result<Vec<f64>, InferenceError> {
        Ok((0..self.data.n())
            .map(|i| {
                let t = self.data.t[i];
                let x = self.data.x[(i, 0)];
                Self::prob_t_given_x(t - delta, x) / Self::prob_t_given_x(t, x)
            })
            .collect())
    }

    fn shift_ratio_mx(&self, delta: f64) -> Result<Vec<f64>, InferenceError> {
        Ok((0..self.data.n())
            .map(|i| {
                let t = self.data.t[i];
                let m = self.data.m[(i, 0)];
                let x = self.data.x[(i, 0)];
                Self::prob_t_given_mx(t - delta, m, x) / Self::prob_t_given_mx(t, m, x)
            })
            .collect())
    }
}

/// Which estimators the harness runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Cbs,
    Cbk,
    Ols,
    Ipw,
    Oracle,
    /// Returns the true panel values; a perfect stub for harness checks.
    Truth,
}

impl EstimatorKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cbs" => Some(Self::Cbs),
            "cbk" => Some(Self::Cbk),
            "ols" => Some(Self::Ols),
            "ipw" => Some(Self::Ipw),
            "oracle" => Some(Self::Oracle),
            "truth" => Some(Self::Truth),
            _ => None,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Self::Cbs => "cbs",
            Self::Cbk => "cbk",
            Self::Ols => "ols",
            Self::Ipw => "ipw",
            Self::Oracle => "oracle",
            Self::Truth => "truth",
        }
    }

    pub fn method(&self) -> Method {
        match self {
            Self::Cbs => Method::Cbs,
            Self::Cbk => Method::Cbk,
            Self::Ols => Method::Ols,
            Self::Ipw => Method::Ipw,
            Self::Oracle | Self::Truth => Method::Oracle,
        }
    }
}

/// Monte Carlo configuration.
#[derive(Debug, Clone)]
pub struct McConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub trials: usize,
    pub estimators: Vec<EstimatorKind>,
    pub grid: Vec<f64>,
    pub t_prime: f64,
    pub seed: u64,
    /// Re-run the data-driven selection in every trial (the default);
    /// otherwise `overrides` must pin every dimension.
    pub tune_per_trial: bool,
    pub overrides: FitOverrides,
    pub tuning: TuningGrid,
    pub solver: SolverOptions,
    pub keep_estimates: bool,
}

impl McConfig {
    pub fn new(scenario: Scenario, n: usize, trials: usize, seed: u64) -> Self {
        let grid = if scenario.is_binary() {
            vec![1.0]
        } else {
            default_grid()
        };
        let mut tuning = TuningGrid::default();
        if !scenario.is_binary() {
            let lo = grid.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            tuning.k0_loss_range = Some((lo.min(0.0), hi.max(0.0)));
        }
        Self {
            scenario,
            n,
            trials,
            estimators: if scenario.is_binary() {
                vec![EstimatorKind::Cbs, EstimatorKind::Ipw]
            } else {
                vec![EstimatorKind::Cbs, EstimatorKind::Cbk, EstimatorKind::Ols]
            },
            grid,
            t_prime: 0.0,
            seed,
            tune_per_trial: true,
            overrides: FitOverrides::default(),
            tuning,
            solver: SolverOptions::default(),
            keep_estimates: false,
        }
    }
}

/// The evaluation grid of the continuous designs:
/// `{-1.5, -1.4, ..., -0.1, 0.1, ..., 1.5}` (zero excluded).
pub fn default_grid() -> Vec<f64> {
    let mut grid = Vec::with_capacity(30);
    for k in -15..=15i32 {
        if k != 0 {
            grid.push(k as f64 / 10.0);
        }
    }
    grid
}

/// Root-mean-square of a vector of errors.
pub fn rmse(errors: &[f64]) -> f64 {
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

/// One (estimator, panel) cell of the Monte Carlo report.
#[derive(Debug, Clone, Serialize)]
pub struct McEntry {
    pub estimator: EstimatorKind,
    pub panel: Panel,
    /// Grid-averaged root-mean-square error, times 1000.
    pub armse_x1000: f64,
    pub successes: usize,
    pub failures: usize,
}

/// Monte Carlo report: ARMSE per estimator and panel.
#[derive(Debug, Clone, Serialize)]
pub struct McReport {
    pub scenario: Scenario,
    pub n: usize,
    pub trials: usize,
    pub t_prime: f64,
    pub grid: Vec<f64>,
    pub seed: u64,
    pub entries: Vec<McEntry>,
    /// Per-trial panel estimates (estimator-major, trial-major inside),
    /// retained on request.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimates: Option<Vec<McTrialEstimates>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct McTrialEstimates {
    pub estimator: EstimatorKind,
    pub trial: usize,
    /// `[panel][grid point]`
    pub panels: Vec<Vec<f64>>,
}

impl McReport {
    pub fn armse(&self, estimator: EstimatorKind, panel: Panel) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.estimator == estimator && e.panel == panel)
            .map(|e| e.armse_x1000)
    }
}

type PanelEstimates = Vec<Vec<f64>>; // [panel][grid]

fn run_trial(
    config: &McConfig,
    trial: usize,
) -> Vec<(EstimatorKind, Result<PanelEstimates, String>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(trial as u64 + 1);
    let data = generate_with_rng(config.scenario, config.n, &mut rng);
    let panels = Panel::all_decomposition();

    let needs_fit = config
        .estimators
        .iter()
        .any(|e| matches!(e, EstimatorKind::Cbs | EstimatorKind::Cbk));
    let fitted = if needs_fit {
        Some(tuning::fit_with_tuning(
            &data,
            &config.tuning,
            &config.overrides,
            &config.solver,
        ))
    } else {
        None
    };

    let mut out = Vec::with_capacity(config.estimators.len());
    for &estimator in &config.estimators {
        let result: Result<PanelEstimates, String> = (|| {
            let eval_panels =
                |mu: &mut dyn FnMut(f64, f64) -> Result<f64, String>| -> Result<PanelEstimates, String> {
                    let mut all = Vec::with_capacity(panels.len());
                    for panel in panels {
                        let mut curve = Vec::with_capacity(config.grid.len());
                        for &t in &config.grid {
                            let ((a1, b1), second) = panel.pairs(t, config.t_prime);
                            let mut v = mu(a1, b1)?;
                            if let Some((a2, b2)) = second {
                                v -= mu(a2, b2)?;
                            }
                            curve.push(v);
                        }
                        all.push(curve);
                    }
                    Ok(all)
                };
            match estimator {
                EstimatorKind::Cbs => {
                    let (fit, _) = fitted
                        .as_ref()
                        .expect("fit requested")
                        .as_ref()
                        .map_err(|e| e.to_string())?;
                    eval_panels(&mut |a, b| fit.cbs_mu(a, b).map_err(|e| e.to_string()))
                }
                EstimatorKind::Cbk => {
                    let (fit, tune) = fitted
                        .as_ref()
                        .expect("fit requested")
                        .as_ref()
                        .map_err(|e| e.to_string())?;
                    let kernel = KernelSpec::new(config.tuning.kernel_family, tune.bandwidth)
                        .map_err(|e| e.to_string())?;
                    eval_panels(&mut |a, b| fit.cbk_mu(a, b, &kernel).map_err(|e| e.to_string()))
                }
                EstimatorKind::Ols => {
                    let ols = OlsMediation::fit(&data).map_err(|e| e.to_string())?;
                    eval_panels(&mut |a, b| Ok(ols.mu(a, b)))
                }
                EstimatorKind::Ipw => {
                    let ipw = IpwBinary::fit(&data, true).map_err(|e| e.to_string())?;
                    eval_panels(&mut |a, b| ipw.mu(a, b).map_err(|e| e.to_string()))
                }
                EstimatorKind::Oracle => {
                    // reuse the tuned outcome dimension when available
                    let k0 = fitted
                        .as_ref()
                        .and_then(|f| f.as_ref().ok())
                        .map(|(_, tune)| tune.k0)
                        .or(config.overrides.k0)
                        .unwrap_or(4);
                    let oracle = OracleSeries::new(&data, k0).map_err(|e| e.to_string())?;
                    eval_panels(&mut |a, b| oracle.mu(a, b).map_err(|e| e.to_string()))
                }
                EstimatorKind::Truth => eval_panels(&mut |a, b| {
                    Ok(true_mu(config.scenario, a, b))
                }),
            }
        })();
        out.push((estimator, result));
    }
    out
}

/// Run the Monte Carlo study: per trial, draw a dataset with a
/// counter-derived seed stream, re-tune (by default), estimate all four
/// decomposition panels on the grid, and aggregate grid-averaged RMSEs.
/// Deterministic for a given config and seed, independent of parallelism.
pub fn run_mc(config: &McConfig) -> Result<McReport, SimError> {
    if config.trials == 0 {
        return Err(SimError::BadConfig("trials must be >= 1".into()));
    }
    if config.grid.is_empty() {
        return Err(SimError::BadConfig("grid must be nonempty".into()));
    }
    if config.scenario.is_binary() && config.estimators.contains(&EstimatorKind::Cbk) {
        return Err(SimError::BadConfig(
            "the kernel estimator is not applicable to a discrete treatment".into(),
        ));
    }
    if !config.scenario.is_binary() && config.estimators.contains(&EstimatorKind::Ipw) {
        return Err(SimError::BadConfig(
            "the IPW baseline requires the binary design".into(),
        ));
    }

    // tune-once mode: select the smoothing parameters on a pilot draw
    // (stream 0) and pin them for every trial
    let mut resolved = config.clone();
    if !config.tune_per_trial {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let pilot = generate_with_rng(config.scenario, config.n, &mut rng);
        let (_, tune) =
            tuning::fit_with_tuning(&pilot, &config.tuning, &config.overrides, &config.solver)?;
        resolved.overrides = FitOverrides {
            k1: Some(tune.k1),
            kx: Some(tune.kx),
            kmx: Some(tune.kmx),
            k0: Some(tune.k0),
        };
    }
    let config = &resolved;

    let trial_results: Vec<_> = (0..config.trials)
        .into_par_iter()
        .map(|trial| run_trial(config, trial))
        .collect();

    let panels = Panel::all_decomposition();
    let truth: Vec<Vec<f64>> = panels
        .iter()
        .map(|panel| {
            config
                .grid
                .iter()
                .map(|&t| panel.truth(|a, b| true_mu(config.scenario, a, b), t, config.t_prime))
                .collect()
        })
        .collect();

    let mut entries = Vec::new();
    let mut estimates = if config.keep_estimates {
        Some(Vec::new())
    } else {
        None
    };
    for (ei, &estimator) in config.estimators.iter().enumerate() {
        let mut failures = 0usize;
        let mut per_trial: Vec<&PanelEstimates> = Vec::new();
        for (trial, results) in trial_results.iter().enumerate() {
            match &results[ei].1 {
                Ok(p) => {
                    per_trial.push(p);
                    if let Some(est) = estimates.as_mut() {
                        est.push(McTrialEstimates {
                            estimator,
                            trial,
                            panels: p.clone(),
                        });
                    }
                }
                Err(_) => failures += 1,
            }
        }
        if failures * 20 > config.trials {
            return Err(SimError::TooManyFailures {
                estimator: estimator.name(),
                failures,
                trials: config.trials,
            });
        }
        for (pi, &panel) in panels.iter().enumerate() {
            let mut point_rmse = Vec::with_capacity(config.grid.len());
            for gi in 0..config.grid.len() {
                let errors: Vec<f64> = per_trial
                    .iter()
                    .map(|p| p[pi][gi] - truth[pi][gi])
                    .collect();
                point_rmse.push(rmse(&errors));
            }
            let armse = point_rmse.iter().sum::<f64>() / point_rmse.len() as f64;
            entries.push(McEntry {
                estimator,
                panel,
                armse_x1000: 1000.0 * armse,
                successes: per_trial.len(),
                failures,
            });
        }
    }
    Ok(McReport {
        scenario: config.scenario,
        n: config.n,
        trials: config.trials,
        t_prime: config.t_prime,
        grid: config.grid.clone(),
        seed: config.seed,
        entries,
        estimates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let spec = DgpSpec {
            scenario: Scenario::III,
            n: 50,
            seed: 42,
        };
        let a = generate(&spec);
        let b = generate(&spec);
        assert_eq!(a.y, b.y);
        assert_eq!(a.t, b.t);
        assert_eq!(a.m, b.m);
        assert_eq!(a.x, b.x);
    }

    #[test]
    fn treatment_moments_match_uniform_arithmetic() {
        // Var(T) = 0.09 Var(X) + Var(eps) = 0.09 * 0.75 + 4/3 = 1.400833...
        let spec = DgpSpec {
            scenario: Scenario::I,
            n: 100_000,
            seed: 7,
        };
        let data = generate(&spec);
        let n = data.n() as f64;
        let mean = data.t.iter().sum::<f64>() / n;
        let var = data.t.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        let expected = (0.09f64 * 0.75 + 4.0 / 3.0).sqrt();
        assert!(
            (sd - expected).abs() / expected < 0.03,
            "sd {sd} vs {expected}"
        );
    }

    #[test]
    fn binary_treatment_is_balanced() {
        let spec = DgpSpec {
            scenario: Scenario::Binary,
            n: 100_000,
            seed: 11,
        };
        let data = generate(&spec);
        let mean = data.t.iter().sum::<f64>() / data.n() as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean treatment {mean}");
    }

    #[test]
    fn true_mu_reference_values() {
        assert_eq!(true_mu(Scenario::I, 0.0, 0.0), 0.0);
        assert!((true_mu(Scenario::Binary, 1.0, 1.0) - 0.79).abs() < 1e-15);
        assert!((true_mu(Scenario::Binary, 1.0, 0.0) - 0.55).abs() < 1e-15);
        assert!((true_mu(Scenario::Binary, 0.0, 1.0) - 0.09).abs() < 1e-15);
        assert_eq!(true_mu(Scenario::Binary, 0.0, 0.0), 0.0);
        assert!((true_mu(Scenario::III, 1.0, 1.0) - 0.79).abs() < 1e-15);
        // Scenario I truth at (1, 0): total 0.54 = direct 0.45 + indirect 0.09
        let total = true_mu(Scenario::I, 1.0, 1.0) - true_mu(Scenario::I, 0.0, 0.0);
        let direct = true_mu(Scenario::I, 1.0, 1.0) - true_mu(Scenario::I, 0.0, 1.0);
        let indirect = true_mu(Scenario::I, 0.0, 1.0) - true_mu(Scenario::I, 0.0, 0.0);
        assert!((total - 0.54).abs() < 1e-15);
        assert!((direct - 0.45).abs() < 1e-15);
        assert!((indirect - 0.09).abs() < 1e-15);
    }

    #[test]
    fn trapezoid_density_integrates_to_one() {
        let mut mass = 0.0;
        let step = 1e-4;
        let mut t = -2.45;
        while t < 2.45 {
            mass += step * marginal_t_density(t + 0.5 * step);
            t += step;
        }
        assert!((mass - 1.0).abs() < 1e-4, "mass {mass}");
        assert_eq!(marginal_t_density(0.0), 0.25);
        assert!((marginal_t_density(1.55) - 0.25).abs() < 1e-12);
        assert_eq!(marginal_t_density(2.5), 0.0);
    }

    #[test]
    fn oracle_matches_scalar_regression_arithmetic() {
        // The oracle is a plain weighted series regression; verify the
        // whole path against an independent scalar computation at K0 = 2,
        // where the normal equations can be solved by hand (2x2 inverse).
        let spec = DgpSpec {
            scenario: Scenario::II,
            n: 40,
            seed: 3,
        };
        let data = generate(&spec);
        let oracle = OracleSeries::new(&data, 2).unwrap();
        let (t, tp) = (0.5, -0.3);
        let delta = tp - t;
        let n = data.n();
        // scaled power design (1, s_i) on the empirical range
        let (lo, hi) = {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &v in data.t.iter() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            (lo, hi)
        };
        let scale = |v: f64| 2.0 * (v - lo) / (hi - lo) - 1.0;
        let (mut s11, mut s1s, mut sss) = (0.0f64, 0.0, 0.0);
        let (mut r1, mut rs) = (0.0f64, 0.0);
        for i in 0..n {
            let s = scale(data.t[i]);
            let v = data.m[(i, 0)] - 0.3 * data.t[i] - 0.3 * data.x[(i, 0)];
            let w = if (v - 0.3 * delta).abs() <= 2.0 {
                4.0 * marginal_t_density(data.t[i])
            } else {
                0.0
            };
            let resp = w * data.y[i];
            s11 += 1.0;
            s1s += s;
            sss += s * s;
            r1 += resp;
            rs += resp * s;
        }
        let det = s11 * sss - s1s * s1s;
        let g0 = (sss * r1 - s1s * rs) / det;
        let g1 = (-s1s * r1 + s11 * rs) / det;
        let expected = g0 + g1 * scale(t);
        let got = oracle.mu(t, tp).unwrap();
        assert!(
            (got - expected).abs() < 1e-10,
            "oracle {got} vs scalar {expected}"
        );
    }

    #[test]
    fn oracle_tracks_constant_outcome_loosely() {
        // True weights do not balance in sample and the weight function is a
        // trapezoid in t, so a constant outcome is recovered only up to
        // sieve-projection and sampling error.
        let spec = DgpSpec {
            scenario: Scenario::II,
            n: 5_000,
            seed: 3,
        };
        let mut data = generate(&spec);
        for i in 0..data.n() {
            data.y[i] = 7.0;
        }
        let oracle = OracleSeries::new(&data, 6).unwrap();
        let mu = oracle.mu(0.5, 0.5).unwrap();
        assert!((mu - 7.0).abs() < 0.6, "oracle mu {mu}");
    }

    #[test]
    fn rmse_hand_value() {
        // errors 0.3 and -0.4 -> sqrt((0.09 + 0.16)/2)
        let r = rmse(&[0.3, -0.4]);
        assert!((r - 0.125f64.sqrt()).abs() < 1e-15);
        assert!((r - 0.35355).abs() < 1e-5);
    }

    #[test]
    fn perfect_stub_has_zero_armse() {
        let mut config = McConfig::new(Scenario::I, 40, 3, 5);
        config.estimators = vec![EstimatorKind::Truth];
        let report = run_mc(&config).unwrap();
        for entry in &report.entries {
            assert_eq!(entry.armse_x1000, 0.0);
            assert_eq!(entry.failures, 0);
        }
    }

    #[test]
    fn mc_report_is_deterministic() {
        let mut config = McConfig::new(Scenario::I, 120, 4, 19);
        config.estimators = vec![EstimatorKind::Ols];
        let a = run_mc(&config).unwrap();
        let b = run_mc(&config).unwrap();
        for (ea, eb) in a.entries.iter().zip(&b.entries) {
            assert_eq!(ea.armse_x1000, eb.armse_x1000);
        }
    }

    #[test]
    fn binary_truth_probabilities_are_coherent() {
        // overlap: P(1|m,x) = p(x); off-overlap: 0 or 1
        let x = 0.4;
        let p = logistic(x);
        let m_overlap = 0.3 * x + 0.1;
        assert!((BinaryTruth::prob_t_given_mx(1.0, m_overlap, x) - p).abs() < 1e-15);
        // m only in the T=1 box: 0.3 + 0.3x + 1.9
        let m_only1 = 0.3 + 0.3 * x + 1.9;
        assert_eq!(BinaryTruth::prob_t_given_mx(1.0, m_only1, x), 1.0);
        assert_eq!(BinaryTruth::prob_t_given_mx(0.0, m_only1, x), 0.0);
        // m only in the T=0 box
        let m_only0 = 0.3 * x - 1.9;
        assert_eq!(BinaryTruth::prob_t_given_mx(0.0, m_only0, x), 1.0);
    }

    #[test]
    fn eif_is_mean_zero_and_matches_structure() {
        // mean-zero over a large sample, within 3 standard errors
        let spec = DgpSpec {
            scenario: Scenario::Binary,
            n: 50_000,
            seed: 23,
        };
        let data = generate(&spec);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for i in 0..data.n() {
            let s = BinaryTruth::eif(
                data.y[i],
                data.t[i],
                data.m[(i, 0)],
                data.x[(i, 0)],
                1.0,
                0.0,
            )
            .unwrap();
            sum += s;
            sumsq += s * s;
        }
        let n = data.n() as f64;
        let mean = sum / n;
        let sd = (sumsq / n - mean * mean).sqrt();
        assert!(
            mean.abs() < 3.0 * sd / n.sqrt(),
            "EIF mean {mean}, sd {sd}"
        );

        // degenerate outcome: Y equals its conditional mean and the mediator
        // ratio term matched -> S = eta - mu row-wise
        let x = 0.2;
        let m = 0.3 + 0.3 * x + 0.5; // in both boxes
        let y = BinaryTruth::cond_mean_y(1.0, m, x);
        let s = BinaryTruth::eif(y, 1.0, m, x, 1.0, 0.0).unwrap();
        let expected = BinaryTruth::eta(1.0, 0.0, x) - true_mu(Scenario::Binary, 1.0, 0.0);
        assert!((s - expected).abs() < 1e-12);
    }
}
