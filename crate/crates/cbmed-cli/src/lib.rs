//! Library half of the command-line front end: configuration resolution
//! (flags over config file over defaults), the four subcommand runners, and
//! the machine-readable output writers. Everything here is deterministic
//! given the resolved configuration and seed; output files embed the full
//! resolved configuration for reproducibility.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use cbmed::calibration::SolverOptions;
use cbmed::data::{parse_grid_spec, ColumnMapping, DataError, Dataset, TreatmentKind};
use cbmed::estimators::{EstimatorError, IpwBinary, Method, OlsMediation, Panel};
use cbmed::inference::{
    bootstrap_ci, cbs_point_influence, EstimatedNuisances, InferenceError, PluginSettings,
    RegressionDesigns,
};
use cbmed::kernels::{KernelFamily, KernelSpec};
use cbmed::simlab::{run_mc, EstimatorKind, McConfig, Scenario, SimError};
use cbmed::tuning::{fit_with_tuning, FitOverrides, TuningError, TuningGrid, TuningResult};
use cbmed::MediationFit;

#[derive(Error, Debug)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tuning(#[from] TuningError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("io error writing {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// On-disk configuration file; every field optional, flags take precedence.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub input: Option<String>,
    pub output: Option<String>,
    pub format: Option<String>,
    pub y: Option<String>,
    pub t: Option<String>,
    pub m: Option<Vec<String>>,
    pub x: Option<Vec<String>>,
    pub treatment: Option<String>,
    pub methods: Option<Vec<String>>,
    pub grid: Option<String>,
    pub t_prime: Option<f64>,
    pub k1: Option<usize>,
    pub kx: Option<usize>,
    pub kmx: Option<usize>,
    pub k0: Option<usize>,
    pub bandwidth_constant: Option<f64>,
    pub kernel: Option<String>,
    pub bootstrap: Option<usize>,
    pub se: Option<String>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub scenario: Option<String>,
    pub n: Option<usize>,
    pub trials: Option<usize>,
    pub estimators: Option<Vec<String>>,
    pub tune_once: Option<bool>,
    pub force_grid: Option<bool>,
}

impl ConfigFile {
    pub fn load(path: &str) -> Result<Self, CliError> {
        let raw = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&raw)?)
    }

    /// Overlay `self` (flags) on top of `base` (config file).
    pub fn merged_over(self, base: ConfigFile) -> ConfigFile {
        macro_rules! pick {
            ($field:ident) => {
                self.$field.or(base.$field)
            };
        }
        ConfigFile {
            input: pick!(input),
            output: pick!(output),
            format: pick!(format),
            y: pick!(y),
            t: pick!(t),
            m: pick!(m),
            x: pick!(x),
            treatment: pick!(treatment),
            methods: pick!(methods),
            grid: pick!(grid),
            t_prime: pick!(t_prime),
            k1: pick!(k1),
            kx: pick!(kx),
            kmx: pick!(kmx),
            k0: pick!(k0),
            bandwidth_constant: pick!(bandwidth_constant),
            kernel: pick!(kernel),
            bootstrap: pick!(bootstrap),
            se: pick!(se),
            seed: pick!(seed),
            threads: pick!(threads),
            scenario: pick!(scenario),
            n: pick!(n),
            trials: pick!(trials),
            estimators: pick!(estimators),
            tune_once: pick!(tune_once),
            force_grid: pick!(force_grid),
        }
    }
}

/// Fully resolved run configuration, echoed into every output artifact.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub subcommand: String,
    pub input: Option<String>,
    pub output: Option<String>,
    pub format: String,
    pub columns: Option<ResolvedColumns>,
    pub treatment: Option<String>,
    pub methods: Vec<String>,
    pub grid_spec: Option<String>,
    pub t_prime: f64,
    pub k1: Option<usize>,
    pub kx: Option<usize>,
    pub kmx: Option<usize>,
    pub k0: Option<usize>,
    pub bandwidth_constant: Option<f64>,
    pub kernel: String,
    pub bootstrap: usize,
    pub se: String,
    pub seed: u64,
    pub threads: Option<usize>,
    pub scenario: Option<String>,
    pub n: Option<usize>,
    pub trials: Option<usize>,
    pub estimators: Vec<String>,
    pub tune_once: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedColumns {
    pub y: String,
    pub t: String,
    pub m: Vec<String>,
    pub x: Vec<String>,
}

fn parse_kernel(name: &str) -> Result<KernelFamily, CliError> {
    match name.to_ascii_lowercase().as_str() {
        "epanechnikov2" | "epanechnikov" | "epa2" => Ok(KernelFamily::Epanechnikov2),
        "epanechnikov4" | "epa4" => Ok(KernelFamily::Epanechnikov4),
        "gaussian" | "normal" => Ok(KernelFamily::Gaussian),
        other => Err(CliError::Config(format!("unknown kernel '{other}'"))),
    }
}

fn parse_treatment(spec: &str) -> Result<TreatmentKind, CliError> {
    let lower = spec.to_ascii_lowercase();
    if lower == "continuous" {
        Ok(TreatmentKind::Continuous)
    } else if lower == "binary" {
        Ok(TreatmentKind::Discrete {
            levels: vec![0.0, 1.0],
        })
    } else if lower == "discrete" {
        // levels detected from the data at ingestion
        Ok(TreatmentKind::Discrete { levels: vec![] })
    } else if let Some(rest) = lower.strip_prefix("mixed:") {
        let mass: f64 = rest
            .parse()
            .map_err(|_| CliError::Config(format!("bad mass point in '{spec}'")))?;
        Ok(TreatmentKind::Mixed { mass_point: mass })
    } else if lower == "mixed" {
        Ok(TreatmentKind::Mixed { mass_point: 0.0 })
    } else {
        Err(CliError::Config(format!("unknown treatment kind '{spec}'")))
    }
}

fn require<T: Clone>(opt: &Option<T>, what: &str) -> Result<T, CliError> {
    opt.clone()
        .ok_or_else(|| CliError::Config(format!("missing required option: {what}")))
}

fn ingest(cfg: &ConfigFile) -> Result<(Dataset, ColumnMapping, TreatmentKind), CliError> {
    let input = require(&cfg.input, "--input")?;
    let mapping = ColumnMapping {
        y: cfg.y.clone().unwrap_or_else(|| "y".to_string()),
        t: cfg.t.clone().unwrap_or_else(|| "t".to_string()),
        m: cfg.m.clone().unwrap_or_else(|| vec!["m".to_string()]),
        x: cfg.x.clone().unwrap_or_else(|| vec!["x".to_string()]),
    };
    let treatment = parse_treatment(cfg.treatment.as_deref().unwrap_or("continuous"))?;
    let data = Dataset::from_csv_path(&input, &mapping, treatment)?;
    let kind = data.treatment.clone();
    Ok((data, mapping, kind))
}

fn tuning_grid(cfg: &ConfigFile, grid_range: Option<(f64, f64)>) -> Result<TuningGrid, CliError> {
    let mut grid = TuningGrid::default();
    if let Some(c) = cfg.bandwidth_constant {
        grid.bandwidth_constant = Some(c);
    }
    if let Some(k) = &cfg.kernel {
        grid.kernel_family = parse_kernel(k)?;
    }
    grid.k0_loss_range = grid_range;
    Ok(grid)
}

fn overrides(cfg: &ConfigFile) -> FitOverrides {
    FitOverrides {
        k1: cfg.k1,
        kx: cfg.kx,
        kmx: cfg.kmx,
        k0: cfg.k0,
    }
}

/// One row of the flattened curve output.
#[derive(Debug, Clone, Serialize)]
pub struct CurveRow {
    pub method: Method,
    pub panel: Panel,
    pub t: f64,
    pub estimate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_low: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_high: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateOutput {
    pub config: ResolvedConfig,
    pub grid: Vec<f64>,
    pub tuning: TuningResult,
    pub curves: Vec<CurveRow>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub n: usize,
    pub pi_x: WeightDiagnostics,
    pub pi_mx: WeightDiagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap_dropped: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightDiagnostics {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub balancing_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub clip_events: usize,
}

fn weight_diagnostics(w: &cbmed::FittedWeights) -> WeightDiagnostics {
    let ws = &w.fit.in_sample_weights;
    WeightDiagnostics {
        mean: w.fit.mean_weight,
        min: ws.min(),
        max: ws.max(),
        balancing_residual: w.fit.grad_norm,
        iterations: w.fit.iterations,
        converged: w.fit.converged,
        clip_events: w.clip_events(),
    }
}

fn default_grid(data: &Dataset) -> Vec<f64> {
    match &data.treatment {
        TreatmentKind::Discrete { levels } => levels.clone(),
        _ => {
            let lo = data.t.min();
            let hi = data.t.max();
            let step = (hi - lo) / 20.0;
            (0..=20).map(|k| lo + step * k as f64).collect()
        }
    }
}

fn resolve_grid(cfg: &ConfigFile, data: &Dataset) -> Result<Vec<f64>, CliError> {
    let grid = match &cfg.grid {
        Some(spec) => parse_grid_spec(spec)?,
        None => default_grid(data),
    };
    if !cfg.force_grid.unwrap_or(false) {
        let lo = data.t.min();
        let hi = data.t.max();
        let slack = 0.1 * (hi - lo).max(1.0);
        for &g in &grid {
            if g < lo - slack || g > hi + slack {
                return Err(CliError::Config(format!(
                    "grid point {g} is far outside the observed treatment range [{lo}, {hi}]; \
                     pass force_grid to override"
                )));
            }
        }
    }
    Ok(grid)
}

struct PanelEstimator<'a> {
    method: Method,
    fit: Option<&'a MediationFit>,
    kernel: Option<KernelSpec>,
    ols: Option<OlsMediation>,
    ipw: Option<IpwBinary>,
}

impl PanelEstimator<'_> {
    fn mu(&self, a: f64, b: f64) -> Result<f64, EstimatorError> {
        match self.method {
            Method::Cbs => self.fit.unwrap().cbs_mu(a, b),
            Method::Cbk => self
                .fit
                .unwrap()
                .cbk_mu(a, b, self.kernel.as_ref().unwrap()),
            Method::Ols => Ok(self.ols.as_ref().unwrap().mu(a, b)),
            Method::Ipw => self.ipw.as_ref().unwrap().mu(a, b),
            Method::Oracle => unreachable!("oracle is simulation-only"),
        }
    }

    fn panel_value(&self, panel: Panel, t: f64, t_prime: f64) -> Result<f64, EstimatorError> {
        let ((a1, b1), second) = panel.pairs(t, t_prime);
        let mut v = self.mu(a1, b1)?;
        if let Some((a2, b2)) = second {
            v -= self.mu(a2, b2)?;
        }
        Ok(v)
    }
}

/// The `estimate` subcommand: fit, evaluate the requested panel curves on
/// the grid with standard errors, and write the artifact.
pub fn run_estimate(cfg: &ConfigFile, resolved: &mut ResolvedConfig) -> Result<EstimateOutput, CliError> {
    let (data, _, kind) = ingest(cfg)?;
    let grid = resolve_grid(cfg, &data)?;
    let lo = grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let t_prime = cfg.t_prime.unwrap_or(0.0);
    let tuning = tuning_grid(
        cfg,
        Some((lo.min(t_prime), hi.max(t_prime))),
    )?;
    let solver = SolverOptions::default();
    let (fit, tune) = fit_with_tuning(&data, &tuning, &overrides(cfg), &solver)?;

    let methods: Vec<Method> = cfg
        .methods
        .clone()
        .unwrap_or_else(|| vec!["cbs".into()])
        .iter()
        .map(|m| match m.to_ascii_lowercase().as_str() {
            "cbs" => Ok(Method::Cbs),
            "cbk" => Ok(Method::Cbk),
            "ols" => Ok(Method::Ols),
            "ipw" => Ok(Method::Ipw),
            other => Err(CliError::Config(format!("unknown method '{other}'"))),
        })
        .collect::<Result<_, _>>()?;

    let se_mode = cfg.se.clone().unwrap_or_else(|| "auto".to_string());
    let bootstrap_b = cfg.bootstrap.unwrap_or(0);
    let seed = cfg.seed.unwrap_or(0);

    let kernel = if matches!(kind, TreatmentKind::Continuous) {
        Some(
            KernelSpec::new(tuning.kernel_family, tune.bandwidth)
                .map_err(|e| CliError::Config(e.to_string()))?,
        )
    } else {
        None
    };

    let panels = [
        Panel::Mu,
        Panel::DirectAtTreated,
        Panel::DirectAtBenchmark,
        Panel::IndirectAtTreated,
        Panel::IndirectAtBenchmark,
    ];

    let mut curves = Vec::new();
    let mut bootstrap_dropped = None;
    for &method in &methods {
        let est = PanelEstimator {
            method,
            fit: Some(&fit),
            kernel,
            ols: if method == Method::Ols {
                Some(OlsMediation::fit(&data)?)
            } else {
                None
            },
            ipw: if method == Method::Ipw {
                Some(IpwBinary::fit(&data, true)?)
            } else {
                None
            },
        };
        // plug-in influence SEs for the series estimator; bootstrap otherwise
        let use_plugin = match se_mode.as_str() {
            "none" => false,
            "plugin" => method == Method::Cbs,
            "bootstrap" => false,
            _ => method == Method::Cbs && bootstrap_b == 0,
        };
        let use_bootstrap = bootstrap_b > 0 && se_mode != "none" && se_mode != "plugin";

        for panel in panels {
            let mut estimates = Vec::with_capacity(grid.len());
            for &t in &grid {
                estimates.push(est.panel_value(panel, t, t_prime)?);
            }
            let mut se = None;
            let mut ci_low = None;
            let mut ci_high = None;
            if use_plugin {
                let nuis = EstimatedNuisances::new(&fit, PluginSettings::default())?;
                let designs = RegressionDesigns::from_fit(&fit)?;
                let mut ses = Vec::with_capacity(grid.len());
                for &t in &grid {
                    let ((a1, b1), second) = panel.pairs(t, t_prime);
                    let mut infl = cbs_point_influence(&fit, &nuis, &designs, a1, b1)?;
                    if let Some((a2, b2)) = second {
                        infl -= cbs_point_influence(&fit, &nuis, &designs, a2, b2)?;
                    }
                    let n = infl.len() as f64;
                    let v = infl.iter().map(|e| e * e).sum::<f64>() / n;
                    ses.push((v / n).sqrt());
                }
                ci_low = Some(
                    estimates
                        .iter()
                        .zip(&ses)
                        .map(|(e, s)| e - 1.96 * s)
                        .collect(),
                );
                ci_high = Some(
                    estimates
                        .iter()
                        .zip(&ses)
                        .map(|(e, s)| e + 1.96 * s)
                        .collect(),
                );
                se = Some(ses);
            } else if use_bootstrap {
                let tune_boot = tune.clone();
                let grid_clone = grid.clone();
                let tuning_clone = tuning.clone();
                let estimator = move |resample: &Dataset| -> Result<Vec<f64>, EstimatorError> {
                    let fixed = FitOverrides {
                        k1: Some(tune_boot.k1),
                        kx: Some(tune_boot.kx),
                        kmx: Some(tune_boot.kmx),
                        k0: Some(tune_boot.k0),
                    };
                    let (refit, _) = fit_with_tuning(
                        resample,
                        &tuning_clone,
                        &fixed,
                        &SolverOptions::default(),
                    )
                    .map_err(|e| EstimatorError::RankDeficient(e.to_string()))?;
                    let kernel = kernel;
                    let mut out = Vec::with_capacity(grid_clone.len());
                    for &t in &grid_clone {
                        let ((a1, b1), second) = panel.pairs(t, t_prime);
                        let mut v = match method {
                            Method::Cbs => refit.cbs_mu(a1, b1)?,
                            Method::Cbk => refit.cbk_mu(a1, b1, kernel.as_ref().unwrap())?,
                            _ => unreachable!(),
                        };
                        if let Some((a2, b2)) = second {
                            v -= match method {
                                Method::Cbs => refit.cbs_mu(a2, b2)?,
                                Method::Cbk => refit.cbk_mu(a2, b2, kernel.as_ref().unwrap())?,
                                _ => unreachable!(),
                            };
                        }
                        out.push(v);
                    }
                    Ok(out)
                };
                if matches!(method, Method::Cbs | Method::Cbk) {
                    let (curve, dropped) = bootstrap_ci(
                        estimator,
                        &data,
                        method,
                        panel,
                        &grid,
                        t_prime,
                        bootstrap_b,
                        seed,
                    )?;
                    se = curve.se;
                    ci_low = curve.ci_low;
                    ci_high = curve.ci_high;
                    bootstrap_dropped = Some(dropped);
                }
            }
            for (gi, &t) in grid.iter().enumerate() {
                curves.push(CurveRow {
                    method,
                    panel,
                    t,
                    estimate: estimates[gi],
                    se: se.as_ref().map(|s| s[gi]),
                    ci_low: ci_low.as_ref().map(|c: &Vec<f64>| c[gi]),
                    ci_high: ci_high.as_ref().map(|c: &Vec<f64>| c[gi]),
                });
            }
        }
    }

    resolved.k1 = Some(tune.k1);
    resolved.kx = Some(tune.kx);
    resolved.kmx = Some(tune.kmx);
    resolved.k0 = Some(tune.k0);
    Ok(EstimateOutput {
        config: resolved.clone(),
        grid,
        tuning: tune,
        curves,
        diagnostics: Diagnostics {
            n: data.n(),
            pi_x: weight_diagnostics(&fit.x_weights),
            pi_mx: weight_diagnostics(&fit.mx_weights),
            bootstrap_dropped,
        },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TuneOutput {
    pub config: ResolvedConfig,
    pub tuning: TuningResult,
}

pub fn run_tune(cfg: &ConfigFile, resolved: &ResolvedConfig) -> Result<TuneOutput, CliError> {
    let (data, _, _) = ingest(cfg)?;
    let tuning = tuning_grid(cfg, None)?;
    let (_, tune) = fit_with_tuning(&data, &tuning, &overrides(cfg), &SolverOptions::default())?;
    Ok(TuneOutput {
        config: resolved.clone(),
        tuning: tune,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightsOutput {
    pub config: ResolvedConfig,
    pub tuning: TuningResult,
    pub n: usize,
    pub pi_x: WeightDiagnostics,
    pub pi_mx: WeightDiagnostics,
}

pub fn run_weights(cfg: &ConfigFile, resolved: &ResolvedConfig) -> Result<WeightsOutput, CliError> {
    let (data, _, _) = ingest(cfg)?;
    let tuning = tuning_grid(cfg, None)?;
    let (fit, tune) = fit_with_tuning(&data, &tuning, &overrides(cfg), &SolverOptions::default())?;
    Ok(WeightsOutput {
        config: resolved.clone(),
        tuning: tune,
        n: data.n(),
        pi_x: weight_diagnostics(&fit.x_weights),
        pi_mx: weight_diagnostics(&fit.mx_weights),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateOutput {
    pub config: ResolvedConfig,
    pub report: cbmed::McReport,
}

pub fn run_simulate(cfg: &ConfigFile, resolved: &ResolvedConfig) -> Result<SimulateOutput, CliError> {
    let scenario = Scenario::parse(cfg.scenario.as_deref().unwrap_or("I"))
        .ok_or_else(|| CliError::Config("unknown scenario".into()))?;
    let n = cfg.n.unwrap_or(500);
    let trials = cfg.trials.unwrap_or(100);
    let seed = cfg.seed.unwrap_or(0);
    let mut config = McConfig::new(scenario, n, trials, seed);
    if let Some(est) = &cfg.estimators {
        config.estimators = est
            .iter()
            .map(|e| {
                EstimatorKind::parse(e)
                    .ok_or_else(|| CliError::Config(format!("unknown estimator '{e}'")))
            })
            .collect::<Result<_, _>>()?;
    }
    if let Some(spec) = &cfg.grid {
        config.grid = parse_grid_spec(spec)?;
    }
    if let Some(tp) = cfg.t_prime {
        config.t_prime = tp;
    }
    config.tune_per_trial = !cfg.tune_once.unwrap_or(false);
    config.overrides = overrides(cfg);
    config.tuning = tuning_grid(
        cfg,
        if scenario.is_binary() {
            None
        } else {
            let lo = config.grid.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = config.grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            Some((lo.min(config.t_prime), hi.max(config.t_prime)))
        },
    )?;
    let report = run_mc(&config)?;
    Ok(SimulateOutput {
        config: resolved.clone(),
        report,
    })
}

/// Serialize an output: JSON as-is; CSV with a `# config:` reproducibility
/// header followed by flat rows.
pub fn write_estimate(out: &EstimateOutput, format: &str, path: &str) -> Result<(), CliError> {
    let content = match format {
        "csv" => {
            let mut s = format!("# config: {}\n", serde_json::to_string(&out.config)?);
            s.push_str("method,panel,t,estimate,se,ci_low,ci_high\n");
            for row in &out.curves {
                let fmt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                s.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    serde_json::to_value(row.method)?.as_str().unwrap(),
                    serde_json::to_value(row.panel)?.as_str().unwrap(),
                    row.t,
                    row.estimate,
                    fmt(&row.se),
                    fmt(&row.ci_low),
                    fmt(&row.ci_high),
                ));
            }
            s
        }
        _ => serde_json::to_string_pretty(out)? + "\n",
    };
    write_file(path, &content)
}

pub fn write_simulate(out: &SimulateOutput, format: &str, path: &str) -> Result<(), CliError> {
    let content = match format {
        "csv" => {
            let mut s = format!("# config: {}\n", serde_json::to_string(&out.config)?);
            s.push_str("estimator,panel,armse_x1000,successes,failures\n");
            for e in &out.report.entries {
                s.push_str(&format!(
                    "{},{},{},{},{}\n",
                    serde_json::to_value(e.estimator)?.as_str().unwrap(),
                    e.panel.name(),
                    e.armse_x1000,
                    e.successes,
                    e.failures,
                ));
            }
            s
        }
        _ => serde_json::to_string_pretty(out)? + "\n",
    };
    write_file(path, &content)
}

pub fn write_json<T: Serialize>(value: &T, path: &str) -> Result<(), CliError> {
    write_file(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn write_file(path: &str, content: &str) -> Result<(), CliError> {
    if path == "-" {
        print!("{content}");
        std::io::stdout().flush().ok();
        return Ok(());
    }
    if let Some(parent) = Path::new(path).parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| CliError::Io {
                path: path.to_string(),
                source,
            })?;
        }
    }
    fs::write(path, content).map_err(|source| CliError::Io {
        path: path.to_string(),
        source,
    })
}

/// Build the resolved-config echo for a subcommand.
pub fn resolve(subcommand: &str, cfg: &ConfigFile) -> ResolvedConfig {
    ResolvedConfig {
        subcommand: subcommand.to_string(),
        input: cfg.input.clone(),
        output: cfg.output.clone(),
        format: cfg.format.clone().unwrap_or_else(|| "json".into()),
        columns: cfg.y.is_some().then(|| ResolvedColumns {
            y: cfg.y.clone().unwrap_or_default(),
            t: cfg.t.clone().unwrap_or_default(),
            m: cfg.m.clone().unwrap_or_default(),
            x: cfg.x.clone().unwrap_or_default(),
        }),
        treatment: cfg.treatment.clone(),
        methods: cfg.methods.clone().unwrap_or_else(|| vec!["cbs".into()]),
        grid_spec: cfg.grid.clone(),
        t_prime: cfg.t_prime.unwrap_or(0.0),
        k1: cfg.k1,
        kx: cfg.kx,
        kmx: cfg.kmx,
        k0: cfg.k0,
        bandwidth_constant: cfg.bandwidth_constant,
        kernel: cfg.kernel.clone().unwrap_or_else(|| "epanechnikov2".into()),
        bootstrap: cfg.bootstrap.unwrap_or(0),
        se: cfg.se.clone().unwrap_or_else(|| "auto".into()),
        seed: cfg.seed.unwrap_or(0),
        threads: cfg.threads,
        scenario: cfg.scenario.clone(),
        n: cfg.n,
        trials: cfg.trials,
        estimators: cfg.estimators.clone().unwrap_or_default(),
        tune_once: cfg.tune_once.unwrap_or(false),
    }
}
