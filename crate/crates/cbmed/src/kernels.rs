//! Kernel primitives and bandwidth rules used by the kernel-type effect
//! estimator and by the conditional-density plug-ins of the variance
//! estimator.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum KernelError {
    #[error("bandwidth must be positive, got {0}")]
    BadBandwidth(f64),
    #[error("need at least {0} observations")]
    TooFewObservations(usize),
    #[error("treatment has zero variance; kernel smoothing is meaningless")]
    ZeroVariance,
    #[error("empty kernel neighborhood around t = {0}")]
    EmptyNeighborhood(f64),
    #[error("per-coordinate kernel count {got} does not match {expected} coordinates")]
    CoordinateMismatch { got: usize, expected: usize },
}

/// Univariate kernel family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    /// `K(u) = 0.75 (1 - u^2)` on `[-1, 1]`.
    Epanechnikov2,
    /// Fourth-order variant `K(u) = (45/32)(1 - 7u^2/3)(1 - u^2)` on `[-1, 1]`;
    /// takes negative values.
    Epanechnikov4,
    /// Standard normal density.
    Gaussian,
}

impl KernelFamily {
    /// Raw kernel `K(u)`.
    pub fn raw(&self, u: f64) -> f64 {
        match self {
            KernelFamily::Epanechnikov2 => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
            KernelFamily::Epanechnikov4 => {
                if u.abs() <= 1.0 {
                    (45.0 / 32.0) * (1.0 - 7.0 * u * u / 3.0) * (1.0 - u * u)
                } else {
                    0.0
                }
            }
            KernelFamily::Gaussian => (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt(),
        }
    }

    /// The rule-of-thumb constant `C` for this family.
    pub fn rule_of_thumb_constant(&self) -> f64 {
        match self {
            KernelFamily::Epanechnikov2 => 2.34,
            KernelFamily::Epanechnikov4 => 3.03,
            KernelFamily::Gaussian => 1.06,
        }
    }
}

/// A kernel family together with a bandwidth.
#[derive(Debug, Clone, Copy)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: f64) -> Result<Self, KernelError> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(KernelError::BadBandwidth(bandwidth));
        }
        Ok(Self { family, bandwidth })
    }

    /// `K_h(x) = K(x / h) / h`.
    pub fn eval(&self, x: f64) -> f64 {
        self.family.raw(x / self.bandwidth) / self.bandwidth
    }
}

/// Scaled kernel evaluation `K_h(x)`.
pub fn kernel_eval(spec: &KernelSpec, x: f64) -> f64 {
    spec.eval(x)
}

fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (ss / (n - 1.0)).sqrt()
}

/// Rule-of-thumb bandwidth: `C * sd(T) * N^{-1/5}`, or the undersmoothed
/// `C * N^{-1/4}` used by the kernel effect estimator.
pub fn rule_of_thumb_bandwidth(
    t: &[f64],
    constant: f64,
    undersmooth: bool,
) -> Result<f64, KernelError> {
    if t.len() < 2 {
        return Err(KernelError::TooFewObservations(2));
    }
    let n = t.len() as f64;
    if undersmooth {
        return Ok(constant * n.powf(-0.25));
    }
    let sd = sample_sd(t);
    if !(sd > 0.0) {
        return Err(KernelError::ZeroVariance);
    }
    Ok(constant * sd * n.powf(-0.2))
}

/// How the treatment coordinate is smoothed in conditional densities:
/// a kernel for continuous treatments, exact level matching for discrete
/// ones (the "density" is then a conditional probability mass).
#[derive(Debug, Clone, Copy)]
pub enum TreatmentSmoothing {
    Continuous(KernelSpec),
    Discrete,
}

impl TreatmentSmoothing {
    fn eval(&self, t_obs: f64, t0: f64) -> f64 {
        match self {
            TreatmentSmoothing::Continuous(spec) => spec.eval(t_obs - t0),
            TreatmentSmoothing::Discrete => {
                if (t_obs - t0).abs() <= 1e-9 * t0.abs().max(1.0) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Nadaraya-Watson conditional density (or probability mass, for discrete
/// treatments) `f_{T|Z}(t0 | z0)`.
pub fn conditional_density(
    t_data: &[f64],
    z_design: &DMatrix<f64>,
    t0: f64,
    z0: &[f64],
    t_smoothing: &TreatmentSmoothing,
    z_kernels: &[KernelSpec],
) -> Result<f64, KernelError> {
    if z_kernels.len() != z_design.ncols() {
        return Err(KernelError::CoordinateMismatch {
            got: z_kernels.len(),
            expected: z_design.ncols(),
        });
    }
    if z0.len() != z_design.ncols() {
        return Err(KernelError::CoordinateMismatch {
            got: z0.len(),
            expected: z_design.ncols(),
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..t_data.len() {
        let mut w = 1.0;
        for (j, spec) in z_kernels.iter().enumerate() {
            w *= spec.eval(z_design[(i, j)] - z0[j]);
            if w == 0.0 {
                break;
            }
        }
        if w == 0.0 {
            continue;
        }
        den += w;
        num += w * t_smoothing.eval(t_data[i], t0);
    }
    if den <= 1e-12 {
        return Err(KernelError::EmptyNeighborhood(t0));
    }
    Ok(num / den)
}

/// Kernel density estimate of the treatment margin, `N^{-1} sum K_h(t_i - t0)`.
pub fn marginal_density(t_data: &[f64], t0: f64, spec: &KernelSpec) -> f64 {
    let n = t_data.len().max(1) as f64;
    t_data.iter().map(|&ti| spec.eval(ti - t0)).sum::<f64>() / n
}

/// Batched conditional-density ratios for the influence-function plug-ins:
/// for every observation `i`,
/// `f_{T|Z}(T_i - delta | Z_i) / f_{T|Z}(T_i | Z_i)`.
///
/// The Nadaraya-Watson denominators cancel in the ratio, so a single
/// `O(N^2)` pass computes both numerators. The same half-step tolerance
/// floor (`1e-12` on the density scale) guards the denominator; floored
/// observations are counted, not dropped.
pub struct DensityRatios {
    pub ratios: Vec<f64>,
    pub floored: usize,
}

pub fn conditional_density_ratios(
    t_data: &[f64],
    z_design: &DMatrix<f64>,
    delta: f64,
    t_smoothing: &TreatmentSmoothing,
    z_kernels: &[KernelSpec],
    floor: f64,
) -> Result<DensityRatios, KernelError> {
    let n = t_data.len();
    if z_kernels.len() != z_design.ncols() {
        return Err(KernelError::CoordinateMismatch {
            got: z_kernels.len(),
            expected: z_design.ncols(),
        });
    }
    if delta == 0.0 {
        return Ok(DensityRatios {
            ratios: vec![1.0; n],
            floored: 0,
        });
    }
    let mut ratios = vec![0.0f64; n];
    let mut floored = 0usize;
    for i in 0..n {
        let ti_shift = t_data[i] - delta;
        let ti = t_data[i];
        let mut num_shift = 0.0;
        let mut num_here = 0.0;
        let mut wsum = 0.0;
        for j in 0..n {
            let mut w = 1.0;
            for (c, spec) in z_kernels.iter().enumerate() {
                w *= spec.eval(z_design[(j, c)] - z_design[(i, c)]);
                if w == 0.0 {
                    break;
                }
            }
            if w == 0.0 {
                continue;
            }
            wsum += w;
            num_shift += w * t_smoothing.eval(t_data[j], ti_shift);
            num_here += w * t_smoothing.eval(t_data[j], ti);
        }
        if wsum <= 1e-12 {
            return Err(KernelError::EmptyNeighborhood(ti));
        }
        let f_here = num_here / wsum;
        let f_shift = num_shift / wsum;
        let denom = if f_here < floor {
            floored += 1;
            floor
        } else {
            f_here
        };
        ratios[i] = (f_shift / denom).max(0.0);
    }
    Ok(DensityRatios { ratios, floored })
}

/// Per-coordinate rule-of-thumb bandwidths for density plug-ins:
/// `C * sd(Z_j) * N^{-1/(4 + d)}` with `d` the joint dimension (treatment
/// plus all `z` coordinates).
pub fn plugin_bandwidths(
    z_design: &DMatrix<f64>,
    joint_dim: usize,
    family: KernelFamily,
) -> Result<Vec<KernelSpec>, KernelError> {
    let n = z_design.nrows();
    if n < 2 {
        return Err(KernelError::TooFewObservations(2));
    }
    let rate = -1.0 / (4.0 + joint_dim as f64);
    let c = family.rule_of_thumb_constant();
    let mut out = Vec::with_capacity(z_design.ncols());
    for j in 0..z_design.ncols() {
        let col: Vec<f64> = (0..n).map(|i| z_design[(i, j)]).collect();
        let sd = sample_sd(&col);
        if !(sd > 0.0) {
            return Err(KernelError::ZeroVariance);
        }
        out.push(KernelSpec::new(family, c * sd * (n as f64).powf(rate))?);
    }
    Ok(out)
}
