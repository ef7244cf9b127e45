//! Sieve bases for the treatment, the confounders, and the (mediator,
//! confounder) pair.
//!
//! Four univariate families are supported; multivariate bases are full tensor
//! (Kronecker) products of univariate parts. Continuous inputs are affinely
//! mapped to `[-1, 1]` using the declared domain before power or B-spline
//! evaluation, which keeps the Gram matrices well conditioned. Every family
//! reproduces constants exactly: the power, B-spline and mixed bases carry an
//! explicit leading 1, and the indicator family is a partition of unity.
//!
//! Power bases extrapolate outside the declared domain (evaluating weights at
//! shifted treatments `T_i + delta` requires it); extrapolation is reported
//! through a flag rather than an error. B-splines have bounded support, so an
//! out-of-domain point is an error for them.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::data::TreatmentKind;

#[derive(Error, Debug)]
pub enum BasisError {
    #[error("basis dimension must be >= 1, got {0}")]
    ZeroDimension(usize),
    #[error("domain [{0}, {1}] is empty or degenerate")]
    DegenerateDomain(f64, f64),
    #[error("indicator family requires a nonempty list of levels")]
    MissingLevels,
    #[error("indicator dimension {dimension} does not match the {levels} levels")]
    LevelCountMismatch { dimension: usize, levels: usize },
    #[error("B-spline of degree {degree} needs dimension >= {min}, got {dimension}")]
    SplineDimensionTooSmall {
        degree: usize,
        min: usize,
        dimension: usize,
    },
    #[error("point {0} is outside the bounded support [{1}, {2}] of a B-spline basis")]
    OutOfDomain(f64, f64, f64),
    #[error("treatment kind {kind} is incompatible with the {family} family")]
    FamilyKindMismatch { kind: String, family: String },
    #[error("tensor product needs at least one part")]
    EmptyTensor,
    #[error("point has {got} coordinates, basis expects {expected}")]
    ArityMismatch { got: usize, expected: usize },
}

/// Univariate basis family.
#[derive(Debug, Clone, PartialEq)]
pub enum BasisFamily {
    /// Scaled power series with leading intercept: `(1, s, s^2, ...)`.
    Power,
    /// Intercept plus a clamped uniform B-spline basis with one function
    /// dropped to avoid collinearity with the intercept.
    BSpline { degree: usize },
    /// One indicator per discrete level; all-zero off the levels.
    Indicator { levels: Vec<f64> },
    /// Mass-point indicator times a power sub-basis on the continuous part:
    /// `(1(t = t0), 1 - 1(t = t0), s * (1 - 1(t = t0)), ...)`.
    Mixed { mass_point: f64 },
}

impl BasisFamily {
    fn name(&self) -> &'static str {
        match self {
            BasisFamily::Power => "power",
            BasisFamily::BSpline { .. } => "bspline",
            BasisFamily::Indicator { .. } => "indicator",
            BasisFamily::Mixed { .. } => "mixed",
        }
    }
}

/// Specification of one univariate basis: family, dimension, and the domain
/// used for affine scaling of continuous inputs.
#[derive(Debug, Clone)]
pub struct BasisSpec {
    pub family: BasisFamily,
    pub dimension: usize,
    pub domain: (f64, f64),
}

impl BasisSpec {
    pub fn power(dimension: usize, domain: (f64, f64)) -> Self {
        Self {
            family: BasisFamily::Power,
            dimension,
            domain,
        }
    }

    pub fn bspline(dimension: usize, degree: usize, domain: (f64, f64)) -> Self {
        Self {
            family: BasisFamily::BSpline { degree },
            dimension,
            domain,
        }
    }

    pub fn indicator(levels: Vec<f64>) -> Self {
        let dimension = levels.len();
        Self {
            family: BasisFamily::Indicator { levels },
            dimension,
            domain: (0.0, 1.0),
        }
    }

    pub fn mixed(dimension: usize, mass_point: f64, domain: (f64, f64)) -> Self {
        Self {
            family: BasisFamily::Mixed { mass_point },
            dimension,
            domain,
        }
    }

    fn validate(&self) -> Result<(), BasisError> {
        if self.dimension == 0 {
            return Err(BasisError::ZeroDimension(self.dimension));
        }
        match &self.family {
            BasisFamily::Power | BasisFamily::Mixed { .. } => {
                if !(self.domain.0 < self.domain.1) {
                    return Err(BasisError::DegenerateDomain(self.domain.0, self.domain.1));
                }
            }
            BasisFamily::BSpline { degree } => {
                if !(self.domain.0 < self.domain.1) {
                    return Err(BasisError::DegenerateDomain(self.domain.0, self.domain.1));
                }
                // Output is (1, B_2..B_m) with m = dimension functions in the
                // underlying partition; need m >= degree + 1 and m >= 2.
                let min = (degree + 1).max(2);
                if self.dimension < min {
                    return Err(BasisError::SplineDimensionTooSmall {
                        degree: *degree,
                        min,
                        dimension: self.dimension,
                    });
                }
            }
            BasisFamily::Indicator { levels } => {
                if levels.is_empty() {
                    return Err(BasisError::MissingLevels);
                }
                if self.dimension != levels.len() {
                    return Err(BasisError::LevelCountMismatch {
                        dimension: self.dimension,
                        levels: levels.len(),
                    });
                }
            }
        }
        Ok(())
    }

    fn scale(&self, t: f64) -> f64 {
        let (lo, hi) = self.domain;
        2.0 * (t - lo) / (hi - lo) - 1.0
    }

    /// Evaluate into `out[..dimension]`; returns true when the point required
    /// extrapolation (power) or matched no level (indicator/mixed mass).
    fn evaluate_into(&self, t: f64, out: &mut [f64]) -> Result<bool, BasisError> {
        match &self.family {
            BasisFamily::Power => {
                let s = self.scale(t);
                let mut p = 1.0;
                for slot in out.iter_mut() {
                    *slot = p;
                    p *= s;
                }
                Ok(s.abs() > 1.0 + 1e-12)
            }
            BasisFamily::BSpline { degree } => {
                let s = self.scale(t);
                if !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&s) {
                    return Err(BasisError::OutOfDomain(t, self.domain.0, self.domain.1));
                }
                let s = s.clamp(-1.0, 1.0);
                out[0] = 1.0;
                bspline_all(s, self.dimension, *degree, &mut out[1..]);
                Ok(false)
            }
            BasisFamily::Indicator { levels } => {
                let mut matched = false;
                for (slot, level) in out.iter_mut().zip(levels) {
                    let hit = indicator_match(t, *level);
                    *slot = if hit { 1.0 } else { 0.0 };
                    matched |= hit;
                }
                Ok(!matched)
            }
            BasisFamily::Mixed { mass_point } => {
                if indicator_match(t, *mass_point) {
                    out[0] = 1.0;
                    for slot in out[1..].iter_mut() {
                        *slot = 0.0;
                    }
                    Ok(false)
                } else {
                    out[0] = 0.0;
                    let s = self.scale(t);
                    let mut p = 1.0;
                    for slot in out[1..].iter_mut() {
                        *slot = p;
                        p *= s;
                    }
                    Ok(s.abs() > 1.0 + 1e-12)
                }
            }
        }
    }

    fn constant_coefficients(&self) -> DVector<f64> {
        match &self.family {
            BasisFamily::Power | BasisFamily::BSpline { .. } => {
                let mut c = DVector::zeros(self.dimension);
                c[0] = 1.0;
                c
            }
            BasisFamily::Indicator { .. } => DVector::from_element(self.dimension, 1.0),
            BasisFamily::Mixed { .. } => {
                let mut c = DVector::zeros(self.dimension);
                c[0] = 1.0;
                if self.dimension > 1 {
                    c[1] = 1.0;
                }
                c
            }
        }
    }
}

fn indicator_match(t: f64, level: f64) -> bool {
    (t - level).abs() <= 1e-9 * level.abs().max(1.0)
}

/// All functions of a clamped uniform B-spline partition of size `m` and the
/// given degree, evaluated at `s` in `[-1, 1]`. Writes `B_2..B_m` into `out`
/// (B_1 is dropped by the caller in favor of an explicit intercept).
fn bspline_all(s: f64, m: usize, degree: usize, out: &mut [f64]) {
    let d = degree;
    // Clamped knot vector: d+1 copies of -1, m-d-1 equispaced interior knots,
    // d+1 copies of 1. Total m + d + 1 knots.
    let interior = m - d - 1;
    let knot = |i: usize| -> f64 {
        if i <= d {
            -1.0
        } else if i >= m {
            1.0
        } else {
            // interior knots at positions 1..=interior out of interior+1 gaps
            -1.0 + 2.0 * (i - d) as f64 / (interior + 1) as f64
        }
    };
    // Find the knot span `k` with knot(k) <= s < knot(k+1), clamping the right
    // endpoint into the last nonempty span.
    let mut k = d;
    while k < m - 1 && s >= knot(k + 1) {
        k += 1;
    }
    // de Boor: values[j] = B_{k-d+j}, j = 0..=d
    let mut values = vec![0.0f64; d + 1];
    values[0] = 1.0;
    for r in 1..=d {
        // upgrade from degree r-1 to degree r
        let mut saved = 0.0;
        for j in 0..r {
            let idx = k - r + 1 + j;
            let left = knot(idx);
            let right = knot(idx + r);
            let denom = right - left;
            let alpha = if denom > 0.0 { (s - left) / denom } else { 0.0 };
            let tmp = values[j];
            values[j] = saved + (1.0 - alpha) * tmp;
            saved = alpha * tmp;
        }
        values[r] = saved;
    }
    for slot in out.iter_mut() {
        *slot = 0.0;
    }
    for (j, v) in values.iter().enumerate() {
        let func = k - d + j; // 0-based index of B_{func+1}
        if func >= 1 {
            // func 0 is B_1 (dropped); out holds B_2..B_m
            out[func - 1] = *v;
        }
    }
}

/// A (possibly tensor-product) sieve basis. Each part consumes one input
/// coordinate; evaluation is the left-to-right Kronecker product of the part
/// evaluations, so the total dimension is the product of part dimensions.
#[derive(Debug, Clone)]
pub struct Basis {
    parts: Vec<BasisSpec>,
}

impl Basis {
    pub fn univariate(spec: BasisSpec) -> Result<Self, BasisError> {
        spec.validate()?;
        Ok(Self { parts: vec![spec] })
    }

    /// Full Kronecker tensor product of the given bases.
    pub fn tensor(parts: Vec<Basis>) -> Result<Self, BasisError> {
        if parts.is_empty() {
            return Err(BasisError::EmptyTensor);
        }
        let mut flat = Vec::new();
        for p in parts {
            flat.extend(p.parts);
        }
        Ok(Self { parts: flat })
    }

    pub fn input_arity(&self) -> usize {
        self.parts.len()
    }

    pub fn dimension(&self) -> usize {
        self.parts.iter().map(|p| p.dimension).product()
    }

    pub fn parts(&self) -> &[BasisSpec] {
        &self.parts
    }

    /// Evaluate at a point; returns the basis vector and an extrapolation
    /// flag (true when any coordinate fell outside its declared domain or
    /// matched no discrete level).
    pub fn evaluate(&self, point: &[f64]) -> Result<(DVector<f64>, bool), BasisError> {
        let mut out = DVector::zeros(self.dimension());
        let flag = self.evaluate_into(point, out.as_mut_slice())?;
        Ok((out, flag))
    }

    /// Allocation-light evaluation into a caller-provided slice of length
    /// `self.dimension()`.
    pub fn evaluate_into(&self, point: &[f64], out: &mut [f64]) -> Result<bool, BasisError> {
        if point.len() != self.parts.len() {
            return Err(BasisError::ArityMismatch {
                got: point.len(),
                expected: self.parts.len(),
            });
        }
        debug_assert_eq!(out.len(), self.dimension());
        let mut extrapolated = false;
        let mut part_buf = [0.0f64; 32];
        let mut filled = 1usize;
        out[0] = 1.0;
        for (spec, &coord) in self.parts.iter().zip(point) {
            let dim = spec.dimension;
            let buf: &mut [f64] = if dim <= 32 {
                &mut part_buf[..dim]
            } else {
                // rare: very high-dimensional univariate part
                return self.evaluate_into_alloc(point, out);
            };
            extrapolated |= spec.evaluate_into(coord, buf)?;
            // out[..filled] (x) buf -> out[..filled*dim], kron with the
            // existing prefix varying fastest on the *right* factor.
            for i in (0..filled).rev() {
                let base = out[i];
                for (j, b) in buf.iter().enumerate() {
                    out[i * dim + j] = base * b;
                }
            }
            filled *= dim;
        }
        Ok(extrapolated)
    }

    fn evaluate_into_alloc(&self, point: &[f64], out: &mut [f64]) -> Result<bool, BasisError> {
        let mut extrapolated = false;
        let mut acc = vec![1.0f64];
        for (spec, &coord) in self.parts.iter().zip(point) {
            let mut buf = vec![0.0f64; spec.dimension];
            extrapolated |= spec.evaluate_into(coord, &mut buf)?;
            let mut next = Vec::with_capacity(acc.len() * buf.len());
            for a in &acc {
                for b in &buf {
                    next.push(a * b);
                }
            }
            acc = next;
        }
        out.copy_from_slice(&acc);
        Ok(extrapolated)
    }

    /// Row `i` of the result is the basis evaluated at row `i` of `data`.
    /// Returns the design matrix and the number of extrapolated rows.
    pub fn design_matrix(&self, data: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize), BasisError> {
        if data.ncols() != self.input_arity() {
            return Err(BasisError::ArityMismatch {
                got: data.ncols(),
                expected: self.input_arity(),
            });
        }
        let n = data.nrows();
        let k = self.dimension();
        let mut design = DMatrix::zeros(n, k);
        let mut extrapolated = 0usize;
        let mut point = vec![0.0f64; self.input_arity()];
        let mut row = vec![0.0f64; k];
        for i in 0..n {
            for (j, p) in point.iter_mut().enumerate() {
                *p = data[(i, j)];
            }
            if self.evaluate_into(&point, &mut row)? {
                extrapolated += 1;
            }
            for (j, v) in row.iter().enumerate() {
                design[(i, j)] = *v;
            }
        }
        Ok((design, extrapolated))
    }

    /// A coefficient vector `c` with `c' * basis(t) = 1` for every `t` in the
    /// domain; exists exactly for every supported family.
    pub fn constant_coefficients(&self) -> DVector<f64> {
        let mut acc = DVector::from_element(1, 1.0);
        for spec in &self.parts {
            let c = spec.constant_coefficients();
            acc = acc.kronecker(&c);
        }
        acc
    }
}

/// `N^{-1} X' X` for a design matrix `X`; symmetric positive semidefinite.
pub fn gram_matrix(design: &DMatrix<f64>) -> DMatrix<f64> {
    let n = design.nrows().max(1) as f64;
    (design.transpose() * design) / n
}

/// Build the treatment basis for the given treatment kind.
///
/// Continuous treatments use the spec as-is (power or B-spline). Discrete
/// treatments require the indicator family with one indicator per level.
/// Mixed treatments use the mass-point construction.
pub fn make_treatment_basis(spec: BasisSpec, kind: &TreatmentKind) -> Result<Basis, BasisError> {
    match kind {
        TreatmentKind::Continuous => match spec.family {
            BasisFamily::Power | BasisFamily::BSpline { .. } => Basis::univariate(spec),
            ref other => Err(BasisError::FamilyKindMismatch {
                kind: "continuous".into(),
                family: other.name().into(),
            }),
        },
        TreatmentKind::Discrete { levels } => match spec.family {
            BasisFamily::Indicator { .. } => {
                if spec.dimension < levels.len() {
                    return Err(BasisError::LevelCountMismatch {
                        dimension: spec.dimension,
                        levels: levels.len(),
                    });
                }
                Basis::univariate(spec)
            }
            ref other => Err(BasisError::FamilyKindMismatch {
                kind: "discrete".into(),
                family: other.name().into(),
            }),
        },
        TreatmentKind::Mixed { mass_point } => match spec.family {
            BasisFamily::Mixed { .. } => Basis::univariate(spec),
            BasisFamily::Power => Basis::univariate(BasisSpec::mixed(
                spec.dimension,
                *mass_point,
                spec.domain,
            )),
            ref other => Err(BasisError::FamilyKindMismatch {
                kind: "mixed".into(),
                family: other.name().into(),
            }),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops;

    fn eval(basis: &Basis, point: &[f64]) -> Vec<f64> {
        basis.evaluate(point).unwrap().0.as_slice().to_vec()
    }

    #[test]
    fn binary_indicator_one_hot() {
        let basis = make_treatment_basis(
            BasisSpec::indicator(vec![0.0, 1.0]),
            &TreatmentKind::Discrete {
                levels: vec![0.0, 1.0],
            },
        )
        .unwrap();
        assert_eq!(eval(&basis, &[1.0]), vec![0.0, 1.0]);
        assert_eq!(eval(&basis, &[0.0]), vec![1.0, 0.0]);
        // off-level points evaluate to all zeros and raise the flag
        let (v, flagged) = basis.evaluate(&[-1.0]).unwrap();
        assert_eq!(v.as_slice(), &[0.0, 0.0]);
        assert!(flagged);
    }

    #[test]
    fn power_center_is_intercept_only() {
        let basis = Basis::univariate(BasisSpec::power(3, (-2.0, 2.0))).unwrap();
        assert_eq!(eval(&basis, &[0.0]), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn power_extrapolation_flagged_not_failed() {
        let basis = Basis::univariate(BasisSpec::power(2, (-1.0, 1.0))).unwrap();
        let (v, flagged) = basis.evaluate(&[2.0]).unwrap();
        assert!(flagged);
        assert_eq!(v.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn mixed_family_mass_point_and_continuous_part() {
        let basis = Basis::univariate(BasisSpec::mixed(3, 0.0, (0.0, 1.0))).unwrap();
        assert_eq!(eval(&basis, &[0.0]), vec![1.0, 0.0, 0.0]);
        // t = 0.5 scales to s = 0; power sub-basis with intercept is (1, 0)
        assert_eq!(eval(&basis, &[0.5]), vec![0.0, 1.0, 0.0]);
        // constants are reproduced on both branches
        let c = basis.constant_coefficients();
        let at_mass = basis.evaluate(&[0.0]).unwrap().0.dot(&c);
        let off_mass = basis.evaluate(&[0.73]).unwrap().0.dot(&c);
        assert_eq!(at_mass, 1.0);
        assert_eq!(off_mass, 1.0);
    }

    #[test]
    fn tensor_dimension_is_product() {
        let a = Basis::univariate(BasisSpec::power(2, (-1.0, 1.0))).unwrap();
        let b = Basis::univariate(BasisSpec::power(3, (-1.0, 1.0))).unwrap();
        let t = Basis::tensor(vec![a, b]).unwrap();
        assert_eq!(t.dimension(), 6);
        assert_eq!(t.input_arity(), 2);
    }

    #[test]
    fn tensor_of_constants_is_constant() {
        let a = Basis::univariate(BasisSpec::power(1, (-1.0, 1.0))).unwrap();
        let b = Basis::univariate(BasisSpec::power(1, (-1.0, 1.0))).unwrap();
        let t = Basis::tensor(vec![a, b]).unwrap();
        assert_eq!(eval(&t, &[0.3, -0.7]), vec![1.0]);
    }

    #[test]
    fn tensor_kronecker_by_hand() {
        let m = Basis::univariate(BasisSpec::power(2, (-1.0, 1.0))).unwrap();
        let x = Basis::univariate(BasisSpec::power(2, (-1.0, 1.0))).unwrap();
        let t = Basis::tensor(vec![m, x]).unwrap();
        // parts evaluate to (1, 0.5) each; kron = (1, 0.5, 0.5, 0.25)
        assert_eq!(eval(&t, &[0.5, 0.5]), vec![1.0, 0.5, 0.5, 0.25]);
    }

    #[test]
    fn design_matrix_indicator() {
        let basis = Basis::univariate(BasisSpec::indicator(vec![0.0, 1.0])).unwrap();
        let data = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 1.0]);
        let (design, extrapolated) = basis.design_matrix(&data).unwrap();
        assert_eq!(extrapolated, 0);
        assert_eq!(
            design,
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0])
        );
        let gram = gram_matrix(&design);
        assert!((gram[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
        assert!((gram[(1, 1)] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(gram[(0, 1)], 0.0);
    }

    #[test]
    fn design_matrix_constant_only() {
        let basis = Basis::univariate(BasisSpec::power(1, (-1.0, 1.0))).unwrap();
        let data = DMatrix::from_column_slice(4, 1, &[0.1, -0.2, 0.9, 0.0]);
        let (design, _) = basis.design_matrix(&data).unwrap();
        assert_eq!(design, DMatrix::from_element(4, 1, 1.0));
    }

    #[test]
    fn design_matrix_power_scaled_endpoints() {
        let basis = Basis::univariate(BasisSpec::power(2, (-1.5, 1.5))).unwrap();
        let data = DMatrix::from_column_slice(3, 1, &[-1.5, 0.0, 1.5]);
        let (design, extrapolated) = basis.design_matrix(&data).unwrap();
        assert_eq!(extrapolated, 0);
        assert_eq!(
            design,
            DMatrix::from_row_slice(3, 2, &[1.0, -1.0, 1.0, 0.0, 1.0, 1.0])
        );
    }

    #[test]
    fn gram_of_orthonormal_design_is_identity() {
        let n = 3.0f64;
        let design = DMatrix::<f64>::identity(3, 3) * n.sqrt();
        let gram = gram_matrix(&design);
        assert!((gram - DMatrix::<f64>::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn bspline_degree_one_hats_by_hand() {
        // Three hat functions on [0, 1] with knots {0, 0.5, 1}; the output is
        // (1, B_2, B_3).
        let basis = Basis::univariate(BasisSpec::bspline(3, 1, (0.0, 1.0))).unwrap();
        let at = |t: f64| eval(&basis, &[t]);
        assert_eq!(at(0.0), vec![1.0, 0.0, 0.0]);
        assert_eq!(at(0.5), vec![1.0, 1.0, 0.0]);
        assert_eq!(at(1.0), vec![1.0, 0.0, 1.0]);
        let v = at(0.25);
        assert!((v[1] - 0.5).abs() < 1e-14);
        assert_eq!(v[2], 0.0);
    }

    #[test]
    fn bspline_out_of_domain_errors() {
        let basis = Basis::univariate(BasisSpec::bspline(6, 3, (0.0, 1.0))).unwrap();
        assert!(matches!(
            basis.evaluate(&[1.5]),
            Err(BasisError::OutOfDomain(..))
        ));
    }

    #[test]
    fn bspline_reproduces_cubic_polynomial() {
        let basis = Basis::univariate(BasisSpec::bspline(8, 3, (-1.0, 1.0))).unwrap();
        let ts: Vec<f64> = (0..40).map(|i| -1.0 + 2.0 * i as f64 / 39.0).collect();
        let data = DMatrix::from_column_slice(ts.len(), 1, &ts);
        let (design, _) = basis.design_matrix(&data).unwrap();
        let f = |t: f64| 0.3 - 1.2 * t + 0.7 * t * t + 0.25 * t * t * t;
        let response = DMatrix::from_iterator(ts.len(), 1, ts.iter().map(|&t| f(t)));
        let (coef, _) = linops::least_squares(&design, &response, linops::RIDGE_FLOOR).unwrap();
        let resid = (&design * &coef - &response).norm();
        assert!(resid < 1e-8, "cubic not reproduced, residual {resid}");
    }

    #[test]
    fn constant_reproduction_all_families() {
        // (basis, points in its domain); indicator bases span constants on
        // their levels.
        let cases = vec![
            (
                Basis::univariate(BasisSpec::power(4, (-2.0, 3.0))).unwrap(),
                vec![0.0, 1.0, 2.0, 2.9],
            ),
            (
                Basis::univariate(BasisSpec::bspline(6, 3, (-2.0, 3.0))).unwrap(),
                vec![0.0, 1.0, 2.0, 2.9],
            ),
            (
                Basis::univariate(BasisSpec::indicator(vec![0.0, 1.0, 2.0])).unwrap(),
                vec![0.0, 1.0, 2.0],
            ),
            (
                Basis::univariate(BasisSpec::mixed(4, 0.0, (0.0, 3.0))).unwrap(),
                vec![0.0, 1.0, 2.0, 2.9],
            ),
        ];
        for (basis, points) in &cases {
            let c = basis.constant_coefficients();
            for &p in points {
                let (v, _) = basis.evaluate(&[p]).unwrap();
                assert_eq!(v.dot(&c), 1.0, "constant not exactly reproduced at {p}");
            }
        }
    }

    #[test]
    fn treatment_basis_kind_mismatch_errors() {
        let err = make_treatment_basis(
            BasisSpec::power(3, (0.0, 1.0)),
            &TreatmentKind::Discrete {
                levels: vec![0.0, 1.0],
            },
        );
        assert!(matches!(err, Err(BasisError::FamilyKindMismatch { .. })));
    }

    #[test]
    fn scaling_invariance_of_fitted_values() {
        // Least-squares fits using the power basis must not depend on the
        // affine domain scaling.
        let ts: Vec<f64> = (0..25).map(|i| -1.2 + 2.4 * i as f64 / 24.0).collect();
        let ys: Vec<f64> = ts.iter().map(|&t| (1.7 * t).sin() + 0.3 * t * t).collect();
        let data = DMatrix::from_column_slice(ts.len(), 1, &ts);
        let response = DMatrix::from_column_slice(ys.len(), 1, &ys);

        let mut fitted = Vec::new();
        for domain in [(-1.2, 1.2), (-3.0, 5.0)] {
            let basis = Basis::univariate(BasisSpec::power(4, domain)).unwrap();
            let (design, _) = basis.design_matrix(&data).unwrap();
            let (coef, _) = linops::least_squares(&design, &response, linops::RIDGE_FLOOR).unwrap();
            fitted.push(&design * &coef);
        }
        let rel = (&fitted[0] - &fitted[1]).norm() / fitted[0].norm();
        assert!(rel < 1e-8, "fitted values moved under rescaling: {rel}");
    }
}
