//! Test-only oracles, independent of the library's solution paths.

use nalgebra::{DMatrix, DVector};

/// Brute-force primal solve of the entropy-balancing problem:
/// maximize `-N^{-1} sum pi_i log pi_i` subject to
/// `N^{-1} sum pi_i u_i v_i' = mean_u mean_v'` and `pi > 0`,
/// by an augmented-Lagrangian method with damped Newton inner steps.
/// Returns the per-observation weights.
///
/// This never touches the dual parameterization the library solves, so it is
/// a genuinely independent check of the calibrated weights.
pub fn primal_entropy_weights(
    design_u: &DMatrix<f64>,
    design_v: &DMatrix<f64>,
    tol: f64,
) -> Vec<f64> {
    let n = design_u.nrows();
    let k1 = design_u.ncols();
    let kz = design_v.ncols();
    let m = k1 * kz;
    let nf = n as f64;

    // constraint matrix A (m x n): A[(j,c), i] = u_ij v_ic / N, rhs b
    let mut a = DMatrix::zeros(m, n);
    for i in 0..n {
        for c in 0..kz {
            for j in 0..k1 {
                a[(c * k1 + j, i)] = design_u[(i, j)] * design_v[(i, c)] / nf;
            }
        }
    }
    let mean_u = design_u.row_mean().transpose();
    let mean_v = design_v.row_mean().transpose();
    let mut b = DVector::zeros(m);
    for c in 0..kz {
        for j in 0..k1 {
            b[c * k1 + j] = mean_u[j] * mean_v[c];
        }
    }

    let mut pi = DVector::from_element(n, 1.0);
    let mut y = DVector::zeros(m);
    let mut mu = 10.0f64;

    let objective = |pi: &DVector<f64>| -> f64 {
        pi.iter().map(|&p| p * p.ln()).sum::<f64>() / nf
    };

    for _outer in 0..60 {
        // inner damped Newton on the augmented Lagrangian
        for _inner in 0..80 {
            let resid = &a * &pi - &b;
            let grad_vec = DVector::from_fn(n, |i, _| (pi[i].ln() + 1.0) / nf)
                + a.transpose() * (&y + mu * &resid);
            // Hessian: diag(1/(N pi)) + mu A'A
            let mut hess = a.transpose() * &a * mu;
            for i in 0..n {
                hess[(i, i)] += 1.0 / (nf * pi[i]);
            }
            let step = match hess.clone().cholesky() {
                Some(ch) => -ch.solve(&grad_vec),
                None => break,
            };
            if grad_vec.amax() < 1e-12 {
                break;
            }
            // fraction-to-boundary then Armijo on the merit
            let mut alpha: f64 = 1.0;
            for i in 0..n {
                if step[i] < 0.0 {
                    alpha = alpha.min(-0.95 * pi[i] / step[i]);
                }
            }
            let merit = |p: &DVector<f64>| -> f64 {
                let r = &a * p - &b;
                objective(p) + y.dot(&r) + 0.5 * mu * r.norm_squared()
            };
            let base = merit(&pi);
            let slope = grad_vec.dot(&step);
            let mut accepted = false;
            for _ in 0..40 {
                let trial = &pi + alpha * &step;
                if trial.iter().all(|&p| p > 0.0) && merit(&trial) <= base + 1e-4 * alpha * slope
                {
                    pi = trial;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        let resid = &a * &pi - &b;
        if resid.amax() < tol {
            break;
        }
        y += mu * &resid;
        mu = (mu * 5.0).min(1e9);
    }
    pi.iter().copied().collect()
}
