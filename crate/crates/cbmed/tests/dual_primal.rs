//! The dual solution must coincide with a brute-force primal solve of the
//! entropy-balancing problem.

mod support;

use cbmed::basis::{Basis, BasisSpec};
use cbmed::calibration::{CalibrationProblem, FittedWeights, SolverOptions};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn dual_weights_match_brute_force_primal() {
    let mut worst: f64 = 0.0;
    for instance in 0..25u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + instance);
        let n = rng.gen_range(12..=30);
        let t = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let z = DMatrix::from_fn(n, 1, |i, _| 0.4 * t[i] + rng.gen_range(-1.0..1.0));
        let u = Basis::univariate(BasisSpec::power(2, (-1.0, 1.0))).unwrap();
        let v = Basis::univariate(BasisSpec::power(2, (-1.4, 1.4))).unwrap();
        let fitted = FittedWeights::solve(u, &t, v, &z, &SolverOptions::default()).unwrap();
        assert!(fitted.fit.converged, "instance {instance} did not converge");

        let problem = &fitted.problem;
        let primal =
            support::primal_entropy_weights(&problem.design_u, &problem.design_v, 1e-11);
        for i in 0..n {
            let diff = (fitted.fit.in_sample_weights[i] - primal[i]).abs();
            worst = worst.max(diff);
            assert!(
                diff < 1e-4,
                "instance {instance}, obs {i}: dual {} vs primal {}",
                fitted.fit.in_sample_weights[i],
                primal[i]
            );
        }
    }
    eprintln!("worst dual-primal weight gap: {worst:.2e}");
}

#[test]
fn primal_oracle_reproduces_saturated_counting_solution() {
    // binary T and Z: the balancing equations are exactly identified and the
    // counting formula is the unique solution, so the primal solver must
    // find it too (independent sanity check of the oracle itself).
    let t = DVector::from_column_slice(&[0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0]);
    let z = DMatrix::from_column_slice(10, 1, &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0]);
    let u = Basis::univariate(BasisSpec::indicator(vec![0.0, 1.0])).unwrap();
    let v = Basis::univariate(BasisSpec::indicator(vec![0.0, 1.0])).unwrap();
    let problem = CalibrationProblem::from_data(u, &t, v, &z).unwrap();
    let primal = support::primal_entropy_weights(&problem.design_u, &problem.design_v, 1e-11);
    let n = 10.0;
    for i in 0..10 {
        let nt = (0..10).filter(|&j| t[j] == t[i]).count() as f64;
        let nz = (0..10).filter(|&j| z[(j, 0)] == z[(i, 0)]).count() as f64;
        let ntz = (0..10)
            .filter(|&j| t[j] == t[i] && z[(j, 0)] == z[(i, 0)])
            .count() as f64;
        let expected = nt * nz / (n * ntz);
        assert!(
            (primal[i] - expected).abs() < 1e-6,
            "obs {i}: primal {} vs counting {expected}",
            primal[i]
        );
    }
}
