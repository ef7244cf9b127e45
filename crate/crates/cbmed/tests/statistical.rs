//! Moderate-scale statistical checks: estimator consistency on the
//! simulation designs, the mean-zero influence property, and the analytic
//! oracle cross-checks. The full-scale table reproductions live in the
//! acceptance suite.

use cbmed::calibration::SolverOptions;
use cbmed::data::Dataset;
use cbmed::estimators::Panel;
use cbmed::inference::{
    assemble_d, EstimatedNuisances, PluginSettings, RegressionDesigns,
};
use cbmed::kernels::KernelSpec;
use cbmed::simlab::{generate, BinaryTruth, DgpSpec, OracleSeries, Scenario};
use cbmed::tuning::{fit_with_tuning, FitOverrides, TuningGrid};

fn fit_default(
    data: &Dataset,
    overrides: FitOverrides,
) -> (cbmed::MediationFit, cbmed::TuningResult) {
    fit_with_tuning(data, &TuningGrid::default(), &overrides, &SolverOptions::default()).unwrap()
}

#[test]
fn cbs_is_consistent_on_the_cubic_design() {
    // average the point estimate over a few large trials
    let mut acc = 0.0;
    let trials = 8;
    for seed in 0..trials {
        let data = generate(&DgpSpec {
            scenario: Scenario::II,
            n: 4000,
            seed: 900 + seed,
        });
        let (fit, _) = fit_default(&data, FitOverrides::default());
        acc += fit.cbs_mu(1.0, 0.0).unwrap();
    }
    let mean = acc / trials as f64;
    assert!(
        (mean - 0.55).abs() < 0.05,
        "CBS mu(1,0) averaged {mean}, truth 0.55"
    );
}

#[test]
fn cbk_is_consistent_on_the_interaction_design() {
    let mut acc = 0.0;
    let trials = 8;
    for seed in 0..trials {
        let data = generate(&DgpSpec {
            scenario: Scenario::I,
            n: 4000,
            seed: 1300 + seed,
        });
        let (fit, tune) = fit_default(&data, FitOverrides::default());
        let kernel = KernelSpec::new(cbmed::KernelFamily::Epanechnikov2, tune.bandwidth).unwrap();
        acc += fit.cbk_mu(1.0, 0.0, &kernel).unwrap();
    }
    let mean = acc / trials as f64;
    // truth mu(1,0) = 0.3 under Scenario I
    assert!(
        (mean - 0.3).abs() < 0.05,
        "CBK mu(1,0) averaged {mean}, truth 0.3"
    );
}

#[test]
fn oracle_estimator_is_consistent_with_growing_dimension() {
    let mut acc = 0.0;
    let trials = 6;
    for seed in 0..trials {
        let data = generate(&DgpSpec {
            scenario: Scenario::II,
            n: 20_000,
            seed: 40 + seed,
        });
        let oracle = OracleSeries::new(&data, 6).unwrap();
        acc += oracle.mu(1.0, 0.0).unwrap();
    }
    let mean = acc / trials as f64;
    assert!(
        (mean - 0.55).abs() < 0.06,
        "oracle mu(1,0) averaged {mean}, truth 0.55"
    );
}

#[test]
fn ipw_baseline_is_consistent_on_the_binary_design() {
    use cbmed::estimators::IpwBinary;
    let mut acc = 0.0;
    let trials = 10;
    for seed in 0..trials {
        let data = generate(&DgpSpec {
            scenario: Scenario::Binary,
            n: 4000,
            seed: 2700 + seed,
        });
        let ipw = IpwBinary::fit(&data, true).unwrap();
        acc += ipw.mu(1.0, 0.0).unwrap();
    }
    let mean = acc / trials as f64;
    assert!(
        (mean - 0.55).abs() < 0.03,
        "IPW mu(1,0) averaged {mean}, truth 0.55"
    );
}

#[test]
fn bootstrap_ci_width_shrinks_with_sample_size() {
    use cbmed::estimators::{EstimatorError, Panel};
    use cbmed::inference::bootstrap_ci;
    use cbmed::Method;
    // doubling N should shrink percentile CI widths roughly by sqrt(1/2)
    let estimator = |d: &Dataset| -> Result<Vec<f64>, EstimatorError> {
        let overrides = FitOverrides {
            k1: Some(2),
            kx: Some(2),
            kmx: Some(2),
            k0: Some(3),
        };
        let (fit, _) = fit_with_tuning(
            d,
            &TuningGrid::default(),
            &overrides,
            &SolverOptions::default(),
        )
        .map_err(|e| EstimatorError::RankDeficient(e.to_string()))?;
        Ok(vec![fit.cbs_mu(0.8, 0.0)?])
    };
    let mut ratios = Vec::new();
    for seed in 0..4u64 {
        let mut widths = Vec::new();
        for &n in &[300usize, 600] {
            let data = generate(&DgpSpec {
                scenario: Scenario::I,
                n,
                seed: 3100 + seed,
            });
            let (curve, _) = bootstrap_ci(
                estimator,
                &data,
                Method::Cbs,
                Panel::Mu,
                &[0.8],
                0.0,
                120,
                9000 + seed,
            )
            .unwrap();
            widths.push(curve.ci_high.unwrap()[0] - curve.ci_low.unwrap()[0]);
        }
        ratios.push(widths[1] / widths[0]);
    }
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!(
        (0.55..=0.9).contains(&mean_ratio),
        "CI width ratio {mean_ratio:.3} (per-seed {ratios:?})"
    );
}

#[test]
fn assembled_influence_vectors_are_near_mean_zero() {
    // column means of d should vanish at the sampling rate; test at three
    // sample sizes with the 5 / sqrt(N) yardstick on the standardized mean
    for &(n, seed) in &[(250usize, 21u64), (1000, 22), (4000, 23)] {
        let data = generate(&DgpSpec {
            scenario: Scenario::I,
            n,
            seed,
        });
        let overrides = FitOverrides {
            k1: Some(3),
            kx: Some(3),
            kmx: Some(3),
            k0: Some(3),
        };
        let (fit, _) = fit_default(&data, overrides);
        let nuis = EstimatedNuisances::new(&fit, PluginSettings::default()).unwrap();
        let designs = RegressionDesigns::from_fit(&fit).unwrap();
        let parts = assemble_d(&fit.dataset, &nuis, &designs, &fit.outcome_basis, -0.5).unwrap();
        let d = &parts.d;
        let nf = n as f64;
        for c in 0..d.ncols() {
            let mean = d.column(c).sum() / nf;
            let sd = {
                let mu = mean;
                (d.column(c).iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (nf - 1.0))
                    .sqrt()
            };
            assert!(
                mean.abs() <= 5.0 * sd / nf.sqrt(),
                "n = {n}, column {c}: mean {mean}, sd {sd}"
            );
        }
    }
}

#[test]
fn true_nuisance_variance_matches_eif_oracle() {
    // d assembled with analytic nuisances (regressions on the CV-selected
    // designs), contracted at t = 1: the variance should approximate E[S^2]
    // for mu(1,0) from the EIF Monte Carlo oracle.
    let data = generate(&DgpSpec {
        scenario: Scenario::Binary,
        n: 4000,
        seed: 77,
    });
    let truth = BinaryTruth::new(&data);
    let (fit, _) = fit_default(&data, FitOverrides::default());
    let designs = RegressionDesigns::from_fit(&fit).unwrap();
    let parts = assemble_d(&data, &truth, &designs, &fit.outcome_basis, -1.0).unwrap();
    let (v_hat, _) =
        cbmed::inference::variance_from_d(&parts.d, &fit.outcome_basis, fit.outcome_design(), 1.0)
            .unwrap();

    let eif_second = BinaryTruth::eif_second_moment(1.0, 0.0, 200_000, 909);
    let rel = (v_hat - eif_second).abs() / eif_second;
    assert!(
        rel < 0.25,
        "plug-in {v_hat} vs EIF oracle {eif_second} (rel {rel:.3})"
    );
}

#[test]
fn small_scale_table_probe() {
    // tiny Monte Carlo probe of the harness (full scale is in the
    // acceptance suite): CBS direct-effect ARMSE should land well inside
    // [30, 200] x 10^-3 for Scenario I at N = 500.
    use cbmed::simlab::{run_mc, EstimatorKind, McConfig};
    let start = std::time::Instant::now();
    let mut config = McConfig::new(Scenario::I, 500, 20, 2024);
    config.estimators = vec![EstimatorKind::Cbs, EstimatorKind::Cbk, EstimatorKind::Ols];
    let report = run_mc(&config).unwrap();
    let cbs_direct = report
        .armse(EstimatorKind::Cbs, Panel::DirectAtTreated)
        .unwrap();
    eprintln!(
        "probe: 20 trials in {:.1?}; CBS direct {cbs_direct:.1}",
        start.elapsed()
    );
    for entry in &report.entries {
        eprintln!(
            "  {:?} {:?}: {:.2}",
            entry.estimator,
            entry.panel,
            entry.armse_x1000
        );
    }
    assert!(
        (30.0..200.0).contains(&cbs_direct),
        "CBS direct ARMSE {cbs_direct}"
    );
}
