use nalgebra::{DMatrix, DVector};

use subspace_iv::harness::{finite_sample_study, Estimator, Execution, FiniteSampleParams};
use subspace_iv::linalg::project_onto_row_span;
use subspace_iv::{estimate_projection, generate_scenario, run_experiment, Dataset};

fn centered(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = m.row_mean();
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] - mean[j])
}

/// Textbook two-stage least squares with intercept.
fn classical_2sls(d: &Dataset) -> DVector<f64> {
    let z = centered(&d.z);
    let x = centered(&d.x);
    let y = centered(&DMatrix::from_column_slice(d.n(), 1, d.y.as_slice()));
    let ztz = (z.transpose() * &z).try_inverse().unwrap();
    let x_hat = &z * ztz * z.transpose() * &x;
    let lhs = (x_hat.transpose() * &x_hat).try_inverse().unwrap();
    let b = lhs * x_hat.transpose() * y;
    DVector::from_column_slice(b.as_slice())
}

#[test]
fn just_identified_matches_two_stage_least_squares() {
    for seed in 0..5 {
        let s = generate_scenario(3, 3, 3, seed).unwrap();
        let d = run_experiment(&s, &[0, 1, 2], 2000, seed + 10).unwrap();
        let est = estimate_projection(&d, 1e-8).unwrap();
        let diff = (est.beta_hat - classical_2sls(&d)).amax();
        assert!(diff < 1e-8, "seed {seed}: {diff:e}");
    }
}

#[test]
fn estimates_center_on_the_projection() {
    let s = generate_scenario(8, 10, 3, 21).unwrap();
    let set = [3, 4, 5];
    let target = project_onto_row_span(&s.alpha.select_rows(&set), &s.beta);
    let runs = 200;
    let draws: Vec<DVector<f64>> = (0..runs)
        .map(|seed| {
            let d = run_experiment(&s, &set, 20_000, seed).unwrap();
            estimate_projection(&d, 1e-8).unwrap().beta_hat
        })
        .collect();
    for i in 0..s.d_x {
        let v: Vec<f64> = draws.iter().map(|b| b[i]).collect();
        let mean = v.iter().sum::<f64>() / runs as f64;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (runs - 1) as f64).sqrt();
        let z = (mean - target[i]).abs() / (sd / (runs as f64).sqrt());
        assert!(z < 4.5, "component {i}: mean {mean}, target {}, z {z}", target[i]);
    }
}

#[test]
fn spread_shrinks_with_root_n() {
    let study = |n| {
        let p = FiniteSampleParams {
            d_x: 3,
            d_z: 3,
            n,
            n_runs: 300,
            seed: 253,
            noiseless: false,
        };
        finite_sample_study(&p, Execution::Parallel { workers: 0 }).unwrap()
    };
    let (small, large) = (study(1000), study(10_000));
    for est in Estimator::ALL {
        for c in 1..=3 {
            let ratio = large.stat(est, c).unwrap().sd / small.stat(est, c).unwrap().sd;
            let expected = 10f64.sqrt().recip();
            assert!(
                (ratio / expected - 1.0).abs() < 0.2,
                "{est} component {c}: ratio {ratio:.3}"
            );
        }
    }
}

#[test]
fn covariance_matches_empirical_spread_when_just_identified() {
    let p = FiniteSampleParams {
        d_x: 3,
        d_z: 3,
        n: 1000,
        n_runs: 400,
        seed: 7,
        noiseless: false,
    };
    let r = finite_sample_study(&p, Execution::Parallel { workers: 0 }).unwrap();
    for c in 1..=3 {
        let s = r.stat(Estimator::IdealEx, c).unwrap();
        let ratio = s.median_se / s.sd;
        assert!((0.75..1.33).contains(&ratio), "component {c}: se/sd {ratio:.3}");
    }
}
