//! Single-experiment projection estimator.
//!
//! With fewer instruments than treatments, `X' P_Z X` is singular and the
//! classical 2SLS estimate is undefined. The pseudoinverse version
//! `(X' P_Z X)^+ X' P_Z y` still converges to the orthogonal projection of
//! `beta` onto the instrumented subspace `im(alpha)`, and that is what
//! [`estimate_projection`] computes.
//!
//! Both stages fit an intercept, which is the same as centering `Z`, `X` and
//! `y` first. With `Zc = U_k S W'` and `U_k' Xc = A D V'`, the first-stage
//! predictions factor as `Xhat = (U_k A) D V'`, so the estimator is
//! `V_r D_r^{-1} A_r' U_k' yc` without ever forming an `n x n` projector or
//! squaring the condition number through `Xhat' Xhat`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, serde_matrix, thin_svd};
use crate::simulator::Dataset;

/// Default relative tolerance for the first-stage numerical rank.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

const Z_RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedEstimate {
    /// Estimate of `P_alpha beta`.
    #[serde(with = "serde_matrix::vector")]
    pub beta_hat: DVector<f64>,
    /// Orthonormal basis of the estimated instrumented subspace, `d_x x r`.
    #[serde(with = "serde_matrix::col_major")]
    pub basis: DMatrix<f64>,
    #[serde(with = "serde_matrix::vector")]
    pub singular_values: DVector<f64>,
    /// Estimated asymptotic covariance of `beta_hat`.
    #[serde(with = "serde_matrix::row_major")]
    pub cov: DMatrix<f64>,
    pub instrument_set: Vec<usize>,
    pub n: usize,
    /// Second-stage intercept.
    #[serde(default)]
    pub offset: f64,
    /// Estimated `Var[eps_Y]`, dof-corrected by `d_z + 1`.
    #[serde(default)]
    pub residual_variance: f64,
}

impl ProjectedEstimate {
    pub fn d_x(&self) -> usize {
        self.beta_hat.len()
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// `basis * basis'`.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }

    /// Approximate variance of the intercept.
    pub fn offset_variance(&self) -> f64 {
        self.residual_variance / self.n as f64
    }

    /// `[offset, beta_hat...]`, matching reports where component 0 is the offset.
    pub fn with_offset(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.d_x() + 1,
            std::iter::once(self.offset).chain(self.beta_hat.iter().copied()),
        )
    }
}

struct Centered {
    z: DMatrix<f64>,
    x: DMatrix<f64>,
    y: DVector<f64>,
    x_mean: DVector<f64>,
    y_mean: f64,
}

fn center_columns(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let mean = m.row_mean().transpose();
    let mut out = m.clone();
    for (mut col, mu) in out.column_iter_mut().zip(mean.iter()) {
        col.add_scalar_mut(-mu);
    }
    (out, mean)
}

fn center(dataset: &Dataset) -> Centered {
    let (z, _) = center_columns(&dataset.z);
    let (x, x_mean) = center_columns(&dataset.x);
    let y_mean = dataset.y.mean();
    let y = dataset.y.add_scalar(-y_mean);
    Centered {
        z,
        x,
        y,
        x_mean,
        y_mean,
    }
}

/// Projection estimate of `beta` from one randomized experiment.
pub fn estimate_projection(dataset: &Dataset, rank_tol: f64) -> Result<ProjectedEstimate> {
    let (n, d_z) = (dataset.n(), dataset.d_z());
    if d_z == 0 {
        return Err(Error::InvalidInstrumentSet(
            "observational dataset has no instruments".into(),
        ));
    }
    if n < d_z + 2 {
        return Err(Error::InsufficientSamples {
            required: d_z + 2,
            got: n,
        });
    }
    if !(rank_tol > 0.0) {
        return Err(Error::InvalidParameter(format!("rank_tol = {rank_tol}")));
    }
    let c = center(dataset);

    // First stage: orthonormal basis of the centered instrument columns.
    let zsvd = thin_svd(&c.z);
    let k = linalg::numerical_rank(&zsvd.singular_values, Z_RANK_TOL);
    if k == 0 {
        return Err(Error::RankZero);
    }
    let u_k = zsvd.u.columns(0, k);
    let reduced = u_k.transpose() * &c.x;
    let uy = u_k.transpose() * &c.y;

    // Second stage on the reduced first-stage predictions.
    let xsvd = thin_svd(&reduced);
    let r = linalg::numerical_rank(&xsvd.singular_values, rank_tol);
    if r == 0 {
        return Err(Error::RankZero);
    }
    let basis = xsvd.v_t.rows(0, r).transpose();
    let singular_values = xsvd.singular_values.rows(0, r).into_owned();
    let mut coeffs = xsvd.u.columns(0, r).transpose() * uy;
    for (c, s) in coeffs.iter_mut().zip(singular_values.iter()) {
        *c /= s;
    }
    let beta_hat = &basis * coeffs;
    let offset = c.y_mean - c.x_mean.dot(&beta_hat);

    // Structural residuals, not y - Xhat beta_hat: the latter also carries
    // (X - Xhat) beta and overstates Var[eps_Y] even when beta is identified.
    let residual = &c.y - &c.x * &beta_hat;
    let residual_variance = residual.norm_squared() / (n - d_z - 1) as f64;

    // alpha_hat = Zc^+ Xc = W_k S_k^{-1} U_k' Xc
    let mut scaled = reduced;
    for (mut row, s) in scaled.row_iter_mut().zip(zsvd.singular_values.iter()) {
        row /= *s;
    }
    let alpha_hat = zsvd.v_t.rows(0, k).transpose() * scaled;

    let cov = if k == d_z && linalg::rank(&alpha_hat, 1e-10) == d_z {
        let z_cov = c.z.transpose() * &c.z / n as f64;
        estimate_covariance(&alpha_hat, n, residual_variance, &z_cov)?
    } else {
        projected_covariance(&basis, &singular_values, residual_variance)
    };

    Ok(ProjectedEstimate {
        beta_hat,
        basis,
        singular_values,
        cov,
        instrument_set: dataset.instrument_set.clone(),
        n,
        offset,
        residual_variance,
    })
}

/// `V_r D_r^{-2} V_r' * var`, i.e. `(Xhat' Xhat)^+ Var[eps_Y]`.
pub(crate) fn projected_covariance(
    basis: &DMatrix<f64>,
    singular_values: &DVector<f64>,
    var_eps_y: f64,
) -> DMatrix<f64> {
    let mut scaled = basis.clone();
    for (mut col, s) in scaled.column_iter_mut().zip(singular_values.iter()) {
        col /= *s;
    }
    &scaled * scaled.transpose() * var_eps_y
}

/// `(1/n) alpha^+ z_cov^{-1} (alpha')^+ var_eps_y`.
///
/// With `z_cov = I` this is `(1/n) (alpha' alpha)^+ var_eps_y`.
pub fn estimate_covariance(
    alpha_hat: &DMatrix<f64>,
    n: usize,
    var_eps_y: f64,
    z_cov: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let d_z = alpha_hat.nrows();
    if z_cov.shape() != (d_z, d_z) {
        return Err(Error::DimensionMismatch {
            expected: d_z,
            got: z_cov.nrows(),
        });
    }
    if n == 0 {
        return Err(Error::InsufficientSamples { required: 1, got: 0 });
    }
    if !(var_eps_y >= 0.0) {
        return Err(Error::InvalidParameter(format!("var_eps_y = {var_eps_y}")));
    }
    if linalg::rank(alpha_hat, 1e-10) != d_z {
        return Err(Error::InvalidParameter(
            "alpha_hat must have full row rank".into(),
        ));
    }
    let z_inv = z_cov
        .clone()
        .cholesky()
        .ok_or(Error::SingularMatrix("z_cov"))?
        .inverse();
    let a_pinv = linalg::pinv(alpha_hat, 1e-10);
    let core = &a_pinv * z_inv * a_pinv.transpose();
    let sym = (&core + core.transpose()) * 0.5;
    Ok(sym * var_eps_y / n as f64)
}

/// Ordinary least squares of `y` on `x` with intercept; returns the slopes.
pub fn estimate_ols(dataset: &Dataset) -> Result<DVector<f64>> {
    let (n, d_x) = (dataset.n(), dataset.d_x());
    if n <= d_x {
        return Err(Error::InsufficientSamples {
            required: d_x + 1,
            got: n,
        });
    }
    let (x, _) = center_columns(&dataset.x);
    if linalg::rank(&x, 1e-12) < d_x {
        return Err(Error::SingularMatrix("Gram matrix"));
    }
    let y = dataset.y.add_scalar(-dataset.y.mean());
    let gram = x.transpose() * &x;
    let rhs = x.transpose() * &y;
    let chol = gram.cholesky().ok_or(Error::SingularMatrix("Gram matrix"))?;
    Ok(chol.solve(&rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, Scenario};
    use crate::simulator::run_experiment;
    use approx::assert_relative_eq;

    fn toy_scenario(alpha: &[f64], n_iv: usize, beta: &[f64]) -> Scenario {
        let d_x = beta.len();
        Scenario {
            n_iv,
            d_x,
            d_id: 2,
            seed: 0,
            alpha: DMatrix::from_row_slice(n_iv, d_x, alpha),
            beta: DVector::from_row_slice(beta),
            mixing: DMatrix::zeros(d_x, d_x),
            conf_dir: DVector::zeros(d_x),
            cluster_center: vec![],
        }
    }

    #[test]
    fn noiseless_just_identified_recovers_beta() {
        let s = generate_scenario(3, 3, 3, 17).unwrap().without_confounding();
        let d = run_experiment(&s, &[0, 1, 2], 200, 1).unwrap();
        let est = estimate_projection(&d, DEFAULT_RANK_TOL).unwrap();
        assert_relative_eq!(est.beta_hat, s.beta, epsilon = 1e-10);
        assert_eq!(est.rank(), 3);
        assert!(est.offset.abs() < 1e-10);
    }

    #[test]
    fn single_axis_instruments_project_beta() {
        let s = toy_scenario(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0], 2, &[2.0, 2.0, 4.0]);
        let e1 = estimate_projection(&run_experiment(&s, &[0], 100, 3).unwrap(), 1e-8).unwrap();
        assert_relative_eq!(e1.beta_hat, DVector::from_row_slice(&[2.0, 0.0, 0.0]), epsilon = 1e-10);
        let e2 = estimate_projection(&run_experiment(&s, &[1], 100, 4).unwrap(), 1e-8).unwrap();
        assert_relative_eq!(e2.beta_hat, DVector::from_row_slice(&[0.0, 2.0, 0.0]), epsilon = 1e-10);
    }

    #[test]
    fn outputs_satisfy_basis_and_covariance_invariants() {
        let s = generate_scenario(8, 10, 4, 2).unwrap();
        let d = run_experiment(&s, &[1, 5, 6], 500, 5).unwrap();
        let est = estimate_projection(&d, DEFAULT_RANK_TOL).unwrap();
        let r = est.rank();
        assert_eq!(r, 3);
        assert_relative_eq!(est.basis.transpose() * &est.basis, DMatrix::identity(r, r), epsilon = 1e-10);
        assert!((&est.beta_hat - est.projector() * &est.beta_hat).norm() < 1e-10);
        assert_eq!(est.cov, est.cov.transpose());
        let eig = est.cov.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|l| *l > -1e-10));
        assert!(est.singular_values.iter().all(|s| *s > 0.0));
        assert!(est.singular_values.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn covariance_routes_agree() {
        let s = generate_scenario(6, 7, 3, 8).unwrap();
        let d = run_experiment(&s, &[0, 3, 4], 800, 2).unwrap();
        let est = estimate_projection(&d, DEFAULT_RANK_TOL).unwrap();
        let svd_route = projected_covariance(&est.basis, &est.singular_values, est.residual_variance);
        assert_relative_eq!(est.cov, svd_route, epsilon = 1e-12, max_relative = 1e-8);
    }

    #[test]
    fn covariance_hand_values() {
        let id = DMatrix::<f64>::identity(3, 3);
        let c = estimate_covariance(&id, 100, 1.0, &id).unwrap();
        assert_relative_eq!(c, id.clone() / 100.0, epsilon = 1e-15);

        let row = DMatrix::from_row_slice(1, 3, &[2.0, 0.0, 0.0]);
        let c = estimate_covariance(&row, 1, 1.0, &DMatrix::identity(1, 1)).unwrap();
        let mut expected = DMatrix::zeros(3, 3);
        expected[(0, 0)] = 0.25;
        assert_relative_eq!(c, expected, epsilon = 1e-15);
    }

    #[test]
    fn covariance_scales_inversely_with_n() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.5, -1.0, 0.3, 2.0]);
        let zc = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 1.0]);
        let base = estimate_covariance(&a, 10, 2.0, &zc).unwrap();
        let quad = estimate_covariance(&a, 40, 2.0, &zc).unwrap();
        assert_eq!(quad, base.clone() / 4.0);
        let triple = estimate_covariance(&a, 30, 2.0, &zc).unwrap();
        assert_relative_eq!(triple, base / 3.0, max_relative = 1e-14);
    }

    #[test]
    fn covariance_errors() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]);
        assert!(estimate_covariance(&a, 1, 1.0, &DMatrix::identity(2, 2)).is_err());
        let b = DMatrix::<f64>::identity(2, 2);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            estimate_covariance(&b, 1, 1.0, &singular),
            Err(Error::SingularMatrix(_))
        ));
    }

    #[test]
    fn zero_effect_instrument_is_rank_zero() {
        let s = toy_scenario(&[0.0, 0.0, 0.0, 1.0], 2, &[1.0, 1.0]);
        let d = run_experiment(&s, &[0], 50, 1).unwrap();
        assert!(matches!(estimate_projection(&d, 1e-8), Err(Error::RankZero)));
    }

    #[test]
    fn observational_data_is_rejected() {
        let s = generate_scenario(3, 3, 3, 0).unwrap();
        let d = crate::simulator::observational_data(&s, 10, 0).unwrap();
        assert!(estimate_projection(&d, 1e-8).is_err());
    }

    #[test]
    fn ols_exact_without_confounding() {
        let mut s = generate_scenario(4, 3, 3, 3).unwrap();
        s.conf_dir = DVector::zeros(3);
        let d = run_experiment(&s, &[0, 1, 2, 3], 300, 1).unwrap();
        assert_relative_eq!(estimate_ols(&d).unwrap(), s.beta, epsilon = 1e-8);
    }

    #[test]
    fn ols_invariant_to_row_duplication() {
        let s = generate_scenario(4, 3, 3, 3).unwrap();
        let d = run_experiment(&s, &[0, 2], 100, 1).unwrap();
        let twice = Dataset {
            z: DMatrix::from_fn(200, 2, |i, j| d.z[(i % 100, j)]),
            x: DMatrix::from_fn(200, 3, |i, j| d.x[(i % 100, j)]),
            y: DVector::from_fn(200, |i, _| d.y[i % 100]),
            instrument_set: d.instrument_set.clone(),
        };
        assert_relative_eq!(estimate_ols(&d).unwrap(), estimate_ols(&twice).unwrap(), epsilon = 1e-10);
    }

    #[test]
    fn ols_singular_gram_errors() {
        let d = Dataset {
            z: DMatrix::zeros(5, 0),
            x: DMatrix::from_fn(5, 2, |i, _| i as f64),
            y: DVector::from_fn(5, |i, _| i as f64),
            instrument_set: vec![],
        };
        assert!(matches!(estimate_ols(&d), Err(Error::SingularMatrix(_))));
    }
}
