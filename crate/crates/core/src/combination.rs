//! Combining projected estimates across experiments.
//!
//! Each experiment `i` pins down `V_i V_i' gamma = beta_hat_i`. The combined
//! estimate is the minimum-norm `gamma` satisfying all of them, computed as
//! the least-squares solution `A^+ b` of the stacked system
//! `A = [V_1 V_1'; ...; V_T V_T']`, `b = [beta_hat_1; ...; beta_hat_T]`.
//! It lies in the union subspace `im([V_1 | ... | V_T])`, and a coordinate
//! axis `e_i` inside that subspace means `beta_i` itself is identified.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::ProjectedEstimate;
use crate::linalg::{self, serde_matrix, thin_svd};

/// Relative tolerance for the stacked solve and the union basis.
pub const COMBINE_TOL: f64 = 1e-10;

/// Default identification threshold on the per-coordinate distance.
pub const DEFAULT_DELTA: f64 = 0.3;

fn check_dims(estimates: &[ProjectedEstimate]) -> Result<usize> {
    let first = estimates
        .first()
        .ok_or_else(|| Error::InvalidParameter("no estimates to combine".into()))?;
    let d_x = first.d_x();
    for e in estimates {
        if e.d_x() != d_x {
            return Err(Error::DimensionMismatch {
                expected: d_x,
                got: e.d_x(),
            });
        }
        if e.basis.nrows() != d_x {
            return Err(Error::DimensionMismatch {
                expected: d_x,
                got: e.basis.nrows(),
            });
        }
    }
    Ok(d_x)
}

fn stacked_system(estimates: &[ProjectedEstimate], d_x: usize) -> (DMatrix<f64>, DVector<f64>) {
    let t = estimates.len();
    let mut a = DMatrix::zeros(t * d_x, d_x);
    let mut b = DVector::zeros(t * d_x);
    for (i, e) in estimates.iter().enumerate() {
        a.view_mut((i * d_x, 0), (d_x, d_x)).copy_from(&e.projector());
        b.rows_mut(i * d_x, d_x).copy_from(&e.beta_hat);
    }
    (a, b)
}

/// Minimum-norm vector compatible with every projection, and an orthonormal
/// basis of the union of the estimated instrumented subspaces.
pub fn combine(estimates: &[ProjectedEstimate]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d_x = check_dims(estimates)?;
    if let [only] = estimates {
        return Ok((only.beta_hat.clone(), only.basis.clone()));
    }
    let (a, b) = stacked_system(estimates, d_x);
    let svd = thin_svd(&a);
    let r = linalg::numerical_rank(&svd.singular_values, COMBINE_TOL);
    let mut coeffs = svd.u.columns(0, r).transpose() * b;
    for k in 0..r {
        coeffs[k] /= svd.singular_values[k];
    }
    let combined = svd.v_t.rows(0, r).transpose() * coeffs;

    let cols: usize = estimates.iter().map(ProjectedEstimate::rank).sum();
    let mut all = DMatrix::zeros(d_x, cols);
    let mut at = 0;
    for e in estimates {
        all.columns_mut(at, e.rank()).copy_from(&e.basis);
        at += e.rank();
    }
    let basis = linalg::column_span_basis(&all, COMBINE_TOL);
    Ok((combined, basis))
}

/// Covariance of the combined estimate, propagating each round's covariance
/// through the linear map `b -> A^+ b` (rounds are independent experiments).
pub fn combined_covariance(estimates: &[ProjectedEstimate]) -> Result<DMatrix<f64>> {
    let d_x = check_dims(estimates)?;
    if let [only] = estimates {
        return Ok(only.cov.clone());
    }
    let (a, _) = stacked_system(estimates, d_x);
    let a_pinv = linalg::pinv(&a, COMBINE_TOL);
    let mut cov = DMatrix::zeros(d_x, d_x);
    for (i, e) in estimates.iter().enumerate() {
        let g = a_pinv.columns(i * d_x, d_x);
        let gt = g.transpose();
        cov += g * &e.cov * gt;
    }
    Ok(cov)
}

/// Sample-size weighted mean of the per-round intercepts, with its variance.
pub fn combine_offsets(estimates: &[ProjectedEstimate]) -> (f64, f64) {
    let total: usize = estimates.iter().map(|e| e.n).sum();
    if total == 0 {
        return (0.0, 0.0);
    }
    let total = total as f64;
    estimates.iter().fold((0.0, 0.0), |(m, v), e| {
        let w = e.n as f64 / total;
        (m + w * e.offset, v + w * w * e.offset_variance())
    })
}

/// `1 - |cos(P e_i, e_i)|`, where `P` projects onto the span of `basis`.
///
/// Zero when `e_i` lies in the subspace; one when its projection vanishes.
pub fn identification_distance(basis: &DMatrix<f64>, coordinate: usize) -> Result<f64> {
    let d_x = basis.nrows();
    if coordinate >= d_x {
        return Err(Error::CoordinateOutOfRange {
            coordinate,
            dim: d_x,
        });
    }
    let w = basis * basis.row(coordinate).transpose();
    let norm = w.norm();
    if norm < 1e-12 {
        return Ok(1.0);
    }
    let cos = (w[coordinate] / norm).abs();
    Ok((1.0 - cos).clamp(0.0, 1.0))
}

fn all_distances(basis: &DMatrix<f64>) -> Vec<f64> {
    (0..basis.nrows())
        .map(|i| identification_distance(basis, i).expect("coordinate in range"))
        .collect()
}

/// Fraction of coordinates whose identification distance is below `delta`.
pub fn identified_fraction(basis: &DMatrix<f64>, delta: f64) -> f64 {
    let d_x = basis.nrows();
    if d_x == 0 {
        return 0.0;
    }
    let hits = all_distances(basis).into_iter().filter(|d| *d < delta).count();
    hits as f64 / d_x as f64
}

/// Uniform bound on every unidentified component's error:
/// `sqrt(max(0, norm^2 - |combined|^2))`.
pub fn error_bound(beta_norm_estimate: f64, combined: &DVector<f64>) -> f64 {
    (beta_norm_estimate * beta_norm_estimate - combined.norm_squared())
        .max(0.0)
        .sqrt()
}

/// Combined state after some number of rounds. Updated by replacement.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningEstimate {
    pub rounds: Vec<ProjectedEstimate>,
    #[serde(with = "serde_matrix::vector")]
    pub combined: DVector<f64>,
    #[serde(with = "serde_matrix::col_major")]
    pub combined_basis: DMatrix<f64>,
    pub identified: BTreeSet<usize>,
    pub per_coordinate_cdist: Vec<f64>,
    pub offset: f64,
    pub delta: f64,
}

impl RunningEstimate {
    pub fn from_rounds(rounds: Vec<ProjectedEstimate>, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::InvalidParameter(format!("delta = {delta}")));
        }
        let (combined, combined_basis) = combine(&rounds)?;
        let per_coordinate_cdist = all_distances(&combined_basis);
        let identified = per_coordinate_cdist
            .iter()
            .enumerate()
            .filter(|(_, d)| **d < delta)
            .map(|(i, _)| i)
            .collect();
        let (offset, _) = combine_offsets(&rounds);
        Ok(Self {
            rounds,
            combined,
            combined_basis,
            identified,
            per_coordinate_cdist,
            offset,
            delta,
        })
    }

    /// New state with `estimate` appended.
    pub fn with_round(&self, estimate: ProjectedEstimate) -> Result<Self> {
        let mut rounds = self.rounds.clone();
        rounds.push(estimate);
        Self::from_rounds(rounds, self.delta)
    }

    /// Declares every coordinate identified (stopping criterion met).
    pub fn mark_all_identified(mut self) -> Self {
        self.identified = (0..self.combined.len()).collect();
        self
    }

    pub fn combined_norm(&self) -> f64 {
        self.combined.norm()
    }

    pub fn d_x(&self) -> usize {
        self.combined.len()
    }

    pub fn identified_fraction(&self) -> f64 {
        if self.d_x() == 0 {
            return 0.0;
        }
        self.identified.len() as f64 / self.d_x() as f64
    }

    /// Per-round summary for reports.
    pub fn snapshot(&self, round: usize, beta_norm_estimate: f64) -> RoundRecord {
        RoundRecord {
            round,
            instrument_set: self
                .rounds
                .last()
                .map(|r| r.instrument_set.clone())
                .unwrap_or_default(),
            combined: self.combined.as_slice().to_vec(),
            combined_norm: self.combined_norm(),
            identified_indices: self.identified.iter().copied().collect(),
            per_coordinate_cdist: self.per_coordinate_cdist.clone(),
            error_bound: error_bound(beta_norm_estimate, &self.combined),
            offset: self.offset,
            stopped: false,
        }
    }
}

/// One round of a running estimate as emitted in JSON reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub instrument_set: Vec<usize>,
    pub combined: Vec<f64>,
    pub combined_norm: f64,
    pub identified_indices: Vec<usize>,
    pub per_coordinate_cdist: Vec<f64>,
    pub error_bound: f64,
    #[serde(default)]
    pub offset: f64,
    /// Whether the stopping rule fired at this round.
    #[serde(default)]
    pub stopped: bool,
}
