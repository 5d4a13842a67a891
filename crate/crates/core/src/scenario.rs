//! Synthetic ground-truth worlds and the instrument similarity matrix.
//!
//! A scenario holds the instrument effects `alpha` (one row per instrument),
//! the causal effect `beta`, and the confounder model `eps_x = e * mixing`,
//! `eps_y = e . conf_dir` with `e` standard Gaussian.
//!
//! Construction: `beta` and the first `d_id` rows of `alpha` are supported on
//! the first `d_id` coordinates with `U(-5, 5)` entries. The remaining rows
//! are copies of one of two fixed "cluster center" rows (chosen among the
//! first `d_id`) plus standard Gaussian noise on every coordinate.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, serde_matrix};
use crate::rng;

const MAX_ATTEMPTS: usize = 100;
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n_iv: usize,
    pub d_x: usize,
    pub d_id: usize,
    pub seed: u64,
    #[serde(with = "serde_matrix::row_major")]
    pub alpha: DMatrix<f64>,
    #[serde(with = "serde_matrix::vector")]
    pub beta: DVector<f64>,
    #[serde(with = "serde_matrix::row_major")]
    pub mixing: DMatrix<f64>,
    #[serde(with = "serde_matrix::vector")]
    pub conf_dir: DVector<f64>,
    /// For each row `d_id..n_iv`, the index of the center it was drawn around.
    #[serde(default)]
    pub cluster_center: Vec<usize>,
}

impl Scenario {
    /// Coordinates where `beta` may be nonzero.
    pub fn support(&self) -> std::ops::Range<usize> {
        0..self.d_id
    }

    pub fn beta_norm(&self) -> f64 {
        self.beta.norm()
    }

    /// Rows of `alpha` for the given instruments, in order.
    pub fn alpha_rows(&self, instruments: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(instruments.len(), self.d_x, |i, j| {
            self.alpha[(instruments[i], j)]
        })
    }

    /// Same world with the confounder switched off (`mixing = 0`, `conf_dir = 0`).
    ///
    /// Used for exactness checks; `validate` accepts the zero `conf_dir`.
    pub fn without_confounding(&self) -> Scenario {
        Scenario {
            mixing: DMatrix::zeros(self.d_x, self.d_x),
            conf_dir: DVector::zeros(self.d_x),
            ..self.clone()
        }
    }

    /// Field shapes agree with `n_iv` and `d_x`. Enough for simulation.
    pub fn check_shapes(&self) -> Result<()> {
        let (n_iv, d_x) = (self.n_iv, self.d_x);
        if self.alpha.shape() != (n_iv, d_x)
            || self.beta.len() != d_x
            || self.mixing.shape() != (d_x, d_x)
            || self.conf_dir.len() != d_x
        {
            return Err(Error::InvalidDimensions("scenario field shapes".into()));
        }
        Ok(())
    }

    /// Checks every structural invariant of a generated scenario.
    pub fn validate(&self) -> Result<()> {
        self.check_shapes()?;
        let (n_iv, d_x, d_id) = (self.n_iv, self.d_x, self.d_id);
        let unconfounded = self.conf_dir.norm() == 0.0 && self.mixing.norm() == 0.0;
        if !unconfounded && (self.conf_dir.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter("conf_dir is not unit norm".into()));
        }
        let nonzero = self.beta.iter().filter(|b| **b != 0.0).count();
        if nonzero != d_id || self.beta.iter().skip(d_id).any(|b| *b != 0.0) {
            return Err(Error::InvalidParameter("beta support".into()));
        }
        for i in 0..d_id {
            if self.alpha.row(i).iter().skip(d_id).any(|a| *a != 0.0) {
                return Err(Error::InvalidParameter(format!("alpha row {i} support")));
            }
        }
        let base = self.alpha.rows(0, d_id).into_owned();
        if linalg::row_span_residual(&base, &self.beta) >= 1e-8 {
            return Err(Error::InvalidParameter("beta outside the identifying span".into()));
        }
        if linalg::rank(&self.alpha, RANK_TOL) != n_iv.min(d_x) {
            return Err(Error::RankDeficient(0));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Draws a scenario. Identical arguments give bit-identical output.
pub fn generate_scenario(n_iv: usize, d_x: usize, d_id: usize, seed: u64) -> Result<Scenario> {
    if n_iv == 0 || d_x == 0 {
        return Err(Error::InvalidDimensions("n_iv and d_x must be positive".into()));
    }
    if d_id < 2 || d_id > n_iv.min(d_x) {
        return Err(Error::InvalidDimensions(format!(
            "need 2 <= d_id <= min(n_iv, d_x), got d_id={d_id}, n_iv={n_iv}, d_x={d_x}"
        )));
    }
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = rng::stream(seed, attempt as u64);
        let scenario = draw(n_iv, d_x, d_id, seed, &mut rng);
        if scenario.validate().is_ok() {
            return Ok(scenario);
        }
    }
    Err(Error::RankDeficient(MAX_ATTEMPTS))
}

// Draw order matters: beta and the identifying block come first so that
// scenarios differing only in d_x share those values.
fn draw(n_iv: usize, d_x: usize, d_id: usize, seed: u64, rng: &mut impl Rng) -> Scenario {
    let unif = Uniform::new(-5.0, 5.0).expect("valid range");

    let mut beta = DVector::zeros(d_x);
    for b in beta.iter_mut().take(d_id) {
        *b = unif.sample(rng);
    }

    let mut alpha = DMatrix::zeros(n_iv, d_x);
    for i in 0..d_id {
        for j in 0..d_id {
            alpha[(i, j)] = unif.sample(rng);
        }
    }

    let centers = index::sample(rng, d_id, 2).into_vec();
    let mut cluster_center = Vec::with_capacity(n_iv - d_id);
    for i in d_id..n_iv {
        let c = centers[rng.random_range(0..2)];
        cluster_center.push(c);
        for j in 0..d_x {
            let noise: f64 = StandardNormal.sample(rng);
            alpha[(i, j)] = alpha[(c, j)] + noise;
        }
    }

    let mixing = DMatrix::from_fn(d_x, d_x, |_, _| StandardNormal.sample(rng));

    let mut conf_dir = DVector::from_fn(d_x, |_, _| StandardNormal.sample(rng));
    let norm = conf_dir.norm();
    conf_dir /= norm;

    Scenario {
        n_iv,
        d_x,
        d_id,
        seed,
        alpha,
        beta,
        mixing,
        conf_dir,
        cluster_center,
    }
}

/// Pairwise `|cos|` similarities between instruments; symmetric with unit diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimilarityMatrix {
    #[serde(with = "serde_matrix::row_major")]
    sim: DMatrix<f64>,
}

impl SimilarityMatrix {
    /// Wraps a matrix after checking symmetry, unit diagonal and range.
    pub fn from_matrix(sim: DMatrix<f64>) -> Result<Self> {
        if !sim.is_square() {
            return Err(Error::InvalidDimensions("similarity matrix must be square".into()));
        }
        let n = sim.nrows();
        for i in 0..n {
            if sim[(i, i)] != 1.0 {
                return Err(Error::InvalidParameter(format!("sim[{i}][{i}] != 1")));
            }
            for j in 0..n {
                let s = sim[(i, j)];
                if !(0.0..=1.0).contains(&s) || s != sim[(j, i)] {
                    return Err(Error::InvalidParameter(format!("sim[{i}][{j}] = {s}")));
                }
            }
        }
        Ok(Self { sim })
    }

    /// Identity similarities: every pair maximally dissimilar.
    pub fn identity(n: usize) -> Self {
        Self {
            sim: DMatrix::identity(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.sim.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.sim[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.sim
    }
}

/// `|cos|` between the rows of `rows`. Fails on a row with norm below 1e-12.
pub fn similarities_from_rows(rows: &DMatrix<f64>) -> Result<SimilarityMatrix> {
    let n = rows.nrows();
    let norms: Vec<f64> = rows.row_iter().map(|r| r.norm()).collect();
    if let Some(row) = norms.iter().position(|&nrm| nrm < 1e-12) {
        return Err(Error::ZeroRow { row, attempts: 1 });
    }
    let mut sim = DMatrix::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let c = (rows.row(i).dot(&rows.row(j)).abs() / (norms[i] * norms[j])).min(1.0);
            sim[(i, j)] = c;
            sim[(j, i)] = c;
        }
    }
    Ok(SimilarityMatrix { sim })
}

/// Similarities computed on `alpha + noise_sd * G`, `G` standard Gaussian.
pub fn compute_similarities(
    scenario: &Scenario,
    noise_sd: f64,
    seed: u64,
) -> Result<SimilarityMatrix> {
    if !(noise_sd >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise_sd = {noise_sd}")));
    }
    let attempts = if noise_sd == 0.0 { 1 } else { MAX_ATTEMPTS };
    let mut last_row = 0;
    for attempt in 0..attempts {
        let mut rng = rng::stream(seed, attempt as u64);
        let noisy = if noise_sd == 0.0 {
            scenario.alpha.clone()
        } else {
            scenario.alpha.map(|a| {
                let g: f64 = StandardNormal.sample(&mut rng);
                a + noise_sd * g
            })
        };
        match similarities_from_rows(&noisy) {
            Ok(sim) => return Ok(sim),
            Err(Error::ZeroRow { row, .. }) => last_row = row,
            Err(e) => return Err(e),
        }
    }
    Err(Error::ZeroRow {
        row: last_row,
        attempts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_configuration_has_expected_shape() {
        let s = generate_scenario(30, 50, 15, 11).unwrap();
        assert_eq!(s.beta.iter().filter(|b| **b != 0.0).count(), 15);
        assert_eq!(linalg::rank(&s.alpha, 1e-10), 30);
        assert!(s.beta.iter().all(|b| b.abs() <= 5.0));
        s.validate().unwrap();
    }

    #[test]
    fn just_identified_scenario_spans_beta() {
        for seed in 0..10 {
            let s = generate_scenario(3, 3, 3, seed).unwrap();
            assert!(linalg::row_span_residual(&s.alpha, &s.beta) < 1e-8);
            assert!(s.cluster_center.is_empty());
        }
    }

    #[test]
    fn extra_rows_sit_next_to_their_center() {
        let s = generate_scenario(5, 4, 2, 7).unwrap();
        assert_eq!(s.cluster_center.len(), 3);
        for (k, &c) in s.cluster_center.iter().enumerate() {
            let row = s.alpha.row(2 + k);
            let dist = |i: usize| (row - s.alpha.row(i)).norm();
            let nearest = if dist(0) <= dist(1) { 0 } else { 1 };
            assert_eq!(nearest, c, "row {} nearest {} designated {}", 2 + k, nearest, c);
        }
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(matches!(generate_scenario(3, 3, 1, 0), Err(Error::InvalidDimensions(_))));
        assert!(matches!(generate_scenario(3, 2, 3, 0), Err(Error::InvalidDimensions(_))));
        assert!(matches!(generate_scenario(0, 2, 2, 0), Err(Error::InvalidDimensions(_))));
    }

    #[test]
    fn generation_is_deterministic_and_shares_identifying_block() {
        let a = generate_scenario(3, 3, 3, 253).unwrap();
        let b = generate_scenario(3, 3, 3, 253).unwrap();
        assert_eq!(a, b);
        let wide = generate_scenario(3, 10, 3, 253).unwrap();
        for j in 0..3 {
            assert_eq!(a.beta[j], wide.beta[j]);
            for i in 0..3 {
                assert_eq!(a.alpha[(i, j)], wide.alpha[(i, j)]);
            }
        }
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let s = generate_scenario(6, 5, 3, 3).unwrap();
        let back = Scenario::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn similarity_hand_values() {
        let same = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 2.0]);
        assert_relative_eq!(
            similarities_from_rows(&same).unwrap().get(0, 1),
            1.0,
            epsilon = 1e-15
        );
        let orth = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        assert_eq!(similarities_from_rows(&orth).unwrap().get(0, 1), 0.0);
        let diag = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        assert_relative_eq!(
            similarities_from_rows(&diag).unwrap().get(1, 0),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn zero_row_is_reported() {
        let rows = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(similarities_from_rows(&rows), Err(Error::ZeroRow { row: 1, .. })));
    }

    #[test]
    fn noisy_similarities_keep_invariants() {
        let s = generate_scenario(12, 8, 4, 1).unwrap();
        let sim = compute_similarities(&s, 1.0, 5).unwrap();
        SimilarityMatrix::from_matrix(sim.as_matrix().clone()).unwrap();
        assert_eq!(sim, compute_similarities(&s, 1.0, 5).unwrap());
        assert_ne!(sim, compute_similarities(&s, 1.0, 6).unwrap());
    }

    #[test]
    fn from_matrix_rejects_asymmetry() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.3, 1.0]);
        assert!(SimilarityMatrix::from_matrix(m).is_err());
    }
}
