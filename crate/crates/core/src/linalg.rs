//! Small dense helpers: SVD, pseudoinverse, spans.

use nalgebra::{DMatrix, DVector};

/// Thin SVD with singular values sorted non-increasingly.
pub(crate) struct ThinSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

/// Householder QR followed by one-sided Jacobi on the triangular factor.
///
/// nalgebra's bidiagonal SVD returns wrong factors for some rank-deficient
/// inputs (stacked projectors in particular), so it is not used here.
pub(crate) fn thin_svd(m: &DMatrix<f64>) -> ThinSvd {
    if m.nrows() < m.ncols() {
        let t = thin_svd(&m.transpose());
        return ThinSvd {
            u: t.v_t.transpose(),
            singular_values: t.singular_values,
            v_t: t.u.transpose(),
        };
    }
    let n = m.ncols();
    if n == 0 {
        return ThinSvd {
            u: DMatrix::zeros(m.nrows(), 0),
            singular_values: DVector::zeros(0),
            v_t: DMatrix::zeros(0, 0),
        };
    }
    let qr = m.clone().qr();
    let (q, mut b) = (qr.q(), qr.r());
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n - 1 {
            for r in p + 1..n {
                let alpha = b.column(p).norm_squared();
                let beta = b.column(r).norm_squared();
                let gamma = b.column(p).dot(&b.column(r));
                if alpha == 0.0 || beta == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut b, p, r, c, s);
                rotate(&mut v, p, r, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = (0..n).map(|j| b.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| norms[c].total_cmp(&norms[a]).then(a.cmp(&c)));
    let top = norms[order[0]];
    let mut ub = DMatrix::zeros(n, n);
    let mut filled = Vec::with_capacity(n);
    for (k, &j) in order.iter().enumerate() {
        if norms[j] > f64::MIN_POSITIVE && norms[j] > 1e-300 * top {
            ub.set_column(k, &(b.column(j) / norms[j]));
            filled.push(k);
        }
    }
    complete_orthonormal(&mut ub, &filled);
    ThinSvd {
        u: q * ub,
        singular_values: DVector::from_fn(n, |k, _| norms[order[k]]),
        v_t: DMatrix::from_fn(n, n, |k, i| v[(i, order[k])]),
    }
}

fn rotate(m: &mut DMatrix<f64>, p: usize, r: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let (a, b) = (m[(i, p)], m[(i, r)]);
        m[(i, p)] = c * a - s * b;
        m[(i, r)] = s * a + c * b;
    }
}

/// Fills the columns of `m` not listed in `filled` so that all columns are
/// orthonormal.
fn complete_orthonormal(m: &mut DMatrix<f64>, filled: &[usize]) {
    let n = m.nrows();
    let mut done: Vec<usize> = filled.to_vec();
    let mut candidate = 0;
    for k in 0..m.ncols() {
        if filled.contains(&k) {
            continue;
        }
        while candidate < n {
            let mut w = DVector::zeros(n);
            w[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for &j in &done {
                    let c = m.column(j).dot(&w);
                    w -= m.column(j) * c;
                }
            }
            let norm = w.norm();
            if norm > 0.5 {
                m.set_column(k, &(w / norm));
                done.push(k);
                break;
            }
        }
    }
}

/// Number of singular values strictly above `rel_tol * max`.
pub(crate) fn numerical_rank(singular_values: &DVector<f64>, rel_tol: f64) -> usize {
    let max = singular_values.iter().cloned().fold(0.0_f64, f64::max);
    if max <= 0.0 || !max.is_finite() {
        return 0;
    }
    singular_values.iter().filter(|&&s| s > rel_tol * max).count()
}

/// Moore-Penrose pseudoinverse, truncating singular values at `rel_tol` relative to the largest.
pub fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    if m.is_empty() {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let svd = thin_svd(m);
    let r = numerical_rank(&svd.singular_values, rel_tol);
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for k in 0..r {
        let inv = 1.0 / svd.singular_values[k];
        let v = svd.v_t.row(k).transpose();
        let u = svd.u.column(k);
        out += (v * u.transpose()) * inv;
    }
    out
}

/// Orthonormal basis (as columns) of the column span of `m`.
pub fn column_span_basis(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    if m.is_empty() {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = thin_svd(m);
    let r = numerical_rank(&svd.singular_values, rel_tol);
    svd.u.columns(0, r).into_owned()
}

/// Numerical rank of `m` at `rel_tol`.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    numerical_rank(&thin_svd(m).singular_values, rel_tol)
}

/// Residual 2-norm of projecting `v` onto the row span of `rows`.
pub fn row_span_residual(rows: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    let basis = column_span_basis(&rows.transpose(), 1e-12);
    let proj = &basis * (basis.transpose() * v);
    (v - proj).norm()
}

/// Orthogonal projection of `v` onto the row span of `rows`.
pub fn project_onto_row_span(rows: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let basis = column_span_basis(&rows.transpose(), 1e-12);
    &basis * (basis.transpose() * v)
}

pub(crate) mod serde_matrix {
    //! Matrices as nested JSON arrays, vectors as flat arrays.

    use nalgebra::{DMatrix, DVector};
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub mod row_major {
        use super::*;

        pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
            let rows: Vec<Vec<f64>> = m
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect();
            rows.serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
            let rows = Vec::<Vec<f64>>::deserialize(d)?;
            let ncols = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != ncols) {
                return Err(D::Error::custom("ragged matrix rows"));
            }
            Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
        }
    }

    pub mod col_major {
        use super::*;

        pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
            let cols: Vec<Vec<f64>> = m
                .column_iter()
                .map(|c| c.iter().copied().collect())
                .collect();
            cols.serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
            let cols = Vec::<Vec<f64>>::deserialize(d)?;
            let nrows = cols.first().map_or(0, Vec::len);
            if cols.iter().any(|c| c.len() != nrows) {
                return Err(D::Error::custom("ragged matrix columns"));
            }
            Ok(DMatrix::from_fn(nrows, cols.len(), |i, j| cols[j][i]))
        }
    }

    pub mod vector {
        use super::*;

        pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
            v.as_slice().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
            Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pinv_satisfies_penrose_identities() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let p = pinv(&a, 1e-12);
        assert_relative_eq!(&a * &p * &a, a.clone(), epsilon = 1e-12);
        assert_relative_eq!(&p * &a * &p, p.clone(), epsilon = 1e-12);
    }

    #[test]
    fn pinv_of_rank_one_row() {
        let a = DMatrix::from_row_slice(1, 3, &[2.0, 0.0, 0.0]);
        let p = pinv(&a, 1e-12);
        assert_relative_eq!(p, DMatrix::from_row_slice(3, 1, &[0.5, 0.0, 0.0]), epsilon = 1e-15);
    }

    #[test]
    fn column_span_drops_dependent_columns() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let b = column_span_basis(&m, 1e-10);
        assert_eq!(b.ncols(), 2);
        assert_relative_eq!(b.transpose() * &b, DMatrix::identity(2, 2), epsilon = 1e-12);
        assert_eq!(rank(&m, 1e-10), 2);
    }

    #[test]
    fn row_span_residual_of_member_is_zero() {
        let rows = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        let v = DVector::from_vec(vec![3.0, 2.0, 2.0]);
        assert!(row_span_residual(&rows, &v) < 1e-12);
        let w = DVector::from_vec(vec![0.0, 1.0, -1.0]);
        assert_relative_eq!(row_span_residual(&rows, &w), 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn thin_svd_is_sorted_and_consistent() {
        // Sum of two rank-one projectors stacked: rank 2 of 3, where the
        // unordered decomposition puts the zero value in the middle.
        let a = DVector::from_vec(vec![0.6, 0.8, 0.0]);
        let b = DVector::from_vec(vec![0.0, 0.6, 0.8]);
        let mut m = DMatrix::zeros(6, 3);
        m.view_mut((0, 0), (3, 3)).copy_from(&(&a * a.transpose()));
        m.view_mut((3, 0), (3, 3)).copy_from(&(&b * b.transpose()));
        let other = DMatrix::from_fn(5, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        for mat in [m.clone(), m.transpose(), other.clone(), other.transpose()] {
            let svd = thin_svd(&mat);
            let k = svd.singular_values.len();
            let sv = &svd.singular_values;
            assert!(sv.as_slice().windows(2).all(|w| w[0] >= w[1]));
            let back = &svd.u * DMatrix::from_diagonal(sv) * &svd.v_t;
            assert_relative_eq!(back, mat, epsilon = 1e-12);
            assert_relative_eq!(svd.u.transpose() * &svd.u, DMatrix::identity(k, k), epsilon = 1e-12);
            assert_relative_eq!(&svd.v_t * svd.v_t.transpose(), DMatrix::identity(k, k), epsilon = 1e-12);
        }
        assert_eq!(rank(&m, 1e-10), 2);
    }
}
