//! Dense numerical linear algebra shared by the rank, inverse and solver
//! modules.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Default relative singular-value threshold.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankInfo {
    pub rank: usize,
    /// Singular values in decreasing order.
    pub sigma: Vec<f64>,
    pub threshold: f64,
}

impl RankInfo {
    pub fn sigma_max(&self) -> f64 {
        self.sigma.first().copied().unwrap_or(0.0)
    }

    pub fn smallest_retained(&self) -> Option<f64> {
        self.rank.checked_sub(1).map(|k| self.sigma[k])
    }

    pub fn largest_discarded(&self) -> Option<f64> {
        self.sigma.get(self.rank).copied()
    }

    /// Smallest retained over largest discarded singular value.
    pub fn gap(&self) -> Option<f64> {
        match (self.smallest_retained(), self.largest_discarded()) {
            (Some(a), Some(b)) if b > 0.0 => Some(a / b),
            (Some(_), Some(_)) => Some(f64::INFINITY),
            _ => None,
        }
    }

    pub fn relative_min(&self) -> f64 {
        match (self.smallest_retained(), self.sigma_max()) {
            (Some(a), m) if m > 0.0 => a / m,
            _ => 0.0,
        }
    }
}

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

/// Count of singular values above `tol × max(σ_max, reference)`.
///
/// `reference` gives an absolute scale so that an exactly zero matrix has
/// rank zero rather than an undefined relative rank.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64, reference: f64) -> RankInfo {
    let sigma = singular_values(m);
    let scale = sigma.first().copied().unwrap_or(0.0).max(reference);
    let threshold = tol * scale;
    let rank = if scale == 0.0 {
        0
    } else {
        sigma.iter().filter(|&&s| s > threshold).count()
    };
    RankInfo {
        rank,
        sigma,
        threshold,
    }
}

#[derive(Clone, Debug)]
pub struct MinNormSolution {
    pub x: DVector<f64>,
    pub rank: usize,
    pub rank_augmented: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub residual: f64,
}

impl MinNormSolution {
    pub fn consistent(&self) -> bool {
        self.rank == self.rank_augmented
    }
}

/// Minimal-Euclidean-norm least-squares solution via the SVD
/// pseudo-inverse, with a rank comparison `rank(A)` vs `rank(A|b)`.
pub fn min_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> MinNormSolution {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return MinNormSolution {
            x: DVector::zeros(cols),
            rank: 0,
            rank_augmented: usize::from(b.iter().any(|v| *v != 0.0)),
            sigma_min: 0.0,
            sigma_max: 0.0,
            residual: b.norm(),
        };
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let threshold = tol * smax;
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let mut x = DVector::zeros(cols);
    let mut rank = 0;
    let mut smin_all = f64::INFINITY;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        smin_all = smin_all.min(s);
        if s > threshold && s > 0.0 {
            rank += 1;
            let coef = u.column(k).dot(b) / s;
            x += vt.row(k).transpose() * coef;
        }
    }
    let r = a * &x - b;
    let mut aug = DMatrix::zeros(rows, cols + 1);
    aug.view_mut((0, 0), (rows, cols)).copy_from(a);
    aug.set_column(cols, b);
    let bscale = b.norm();
    let rank_augmented = numerical_rank(&aug, tol, smax.max(bscale)).rank;
    MinNormSolution {
        x,
        rank,
        rank_augmented,
        sigma_min: if rows <= cols { smin_all } else { smin_all.min(smax) },
        sigma_max: smax,
        residual: r.norm(),
    }
}

/// Orthonormal basis of the numerical null space (columns).
pub fn null_space(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let (rows, cols) = a.shape();
    let square = rows.max(cols);
    let mut padded = DMatrix::zeros(square, cols);
    padded.view_mut((0, 0), (rows, cols)).copy_from(a);
    let svd = padded.svd(true, true);
    let vt = svd.v_t.unwrap();
    let smax = svd.singular_values.max();
    let cols_null: Vec<_> = (0..cols)
        .filter(|&k| svd.singular_values[k] <= tol * smax)
        .map(|k| vt.row(k).transpose())
        .collect();
    if cols_null.is_empty() {
        return DMatrix::zeros(cols, 0);
    }
    DMatrix::from_columns(&cols_null)
}

/// Angle between `v` and the column span of the orthonormal `basis`.
pub fn angle_to_subspace(v: &DVector<f64>, basis: &DMatrix<f64>) -> f64 {
    let nv = v.norm();
    if nv == 0.0 {
        return 0.0;
    }
    let proj = basis * (basis.transpose() * v);
    let perp = (v - &proj).norm();
    perp.atan2(proj.norm())
}

pub fn determinant(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    m.clone().lu().determinant()
}

/// `x = C⁺ b` for full-row-rank `C` together with its directional
/// derivatives, given `∂C` and `∂b` along each direction.
///
/// Uses `x = Cᵀw`, `(CCᵀ)w = b`, so
/// `∂x = ∂Cᵀ w + Cᵀ (CCᵀ)⁻¹ (∂b − ∂C x − C ∂Cᵀ w)`.
pub fn min_norm_with_derivatives(
    c: &DMatrix<f64>,
    b: &DVector<f64>,
    dc: &[DMatrix<f64>],
    db: &[DVector<f64>],
) -> Option<(DVector<f64>, Vec<DVector<f64>>)> {
    let gram = c * c.transpose();
    let chol = gram.cholesky()?;
    let w = chol.solve(b);
    let x = c.transpose() * &w;
    let mut dx = Vec::with_capacity(dc.len());
    for (dcv, dbv) in dc.iter().zip(db) {
        let rhs = dbv - dcv * &x - c * (dcv.transpose() * &w);
        let dw = chol.solve(&rhs);
        dx.push(dcv.transpose() * &w + c.transpose() * dw);
    }
    Some((x, dx))
}

/// Greedy column selection by modified Gram–Schmidt: always keeps the
/// `forced` columns (in order) and then adds the column with the largest
/// residual norm until `want` columns are chosen.
pub fn greedy_columns(m: &DMatrix<f64>, forced: &[usize], want: usize) -> Vec<usize> {
    let cols = m.ncols();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut chosen = Vec::new();
    let push = |idx: usize, basis: &mut Vec<DVector<f64>>, chosen: &mut Vec<usize>| {
        let mut v = m.column(idx).into_owned();
        for b in basis.iter() {
            let d = b.dot(&v);
            v -= b * d;
        }
        let nv = v.norm();
        if nv > 0.0 {
            basis.push(v / nv);
        }
        chosen.push(idx);
    };
    for &f in forced {
        push(f, &mut basis, &mut chosen);
    }
    while chosen.len() < want {
        let mut best = None;
        let mut best_norm = -1.0;
        for j in 0..cols {
            if chosen.contains(&j) {
                continue;
            }
            let mut v = m.column(j).into_owned();
            for b in basis.iter() {
                let d = b.dot(&v);
                v -= b * d;
            }
            let nv = v.norm();
            if nv > best_norm {
                best_norm = nv;
                best = Some(j);
            }
        }
        match best {
            Some(j) => push(j, &mut basis, &mut chosen),
            None => break,
        }
    }
    chosen
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rank_of_zero_matrix_is_zero() {
        let z = DMatrix::<f64>::zeros(2, 3);
        assert_eq!(numerical_rank(&z, 1e-10, 0.0).rank, 0);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let info = numerical_rank(&m, 1e-10, 0.0);
        assert_eq!(info.rank, 1);
        assert!(info.gap().unwrap() > 1e10);
    }

    #[test]
    fn min_norm_underdetermined() {
        // x + y = 2 → (1, 1)
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0]);
        let s = min_norm_solve(&a, &b, 1e-12);
        assert_relative_eq!(s.x[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(s.x[1], 1.0, epsilon = 1e-14);
        assert!(s.consistent());
    }

    #[test]
    fn inconsistent_detected() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let s = min_norm_solve(&a, &b, 1e-12);
        assert!(!s.consistent());
    }

    #[test]
    fn null_space_of_wide_matrix() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let ns = null_space(&a, 1e-12);
        assert_eq!(ns.ncols(), 2);
        assert!((a * ns).norm() < 1e-14);
    }

    #[test]
    fn pinv_derivative_matches_finite_difference() {
        let c_at = |t: f64| DMatrix::from_row_slice(1, 2, &[1.0 + t, t * t + 2.0]);
        let b_at = |t: f64| DVector::from_vec(vec![1.0 + 3.0 * t]);
        let t = 0.3;
        let dc = DMatrix::from_row_slice(1, 2, &[1.0, 2.0 * t]);
        let db = DVector::from_vec(vec![3.0]);
        let (x, dx) = min_norm_with_derivatives(&c_at(t), &b_at(t), &[dc], &[db]).unwrap();
        let h = 1e-6;
        let xp = min_norm_solve(&c_at(t + h), &b_at(t + h), 1e-14).x;
        let xm = min_norm_solve(&c_at(t - h), &b_at(t - h), 1e-14).x;
        let fd = (xp - xm) / (2.0 * h);
        assert!((&dx[0] - fd).norm() < 1e-8);
        assert!((c_at(t) * x - b_at(t)).norm() < 1e-14);
    }

    #[test]
    fn greedy_picks_independent() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(greedy_columns(&m, &[0], 2), vec![0, 2]);
    }
}
