//! Dense linear algebra helpers built on nalgebra's SVD and LU.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

/// Default relative threshold for rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// Relative rank threshold, overridable through `AMECH_TOL`.
pub fn rank_tol() -> f64 {
    static TOL: OnceLock<f64> = OnceLock::new();
    *TOL.get_or_init(|| {
        std::env::var("AMECH_TOL")
            .ok()
            .and_then(|s| s.trim().parse::<f64>().ok())
            .filter(|t| t.is_finite() && *t > 0.0)
            .unwrap_or(DEFAULT_RANK_TOL)
    })
}

/// Singular values in decreasing order with the matching full set of
/// right singular vectors (columns of `v`, which is `ncols × ncols`).
pub struct FullSvd {
    pub sigma: Vec<f64>,
    pub v: DMatrix<f64>,
}

pub fn full_svd(a: &DMatrix<f64>) -> FullSvd {
    let n = a.ncols();
    if n == 0 {
        return FullSvd { sigma: vec![], v: DMatrix::zeros(0, 0) };
    }
    let rows = a.nrows().max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut v = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        v.set_column(k, &vt.row(i).transpose());
    }
    FullSvd { sigma, v }
}

/// Numerical rank: singular values above `rel_tol · σ_max`.
pub fn rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = full_svd(a);
    count_above(&s.sigma, rel_tol)
}

fn count_above(sigma: &[f64], rel_tol: f64) -> usize {
    let smax = sigma.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return 0;
    }
    sigma.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Orthonormal basis (as columns) of the null space of `a`.
pub fn null_space(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = a.ncols();
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let s = full_svd(a);
    let r = count_above(&s.sigma, rel_tol);
    s.v.columns(r, n - r).into_owned()
}

/// Orthonormal basis of the column space of `a`.
pub fn range_basis(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let t = a.transpose();
    let s = full_svd(&t);
    let r = count_above(&s.sigma, rel_tol);
    s.v.columns(0, r).into_owned()
}

/// Rank decision with an ambiguity band of relative singular values.
#[derive(Clone, Debug, PartialEq)]
pub struct BandedRank {
    pub rank: usize,
    /// Relative singular values falling inside the band.
    pub ambiguous: Vec<f64>,
    pub relative_sigma: Vec<f64>,
}

pub fn banded_rank(a: &DMatrix<f64>, lo: f64, hi: f64) -> BandedRank {
    let s = full_svd(a);
    let smax = s.sigma.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return BandedRank { rank: 0, ambiguous: vec![], relative_sigma: vec![0.0; s.sigma.len()] };
    }
    let rel: Vec<f64> = s.sigma.iter().map(|x| x / smax).collect();
    BandedRank {
        rank: rel.iter().filter(|&&x| x >= hi).count(),
        ambiguous: rel.iter().copied().filter(|&x| x > lo && x < hi).collect(),
        relative_sigma: rel,
    }
}

/// Minimum-norm least-squares solution of `a x = b` and its residual norm.
pub fn min_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> (DVector<f64>, f64) {
    if a.ncols() == 0 {
        return (DVector::zeros(0), b.norm());
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = if smax == 0.0 { f64::INFINITY } else { rel_tol * smax };
    let x = svd.solve(b, eps).expect("U and V computed");
    let res = (a * &x - b).norm();
    (x, res)
}

/// LU with partial pivoting; `None` when the matrix is exactly singular.
pub fn lu_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().lu().solve(b)
}

/// Smallest and largest singular values.
pub fn sigma_range(a: &DMatrix<f64>) -> (f64, f64) {
    let s = full_svd(a);
    let max = s.sigma.first().copied().unwrap_or(0.0);
    let min = s.sigma.last().copied().unwrap_or(0.0);
    (min, max)
}

/// Orthogonal projector onto the column span of an orthonormal basis.
pub fn projector(basis: &DMatrix<f64>) -> DMatrix<f64> {
    basis * basis.transpose()
}
