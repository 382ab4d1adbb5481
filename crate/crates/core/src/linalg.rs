//! SVD-derived scalars and matrices used by the convergence theory.
//!
//! The numerical-rank convention everywhere: a singular value counts as
//! non-zero when it exceeds `rel_tol * sigma_max`, with
//! [`DEFAULT_REL_TOL`] = 1e-10.

use ndarray::Array1;
use ndarray_linalg::{JobSvd, SVDDC};

use crate::error::{Error, Result};
use crate::Mat;

/// Relative tolerance for numerical-rank decisions.
pub const DEFAULT_REL_TOL: f64 = 1e-10;

extern "C" {
    fn openblas_set_num_threads(n: std::os::raw::c_int);
}

/// Pin the LAPACK backend to a single thread.
///
/// OpenBLAS reductions reorder across thread counts, which perturbs singular
/// values at ulp level; the adaptive integrators amplify such perturbations
/// into visibly different trajectories. Anything that promises
/// byte-identical output across hosts calls this first.
pub fn pin_blas_threads() {
    static ONCE: std::sync::Once = std::sync::Once::new();
    ONCE.call_once(|| unsafe { openblas_set_num_threads(1) });
}

/// Frobenius norm.
pub fn fro(m: &Mat) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Thin singular value decomposition `M = U diag(sigma) V^T`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// Left singular vectors, orthonormal columns, `rows x k`.
    pub u: Mat,
    /// Singular values sorted non-increasing, length `k = min(rows, cols)`.
    pub sigma: Array1<f64>,
    /// Right singular vectors, orthonormal columns, `cols x k`.
    pub v: Mat,
    /// Relative tolerance used for rank decisions.
    pub rank_tol: f64,
}

impl SvdResult {
    pub fn sigma_max(&self) -> f64 {
        self.sigma.first().copied().unwrap_or(0.0)
    }

    /// Number of singular values above `rank_tol * sigma_max`.
    pub fn rank(&self) -> usize {
        let cut = self.rank_tol * self.sigma_max();
        self.sigma.iter().filter(|&&s| s > cut).count()
    }

    /// `U diag(sigma) V^T`.
    pub fn reconstruct(&self) -> Mat {
        let us = &self.u * &self.sigma.view().insert_axis(ndarray::Axis(0));
        us.dot(&self.v.t())
    }
}

fn check_nonempty(m: &Mat) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::parameter("matrix must be non-empty"));
    }
    Ok(())
}

/// Thin SVD with the default rank tolerance.
pub fn svd(m: &Mat) -> Result<SvdResult> {
    svd_with_tol(m, DEFAULT_REL_TOL)
}

/// Thin SVD with an explicit relative rank tolerance.
pub fn svd_with_tol(m: &Mat, rank_tol: f64) -> Result<SvdResult> {
    check_nonempty(m)?;
    let (u, sigma, vt) = m.svddc(JobSvd::Some)?;
    let u = u.ok_or_else(|| Error::Backend("svd returned no U".into()))?;
    let vt = vt.ok_or_else(|| Error::Backend("svd returned no V^T".into()))?;
    Ok(SvdResult { u, sigma, v: vt.t().to_owned(), rank_tol })
}

/// Smallest singular value, zeros included.
pub fn sigma_min(m: &Mat) -> Result<f64> {
    let s = svd(m)?;
    Ok(s.sigma.last().copied().unwrap_or(0.0))
}

/// Smallest non-zero singular value together with the numerical rank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaSmall {
    pub value: f64,
    pub rank: usize,
}

/// Smallest singular value above `DEFAULT_REL_TOL * sigma_max`.
///
/// Errors on an (numerically) all-zero matrix, which has no non-zero
/// singular value.
pub fn sigma_small(m: &Mat) -> Result<SigmaSmall> {
    sigma_small_with_tol(m, DEFAULT_REL_TOL)
}

pub fn sigma_small_with_tol(m: &Mat, rel_tol: f64) -> Result<SigmaSmall> {
    let s = svd_with_tol(m, rel_tol)?;
    let rank = s.rank();
    if rank == 0 {
        return Err(Error::domain(
            "all-zero matrix has no non-zero singular value",
        ));
    }
    Ok(SigmaSmall { value: s.sigma[rank - 1], rank })
}

/// Moore-Penrose pseudoinverse via SVD with rank-tolerance truncation.
pub fn pseudoinverse(m: &Mat) -> Result<Mat> {
    let s = svd(m)?;
    let rank = s.rank();
    let mut inv = Array1::<f64>::zeros(s.sigma.len());
    for i in 0..rank {
        inv[i] = 1.0 / s.sigma[i];
    }
    // V diag(1/sigma) U^T
    let vs = &s.v * &inv.view().insert_axis(ndarray::Axis(0));
    Ok(vs.dot(&s.u.t()))
}

/// Orthogonal projector onto the row space of `M`: `P = M^dagger M`.
///
/// `P` is `cols x cols`, symmetric and idempotent.
pub fn row_space_projector(m: &Mat) -> Result<Mat> {
    let s = svd(m)?;
    let rank = s.rank();
    let vr = s.v.slice(ndarray::s![.., ..rank]);
    Ok(vr.dot(&vr.t()))
}

/// Rectangular "diagonal" matrix: entry `[i, i] = value` for
/// `i < min(rows, cols)`, zero elsewhere.
pub fn rectangular_diagonal(rows: usize, cols: usize, value: f64) -> Mat {
    Mat::from_shape_fn((rows, cols), |(i, j)| if i == j { value } else { 0.0 })
}

/// Balancedness residual of a chain of weight matrices:
/// `max_l || W_l W_l^T - W_{l+1}^T W_{l+1} ||_F`.
///
/// Zero exactly when the chain is balanced.
pub fn balancedness_residual(weights: &[Mat]) -> f64 {
    let mut worst = 0.0_f64;
    for pair in weights.windows(2) {
        let left = pair[0].dot(&pair[0].t());
        let right = pair[1].t().dot(&pair[1]);
        worst = worst.max(fro(&(&left - &right)));
    }
    worst
}
