//! Principal subspace estimation: batch PCA and OPAST streaming tracking.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_dim, ensure_finite, HqhError, Result};
use crate::linalg;
use crate::matrix::DataMatrix;
use crate::model::{ProjectionBasis, BATCH_BASIS_TOL, STREAM_BASIS_TOL};

/// Relative eigenvalue floor below which a principal direction is
/// considered empty.
const RANK_TOL: f64 = 1e-12;
/// Allowed `‖mean‖ / rms column norm` for data handed to PCA.
const CENTERED_TOL: f64 = 1e-6;

/// Full principal decomposition of a centered sample, from which bases of
/// any length `c` can be cut.
#[derive(Clone, Debug)]
pub struct PrincipalComponents {
    /// Eigenvalues of `X Xᵀ`, decreasing.
    variances: Vec<f64>,
    /// Eigenvectors as rows, sign-normalized, same order as `variances`.
    directions: DMatrix<f64>,
    n: usize,
}

impl PrincipalComponents {
    /// Eigendecomposition of `Σ_X = X Xᵀ` for a centered `X`.
    pub fn fit(x: &DataMatrix) -> Result<Self> {
        let (d, n) = (x.dim(), x.len());
        if n == 0 || d == 0 {
            return Err(HqhError::invalid("PCA needs a non-empty sample"));
        }
        check_centered(x)?;
        let sigma = crate::covariance::symmetrize(x.values() * x.values().transpose());
        let eig = sigma.symmetric_eigen();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &j| {
            eig.eigenvalues[j]
                .total_cmp(&eig.eigenvalues[i])
                .then(i.cmp(&j))
        });
        let variances: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut directions = DMatrix::zeros(d, d);
        for (row, &i) in order.iter().enumerate() {
            let mut v: DVector<f64> = eig.eigenvectors.column(i).clone_owned();
            fix_sign(&mut v);
            directions.set_row(row, &v.transpose());
        }
        Ok(PrincipalComponents {
            variances,
            directions,
            n,
        })
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn sample_count(&self) -> usize {
        self.n
    }

    /// Top-`c` principal directions as the rows of a projection.
    pub fn basis(&self, c: usize) -> Result<ProjectionBasis> {
        let d = self.directions.nrows();
        if c == 0 || c > d {
            return Err(HqhError::invalid(format!(
                "code length {c} must lie in 1..={d}"
            )));
        }
        if c > self.n {
            return Err(HqhError::invalid(format!(
                "code length {c} exceeds sample count {}",
                self.n
            )));
        }
        let top = self.variances[0].max(0.0);
        let floor = RANK_TOL * top;
        let deficient: Vec<usize> = (0..c)
            .filter(|&k| top == 0.0 || self.variances[k] <= floor)
            .collect();
        if !deficient.is_empty() {
            return Err(HqhError::DegenerateSpectrum {
                directions: deficient,
            });
        }
        ProjectionBasis::new(self.directions.rows(0, c).clone_owned(), BATCH_BASIS_TOL)
    }
}

/// Projection onto the top-`c` principal directions of a centered `X`.
pub fn batch_pca(x: &DataMatrix, c: usize) -> Result<ProjectionBasis> {
    if c > x.dim() {
        return Err(HqhError::invalid(format!(
            "code length {c} exceeds dimension {}",
            x.dim()
        )));
    }
    PrincipalComponents::fit(x)?.basis(c)
}

fn check_centered(x: &DataMatrix) -> Result<()> {
    let mean_norm = x.mean().norm();
    let rms = (x.values().norm_squared() / x.len() as f64).sqrt();
    let limit = CENTERED_TOL * rms.max(f64::MIN_POSITIVE);
    if mean_norm > limit {
        return Err(HqhError::NotCentered { mean_norm, limit });
    }
    Ok(())
}

/// Makes the largest-magnitude entry positive (first one on ties).
fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
    }
}

/// OPAST subspace tracker.
///
/// Holds `W` as a `d × c` matrix with orthonormal columns and the `c × c`
/// inverse-correlation matrix `Z` of the recursive least-squares update.
#[derive(Clone, Debug, PartialEq)]
pub struct OpastTracker {
    w: DMatrix<f64>,
    z: DMatrix<f64>,
    beta: f64,
    steps: u64,
}

impl OpastTracker {
    /// Starts from the first `c` canonical axes with `Z = I`.
    pub fn new(d: usize, c: usize, beta: f64) -> Result<Self> {
        if c == 0 || c > d {
            return Err(HqhError::invalid(format!(
                "tracker needs 1 <= c <= d, got c = {c}, d = {d}"
            )));
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(HqhError::invalid(format!(
                "forgetting factor {beta} outside (0, 1]"
            )));
        }
        Ok(OpastTracker {
            w: DMatrix::identity(d, c),
            z: DMatrix::identity(c, c),
            beta,
            steps: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn code_len(&self) -> usize {
        self.w.ncols()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Tracked `d × c` matrix with orthonormal columns.
    pub fn columns(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn orthonormality_residual(&self) -> f64 {
        linalg::col_orthonormality_residual(&self.w)
    }

    /// The tracked subspace as a `c × d` projection.
    pub fn basis(&self) -> Result<ProjectionBasis> {
        ProjectionBasis::new(self.w.transpose(), STREAM_BASIS_TOL)
    }

    /// One OPAST step on a centered sample.
    pub fn update(&mut self, x: &[f64]) -> Result<()> {
        ensure_dim("tracker update", self.dim(), x.len())?;
        ensure_finite(x, "tracker update")?;
        let x = DVector::from_column_slice(x);
        let inv_beta = 1.0 / self.beta;

        let y = self.w.tr_mul(&x);
        let q = &self.z * &y * inv_beta;
        let gamma = 1.0 / (1.0 + y.dot(&q));
        let p = (&x - &self.w * &y) * gamma;
        self.z = crate::covariance::symmetrize(&self.z * inv_beta - &q * q.transpose() * gamma);

        let qq = q.norm_squared();
        if qq > 0.0 {
            let pp = p.norm_squared();
            // 1/sqrt(1 + a) - 1 without cancellation for small a
            let tau = (-0.5 * (pp * qq).ln_1p()).exp_m1() / qq;
            let p_prime = &self.w * &q * tau + p * (1.0 + tau * qq);
            self.w += p_prime * q.transpose();
        }
        self.steps += 1;

        let residual = self.orthonormality_residual();
        if residual > 1e-10 {
            linalg::orthonormalize_columns(&mut self.w);
        }
        debug_assert!(self.orthonormality_residual() <= STREAM_BASIS_TOL);
        Ok(())
    }
}

/// Principal angles between two `c`-dimensional subspaces of `ℝ^d`, in
/// increasing order.
pub fn principal_angles(a: &ProjectionBasis, b: &ProjectionBasis) -> Result<Vec<f64>> {
    ensure_dim("principal angles: ambient dimension", a.dim(), b.dim())?;
    ensure_dim("principal angles: subspace dimension", a.code_len(), b.code_len())?;
    for basis in [a, b] {
        let residual = basis.orthonormality_residual();
        if residual > STREAM_BASIS_TOL {
            return Err(HqhError::NotOrthonormal {
                residual,
                limit: STREAM_BASIS_TOL,
            });
        }
    }
    let m = a.matrix() * b.matrix().transpose();
    let svd = linalg::svd(&m)?;
    Ok(svd
        .singular_values
        .iter()
        .map(|s| s.clamp(0.0, 1.0).acos())
        .collect())
}
