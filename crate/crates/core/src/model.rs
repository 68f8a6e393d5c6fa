//! Projection, rotation and the composed hashing model `b = sign(R W (x − μ))`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::code::{sign_quantize, BinaryCode};
use crate::covariance::CovarianceState;
use crate::error::{ensure_dim, ensure_finite, HqhError, Result};
use crate::linalg;
use crate::matrix::CenteringState;
use crate::seed;

/// Orthonormality tolerance for bases produced by batch PCA.
pub const BATCH_BASIS_TOL: f64 = 1e-8;
/// Orthonormality tolerance for bases tracked from a stream.
pub const STREAM_BASIS_TOL: f64 = 1e-6;
pub const ROTATION_TOL: f64 = 1e-8;

/// `c × d` projection with orthonormal rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionBasis {
    w: DMatrix<f64>,
}

impl ProjectionBasis {
    pub fn new(w: DMatrix<f64>, tol: f64) -> Result<Self> {
        let (c, d) = w.shape();
        if c == 0 || c > d {
            return Err(HqhError::invalid(format!(
                "projection must satisfy 1 <= c <= d, got c = {c}, d = {d}"
            )));
        }
        ensure_finite(w.as_slice(), "projection basis")?;
        let residual = linalg::row_orthonormality_residual(&w);
        if residual > tol {
            return Err(HqhError::NotOrthonormal {
                residual,
                limit: tol,
            });
        }
        Ok(ProjectionBasis { w })
    }

    /// The first `c` canonical axes of `ℝ^d`.
    pub fn canonical(c: usize, d: usize) -> Result<Self> {
        Self::new(DMatrix::identity(c, d), 0.0)
    }

    pub fn code_len(&self) -> usize {
        self.w.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// `W x` for a single point.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure_dim("projection input", self.dim(), x.len())?;
        let xv = nalgebra::DVectorView::from_slice(x, x.len());
        Ok((&self.w * xv).iter().cloned().collect())
    }

    pub fn orthonormality_residual(&self) -> f64 {
        linalg::row_orthonormality_residual(&self.w)
    }
}

/// How an orthogonal transform was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Identity,
    Random,
    Itq,
    IsoHash,
    UnifDiag,
}

impl Provenance {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Provenance::Identity => 0,
            Provenance::Random => 1,
            Provenance::Itq => 2,
            Provenance::IsoHash => 3,
            Provenance::UnifDiag => 4,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Provenance::Identity,
            1 => Provenance::Random,
            2 => Provenance::Itq,
            3 => Provenance::IsoHash,
            4 => Provenance::UnifDiag,
            _ => return None,
        })
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Identity => "identity",
            Provenance::Random => "random",
            Provenance::Itq => "itq",
            Provenance::IsoHash => "isohash",
            Provenance::UnifDiag => "unifdiag",
        })
    }
}

impl FromStr for Provenance {
    type Err = HqhError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" | "none" => Ok(Provenance::Identity),
            "random" => Ok(Provenance::Random),
            "itq" => Ok(Provenance::Itq),
            "isohash" => Ok(Provenance::IsoHash),
            "unifdiag" => Ok(Provenance::UnifDiag),
            other => Err(HqhError::invalid(format!("unknown rotation `{other}`"))),
        }
    }
}

/// `c × c` orthogonal matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct OrthogonalTransform {
    r: DMatrix<f64>,
    provenance: Provenance,
}

impl OrthogonalTransform {
    pub fn new(r: DMatrix<f64>, provenance: Provenance) -> Result<Self> {
        let c = r.nrows();
        if c == 0 || r.ncols() != c {
            return Err(HqhError::invalid("rotation must be square and non-empty"));
        }
        ensure_finite(r.as_slice(), "rotation")?;
        let residual = linalg::row_orthonormality_residual(&r)
            .max(linalg::col_orthonormality_residual(&r));
        if residual > ROTATION_TOL {
            return Err(HqhError::NotOrthonormal {
                residual,
                limit: ROTATION_TOL,
            });
        }
        Ok(OrthogonalTransform { r, provenance })
    }

    pub fn identity(c: usize) -> Self {
        OrthogonalTransform {
            r: DMatrix::identity(c, c),
            provenance: Provenance::Identity,
        }
    }

    pub fn dim(&self) -> usize {
        self.r.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn orthonormality_residual(&self) -> f64 {
        linalg::row_orthonormality_residual(&self.r).max(linalg::col_orthonormality_residual(&self.r))
    }
}

/// `c × m` matrix of i.i.d. standard normal entries. Not orthogonal.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianTransform {
    r: DMatrix<f64>,
    seed: u64,
}

impl GaussianTransform {
    pub fn sample(c: usize, m: usize, seed: u64) -> Self {
        let mut rng = seed::derive_rng(seed, "gaussian-transform", 0);
        Self::sample_with(c, m, seed, &mut rng)
    }

    pub(crate) fn sample_with(c: usize, m: usize, seed: u64, rng: &mut seed::Rng) -> Self {
        // Row-major draw order so that row i depends only on the first (i+1)·m draws.
        let mut r = DMatrix::zeros(c, m);
        for i in 0..c {
            for j in 0..m {
                r[(i, j)] = StandardNormal.sample(rng);
            }
        }
        GaussianTransform { r, seed }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Centering, projection and rotation composed into `W̃ = R W`.
#[derive(Clone, Debug, PartialEq)]
pub struct HashModel {
    centering: CenteringState,
    basis: ProjectionBasis,
    transform: OrthogonalTransform,
    covariance: CovarianceState,
    /// `R W`, row-major `c × d`.
    combined: Vec<f64>,
}

impl HashModel {
    pub fn new(
        centering: CenteringState,
        basis: ProjectionBasis,
        transform: OrthogonalTransform,
        covariance: CovarianceState,
    ) -> Result<Self> {
        ensure_dim("model rotation size", basis.code_len(), transform.dim())?;
        ensure_dim("model centering dimension", basis.dim(), centering.dim())?;
        ensure_dim("model covariance size", basis.code_len(), covariance.dim())?;
        let wt = transform.matrix() * basis.matrix();
        let (c, d) = wt.shape();
        let mut combined = Vec::with_capacity(c * d);
        for i in 0..c {
            combined.extend(wt.row(i).iter());
        }
        Ok(HashModel {
            centering,
            basis,
            transform,
            covariance,
            combined,
        })
    }

    pub fn code_len(&self) -> usize {
        self.basis.code_len()
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn centering(&self) -> &CenteringState {
        &self.centering
    }

    pub fn basis(&self) -> &ProjectionBasis {
        &self.basis
    }

    pub fn transform(&self) -> &OrthogonalTransform {
        &self.transform
    }

    pub fn covariance(&self) -> &CovarianceState {
        &self.covariance
    }

    /// `W̃ = R W` as a `c × d` matrix.
    pub fn combined(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.code_len(), self.dim(), &self.combined)
    }

    /// Real-valued rotated projection `y = R W (x − μ)`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure_dim("encode input", self.dim(), x.len())?;
        ensure_finite(x, "encode input")?;
        let mut centered = vec![0.0; x.len()];
        self.project_into(x, &mut centered)
    }

    fn project_into(&self, x: &[f64], scratch: &mut [f64]) -> Result<Vec<f64>> {
        self.centering.center_into(x, scratch);
        let d = self.dim();
        Ok(self
            .combined
            .chunks_exact(d)
            .map(|row| linalg::dot(row, scratch))
            .collect())
    }

    /// `sign(R W (x − μ))`.
    pub fn encode(&self, x: &[f64]) -> Result<BinaryCode> {
        sign_quantize(&self.project(x)?)
    }

    pub(crate) fn encode_with_scratch(&self, x: &[f64], scratch: &mut [f64]) -> Result<BinaryCode> {
        ensure_dim("encode input", self.dim(), x.len())?;
        ensure_finite(x, "encode input")?;
        sign_quantize(&self.project_into(x, scratch)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn identity_model(c: usize) -> HashModel {
        HashModel::new(
            CenteringState::zero(c),
            ProjectionBasis::canonical(c, c).unwrap(),
            OrthogonalTransform::identity(c),
            CovarianceState::zeros(c, true),
        )
        .unwrap()
    }

    #[test]
    fn identity_pipeline() {
        let m = identity_model(2);
        assert_eq!(m.encode(&[3.0, -1.0]).unwrap().to_signs(), vec![1, -1]);
    }

    #[test]
    fn half_turn_flips_every_bit() {
        let r = OrthogonalTransform::new(-DMatrix::<f64>::identity(2, 2), Provenance::Random).unwrap();
        let m = HashModel::new(
            CenteringState::zero(2),
            ProjectionBasis::canonical(2, 2).unwrap(),
            r,
            CovarianceState::zeros(2, true),
        )
        .unwrap();
        assert_eq!(m.encode(&[3.0, -1.0]).unwrap().to_signs(), vec![-1, 1]);
    }

    #[test]
    fn centering_is_applied() {
        let centering = CenteringState::from_parts(DVector::from_vec(vec![5.0, 5.0]), 4).unwrap();
        let m = HashModel::new(
            centering,
            ProjectionBasis::canonical(2, 2).unwrap(),
            OrthogonalTransform::identity(2),
            CovarianceState::zeros(2, true),
        )
        .unwrap();
        assert_eq!(m.encode(&[3.0, 6.0]).unwrap().to_signs(), vec![-1, 1]);
    }

    #[test]
    fn encode_rejects_bad_input() {
        let m = identity_model(3);
        assert!(matches!(
            m.encode(&[1.0, 2.0]),
            Err(HqhError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            m.encode(&[1.0, f64::NAN, 0.0]),
            Err(HqhError::NonFinite { .. })
        ));
    }

    #[test]
    fn basis_and_rotation_validation() {
        let skew = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(OrthogonalTransform::new(skew.clone(), Provenance::Random).is_err());
        assert!(ProjectionBasis::new(skew, 1e-6).is_err());
        assert!(ProjectionBasis::new(DMatrix::identity(3, 2), 1e-6).is_err());
    }

    #[test]
    fn mismatched_model_parts_are_rejected() {
        let res = HashModel::new(
            CenteringState::zero(3),
            ProjectionBasis::canonical(2, 3).unwrap(),
            OrthogonalTransform::identity(3),
            CovarianceState::zeros(2, true),
        );
        assert!(res.is_err());
    }

    #[test]
    fn gaussian_transform_is_seeded() {
        let a = GaussianTransform::sample(4, 6, 9);
        let b = GaussianTransform::sample(4, 6, 9);
        let c = GaussianTransform::sample(4, 6, 10);
        assert_eq!(a, b);
        assert_ne!(a.matrix(), c.matrix());
    }

    #[test]
    fn provenance_names_round_trip() {
        for p in [
            Provenance::Identity,
            Provenance::Random,
            Provenance::Itq,
            Provenance::IsoHash,
            Provenance::UnifDiag,
        ] {
            assert_eq!(p.to_string().parse::<Provenance>().unwrap(), p);
            assert_eq!(Provenance::from_tag(p.tag()), Some(p));
        }
    }
}
