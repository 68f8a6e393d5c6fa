use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{HqhError, Result};
use crate::model::{OrthogonalTransform, Provenance};
use crate::seed;

/// Haar-distributed orthogonal matrix: QR of a seeded Gaussian matrix with
/// the signs of `diag(R)` folded into the columns of `Q`.
pub fn random_rotation(c: usize, seed: u64) -> Result<OrthogonalTransform> {
    if c == 0 {
        return Err(HqhError::invalid("rotation size must be at least 1"));
    }
    let mut rng = seed::derive_rng(seed, "random-rotation", 0);
    let mut g = DMatrix::<f64>::zeros(c, c);
    for i in 0..c {
        for j in 0..c {
            g[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    OrthogonalTransform::new(haar_from_gaussian(g), Provenance::Random)
}

pub(crate) fn haar_from_gaussian(g: DMatrix<f64>) -> DMatrix<f64> {
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..q.ncols() {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}
