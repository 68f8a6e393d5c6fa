use nalgebra::DMatrix;

use crate::error::{ensure_dim, HqhError, Result};
use crate::linalg;
use crate::model::{OrthogonalTransform, Provenance};

use super::random_rotation;

/// Result of the ITQ alternating minimization.
#[derive(Clone, Debug)]
pub struct ItqState {
    pub transform: OrthogonalTransform,
    /// `sign(R V)` for the final `R`, entries `±1`.
    pub signs: DMatrix<f64>,
    /// `Q(B, R)` after each sign step, starting with the initial rotation.
    pub loss_history: Vec<f64>,
}

/// Entrywise `sign(y) ∈ {−1, +1}` with `sign(0) = +1`.
pub fn sign_matrix(y: &DMatrix<f64>) -> DMatrix<f64> {
    y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 })
}

/// `Q(B, R) = ‖B − R V‖²_F`.
pub fn quantization_loss(b: &DMatrix<f64>, r: &OrthogonalTransform, v: &DMatrix<f64>) -> Result<f64> {
    ensure_dim("quantization loss: rows", b.nrows(), v.nrows())?;
    ensure_dim("quantization loss: columns", b.ncols(), v.ncols())?;
    ensure_dim("quantization loss: rotation", r.dim(), v.nrows())?;
    Ok(loss_of(b, &(r.matrix() * v)))
}

fn loss_of(b: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    b.iter().zip(y.iter()).map(|(x, z)| (x - z) * (x - z)).sum()
}

/// Orthogonal Procrustes solution `argmin_R ‖B − R V‖_F`: with the SVD
/// `B Vᵀ = U S Wᵀ`, `R = U Wᵀ`.
pub fn procrustes_rotation(b: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<OrthogonalTransform> {
    ensure_dim("procrustes: rows", b.nrows(), v.nrows())?;
    ensure_dim("procrustes: columns", b.ncols(), v.ncols())?;
    let m = b * v.transpose();
    let svd = linalg::svd(&m)?;
    OrthogonalTransform::new(&svd.u * svd.v.transpose(), Provenance::Itq)
}

/// ITQ from a seeded random initial rotation.
pub fn itq_fit(v: &DMatrix<f64>, iters: usize, seed: u64) -> Result<ItqState> {
    let r0 = random_rotation(v.nrows(), seed)?;
    itq_fit_from(v, iters, r0)
}

/// ITQ from a given initial rotation. Stops early once the sign matrix
/// stops changing, since the rotation is then a fixed point.
pub fn itq_fit_from(v: &DMatrix<f64>, iters: usize, r0: OrthogonalTransform) -> Result<ItqState> {
    let (c, n) = v.shape();
    ensure_dim("itq initial rotation", c, r0.dim())?;
    if iters == 0 {
        return Err(HqhError::invalid("ITQ needs at least one iteration"));
    }
    if n < c {
        return Err(HqhError::invalid(format!(
            "ITQ needs at least c = {c} samples, got {n}"
        )));
    }
    crate::error::ensure_finite(v.as_slice(), "itq sample")?;

    let mut r = r0.matrix().clone();
    let mut y = &r * v;
    let mut b = sign_matrix(&y);
    let mut history = vec![loss_of(&b, &y)];
    for _ in 0..iters {
        r = procrustes_rotation(&b, v)?.matrix().clone();
        y = &r * v;
        let next = sign_matrix(&y);
        let loss = loss_of(&next, &y);
        debug_assert!(loss <= history[history.len() - 1] * (1.0 + 1e-12) + 1e-9);
        history.push(loss);
        let unchanged = next == b;
        b = next;
        if unchanged {
            break;
        }
    }
    Ok(ItqState {
        transform: OrthogonalTransform::new(r, Provenance::Itq)?,
        signs: b,
        loss_history: history,
    })
}
