use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::covariance::{symmetrize, CovarianceState};
use crate::error::{HqhError, Result};
use crate::model::{OrthogonalTransform, Provenance};

use super::random_rotation;

/// Descent settings. `step_size` and `tol` are dimensionless: the step is
/// scaled by `τ⁻²` and the stopping residual by `τ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IsoHashConfig {
    pub step_size: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for IsoHashConfig {
    fn default() -> Self {
        IsoHashConfig {
            step_size: 0.5,
            max_iters: 2000,
            tol: 1e-8,
            seed: 0,
        }
    }
}

impl IsoHashConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(HqhError::invalid("isohash step_size must be positive"));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(HqhError::invalid("isohash tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct IsoHashFit {
    pub transform: OrthogonalTransform,
    pub converged: bool,
    /// `‖diag(RΣRᵀ) − τ‖_F` at the returned rotation.
    pub residual: f64,
    pub iterations: usize,
    /// Objective at the start and after every accepted step.
    pub objective_history: Vec<f64>,
}

/// `½‖diag(Q Σ Qᵀ) − τ‖²`.
pub fn isohash_objective(q: &DMatrix<f64>, cov: &CovarianceState) -> f64 {
    let m = q * cov.sigma() * q.transpose();
    0.5 * diag_offsets(&m, cov.tau()).iter().map(|d| d * d).sum::<f64>()
}

fn diag_offsets(m: &DMatrix<f64>, tau: f64) -> Vec<f64> {
    (0..m.nrows()).map(|k| m[(k, k)] - tau).collect()
}

/// `(I − A/2)⁻¹ (I + A/2)`: orthogonal for skew `A`.
fn cayley(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let c = a.nrows();
    let half = a * 0.5;
    let lhs = DMatrix::identity(c, c) - &half;
    let rhs = DMatrix::identity(c, c) + half;
    lhs.lu()
        .solve(&rhs)
        .ok_or_else(|| HqhError::Invariant("Cayley system is singular".into()))
}

/// Riemannian gradient descent on `O(c)` with Cayley retraction.
///
/// With `M = QΣQᵀ` and `D = diag(M) − τ`, the descent direction is the skew
/// matrix `Ω = DM − MD`; steps grow by 1.5 after a decrease and halve
/// otherwise. The identity is a critical point whenever `Σ` is diagonal, so
/// the search starts from a seeded random rotation unless the identity is
/// already within tolerance.
pub fn isohash_fit(cov: &CovarianceState, config: &IsoHashConfig) -> Result<IsoHashFit> {
    config.validate()?;
    let c = cov.dim();
    let tau = cov.tau();
    let limit = config.tol * tau.abs().max(f64::MIN_POSITIVE);

    let identity = DMatrix::<f64>::identity(c, c);
    let f0 = isohash_objective(&identity, cov);
    if c == 1 || (2.0 * f0).sqrt() <= limit {
        return Ok(IsoHashFit {
            transform: OrthogonalTransform::identity(c),
            converged: true,
            residual: (2.0 * f0).sqrt(),
            iterations: 0,
            objective_history: vec![f0],
        });
    }

    let mut q = random_rotation(c, config.seed)?.matrix().clone();
    let mut f = isohash_objective(&q, cov);
    let mut history = vec![f];
    let mut eta = config.step_size / (tau * tau);
    let mut iterations = 0;
    let mut converged = (2.0 * f).sqrt() <= limit;

    while !converged && iterations < config.max_iters {
        iterations += 1;
        let m = &q * cov.sigma() * q.transpose();
        let d = diag_offsets(&m, tau);
        let omega = DMatrix::from_fn(c, c, |a, b| (d[a] - d[b]) * m[(a, b)]);
        if omega.amax() == 0.0 {
            break;
        }
        let trial = cayley(&(&omega * -eta))? * &q;
        let ft = isohash_objective(&trial, cov);
        if ft < f {
            q = trial;
            f = ft;
            history.push(f);
            eta *= 1.5;
            converged = (2.0 * f).sqrt() <= limit;
        } else {
            eta *= 0.5;
            if eta * tau * tau < 1e-300 {
                break;
            }
        }
    }

    // Cayley steps are orthogonal in exact arithmetic; clean up drift
    let q = reorthogonalize(q);
    let residual = (2.0 * isohash_objective(&q, cov)).sqrt();
    Ok(IsoHashFit {
        transform: OrthogonalTransform::new(q, Provenance::IsoHash)?,
        converged: residual <= limit,
        residual,
        iterations,
        objective_history: history,
    })
}

fn reorthogonalize(q: DMatrix<f64>) -> DMatrix<f64> {
    // one Newton step towards the polar factor: Q (3I − QᵀQ) / 2
    let c = q.nrows();
    let g = symmetrize(q.transpose() * &q);
    &q * (DMatrix::identity(c, c) * 3.0 - g) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::covariance_of;
    use crate::rotation::unifdiag_fit;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_psd(c: usize, seed: u64) -> CovarianceState {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(c, 2 * c + 5, |i, _| {
            (1.0 + i as f64) * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        covariance_of(&g, false).unwrap()
    }

    fn max_diag_error(r: &DMatrix<f64>, cov: &CovarianceState) -> f64 {
        let m = r * cov.sigma() * r.transpose();
        (0..cov.dim())
            .map(|k| (m[(k, k)] - cov.tau()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn uniform_diagonal_is_accepted_immediately() {
        let cov = CovarianceState::new(DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 3.0]), false).unwrap();
        let fit = isohash_fit(&cov, &IsoHashConfig::default()).unwrap();
        assert_eq!(fit.iterations, 0);
        assert_eq!(fit.residual, 0.0);
        assert_eq!(fit.transform.matrix(), &DMatrix::<f64>::identity(2, 2));
    }

    #[test]
    fn two_by_two_diagonal() {
        let cov = CovarianceState::new(DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 2.0]), false).unwrap();
        let fit = isohash_fit(&cov, &IsoHashConfig::default()).unwrap();
        assert!(fit.converged);
        let r = fit.transform.matrix();
        let m = r * cov.sigma() * r.transpose();
        assert!((m[(0, 0)] - 3.0).abs() < 1e-7);
        assert!((m[(1, 1)] - 3.0).abs() < 1e-7);
        assert!((m.trace() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn objective_never_increases() {
        for seed in 0..5 {
            let cov = random_psd(8, seed);
            let fit = isohash_fit(&cov, &IsoHashConfig { seed, ..Default::default() }).unwrap();
            for w in fit.objective_history.windows(2) {
                assert!(w[1] <= w[0], "{w:?}");
            }
        }
    }

    #[test]
    fn agrees_with_unifdiag_on_the_diagonal() {
        for c in [2, 4, 8, 16] {
            for seed in 0..5 {
                let cov = random_psd(c, 31 * seed + c as u64);
                let iso = isohash_fit(&cov, &IsoHashConfig { seed, ..Default::default() }).unwrap();
                let ud = unifdiag_fit(&cov).unwrap();
                assert!(iso.converged, "c = {c}, seed = {seed}: {}", iso.residual);
                assert!(iso.transform.orthonormality_residual() <= 1e-10);
                let tau = cov.tau();
                assert!(max_diag_error(iso.transform.matrix(), &cov) <= 1e-6 * tau);
                assert!(max_diag_error(ud.transform.matrix(), &cov) <= 1e-6 * tau);
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        let cov = random_psd(3, 0);
        assert!(isohash_fit(&cov, &IsoHashConfig { step_size: 0.0, ..Default::default() }).is_err());
        assert!(isohash_fit(&cov, &IsoHashConfig { tol: -1.0, ..Default::default() }).is_err());
    }
}
