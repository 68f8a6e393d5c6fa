use nalgebra::DMatrix;

use crate::error::{ensure_finite, HqhError, Result};
use crate::linalg;

/// Covariance `Σ` of projected (or rotated) data, with its target level
/// `τ = Tr(Σ) / c`.
///
/// `normalized` records whether `sigma` is `V Vᵀ` or `(1/n) V Vᵀ`. Diagonal
/// uniformization is scale invariant, so both conventions are accepted
/// downstream.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceState {
    sigma: DMatrix<f64>,
    tau: f64,
    normalized: bool,
}

pub const SYMMETRY_TOL: f64 = 1e-10;

impl CovarianceState {
    pub fn new(sigma: DMatrix<f64>, normalized: bool) -> Result<Self> {
        let c = sigma.nrows();
        if c == 0 || sigma.ncols() != c {
            return Err(HqhError::invalid("covariance must be square and non-empty"));
        }
        ensure_finite(sigma.as_slice(), "covariance")?;
        let asym = linalg::asymmetry(&sigma);
        if asym > SYMMETRY_TOL {
            return Err(HqhError::invalid(format!(
                "covariance asymmetry {asym:e} exceeds {SYMMETRY_TOL:e}"
            )));
        }
        if let Some(i) = (0..c).find(|&i| sigma[(i, i)] < 0.0) {
            return Err(HqhError::invalid(format!(
                "covariance diagonal entry {i} is negative"
            )));
        }
        let tau = sigma.trace() / c as f64;
        Ok(CovarianceState {
            sigma,
            tau,
            normalized,
        })
    }

    /// Restores a state with an explicitly stored `tau`, as read from disk.
    pub(crate) fn from_stored(sigma: DMatrix<f64>, tau: f64, normalized: bool) -> Result<Self> {
        let mut state = Self::new(sigma, normalized)?;
        if !tau.is_finite() {
            return Err(HqhError::invalid("stored tau is not finite"));
        }
        state.tau = tau;
        Ok(state)
    }

    pub fn zeros(c: usize, normalized: bool) -> Self {
        CovarianceState {
            sigma: DMatrix::zeros(c, c),
            tau: 0.0,
            normalized,
        }
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn trace(&self) -> f64 {
        self.sigma.trace()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Diagonal entries of `sigma`.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.sigma[(i, i)]).collect()
    }

    /// `max_i |Σ_ii − τ|`.
    pub fn diagonal_residual(&self) -> f64 {
        self.diagonal()
            .iter()
            .map(|d| (d - self.tau).abs())
            .fold(0.0, f64::max)
    }

    /// `R Σ Rᵀ`, keeping the normalization flag.
    pub fn rotated(&self, r: &DMatrix<f64>) -> Result<Self> {
        let s = symmetrize(r * &self.sigma * r.transpose());
        Self::new(s, self.normalized)
    }
}

/// `Σ = V Vᵀ`, or `(1/n) V Vᵀ` when `normalized`.
pub fn covariance_of(v: &DMatrix<f64>, normalized: bool) -> Result<CovarianceState> {
    let n = v.ncols();
    if n == 0 {
        return Err(HqhError::invalid("covariance of an empty sample"));
    }
    ensure_finite(v.as_slice(), "covariance sample")?;
    let mut s = symmetrize(v * v.transpose());
    if normalized {
        s /= n as f64;
    }
    CovarianceState::new(s, normalized)
}

pub(crate) fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn identity_sample() {
        let cov = covariance_of(&DMatrix::identity(2, 2), false).unwrap();
        assert_eq!(cov.sigma(), &DMatrix::identity(2, 2));
        assert_eq!(cov.tau(), 1.0);
    }

    #[test]
    fn hand_product() {
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, 1.0]);
        let cov = covariance_of(&v, false).unwrap();
        assert_eq!(cov.sigma(), &DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]));
        assert_eq!(cov.tau(), 2.0);
    }

    #[test]
    fn trace_is_sum_of_squares_and_spectrum_is_psd() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let v = DMatrix::from_fn(5, 13, |_, _| StandardNormal.sample(&mut rng));
            let cov = covariance_of(&v, false).unwrap();
            let ss: f64 = v.iter().map(|x| x * x).sum();
            assert!((cov.trace() - ss).abs() < 1e-12 * ss);
            let eig = linalg::sym_eigen(cov.sigma()).unwrap();
            assert!(eig.values.min() >= -1e-9 * cov.trace());
        }
    }

    #[test]
    fn normalized_tau_ignores_duplication() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let v = DMatrix::from_fn(4, 30, |_, _| StandardNormal.sample(&mut rng));
        let doubled = DMatrix::from_fn(4, 60, |i, j| v[(i, j % 30)]);
        let a = covariance_of(&v, true).unwrap();
        let b = covariance_of(&doubled, true).unwrap();
        assert!((a.tau() - b.tau()).abs() < 1e-12 * a.tau());
        assert!(b.is_normalized());
    }

    #[test]
    fn rejects_asymmetric_and_negative_diagonal() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(CovarianceState::new(asym, false).is_err());
        let neg = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        assert!(CovarianceState::new(neg, false).is_err());
        assert!(covariance_of(&DMatrix::zeros(2, 0), false).is_err());
    }
}
