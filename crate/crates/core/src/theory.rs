//! Monte-Carlo and closed-form checks of the orthant-margin, sketch
//! stability and bit-agreement bounds, and the near-zero coefficient CDF.
//!
//! Every Monte-Carlo routine draws its samples in fixed-size chunks, each
//! from its own RNG derived from `(seed, label, chunk)`, so results do not
//! depend on the number of worker threads.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::covariance::CovarianceState;
use crate::error::{ensure_dim, ensure_finite, HqhError, Result};
use crate::linalg;
use crate::model::{GaussianTransform, OrthogonalTransform};
use crate::rotation::{random_rotation, unifdiag_fit};
use crate::seed;

/// Samples per independently seeded Monte-Carlo chunk.
const CHUNK: usize = 4096;
/// Allowed negative eigenvalue, relative to the trace, for a PSD spec.
const PSD_TOL: f64 = 1e-9;

fn normal(rng: &mut seed::Rng) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

/// Splits `n` trials into chunks and sums per-chunk results in chunk order.
fn chunked<T, F>(n: usize, seed: u64, label: &str, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut seed::Rng, usize) -> T + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = seed::derive_rng(seed, label, k as u64);
            let len = CHUNK.min(n - k * CHUNK);
            f(&mut rng, len)
        })
        .collect()
}

/// Binomial standard error at proportion `p` (clamped to `[0, 1]`).
fn binomial_se(p: f64, n: usize) -> f64 {
    let p = p.clamp(0.0, 1.0);
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Zero-mean Gaussian data with covariance `sigma_th`.
#[derive(Clone, Debug)]
pub struct GaussianDataSpec {
    sigma_th: DMatrix<f64>,
    /// `L` with `L Lᵀ = Σ`.
    factor: DMatrix<f64>,
    seed: u64,
}

impl GaussianDataSpec {
    pub fn new(sigma_th: DMatrix<f64>, seed: u64) -> Result<Self> {
        let c = sigma_th.nrows();
        if c == 0 || sigma_th.ncols() != c {
            return Err(HqhError::invalid("covariance spec must be square and non-empty"));
        }
        ensure_finite(sigma_th.as_slice(), "covariance spec")?;
        if linalg::asymmetry(&sigma_th) > 1e-10 {
            return Err(HqhError::invalid("covariance spec is not symmetric"));
        }
        let eig = linalg::sym_eigen(&sigma_th)?;
        let min = eig.values.min();
        if min < -PSD_TOL * sigma_th.trace().abs().max(1.0) {
            return Err(HqhError::NotPsd { min_eigenvalue: min });
        }
        let scales = eig.values.map(|v| v.max(0.0).sqrt());
        let factor = &eig.vectors * DMatrix::from_diagonal(&scales);
        Ok(GaussianDataSpec { sigma_th, factor, seed })
    }

    pub fn isotropic(c: usize, variance: f64, seed: u64) -> Result<Self> {
        Self::new(DMatrix::identity(c, c) * variance, seed)
    }

    pub fn dim(&self) -> usize {
        self.sigma_th.nrows()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma_th
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn trace(&self) -> f64 {
        self.sigma_th.trace()
    }

    fn draw(&self, rng: &mut seed::Rng) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| normal(rng));
        &self.factor * z
    }
}

/// `n` independent draws as the columns of a `c × n` matrix.
pub fn sample_h1(spec: &GaussianDataSpec, n: usize) -> DMatrix<f64> {
    let c = spec.dim();
    let parts = chunked(n, spec.seed, "h1-sample", |rng, len| {
        let mut out = Vec::with_capacity(c * len);
        for _ in 0..len {
            out.extend(spec.draw(rng).iter());
        }
        out
    });
    DMatrix::from_vec(c, n, parts.concat())
}

/// Fraction of all entries of `y` with `|y| < ε`, for each `ε` in the grid.
pub fn near_zero_cdf(y: &DMatrix<f64>, eps_grid: &[f64]) -> Result<Vec<f64>> {
    if eps_grid.iter().any(|e| !e.is_finite() || *e < 0.0) {
        return Err(HqhError::invalid("epsilon grid must be finite and non-negative"));
    }
    if eps_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(HqhError::invalid("epsilon grid must be ascending"));
    }
    ensure_finite(y.as_slice(), "near-zero sample")?;
    if y.is_empty() {
        return Err(HqhError::invalid("near-zero CDF of an empty sample"));
    }
    let mut abs: Vec<f64> = y.iter().map(|v| v.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let n = abs.len() as f64;
    Ok(eps_grid
        .iter()
        .map(|&e| abs.partition_point(|&v| v < e) as f64 / n)
        .collect())
}

/// `γ_i = √((R Σ Rᵀ)_ii)`.
pub fn rotated_gammas(r: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Vec<f64> {
    let rs = r * sigma;
    (0..r.nrows())
        .map(|i| linalg::dot(rs.row(i).clone_owned().as_slice(), r.row(i).clone_owned().as_slice()).max(0.0).sqrt())
        .collect()
}

/// `Σᵢ 1/γ_i` for the rotation `r`.
pub fn sum_inverse_gamma(r: &DMatrix<f64>, sigma: &DMatrix<f64>) -> f64 {
    rotated_gammas(r, sigma).iter().map(|g| 1.0 / g).sum()
}

/// Lower bound `c^{3/2} Tr^{−1/2}` on `Σᵢ 1/γ_i`, attained when the rotated
/// diagonal is uniform.
pub fn uniform_inverse_gamma(c: usize, trace: f64) -> f64 {
    (c as f64).powf(1.5) / trace.sqrt()
}

#[derive(Clone, Debug, Serialize)]
pub struct OrthantBoundReport {
    pub epsilon: f64,
    pub n_mc: usize,
    pub gamma: Vec<f64>,
    pub empirical_p: Vec<f64>,
    pub analytic_bound: Vec<f64>,
    pub standard_error: Vec<f64>,
    pub sum_inverse_gamma: f64,
    /// `ε > 0.5 · min γ`: outside the small-margin regime of the bound.
    pub out_of_regime: bool,
    pub pass: bool,
}

/// Per coordinate, `P[|y_i| < ε]` for `y = R v` against
/// `2ε / √(2π (RΣRᵀ)_ii)`, allowing three standard errors.
pub fn verify_orthant_bound(
    spec: &GaussianDataSpec,
    r: &OrthogonalTransform,
    epsilon: f64,
    n_mc: usize,
) -> Result<OrthantBoundReport> {
    ensure_dim("orthant rotation", spec.dim(), r.dim())?;
    if epsilon.is_nan() || epsilon <= 0.0 || n_mc == 0 {
        return Err(HqhError::invalid("orthant check needs epsilon > 0 and at least one sample"));
    }
    let c = spec.dim();
    let rm = r.matrix();
    let gamma = rotated_gammas(rm, spec.sigma());
    let counts = chunked(n_mc, spec.seed, "orthant-margin", |rng, len| {
        let mut hits = vec![0usize; c];
        for _ in 0..len {
            let y = rm * spec.draw(rng);
            for (h, v) in hits.iter_mut().zip(y.iter()) {
                if v.abs() < epsilon {
                    *h += 1;
                }
            }
        }
        hits
    });
    let mut hits = vec![0usize; c];
    for chunk in counts {
        for (h, k) in hits.iter_mut().zip(chunk) {
            *h += k;
        }
    }
    let empirical_p: Vec<f64> = hits.iter().map(|&h| h as f64 / n_mc as f64).collect();
    let analytic_bound: Vec<f64> = gamma
        .iter()
        .map(|&g| 2.0 * epsilon / ((2.0 * PI).sqrt() * g))
        .collect();
    let standard_error: Vec<f64> = analytic_bound.iter().map(|&b| binomial_se(b, n_mc)).collect();
    let pass = empirical_p
        .iter()
        .zip(&analytic_bound)
        .zip(&standard_error)
        .all(|((p, b), se)| *p <= b + 3.0 * se);
    let min_gamma = gamma.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(OrthantBoundReport {
        epsilon,
        n_mc,
        sum_inverse_gamma: gamma.iter().map(|g| 1.0 / g).sum(),
        out_of_regime: epsilon > 0.5 * min_gamma,
        gamma,
        empirical_p,
        analytic_bound,
        standard_error,
        pass,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct UniformizationReport {
    pub c: usize,
    pub trace: f64,
    pub uniformized_sum: f64,
    pub closed_form: f64,
    pub relative_error: f64,
    pub identity_sum: f64,
    pub n_rotations: usize,
    pub best_random_sum: f64,
    /// `min over random R of (sum(R) − uniformized_sum)`.
    pub min_margin: f64,
    pub pass: bool,
}

/// Compares `Σᵢ 1/γ_i` of the uniformizing rotation with its closed form
/// and with `n_rotations` Haar-random rotations.
pub fn check_uniformization_optimality(
    spec: &GaussianDataSpec,
    n_rotations: usize,
    seed: u64,
) -> Result<UniformizationReport> {
    if n_rotations == 0 {
        return Err(HqhError::invalid("need at least one random rotation"));
    }
    let c = spec.dim();
    let cov = CovarianceState::new(spec.sigma().clone(), false)?;
    let fit = unifdiag_fit(&cov)?;
    let uniformized_sum = sum_inverse_gamma(fit.transform.matrix(), spec.sigma());
    let closed_form = uniform_inverse_gamma(c, spec.trace());
    let relative_error = (uniformized_sum - closed_form).abs() / closed_form;

    let sums: Vec<f64> = (0..n_rotations)
        .into_par_iter()
        .map(|i| {
            let r = random_rotation(c, seed::derive_u64(seed, "optimality-haar", i as u64))?;
            Ok(sum_inverse_gamma(r.matrix(), spec.sigma()))
        })
        .collect::<Result<_>>()?;
    let best_random_sum = sums.iter().cloned().fold(f64::INFINITY, f64::min);
    let min_margin = best_random_sum - uniformized_sum;
    Ok(UniformizationReport {
        c,
        trace: spec.trace(),
        uniformized_sum,
        closed_form,
        relative_error,
        identity_sum: sum_inverse_gamma(&DMatrix::identity(c, c), spec.sigma()),
        n_rotations,
        best_random_sum,
        min_margin,
        pass: relative_error <= 1e-8 && min_margin >= -1e-9,
    })
}

/// `2ε √(2/π) c^{3/2} Tr^{−1/2}`; may exceed 1.
pub fn th2_bound(c: usize, trace: f64, epsilon: f64) -> f64 {
    2.0 * epsilon * (2.0 / PI).sqrt() * (c as f64).powf(1.5) / trace.sqrt()
}

#[derive(Clone, Debug, Serialize)]
pub struct Th2Report {
    pub c: usize,
    pub trace: f64,
    pub epsilon: f64,
    pub n_pairs: usize,
    pub sampler: &'static str,
    pub bound: f64,
    pub empirical: f64,
    pub standard_error: f64,
    /// Bound exceeds 1 or `ε > 0.5 · min γ`.
    pub out_of_regime: bool,
    pub pass: bool,
}

const TH2_SAMPLER: &str = "v1 ~ N(0, sigma); v2 = v1 + epsilon * w * u, u uniform on the unit sphere, w uniform on [0, 1]";

/// Fraction of pairs at distance at most `ε` whose sketches `sign(R v)`
/// differ, against [`th2_bound`].
pub fn verify_th2(
    spec: &GaussianDataSpec,
    r: &OrthogonalTransform,
    epsilon: f64,
    n_pairs: usize,
) -> Result<Th2Report> {
    ensure_dim("th2 rotation", spec.dim(), r.dim())?;
    if epsilon.is_nan() || epsilon < 0.0 || n_pairs == 0 {
        return Err(HqhError::invalid("th2 check needs epsilon >= 0 and at least one pair"));
    }
    let c = spec.dim();
    let rm = r.matrix();
    let counts = chunked(n_pairs, spec.seed, "th2-pairs", |rng, len| {
        let mut differ = 0usize;
        for _ in 0..len {
            let v1 = spec.draw(rng);
            let mut u = DVector::from_fn(c, |_, _| normal(rng));
            let norm = u.norm();
            if norm > 0.0 {
                u /= norm;
            }
            let w: f64 = rng.random();
            let v2 = &v1 + u * (epsilon * w);
            let y1 = rm * v1;
            let y2 = rm * v2;
            if y1.iter().zip(y2.iter()).any(|(a, b)| (*a >= 0.0) != (*b >= 0.0)) {
                differ += 1;
            }
        }
        differ
    });
    let empirical = counts.iter().sum::<usize>() as f64 / n_pairs as f64;
    let trace = spec.trace();
    let bound = th2_bound(c, trace, epsilon);
    let standard_error = binomial_se(bound, n_pairs);
    let min_gamma = rotated_gammas(rm, spec.sigma())
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    Ok(Th2Report {
        c,
        trace,
        epsilon,
        n_pairs,
        sampler: TH2_SAMPLER,
        bound,
        empirical,
        standard_error,
        out_of_regime: bound > 1.0 || epsilon > 0.5 * min_gamma,
        pass: empirical <= bound + 3.0 * standard_error,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct Th3Params {
    pub l: f64,
    pub delta: f64,
    pub eps_pca: f64,
    pub rho: f64,
    pub eta: f64,
    pub c: usize,
}

impl Th3Params {
    fn validate(&self) -> Result<()> {
        let finite = [self.l, self.delta, self.eps_pca, self.rho, self.eta]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.l <= 0.0 || self.delta < 0.0 || self.eps_pca < 0.0 || self.rho < 0.0 || self.eta <= 0.0 {
            return Err(HqhError::invalid("th3 parameters out of range"));
        }
        if self.l * (1.0 - self.delta) <= 0.0 {
            return Err(HqhError::invalid("th3 needs l(1 - delta) > 0"));
        }
        if self.c == 0 {
            return Err(HqhError::invalid("th3 needs c >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Th3Empirical {
    pub n_trials: usize,
    /// Angle between the two projected vectors of the generated pair.
    pub theta_actual: f64,
    pub agreement_rate: f64,
    pub expected_rate: f64,
    pub agreement_se: f64,
    pub empirical_tail: f64,
    pub tail_se: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Th3Report {
    pub params: Th3Params,
    pub a_raw: f64,
    pub a: f64,
    pub theta_max: f64,
    pub p: f64,
    pub q: f64,
    pub azuma_bound: f64,
    /// Raw `A < −1` or `q < 0`: the bound says nothing.
    pub vacuous: bool,
    pub empirical: Option<Th3Empirical>,
}

pub fn th3_quantities(params: &Th3Params) -> Result<Th3Report> {
    params.validate()?;
    let Th3Params { l, delta, eps_pca: e, rho, eta, c } = params.clone();
    let a_raw = (1.0 - e).powi(2) * (1.0 - delta).powi(2) / (1.0 + delta).powi(2)
        - rho * rho / (2.0 * l * l * (1.0 + delta).powi(2))
        - rho * e / (l * (1.0 + delta))
        - 2.0 * e * e;
    let a = a_raw.clamp(-1.0, 1.0);
    let theta_max = a.acos();
    let q = c as f64 * (1.0 - eta - theta_max / PI);
    Ok(Th3Report {
        params: params.clone(),
        a_raw,
        a,
        theta_max,
        p: 1.0 - theta_max / PI,
        q,
        azuma_bound: (-eta * eta * c as f64 / 2.0).exp(),
        vacuous: a_raw < -1.0 || q < 0.0,
        empirical: None,
    })
}

/// Boundary-case pair for the bit-agreement bound, in `ℝ^{c+2}`, with the
/// projection keeping the first `c` coordinates.
///
/// `x₁ = l(√(1−ε²) e₁ + ε e_{c+1})` and `‖x₂‖ = l(1+δ)` with the same
/// projection loss `ε`, placed at distance exactly `ρ` by rotating its
/// in-subspace part in the `(e₁, e₂)` plane. Returns the projected pair.
pub fn th3_boundary_pair(params: &Th3Params) -> Result<(DVector<f64>, DVector<f64>)> {
    params.validate()?;
    let Th3Params { l, delta, eps_pca: e, rho, c, .. } = params.clone();
    if e >= 1.0 {
        return Err(HqhError::invalid("th3 generator needs eps_pca < 1"));
    }
    if c < 2 {
        return Err(HqhError::invalid("th3 generator needs c >= 2"));
    }
    let l2 = l * (1.0 + delta);
    let inner = 1.0 - e * e;
    // residuals orthogonal (e_{c+1} vs e_{c+2}), then aligned
    let solve = |residual_dot: f64| {
        let cos_phi = (l * l + l2 * l2 - rho * rho - 2.0 * l * l2 * residual_dot) / (2.0 * l * l2 * inner);
        (-1.0..=1.0).contains(&cos_phi).then_some(cos_phi)
    };
    let cos_phi = solve(0.0).or_else(|| solve(e * e)).ok_or_else(|| {
        HqhError::invalid(format!(
            "no pair with norms {l} and {l2} and projection loss {e} lies at distance {rho}"
        ))
    })?;
    let sin_phi = (1.0 - cos_phi * cos_phi).max(0.0).sqrt();
    let mut y1 = DVector::zeros(c);
    y1[0] = l * inner.sqrt();
    let mut y2 = DVector::zeros(c);
    y2[0] = l2 * inner.sqrt() * cos_phi;
    y2[1] = l2 * inner.sqrt() * sin_phi;
    Ok((y1, y2))
}

fn angle(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.dot(b) / (na * nb)).clamp(-1.0, 1.0).acos()
}

/// Distribution of the number of agreeing bits of `sign(R y₁)` and
/// `sign(R y₂)` over Gaussian `R` (`c` rows): per-trial counts.
pub fn agreement_counts(y1: &DVector<f64>, y2: &DVector<f64>, c: usize, n_trials: usize, seed: u64) -> Result<Vec<u32>> {
    ensure_dim("agreement pair", y1.len(), y2.len())?;
    let m = y1.len();
    let parts = chunked(n_trials, seed, "th3-trials", |rng, len| {
        (0..len)
            .map(|_| {
                let g = GaussianTransform::sample_with(c, m, seed, rng);
                let a = g.matrix() * y1;
                let b = g.matrix() * y2;
                a.iter().zip(b.iter()).filter(|(x, y)| (**x >= 0.0) == (**y >= 0.0)).count() as u32
            })
            .collect::<Vec<u32>>()
    });
    Ok(parts.concat())
}

/// Bit-agreement check on the boundary-case pair: the per-bit agreement rate
/// against `1 − θ/π` for the realized angle, and the tail `P[X < q]` against
/// `exp(−η²c/2)`.
pub fn verify_th3(params: &Th3Params, n_trials: usize, seed: u64) -> Result<Th3Report> {
    if n_trials == 0 {
        return Err(HqhError::invalid("th3 check needs at least one trial"));
    }
    let mut report = th3_quantities(params)?;
    let (y1, y2) = th3_boundary_pair(params)?;
    let c = params.c;
    let counts = agreement_counts(&y1, &y2, c, n_trials, seed)?;
    let theta_actual = angle(&y1, &y2);
    let expected_rate = 1.0 - theta_actual / PI;
    let agreement_rate = counts.iter().map(|&x| x as f64).sum::<f64>() / (n_trials * c) as f64;
    let agreement_se = binomial_se(expected_rate, n_trials * c);
    let empirical_tail = counts.iter().filter(|&&x| (x as f64) < report.q).count() as f64 / n_trials as f64;
    let tail_se = binomial_se(report.azuma_bound, n_trials);
    let pass = (agreement_rate - expected_rate).abs() <= 3.0 * agreement_se
        && empirical_tail <= report.azuma_bound + 3.0 * tail_se;
    report.empirical = Some(Th3Empirical {
        n_trials,
        theta_actual,
        agreement_rate,
        expected_rate,
        agreement_se,
        empirical_tail,
        tail_se,
        pass,
    });
    Ok(report)
}

/// Mean per-bit agreement of `sign(R y₁)`, `sign(R y₂)` for a planar pair at
/// angle `theta`.
pub fn agreement_rate_at_angle(theta: f64, c: usize, n_trials: usize, seed: u64) -> Result<f64> {
    let y1 = DVector::from_vec(vec![1.0, 0.0]);
    let y2 = DVector::from_vec(vec![theta.cos(), theta.sin()]);
    let counts = agreement_counts(&y1, &y2, c, n_trials, seed)?;
    Ok(counts.iter().map(|&x| x as f64).sum::<f64>() / (n_trials * c) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Provenance;

    // high-precision reference values
    const TH2_C32: f64 = 0.091_347_154_747_021_88;
    const NORMAL_MASS_01: f64 = 0.079_655_674_554_057_96;
    const TH3_A: f64 = 0.915_059_268_699_147_1;
    const TH3_Q: f64 = 49.142_807_250_131_65;

    fn th3_example() -> Th3Params {
        Th3Params { l: 1.0, delta: 0.01, eps_pca: 0.02, rho: 0.1, eta: 0.1, c: 64 }
    }

    #[test]
    fn spec_rejects_indefinite_matrix() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(GaussianDataSpec::new(bad, 0), Err(HqhError::NotPsd { .. })));
    }

    #[test]
    fn samples_follow_the_covariance() {
        let spec = GaussianDataSpec::isotropic(2, 1.0, 3).unwrap();
        let v = sample_h1(&spec, 1_000_000);
        let cov = &v * v.transpose() / 1e6;
        assert!((cov - DMatrix::<f64>::identity(2, 2)).amax() < 0.01);
        assert_eq!(v, sample_h1(&spec, 1_000_000));

        let zero = GaussianDataSpec::new(DMatrix::zeros(3, 3), 1).unwrap();
        assert!(sample_h1(&zero, 100).iter().all(|&x| x == 0.0));

        let sigma = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 2.0, 0.0, 0.5, 0.0, 1.0]);
        let spec = GaussianDataSpec::new(sigma.clone(), 5).unwrap();
        let n = 40_000;
        let v = sample_h1(&spec, n);
        let emp = &v * v.transpose() / n as f64;
        assert!((emp - &sigma).norm() <= 5.0 * (3.0 / n as f64).sqrt() * sigma.norm());
    }

    #[test]
    fn near_zero_cdf_cases() {
        let y = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 2.0, -0.1]);
        assert_eq!(near_zero_cdf(&y, &[0.0, 0.6, 3.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(near_zero_cdf(&y, &[0.5, 0.1]).is_err());

        let spec = GaussianDataSpec::isotropic(4, 1.0, 9).unwrap();
        let v = sample_h1(&spec, 250_000);
        let p = near_zero_cdf(&v, &[0.1]).unwrap()[0];
        assert!((p - NORMAL_MASS_01).abs() < 0.005, "{p}");
    }

    #[test]
    fn orthant_bound_identity_case() {
        let spec = GaussianDataSpec::isotropic(2, 1.0, 4).unwrap();
        let rep = verify_orthant_bound(&spec, &OrthogonalTransform::identity(2), 0.1, 200_000).unwrap();
        assert!((rep.analytic_bound[0] - 0.079_788_456_080_286_54).abs() < 1e-15);
        assert!(rep.pass);
        assert!((rep.empirical_p[0] - NORMAL_MASS_01).abs() < 0.003);
    }

    #[test]
    fn orthant_sums_and_trace_invariance() {
        let sigma = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let spec = GaussianDataSpec::new(sigma.clone(), 1).unwrap();
        let fit = unifdiag_fit(&CovarianceState::new(sigma.clone(), false).unwrap()).unwrap();
        let rep = verify_orthant_bound(&spec, &fit.transform, 0.05, 20_000).unwrap();
        assert!((rep.sum_inverse_gamma - 2.0 / 2.5f64.sqrt()).abs() < 1e-12);
        assert!((sum_inverse_gamma(&DMatrix::identity(2, 2), &sigma) - 1.5).abs() < 1e-15);
        for seed in 0..20 {
            let r = random_rotation(2, seed).unwrap();
            let g = rotated_gammas(r.matrix(), &sigma);
            assert!((g.iter().map(|x| x * x).sum::<f64>() - 5.0).abs() < 1e-10);
        }
    }

    #[test]
    fn uniformization_is_optimal() {
        let sigma = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let rep = check_uniformization_optimality(&GaussianDataSpec::new(sigma, 0).unwrap(), 500, 1).unwrap();
        assert!((rep.closed_form - 1.264_911_064_067_351_7).abs() < 1e-12);
        assert_eq!(rep.identity_sum, 1.5);
        assert!(rep.pass, "{rep:?}");

        let iso = GaussianDataSpec::isotropic(4, 2.0, 0).unwrap();
        let rep = check_uniformization_optimality(&iso, 50, 2).unwrap();
        assert!((rep.best_random_sum - 4.0 / 2f64.sqrt()).abs() < 1e-10);
        assert!(rep.pass);
    }

    #[test]
    fn th2_bound_formula() {
        assert!((th2_bound(32, 1000.0, 0.01) - TH2_C32).abs() < 1e-15);
        assert_eq!(th2_bound(8, 10.0, 0.0), 0.0);
        assert!((th2_bound(8, 10.0, 0.2) - 2.0 * th2_bound(8, 10.0, 0.1)).abs() < 1e-15);
    }

    #[test]
    fn th2_identical_pairs_never_differ() {
        let spec = GaussianDataSpec::isotropic(8, 10.0, 2).unwrap();
        let rep = verify_th2(&spec, &OrthogonalTransform::identity(8), 0.0, 10_000).unwrap();
        assert_eq!(rep.empirical, 0.0);
        assert!(rep.pass);
    }

    #[test]
    fn th2_holds_and_shrinks_with_epsilon() {
        let spec = GaussianDataSpec::isotropic(16, 10.0, 6).unwrap();
        let r = OrthogonalTransform::identity(16);
        let mut last = f64::INFINITY;
        for eps in [0.2, 0.1, 0.05] {
            let rep = verify_th2(&spec, &r, eps, 20_000).unwrap();
            assert!(rep.pass, "{rep:?}");
            assert!(rep.empirical <= last + 3.0 * rep.standard_error);
            last = rep.empirical;
        }
        let absurd = verify_th2(&spec, &r, 10.0, 2_000).unwrap();
        assert!(absurd.out_of_regime && absurd.pass);
    }

    #[test]
    fn th3_closed_form_cases() {
        let rep = th3_quantities(&Th3Params { l: 1.0, delta: 0.0, eps_pca: 0.0, rho: 0.0, eta: 0.1, c: 64 }).unwrap();
        assert_eq!((rep.a, rep.theta_max, rep.p), (1.0, 0.0, 1.0));
        assert!((rep.q - 64.0 * 0.9).abs() < 1e-12);

        let rep = th3_quantities(&Th3Params { l: 2.0, delta: 0.0, eps_pca: 0.0, rho: 2.0 * 2f64.sqrt(), eta: 0.1, c: 64 }).unwrap();
        assert!(rep.a.abs() < 1e-15);
        assert!((rep.theta_max - PI / 2.0).abs() < 1e-12);
        assert!((rep.q - 64.0 * 0.4).abs() < 1e-10);

        let rep = th3_quantities(&th3_example()).unwrap();
        assert!((rep.a - TH3_A).abs() < 1e-14);
        assert!((rep.q - TH3_Q).abs() < 1e-11);
        assert!(!rep.vacuous);

        let rep = th3_quantities(&Th3Params { rho: 5.0, ..th3_example() }).unwrap();
        assert!(rep.a_raw < -1.0 && rep.a == -1.0 && rep.vacuous);
    }

    #[test]
    fn th3_q_is_monotone_in_each_parameter() {
        let base = th3_example();
        let q = |p: Th3Params| th3_quantities(&p).unwrap().q;
        for k in 0..20 {
            let t = k as f64;
            assert!(q(Th3Params { rho: 0.01 * (t + 1.0), ..base.clone() }) <= q(Th3Params { rho: 0.01 * t, ..base.clone() }));
            assert!(q(Th3Params { eps_pca: 0.005 * (t + 1.0), ..base.clone() }) <= q(Th3Params { eps_pca: 0.005 * t, ..base.clone() }));
            assert!(q(Th3Params { delta: 0.005 * (t + 1.0), ..base.clone() }) <= q(Th3Params { delta: 0.005 * t, ..base.clone() }));
            assert!(q(Th3Params { eta: 0.01 * (t + 2.0), ..base.clone() }) <= q(Th3Params { eta: 0.01 * (t + 1.0), ..base.clone() }));
        }
    }

    #[test]
    fn boundary_pair_meets_the_constraints() {
        let p = th3_example();
        let (y1, y2) = th3_boundary_pair(&p).unwrap();
        // rebuild the ambient vectors: residuals along e_{c+1} and e_{c+2}
        let e = p.eps_pca;
        let r1 = p.l * e;
        let r2 = p.l * (1.0 + p.delta) * e;
        let n1 = (y1.norm_squared() + r1 * r1).sqrt();
        let n2 = (y2.norm_squared() + r2 * r2).sqrt();
        assert!((n1 - 1.0).abs() < 1e-12);
        assert!((n2 - 1.01).abs() < 1e-12);
        let dist = ((&y1 - &y2).norm_squared() + r1 * r1 + r2 * r2).sqrt();
        assert!((dist - p.rho).abs() < 1e-12);
        assert!(th3_boundary_pair(&Th3Params { rho: 3.0, ..p }).is_err());
    }

    #[test]
    fn identical_projections_always_agree() {
        let y = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let counts = agreement_counts(&y, &y, 16, 500, 1).unwrap();
        assert!(counts.iter().all(|&x| x == 16));
    }

    #[test]
    fn agreement_follows_the_angle() {
        for (theta, expected) in [(PI / 2.0, 0.5), (PI / 4.0, 0.75)] {
            let rate = agreement_rate_at_angle(theta, 64, 20_000, 3).unwrap();
            assert!((rate - expected).abs() < 0.005, "{theta}: {rate}");
        }
    }

    #[test]
    fn th3_verification_passes_on_the_example() {
        let rep = verify_th3(&th3_example(), 20_000, 8).unwrap();
        let emp = rep.empirical.as_ref().unwrap();
        assert!(emp.pass, "{emp:?}");
        let _ = Provenance::Identity;
    }
}
