//! Diagonal uniformization by a sequence of `c − 1` Givens rotations.
//!
//! Each step pairs the smallest and largest diagonal entries among the
//! indices not yet at `τ`, then rotates in that plane so the smaller entry
//! lands exactly on `τ`. Because the remaining indices always average to
//! `τ`, the pair straddles `τ` and a solution angle always exists.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use nalgebra::DMatrix;

use crate::covariance::{symmetrize, CovarianceState};
use crate::error::{HqhError, Result};
use crate::model::{OrthogonalTransform, Provenance};

/// Plane rotation `G(i, j, θ)` with `i > j`: `g_ii = g_jj = cos θ`,
/// `g_ij = sin θ`, `g_ji = −sin θ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GivensStep {
    pub i: usize,
    pub j: usize,
    pub theta: f64,
}

impl GivensStep {
    pub fn new(i: usize, j: usize, theta: f64) -> Result<Self> {
        if i <= j {
            return Err(HqhError::invalid(format!(
                "givens step needs i > j, got ({i}, {j})"
            )));
        }
        if !theta.is_finite() {
            return Err(HqhError::invalid("givens angle is not finite"));
        }
        Ok(GivensStep { i, j, theta })
    }

    /// Dense `c × c` embedding.
    pub fn matrix(&self, c: usize) -> DMatrix<f64> {
        let mut g = DMatrix::identity(c, c);
        let (s, co) = self.theta.sin_cos();
        g[(self.i, self.i)] = co;
        g[(self.j, self.j)] = co;
        g[(self.i, self.j)] = s;
        g[(self.j, self.i)] = -s;
        g
    }

    /// `M ← G M` (touches rows `i` and `j` only).
    pub(crate) fn rotate_rows(&self, m: &mut DMatrix<f64>) {
        let (s, co) = self.theta.sin_cos();
        for k in 0..m.ncols() {
            let mj = m[(self.j, k)];
            let mi = m[(self.i, k)];
            m[(self.j, k)] = co * mj - s * mi;
            m[(self.i, k)] = s * mj + co * mi;
        }
    }

    /// `M ← M Gᵀ` (touches columns `i` and `j` only).
    pub(crate) fn rotate_cols(&self, m: &mut DMatrix<f64>) {
        let (s, co) = self.theta.sin_cos();
        for k in 0..m.nrows() {
            let mj = m[(k, self.j)];
            let mi = m[(k, self.i)];
            m[(k, self.j)] = co * mj - s * mi;
            m[(k, self.i)] = s * mj + co * mi;
        }
    }
}

/// `G Σ Gᵀ`.
pub fn apply_givens_similarity(sigma: &DMatrix<f64>, step: &GivensStep) -> Result<DMatrix<f64>> {
    let c = sigma.nrows();
    if sigma.ncols() != c {
        return Err(HqhError::invalid("givens similarity needs a square matrix"));
    }
    if step.i >= c || step.j >= step.i {
        return Err(HqhError::invalid(format!(
            "givens indices ({}, {}) out of range for size {c}",
            step.i, step.j
        )));
    }
    let mut out = sigma.clone();
    step.rotate_rows(&mut out);
    step.rotate_cols(&mut out);
    // rows/cols i, j are rotated twice in the 2x2 block; restore exact symmetry
    let (i, j) = (step.i, step.j);
    let off = 0.5 * (out[(i, j)] + out[(j, i)]);
    out[(i, j)] = off;
    out[(j, i)] = off;
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct UnifDiagFit {
    pub transform: OrthogonalTransform,
    pub steps: Vec<GivensStep>,
    /// `max_k |Σ_kk − τ|` after each step.
    pub residual_after: Vec<f64>,
    /// `R Σ_V Rᵀ` accumulated through the similarity updates.
    pub final_sigma: DMatrix<f64>,
    pub tau: f64,
}

/// Slack allowed when checking that the target offset is reachable.
const FEASIBILITY_SLACK: f64 = 1e-10;

pub fn unifdiag_fit(cov: &CovarianceState) -> Result<UnifDiagFit> {
    let c = cov.dim();
    let tau = cov.tau();
    let mut sigma = cov.sigma().clone();
    let mut r = DMatrix::<f64>::identity(c, c);
    let mut steps = Vec::with_capacity(c.saturating_sub(1));
    let mut residual_after = Vec::with_capacity(c.saturating_sub(1));
    let mut active: Vec<usize> = (0..c).collect();

    while active.len() > 1 {
        let (lo, hi) = pivots(&sigma, &active);
        let (step, driven) = solve_step(&sigma, lo, hi, tau)?;
        sigma = apply_givens_similarity(&sigma, &step)?;
        step.rotate_rows(&mut r);
        active.retain(|&k| k != driven);
        residual_after.push(
            (0..c)
                .map(|k| (sigma[(k, k)] - tau).abs())
                .fold(0.0, f64::max),
        );
        steps.push(step);
    }

    Ok(UnifDiagFit {
        transform: OrthogonalTransform::new(r, Provenance::UnifDiag)?,
        steps,
        residual_after,
        final_sigma: symmetrize(sigma),
        tau,
    })
}

/// Indices of the smallest and largest diagonal entries among `active`,
/// lowest index winning ties. If every active entry is equal, the first two
/// active indices are paired.
fn pivots(sigma: &DMatrix<f64>, active: &[usize]) -> (usize, usize) {
    let mut lo = active[0];
    let mut hi = active[0];
    for &k in &active[1..] {
        if sigma[(k, k)] < sigma[(lo, lo)] {
            lo = k;
        }
        if sigma[(k, k)] > sigma[(hi, hi)] {
            hi = k;
        }
    }
    if lo == hi {
        hi = active[1];
    }
    (lo, hi)
}

/// Angle that drives `Σ[lo, lo]` to `τ` in the `(lo, hi)` plane, choosing the
/// root of smallest magnitude.
fn solve_step(sigma: &DMatrix<f64>, lo: usize, hi: usize, tau: f64) -> Result<(GivensStep, usize)> {
    let (i, j) = if lo > hi { (lo, hi) } else { (hi, lo) };
    let p = sigma[(j, j)];
    let q = sigma[(i, i)];
    let o = sigma[(i, j)];
    // rotated driven entry = mean + a cos 2θ + b sin 2θ
    let (a, b) = if lo == j {
        (0.5 * (p - q), -o)
    } else {
        (0.5 * (q - p), o)
    };
    let target = tau - 0.5 * (p + q);
    let radius = a.hypot(b);
    let scale = p.abs().max(q.abs()).max(tau.abs());

    // the pair straddles τ, so |target| ≤ |a| ≤ radius
    if target.abs() > a.abs() + FEASIBILITY_SLACK * scale {
        return Err(HqhError::Invariant(format!(
            "pivot pair ({p}, {q}) does not straddle tau = {tau}"
        )));
    }

    let theta = if radius <= f64::MIN_POSITIVE {
        0.0
    } else {
        let ratio = target / radius;
        if ratio.abs() > 1.0 + FEASIBILITY_SLACK {
            return Err(HqhError::Invariant(format!(
                "target offset {target:e} exceeds reachable radius {radius:e}"
            )));
        }
        let alpha = ratio.clamp(-1.0, 1.0).acos();
        let phi = b.atan2(a);
        let t1 = wrap_half_turn(0.5 * (phi + alpha));
        let t2 = wrap_half_turn(0.5 * (phi - alpha));
        if t2.abs() < t1.abs() {
            t2
        } else {
            t1
        }
    };
    Ok((GivensStep::new(i, j, theta)?, lo))
}

/// Maps an angle into `(−π/2, π/2]`; `θ` and `θ ± π` give the same similarity.
fn wrap_half_turn(mut t: f64) -> f64 {
    while t > FRAC_PI_2 {
        t -= PI;
    }
    while t <= -FRAC_PI_2 {
        t += PI;
    }
    t
}

/// Diagnostic export with columns `r, i, j, theta, residual_after`.
pub fn write_steps_csv<W: Write>(fit: &UnifDiagFit, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let map = |e: csv::Error| HqhError::invalid(format!("csv write failed: {e}"));
    w.write_record(["r", "i", "j", "theta", "residual_after"]).map_err(map)?;
    for (r, (step, res)) in fit.steps.iter().zip(&fit.residual_after).enumerate() {
        w.write_record([
            (r + 1).to_string(),
            step.i.to_string(),
            step.j.to_string(),
            format!("{:.17e}", step.theta),
            format!("{res:.17e}"),
        ])
        .map_err(map)?;
    }
    w.flush().map_err(|e| HqhError::invalid(format!("csv flush failed: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::FRAC_PI_8;

    fn cov(rows: &[f64], c: usize) -> CovarianceState {
        CovarianceState::new(DMatrix::from_row_slice(c, c, rows), false).unwrap()
    }

    fn random_psd(c: usize, seed: u64) -> CovarianceState {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(c, c + 3, |i, _| {
            (1.0 + i as f64) * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        crate::covariance::covariance_of(&g, false).unwrap()
    }

    #[test]
    fn givens_matrix_is_orthogonal() {
        let g = GivensStep::new(3, 1, 0.7).unwrap().matrix(5);
        assert!(linalg::row_orthonormality_residual(&g) < 1e-15);
        assert!(GivensStep::new(1, 3, 0.7).is_err());
    }

    #[test]
    fn similarity_zero_angle_and_swap() {
        let s = DMatrix::from_row_slice(2, 2, &[5.0, 0.0, 0.0, 2.0]);
        let zero = apply_givens_similarity(&s, &GivensStep::new(1, 0, 0.0).unwrap()).unwrap();
        assert_eq!(zero, s);
        let swapped = apply_givens_similarity(&s, &GivensStep::new(1, 0, FRAC_PI_2).unwrap()).unwrap();
        assert!((swapped - DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 5.0])).norm() < 1e-14);
    }

    #[test]
    fn similarity_matches_dense_product_and_keeps_spectrum() {
        let s = random_psd(5, 3).sigma().clone();
        let step = GivensStep::new(4, 1, 0.37).unwrap();
        let g = step.matrix(5);
        let fast = apply_givens_similarity(&s, &step).unwrap();
        assert!((&fast - &g * &s * g.transpose()).norm() < 1e-12 * s.norm());
        // rows/cols other than i, j are untouched
        for a in [0, 2, 3] {
            for b in [0, 2, 3] {
                assert_eq!(fast[(a, b)], s[(a, b)]);
            }
        }
        assert!((fast.trace() - s.trace()).abs() < 1e-12 * s.trace());
        let e0 = linalg::sym_eigen(&s).unwrap().values;
        let e1 = linalg::sym_eigen(&fast).unwrap().values;
        assert!((e0 - e1).amax() < 1e-10 * s.norm());
    }

    #[test]
    fn similarity_rejects_bad_indices() {
        let s = DMatrix::<f64>::identity(3, 3);
        assert!(apply_givens_similarity(&s, &GivensStep { i: 3, j: 0, theta: 0.1 }).is_err());
    }

    #[test]
    fn uniform_diagonal_needs_no_rotation() {
        let fit = unifdiag_fit(&cov(&[3.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 3.0], 3)).unwrap();
        assert_eq!(fit.steps.len(), 2);
        assert!(fit.steps.iter().all(|s| s.theta == 0.0));
        assert_eq!(fit.transform.matrix(), &DMatrix::<f64>::identity(3, 3));
        let fit = unifdiag_fit(&cov(&[2.0, 0.5, 0.5, 2.0], 2)).unwrap();
        assert_eq!(fit.steps[0].theta, 0.0);
    }

    #[test]
    fn two_by_two_closed_form() {
        // grid oracle: bracket sign changes of Σ'_11(θ) − τ on a 1e−6 grid
        // over (−π/2, π/2] and keep the root of smallest magnitude
        let s = [[4.0, 1.0], [1.0, 2.0]];
        let g = |t: f64| {
            let (sn, c) = t.sin_cos();
            sn * sn * s[0][0] + 2.0 * sn * c * s[0][1] + c * c * s[1][1] - 3.0
        };
        let n = 3_141_593;
        let h = PI / n as f64;
        let mut root = f64::INFINITY;
        let mut prev = (-FRAC_PI_2, g(-FRAC_PI_2));
        for k in 1..=n {
            let t = -FRAC_PI_2 + h * k as f64;
            let v = g(t);
            if prev.1 == 0.0 || prev.1.signum() != v.signum() {
                let r = prev.0 - prev.1 * (t - prev.0) / (v - prev.1);
                if r.abs() < root.abs() {
                    root = r;
                }
            }
            prev = (t, v);
        }
        assert!((root - FRAC_PI_8).abs() < 1e-6, "grid root {root}");

        let fit = unifdiag_fit(&cov(&[4.0, 1.0, 1.0, 2.0], 2)).unwrap();
        assert_eq!(fit.tau, 3.0);
        assert_eq!(fit.steps.len(), 1);
        assert!((fit.steps[0].theta - FRAC_PI_8).abs() < 1e-12);
        assert!((fit.final_sigma[(0, 0)] - 3.0).abs() < 1e-12);
        assert!((fit.final_sigma[(1, 1)] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn three_by_three_diagonal() {
        let fit = unifdiag_fit(&cov(&[6.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 0.0], 3)).unwrap();
        assert_eq!(fit.tau, 3.0);
        assert_eq!(fit.steps.len(), 2);
        for k in 0..3 {
            assert!((fit.final_sigma[(k, k)] - 3.0).abs() < 1e-12);
        }
        assert!((fit.final_sigma.trace() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn one_by_one_is_identity() {
        let fit = unifdiag_fit(&cov(&[7.0], 1)).unwrap();
        assert!(fit.steps.is_empty());
        assert_eq!(fit.transform.matrix()[(0, 0)], 1.0);
    }

    #[test]
    fn uniformizes_random_covariances() {
        for c in [2, 4, 8, 16, 32, 64] {
            for seed in 0..10 {
                let cv = random_psd(c, seed * 100 + c as u64);
                let fit = unifdiag_fit(&cv).unwrap();
                let tau = cv.tau();
                assert_eq!(fit.steps.len(), c - 1);
                let diag_err = (0..c)
                    .map(|k| (fit.final_sigma[(k, k)] - tau).abs())
                    .fold(0.0, f64::max);
                assert!(diag_err <= 1e-8 * tau, "c = {c}: {diag_err:e}");
                assert!((fit.final_sigma.trace() - cv.trace()).abs() <= 1e-10 * cv.trace());
                let r = fit.transform.matrix();
                let dense = r * cv.sigma() * r.transpose();
                assert!((dense - &fit.final_sigma).amax() <= 1e-8 * tau);
            }
        }
    }

    #[test]
    fn each_step_fixes_one_more_entry() {
        let cv = random_psd(9, 5);
        let tau = cv.tau();
        let mut sigma = cv.sigma().clone();
        let fit = unifdiag_fit(&cv).unwrap();
        for (r, step) in fit.steps.iter().enumerate() {
            sigma = apply_givens_similarity(&sigma, step).unwrap();
            let at_tau = (0..9).filter(|&k| (sigma[(k, k)] - tau).abs() <= 1e-8 * tau).count();
            assert!(at_tau > r, "step {r}: {at_tau}");
        }
    }

    #[test]
    fn csv_export_has_one_row_per_step() {
        let fit = unifdiag_fit(&random_psd(4, 1)).unwrap();
        let mut buf = Vec::new();
        write_steps_csv(&fit, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "r,i,j,theta,residual_after");
        assert_eq!(lines.len(), 4);
    }
}
