//! Small dense kernels: fixed-order dot products, cyclic Jacobi symmetric
//! eigendecomposition and one-sided Jacobi SVD.
//!
//! The Jacobi routines are meant for `c × c` matrices with `c ≤ 64`; large
//! eigenproblems go through nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{HqhError, Result};

const LANES: usize = 8;

/// Dot product with a fixed eight-lane summation order.
///
/// The order is part of the contract: single-point and bulk encoding both go
/// through this routine, so their signs agree bit for bit.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    reduce(acc) + tail
}

/// Squared Euclidean distance, same summation order as [`dot`].
#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..LANES {
            let d = x[l] - y[l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        let d = x - y;
        tail += d * d;
    }
    reduce(acc) + tail
}

#[inline]
fn reduce(acc: [f64; LANES]) -> f64 {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

/// `‖M Mᵀ − I‖_F` (row orthonormality).
pub fn row_orthonormality_residual(m: &DMatrix<f64>) -> f64 {
    let g = m * m.transpose();
    identity_residual(&g)
}

/// `‖Mᵀ M − I‖_F` (column orthonormality).
pub fn col_orthonormality_residual(m: &DMatrix<f64>) -> f64 {
    let g = m.transpose() * m;
    identity_residual(&g)
}

fn identity_residual(g: &DMatrix<f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..g.ncols() {
        for i in 0..g.nrows() {
            let e = g[(i, j)] - if i == j { 1.0 } else { 0.0 };
            s += e * e;
        }
    }
    s.sqrt()
}

/// Relative asymmetry `‖M − Mᵀ‖_F / ‖M‖_F` (0 for the zero matrix).
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let norm = m.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).norm() / norm
}

/// Symmetric eigendecomposition `A = V diag(values) Vᵀ`, eigenvalues sorted
/// in decreasing order, eigenvectors as columns of `vectors`.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

pub const JACOBI_TOL: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 30;

/// Cyclic Jacobi eigenvalue algorithm for a symmetric matrix.
///
/// Stops once the off-diagonal Frobenius norm falls below
/// `JACOBI_TOL · ‖A‖_F`, then runs one polishing sweep.
pub fn sym_eigen(a: &DMatrix<f64>) -> Result<SymEigen> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(HqhError::invalid("sym_eigen needs a square matrix"));
    }
    crate::error::ensure_finite(a.as_slice(), "symmetric eigenproblem")?;
    let mut m = a.clone();
    // symmetrize against caller roundoff
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = m.norm();
    let mut converged = n < 2 || scale == 0.0;
    let mut polish = 1;
    let mut sweep = 0;
    while !converged || polish > 0 {
        if converged {
            polish -= 1;
        }
        if sweep >= JACOBI_MAX_SWEEPS {
            if converged {
                break;
            }
            return Err(HqhError::NoConvergence {
                method: "jacobi eigensolver",
                iterations: sweep,
            });
        }
        sweep += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate_sym(&mut m, p, q, c, s);
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        if !converged {
            converged = off_diagonal_norm(&m) <= JACOBI_TOL * scale;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]).then(i.cmp(&j)));
    let values = DVector::from_iterator(n, order.iter().map(|&i| m[(i, i)]));
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymEigen { values, vectors })
}

/// Applies the Jacobi rotation `J(p, q)` as `Jᵀ M J` that zeroes `M[p,q]`.
fn rotate_sym(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    let n = m.nrows();
    for k in 0..n {
        let mkp = m[(k, p)];
        let mkq = m[(k, q)];
        m[(k, p)] = c * mkp - s * mkq;
        m[(k, q)] = s * mkp + c * mkq;
    }
    for k in 0..n {
        let mpk = m[(p, k)];
        let mqk = m[(q, k)];
        m[(p, k)] = c * mpk - s * mqk;
        m[(q, k)] = s * mpk + c * mqk;
    }
    m[(p, q)] = 0.0;
    m[(q, p)] = 0.0;
}

fn off_diagonal_norm(m: &DMatrix<f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if i != j {
                s += m[(i, j)] * m[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Thin singular value decomposition `A = U diag(s) Vᵀ` with `s` decreasing.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

/// One-sided (Hestenes) Jacobi SVD of an `m × n` matrix with `m ≥ n`.
///
/// Columns of `U` belonging to zero singular values are completed to an
/// orthonormal set, so `U` always has orthonormal columns.
pub fn svd(a: &DMatrix<f64>) -> Result<Svd> {
    let (m, n) = a.shape();
    if m < n {
        return Err(HqhError::invalid("svd expects at least as many rows as columns"));
    }
    crate::error::ensure_finite(a.as_slice(), "svd input")?;
    let mut u = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    // rotation threshold at the rounding floor of the column dot products
    let tol = m as f64 * f64::EPSILON;
    let negligible = (f64::EPSILON * a.norm()).powi(2);
    let mut sweep = 0;
    loop {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let up = u.column(p);
                    let uq = u.column(q);
                    (up.dot(&up), uq.dot(&uq), up.dot(&uq))
                };
                if alpha <= negligible || beta <= negligible || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..m {
                    let x = u[(k, p)];
                    let y = u[(k, q)];
                    u[(k, p)] = c * x - s * y;
                    u[(k, q)] = s * x + c * y;
                }
                for k in 0..n {
                    let x = v[(k, p)];
                    let y = v[(k, q)];
                    v[(k, p)] = c * x - s * y;
                    v[(k, q)] = s * x + c * y;
                }
            }
        }
        sweep += 1;
        if !rotated {
            break;
        }
        if sweep >= 2 * JACOBI_MAX_SWEEPS {
            return Err(HqhError::NoConvergence {
                method: "jacobi svd",
                iterations: sweep,
            });
        }
    }

    let norms: Vec<f64> = (0..n).map(|j| u.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let smax = norms.iter().cloned().fold(0.0, f64::max);
    let cutoff = smax * (m.max(n) as f64) * f64::EPSILON;

    let mut u_out = DMatrix::<f64>::zeros(m, n);
    let mut s_out = DVector::<f64>::zeros(n);
    let mut v_out = DMatrix::<f64>::zeros(n, n);
    let mut missing = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        v_out.set_column(dst, &v.column(src));
        let sigma = norms[src];
        if sigma > cutoff && sigma > 0.0 {
            s_out[dst] = sigma;
            u_out.set_column(dst, &(u.column(src) / sigma));
        } else {
            missing.push(dst);
        }
    }
    complete_orthonormal_columns(&mut u_out, &missing);
    Ok(Svd {
        u: u_out,
        singular_values: s_out,
        v: v_out,
    })
}

/// Fills the listed columns so that all columns are orthonormal, trying
/// canonical axes in order with two rounds of Gram–Schmidt.
fn complete_orthonormal_columns(u: &mut DMatrix<f64>, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let (m, n) = u.shape();
    let mut filled: Vec<usize> = (0..n).filter(|j| !missing.contains(j)).collect();
    let mut axis = 0;
    for &col in missing {
        while axis < m {
            let mut cand = DVector::<f64>::zeros(m);
            cand[axis] = 1.0;
            axis += 1;
            for _ in 0..2 {
                for &f in &filled {
                    let proj = u.column(f).dot(&cand);
                    cand -= u.column(f) * proj;
                }
            }
            let norm = cand.norm();
            if norm > 1e-8 {
                u.set_column(col, &(cand / norm));
                filled.push(col);
                break;
            }
        }
    }
}

/// Modified Gram–Schmidt on the columns of `m`, in place. Returns the number
/// of columns whose norm collapsed (left as computed, not normalized).
pub fn orthonormalize_columns(m: &mut DMatrix<f64>) -> usize {
    let n = m.ncols();
    let mut collapsed = 0;
    for j in 0..n {
        for _ in 0..2 {
            for k in 0..j {
                let proj = m.column(k).dot(&m.column(j));
                let ck = m.column(k).clone_owned();
                let mut cj = m.column_mut(j);
                cj.axpy(-proj, &ck, 1.0);
            }
        }
        let norm = m.column(j).norm();
        if norm > 0.0 {
            m.column_mut(j).unscale_mut(norm);
        } else {
            collapsed += 1;
        }
    }
    collapsed
}
