//! Symmetric eigendecomposition (cyclic Jacobi) and the spectral diagnostics
//! built on it.

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Relative asymmetry `‖S − Sᵀ‖_F / ‖S‖_F` above which input is rejected.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Off-diagonal convergence threshold, relative to `‖S‖_F`.
pub const JACOBI_TOL: f64 = 1e-12;
pub const MAX_SWEEPS: usize = 100;
/// Singular values at or below this (absolute, or relative to `σ_max`) count
/// as zero in [`condition_number`].
pub const ZERO_SINGULAR: f64 = 1e-14;

/// Eigenvalues in descending order with matching orthonormal eigenvector
/// columns.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub values: Vec<f64>,
    pub vectors: DenseMatrix,
}

impl EigenPair {
    /// `vectors · diag(f(values)) · vectorsᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for c in 0..n {
            let s = f(self.values[c]);
            for r in 0..n {
                scaled[(r, c)] *= s;
            }
        }
        scaled.matmul_nt(&self.vectors)
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        self.reconstruct_with(|x| x)
    }
}

/// Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eig(s: &DenseMatrix) -> Result<EigenPair> {
    if !s.is_square() {
        return Err(Error::ShapeMismatch {
            expected: (s.rows(), s.rows()),
            got: s.shape(),
        });
    }
    let n = s.rows();
    let norm = s.frobenius_norm();
    let asym = s.sub(&s.transpose()).frobenius_norm();
    if norm > 0.0 && asym / norm > SYMMETRY_TOL {
        return Err(Error::NonSymmetric(asym / norm));
    }

    let mut a = s.clone();
    a.symmetrize();
    let mut v = DenseMatrix::identity(n);
    let threshold = JACOBI_TOL * norm;

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) <= threshold {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
    }
    if !converged && off_diagonal_norm(&a) > threshold {
        return Err(Error::NonConvergence(MAX_SWEEPS));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DenseMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(EigenPair { values, vectors })
}

fn off_diagonal_norm(a: &DenseMatrix) -> f64 {
    let n = a.rows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[(i, j)] * a[(i, j)];
            }
        }
    }
    sum.sqrt()
}

/// Applies the rotation in the (p, q) plane that annihilates `a[p][q]`:
/// `A ← Jᵀ A J`, `V ← V J`.
fn rotate(a: &mut DenseMatrix, v: &mut DenseMatrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let n = a.rows();
    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Singular values (descending, length `min(rows, cols)`) as square roots of
/// the eigenvalues of the smaller Gram matrix, clamped at zero.
pub fn singular_values(m: &DenseMatrix) -> Result<Vec<f64>> {
    let gram = if m.rows() <= m.cols() {
        m.gram_rows()
    } else {
        m.gram_cols()
    };
    let eig = symmetric_eig(&gram)?;
    Ok(eig.values.iter().map(|&l| l.max(0.0).sqrt()).collect())
}

/// `σ_max / σ_min`, or `+∞` when `σ_min` is numerically zero.
pub fn condition_number(m: &DenseMatrix) -> Result<f64> {
    let sv = singular_values(m)?;
    let max = sv[0];
    let min = *sv.last().unwrap();
    if max <= ZERO_SINGULAR {
        return Err(Error::ZeroMatrix);
    }
    if min < ZERO_SINGULAR * max {
        return Ok(f64::INFINITY);
    }
    Ok(max / min)
}
