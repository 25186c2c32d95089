//! Reference methods ONI is compared against: eigendecomposition-based
//! orthogonalization, spectral normalization and weight normalization.

use crate::error::{Error, Result};
use crate::matrix::{dot, DenseMatrix};
use crate::rng::{gaussian_vec, seeded};
use crate::spectral::symmetric_eig;

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const PSEUDO_INVERSE_CUTOFF: f64 = 1e-12;

/// `D Λ^{−1/2} Dᵀ V` with `V Vᵀ = D Λ Dᵀ`. Directions with negligible
/// eigenvalues are dropped rather than inverted, so rank-deficient inputs
/// come back with orthonormal columns.
pub fn olm_orthogonalize(v: &DenseMatrix) -> Result<DenseMatrix> {
    if v.max_abs() == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    // Same result on the smaller Gram: V (VᵀV)^{-1/2} = (VVᵀ)^{-1/2} V.
    let tall = v.rows() > v.cols();
    let gram = if tall { v.gram_cols() } else { v.gram_rows() };
    let eig = symmetric_eig(&gram)?;
    let cutoff = PSEUDO_INVERSE_CUTOFF * eig.values[0];
    let inv_sqrt = eig.reconstruct_with(|l| if l > cutoff { 1.0 / l.sqrt() } else { 0.0 });
    Ok(if tall { v.matmul(&inv_sqrt) } else { inv_sqrt.matmul(v) })
}

/// Persistent power-iteration vectors for one weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SnState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub initialized: bool,
    /// Seed for the Gaussian draw of `u` on first use.
    pub seed: u64,
}

impl SnState {
    pub fn new(seed: u64) -> Self {
        Self {
            u: Vec::new(),
            v: Vec::new(),
            initialized: false,
            seed,
        }
    }
}

fn normalize(x: &mut [f64]) -> f64 {
    let norm = dot(x, x).sqrt();
    if norm > 0.0 {
        x.iter_mut().for_each(|e| *e /= norm);
    }
    norm
}

fn mat_vec(w: &DenseMatrix, x: &[f64]) -> Vec<f64> {
    (0..w.rows()).map(|r| dot(w.row(r), x)).collect()
}

fn mat_t_vec(w: &DenseMatrix, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.cols()];
    for (r, &xr) in x.iter().enumerate() {
        for (o, &wv) in out.iter_mut().zip(w.row(r)) {
            *o += xr * wv;
        }
    }
    out
}

/// Runs `n_iters` power steps from the stored vectors and returns
/// `W / σ̂` with `σ̂ = uᵀ W v`.
pub fn spectral_normalize(w: &DenseMatrix, state: &mut SnState, n_iters: usize) -> Result<DenseMatrix> {
    if n_iters == 0 {
        return Err(Error::Config(
            "spectral normalization needs at least one power step".into(),
        ));
    }
    if w.max_abs() == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    if !state.initialized || state.u.len() != w.rows() || state.v.len() != w.cols() {
        let mut rng = seeded(state.seed, 0);
        state.u = gaussian_vec(&mut rng, w.rows());
        normalize(&mut state.u);
        state.v = vec![0.0; w.cols()];
        state.initialized = true;
    }
    for _ in 0..n_iters {
        let mut v = mat_t_vec(w, &state.u);
        if normalize(&mut v) == 0.0 {
            // u is orthogonal to the range of W; restart from a fixed direction.
            v = vec![0.0; w.cols()];
            v[0] = 1.0;
        }
        let mut u = mat_vec(w, &v);
        normalize(&mut u);
        state.u = u;
        state.v = v;
    }
    let sigma = dot(&state.u, &mat_vec(w, &state.v));
    if sigma.abs() <= f64::MIN_POSITIVE {
        return Err(Error::ZeroMatrix);
    }
    Ok(w.scale(1.0 / sigma))
}

/// Divides every row by its Euclidean norm.
pub fn weight_normalize(w: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(weight_normalize_with_norms(w)?.0)
}

/// As [`weight_normalize`], also returning the row norms.
pub fn weight_normalize_with_norms(w: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>)> {
    let mut out = w.clone();
    let mut norms = Vec::with_capacity(w.rows());
    for r in 0..w.rows() {
        let row = out.row_mut(r);
        let norm = dot(row, row).sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroRow(r));
        }
        row.iter_mut().for_each(|x| *x /= norm);
        norms.push(norm);
    }
    Ok((out, norms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oni::{delta_col, delta_row, oni_forward, OniConfig};
    use crate::rng::gaussian_matrix;
    use crate::spectral::singular_values;

    #[test]
    fn olm_examples() {
        let i3 = DenseMatrix::identity(3);
        assert!(olm_orthogonalize(&i3).unwrap().sub(&i3).max_abs() < 1e-15);
        let out = olm_orthogonalize(&DenseMatrix::diag(&[2.0, 5.0])).unwrap();
        assert!(out.sub(&DenseMatrix::identity(2)).max_abs() < 1e-14);
        assert_eq!(olm_orthogonalize(&DenseMatrix::zeros(2, 3)), Err(Error::ZeroMatrix));
    }

    #[test]
    fn olm_full_rank_rows_orthonormal() {
        let v = gaussian_matrix(&mut seeded(1, 0), 6, 11, 0.0, 1.0);
        assert!(delta_row(&olm_orthogonalize(&v).unwrap()) < 1e-10);
    }

    #[test]
    fn olm_matches_converged_oni() {
        let mut rng = seeded(2, 0);
        for _ in 0..3 {
            let z = gaussian_matrix(&mut rng, 8, 32, 0.0, 1.0);
            let cfg = OniConfig::basic(30);
            let (w, cache) = oni_forward(&z, &cfg).unwrap();
            let olm = olm_orthogonalize(&cache.v).unwrap();
            assert!(olm.sub(&w).frobenius_norm() <= 1e-5);
        }
    }

    #[test]
    fn olm_rank_deficient_tall() {
        let v = gaussian_matrix(&mut seeded(3, 0), 20, 6, 0.0, 1.0);
        let out = olm_orthogonalize(&v).unwrap();
        assert!(out.is_finite());
        assert!(delta_col(&out) <= 1e-8);
        // Duplicated rows make the wide problem rank-deficient too.
        let half = gaussian_matrix(&mut seeded(4, 0), 3, 9, 0.0, 1.0);
        let dup = DenseMatrix::vstack(&[half.clone(), half]);
        assert!(olm_orthogonalize(&dup).unwrap().is_finite());
    }

    #[test]
    fn sn_isotropic_and_diagonal() {
        let mut state = SnState::new(5);
        let out = spectral_normalize(&DenseMatrix::identity(4).scale(3.0), &mut state, 1).unwrap();
        assert!(out.sub(&DenseMatrix::identity(4)).max_abs() < 1e-14);
        assert!(state.initialized);

        let mut state = SnState::new(6);
        let out = spectral_normalize(&DenseMatrix::diag(&[4.0, 1.0]), &mut state, 60).unwrap();
        assert!(out.sub(&DenseMatrix::diag(&[1.0, 0.25])).max_abs() < 1e-12);
    }

    #[test]
    fn sn_pins_top_singular_value_only() {
        let w = gaussian_matrix(&mut seeded(7, 0), 16, 16, 0.0, 1.0);
        let mut state = SnState::new(8);
        let out = spectral_normalize(&w, &mut state, 50).unwrap();
        let before = singular_values(&w).unwrap();
        let after = singular_values(&out).unwrap();
        assert!((after[0] - 1.0).abs() <= 1e-4);
        // Uniform division keeps the spectrum's shape.
        for (a, b) in after.iter().zip(&before) {
            assert!((a * before[0] - b).abs() <= 1e-3 * before[0]);
        }
    }

    #[test]
    fn sn_state_persists_across_calls() {
        let w = gaussian_matrix(&mut seeded(9, 0), 5, 8, 0.0, 1.0);
        let mut a = SnState::new(1);
        spectral_normalize(&w, &mut a, 1).unwrap();
        spectral_normalize(&w, &mut a, 1).unwrap();
        let mut b = SnState::new(1);
        spectral_normalize(&w, &mut b, 2).unwrap();
        assert_eq!(a, b);
        assert!(spectral_normalize(&w, &mut b, 0).is_err());
    }

    #[test]
    fn wn_examples() {
        let out = weight_normalize(&DenseMatrix::from_rows(&[vec![3.0, 4.0]]).unwrap()).unwrap();
        assert!((out[(0, 0)] - 0.6).abs() < 1e-15 && (out[(0, 1)] - 0.8).abs() < 1e-15);
        assert_eq!(
            weight_normalize(&DenseMatrix::identity(2)).unwrap(),
            DenseMatrix::identity(2)
        );

        let w = gaussian_matrix(&mut seeded(10, 0), 4, 7, 0.0, 1.0);
        let out = weight_normalize(&w).unwrap();
        for r in 0..4 {
            assert!((dot(out.row(r), out.row(r)).sqrt() - 1.0).abs() <= 1e-12);
        }
        let zero_row = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(weight_normalize(&zero_row), Err(Error::ZeroRow(1)));
    }
}
