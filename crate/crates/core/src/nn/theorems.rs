//! Monte-Carlo checks of the signal-propagation properties of an orthogonal
//! linear map `ĥ = W x`, and of the ReLU Jacobian with scaled weights.

use crate::error::Result;
use crate::matrix::{dot, DenseMatrix};
use crate::oni::{oni_forward, OniConfig};
use crate::rng::{gaussian_matrix, gaussian_vec, seeded};

pub const THEOREM_ITERATIONS: usize = 30;

/// Converged ONI weight (no centering, compact bounding) from a Gaussian
/// proxy drawn with `seed`.
pub fn orthogonal_weight(n: usize, d: usize, scale: f64, seed: u64) -> Result<DenseMatrix> {
    let z = gaussian_matrix(&mut seeded(seed, 0), n, d, 0.0, 1.0);
    let cfg = OniConfig::basic(THEOREM_ITERATIONS)
        .with_flags(false, true)
        .with_scale(scale);
    Ok(oni_forward(&z, &cfg)?.0)
}

/// Deviations measured for each property; `None` where the shape does not
/// make the property hold.
#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Report {
    pub n: usize,
    pub d: usize,
    pub samples: usize,
    /// Max `|‖ĥ‖ − ‖x‖|` (needs `n ≥ d`).
    pub norm_dev: Option<f64>,
    /// Max entrywise `|mean(ĥ)|` and `|cov(ĥ) − I|` (needs `n ≤ d`).
    pub mean_dev: Option<f64>,
    pub cov_dev: Option<f64>,
    /// Max `|‖Wᵀ g‖ − ‖g‖|` for backpropagated `g` (needs `n ≤ d`).
    pub grad_norm_dev: Option<f64>,
    /// Max entrywise deviations of the mean and covariance of `Wᵀ g` (needs
    /// `n ≥ d`).
    pub grad_mean_dev: Option<f64>,
    pub grad_cov_dev: Option<f64>,
}

impl Theorem1Report {
    /// All applicable properties hold: norms to `norm_tol`, moments to
    /// `moment_tol`.
    pub fn holds(&self, norm_tol: f64, moment_tol: f64) -> bool {
        let within = |v: Option<f64>, tol: f64| v.is_none_or(|v| v <= tol);
        within(self.norm_dev, norm_tol)
            && within(self.grad_norm_dev, norm_tol)
            && within(self.mean_dev, moment_tol)
            && within(self.cov_dev, moment_tol)
            && within(self.grad_mean_dev, moment_tol)
            && within(self.grad_cov_dev, moment_tol)
    }
}

/// Running first and second moments of vectors.
struct Moments {
    count: usize,
    sum: Vec<f64>,
    outer: DenseMatrix,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Self {
            count: 0,
            sum: vec![0.0; dim],
            outer: DenseMatrix::zeros(dim, dim),
        }
    }

    fn push(&mut self, v: &[f64]) {
        self.count += 1;
        for (i, &vi) in v.iter().enumerate() {
            self.sum[i] += vi;
            for (o, &vj) in self.outer.row_mut(i).iter_mut().zip(v) {
                *o += vi * vj;
            }
        }
    }

    fn mean(&self) -> Vec<f64> {
        self.sum.iter().map(|s| s / self.count as f64).collect()
    }

    /// Max entrywise deviation of the mean from 0 and of the covariance from
    /// `target · I`.
    fn deviations(&self, target: f64) -> (f64, f64) {
        let mean = self.mean();
        let k = self.count as f64;
        let mut cov_dev: f64 = 0.0;
        for i in 0..mean.len() {
            for j in 0..mean.len() {
                let cov = (self.outer[(i, j)] - k * mean[i] * mean[j]) / (k - 1.0);
                let want = if i == j { target } else { 0.0 };
                cov_dev = cov_dev.max((cov - want).abs());
            }
        }
        (mean.iter().fold(0.0, |m, v| m.max(v.abs())), cov_dev)
    }
}

fn mat_vec(w: &DenseMatrix, x: &[f64]) -> Vec<f64> {
    (0..w.rows()).map(|r| dot(w.row(r), x)).collect()
}

fn mat_t_vec(w: &DenseMatrix, g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.cols()];
    for (r, &gr) in g.iter().enumerate() {
        for (o, &wv) in out.iter_mut().zip(w.row(r)) {
            *o += gr * wv;
        }
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Checks norm and moment preservation of `ĥ = W x` for `x ~ N(0, I)` and of
/// `∂L/∂x = Wᵀ g` for `g ~ N(0, I)`, with `W` a converged ONI output.
pub fn theorem1_check(n: usize, d: usize, samples: usize, seed: u64) -> Result<Theorem1Report> {
    let w = orthogonal_weight(n, d, 1.0, seed)?;
    theorem1_check_with(&w, samples, seed)
}

pub fn theorem1_check_with(w: &DenseMatrix, samples: usize, seed: u64) -> Result<Theorem1Report> {
    let (n, d) = w.shape();
    let mut rng = seeded(seed, 1);
    let mut h_moments = Moments::new(n);
    let mut g_moments = Moments::new(d);
    let mut norm_dev: f64 = 0.0;
    let mut grad_norm_dev: f64 = 0.0;
    for _ in 0..samples {
        let x = gaussian_vec(&mut rng, d);
        let h = mat_vec(w, &x);
        norm_dev = norm_dev.max((norm(&h) - norm(&x)).abs());
        h_moments.push(&h);

        let g = gaussian_vec(&mut rng, n);
        let dx = mat_t_vec(w, &g);
        grad_norm_dev = grad_norm_dev.max((norm(&dx) - norm(&g)).abs());
        g_moments.push(&dx);
    }
    let (mean_dev, cov_dev) = h_moments.deviations(1.0);
    let (grad_mean_dev, grad_cov_dev) = g_moments.deviations(1.0);
    let forward = n <= d;
    let backward = n >= d;
    Ok(Theorem1Report {
        n,
        d,
        samples,
        norm_dev: backward.then_some(norm_dev),
        mean_dev: forward.then_some(mean_dev),
        cov_dev: forward.then_some(cov_dev),
        grad_norm_dev: forward.then_some(grad_norm_dev),
        grad_mean_dev: backward.then_some(grad_mean_dev),
        grad_cov_dev: backward.then_some(grad_cov_dev),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem2Report {
    pub scale: f64,
    pub samples: usize,
    /// Monte-Carlo estimate of `E[J Jᵀ]`.
    pub expected_jjt: DenseMatrix,
    /// `max |Ê[J Jᵀ] − I|`.
    pub max_dev: f64,
    pub diag_mean: f64,
    pub offdiag_max: f64,
}

/// Estimates `E[J Jᵀ]` for `J = diag(1[W x > 0]) W`, `x ~ N(0, I)`, with
/// `W` a converged ONI output scaled by `scale`.
pub fn theorem2_check(n: usize, d: usize, samples: usize, seed: u64, scale: f64) -> Result<Theorem2Report> {
    let w = orthogonal_weight(n, d, scale, seed)?;
    let wwt = w.gram_rows();
    let mut rng = seeded(seed, 2);
    let mut acc = DenseMatrix::zeros(n, n);
    for _ in 0..samples {
        let x = gaussian_vec(&mut rng, d);
        let active: Vec<usize> = mat_vec(&w, &x)
            .iter()
            .enumerate()
            .filter(|(_, &h)| h > 0.0)
            .map(|(i, _)| i)
            .collect();
        for &i in &active {
            for &j in &active {
                acc[(i, j)] += wwt[(i, j)];
            }
        }
    }
    let expected_jjt = acc.scale(1.0 / samples as f64);
    let mut max_dev: f64 = 0.0;
    let mut offdiag_max: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = expected_jjt[(i, j)];
            if i == j {
                max_dev = max_dev.max((v - 1.0).abs());
            } else {
                max_dev = max_dev.max(v.abs());
                offdiag_max = offdiag_max.max(v.abs());
            }
        }
    }
    let diag_mean = expected_jjt.trace() / n as f64;
    Ok(Theorem2Report {
        scale,
        samples,
        expected_jjt,
        max_dev,
        diag_mean,
        offdiag_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_weight_satisfies_all_properties() {
        let r = theorem1_check(16, 16, 20_000, 1).unwrap();
        assert!(r.norm_dev.unwrap() <= 1e-9);
        assert!(r.grad_norm_dev.unwrap() <= 1e-9);
        assert!(r.holds(1e-9, 0.1), "{r:?}");
    }

    #[test]
    fn applicable_subsets_by_shape() {
        let wide = theorem1_check(8, 16, 20_000, 2).unwrap();
        assert!(wide.norm_dev.is_none() && wide.grad_cov_dev.is_none());
        assert!(wide.cov_dev.unwrap() <= 0.1);

        let tall = theorem1_check(16, 8, 2_000, 3).unwrap();
        assert!(tall.cov_dev.is_none() && tall.grad_norm_dev.is_none());
        assert!(tall.norm_dev.unwrap() <= 1e-9);
    }

    #[test]
    fn unit_scale_halves_jacobian_diagonal() {
        let r = theorem2_check(8, 8, 20_000, 4, 1.0).unwrap();
        assert!((r.diag_mean - 0.5).abs() < 0.05);
        assert!(r.offdiag_max < 0.05);
        let r = theorem2_check(8, 8, 20_000, 4, 2f64.sqrt()).unwrap();
        assert!((r.diag_mean - 1.0).abs() < 0.05);
    }
}
