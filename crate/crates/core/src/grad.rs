//! Backward pass through [`oni_forward`](crate::oni::oni_forward) and a
//! central-difference oracle to check it against.
//!
//! The backward pass is composed stage by stage, mirroring the forward:
//!
//! 1. output scale: `∂L/∂W_unscaled = σ ∂L/∂W`
//! 2. Newton iteration: `∂L/∂B_T = ∂L/∂W Vᵀ`, then back through the
//!    iterates to `∂L/∂S`
//! 3. `∂L/∂V = B_Tᵀ ∂L/∂W + (∂L/∂S + ∂L/∂Sᵀ) V`
//! 4. bounding, either
//!    `∂L/∂Z = (∂L/∂V − tr(∂L/∂Vᵀ Z)/‖Z‖_F² · Z) / ‖Z‖_F` or, for
//!    `δ = sqrt(‖M‖_F)` with `M = Z Zᵀ`,
//!    `∂L/∂Z = ∂L/∂V / δ − tr(∂L/∂Vᵀ Z)/δ⁵ · M Z`
//! 5. centering: subtract each row's mean from the gradient.

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::oni::{oni_forward, OniCache, OniConfig};

/// Gradient w.r.t. the proxy `Z` given `dw = ∂L/∂W`, for any flag combination.
pub fn oni_backward(cache: &OniCache, dw: &DenseMatrix) -> Result<DenseMatrix> {
    if dw.shape() != cache.z.shape() {
        return Err(Error::ShapeMismatch {
            expected: cache.z.shape(),
            got: dw.shape(),
        });
    }
    let cfg = &cache.config;
    let side = cache.side;
    let t = cache.iterations();

    let mut g = side.orient(dw);
    g.scale_in_place(cfg.scale);
    let v_it = side.orient(&cache.v);

    let seed = g.matmul_nt(&v_it);
    let ds = coupled_newton_adjoint(&cache.b_list, &cache.y_list, &seed);
    let mut dv_it = cache.b_list[t].matmul_tn(&g);
    dv_it.axpy(1.0, &ds.add(&ds.transpose()).matmul(&v_it));
    let dv = side.unorient(dv_it);

    let dz_used = bounding_adjoint(cache, &dv);
    Ok(if cfg.centering {
        centering_adjoint(&dz_used)
    } else {
        dz_used
    })
}

/// Backward pass for caches built with Frobenius bounding and no centering.
pub fn oni_backward_basic(cache: &OniCache, dw: &DenseMatrix) -> Result<DenseMatrix> {
    let cfg = &cache.config;
    if cfg.centering || cfg.compact_bound {
        return Err(Error::CacheMismatch(
            "basic backward needs centering and compact bounding off".into(),
        ));
    }
    oni_backward(cache, dw)
}

/// Backward pass for caches built with centering and compact bounding.
pub fn oni_backward_accel(cache: &OniCache, dw: &DenseMatrix) -> Result<DenseMatrix> {
    let cfg = &cache.config;
    if !(cfg.centering && cfg.compact_bound) {
        return Err(Error::CacheMismatch(
            "accelerated backward needs centering and compact bounding on".into(),
        ));
    }
    oni_backward(cache, dw)
}

fn bounding_adjoint(cache: &OniCache, dv: &DenseMatrix) -> DenseMatrix {
    let z = &cache.z_used;
    let denom = cache.denom;
    let tr = dv.frobenius_dot(z);
    match &cache.m {
        Some(m) => {
            let mut out = dv.scale(1.0 / denom);
            out.axpy(-tr / denom.powi(5), &m.matmul(z));
            out
        }
        None => {
            let mut out = dv.clone();
            out.axpy(-tr / (denom * denom), z);
            out.scale_in_place(1.0 / denom);
            out
        }
    }
}

/// Adjoint of row centering: `dZ = dZ_c − (1/d) dZ_c 1 1ᵀ`.
pub fn centering_adjoint(dzc: &DenseMatrix) -> DenseMatrix {
    crate::oni::center_rows(dzc)
}

/// `∂L/∂S` from `∂L/∂B_T` through the coupled recurrence
/// `M = 3/2 I − 1/2 B Y`, `B' = M B`, `Y' = Y M`, `Y_0 = S`, using the cached
/// iterates.
pub fn coupled_newton_adjoint(b_list: &[DenseMatrix], y_list: &[DenseMatrix], grad_bt: &DenseMatrix) -> DenseMatrix {
    assert_eq!(b_list.len(), y_list.len());
    let t = b_list.len() - 1;
    let n = grad_bt.rows();
    let mut gb = grad_bt.clone();
    let mut gy = DenseMatrix::zeros(n, n);
    for step in (1..=t).rev() {
        let b = &b_list[step - 1];
        let y = &y_list[step - 1];
        let mut m = b.matmul(y);
        m.scale_in_place(-0.5);
        m.add_diag(1.5);

        let mut gm = gb.matmul_nt(b);
        gm.axpy(1.0, &y.matmul_tn(&gy));

        let mut gb_prev = m.matmul_tn(&gb);
        gb_prev.axpy(-0.5, &gm.matmul_nt(y));
        let mut gy_prev = gy.matmul_nt(&m);
        gy_prev.axpy(-0.5, &b.matmul_tn(&gm));

        gb = gb_prev;
        gy = gy_prev;
    }
    gy
}

/// `∂L/∂S` from `∂L/∂B_T` through the single-sequence recurrence
/// `B_t = 3/2 B_{t−1} − 1/2 B_{t−1}³ S`:
///
/// ```text
/// ∂L/∂B_{t−1} = −1/2 (G (B²S)ᵀ + (B²)ᵀ G Sᵀ + Bᵀ G (BS)ᵀ) + 3/2 G
/// ∂L/∂S       = −1/2 Σ_t (B_{t−1}³)ᵀ ∂L/∂B_t
/// ```
///
/// Exact in exact arithmetic, but the intermediate `∂L/∂B_t` grow like the
/// instability of that recurrence, so it loses accuracy for ill-conditioned
/// `S` beyond a handful of iterations. [`oni_backward`] uses
/// [`coupled_newton_adjoint`].
pub fn uncoupled_newton_adjoint(b_list: &[DenseMatrix], s: &DenseMatrix, grad_bt: &DenseMatrix) -> DenseMatrix {
    let t = b_list.len() - 1;
    let n = s.rows();
    let mut gb = grad_bt.clone();
    let mut ds = DenseMatrix::zeros(n, n);
    for step in (1..=t).rev() {
        let b = &b_list[step - 1];
        let b2 = b.matmul(b);
        let b3 = b2.matmul(b);
        ds.axpy(-0.5, &b3.matmul_tn(&gb));

        let b2s = b2.matmul(s);
        let bs = b.matmul(s);
        let mut next = gb.matmul_nt(&b2s);
        next.axpy(1.0, &b2.matmul_tn(&gb).matmul_nt(s));
        next.axpy(1.0, &b.matmul_tn(&gb).matmul_nt(&bs));
        next.scale_in_place(-0.5);
        next.axpy(1.5, &gb);
        gb = next;
    }
    ds
}

pub const DEFAULT_STEP: f64 = 1e-5;

/// Central differences of `L(Z) = ⟨dw, map(Z)⟩`:
/// entry `(i, j)` is `(L(Z + h e_ij) − L(Z − h e_ij)) / 2h`.
pub fn finite_diff_grad<F>(map: F, z: &DenseMatrix, dw: &DenseMatrix, h: f64) -> Result<DenseMatrix>
where
    F: Fn(&DenseMatrix) -> Result<DenseMatrix>,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::Config(format!(
            "finite-difference step {h} outside [1e-7, 1e-3]"
        )));
    }
    let loss = |m: &DenseMatrix| -> Result<f64> { Ok(dw.frobenius_dot(&map(m)?)) };
    let mut out = DenseMatrix::zeros(z.rows(), z.cols());
    let mut probe = z.clone();
    for r in 0..z.rows() {
        for c in 0..z.cols() {
            let orig = probe[(r, c)];
            probe[(r, c)] = orig + h;
            let plus = loss(&probe)?;
            probe[(r, c)] = orig - h;
            let minus = loss(&probe)?;
            probe[(r, c)] = orig;
            out[(r, c)] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(out)
}

/// [`finite_diff_grad`] applied to `oni_forward(·, cfg).w`.
pub fn oni_finite_diff_grad(z: &DenseMatrix, cfg: &OniConfig, dw: &DenseMatrix, h: f64) -> Result<DenseMatrix> {
    finite_diff_grad(|m| Ok(oni_forward(m, cfg)?.0), z, dw, h)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_entry: (usize, usize),
    pub analytic: DenseMatrix,
    pub numeric: DenseMatrix,
}

/// Entries smaller than this fraction of the largest gradient entry are
/// compared against that scale instead of their own magnitude.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

/// Largest entrywise `|a − n| / max(|a|, |n|, floor)` and where it occurs,
/// with `floor = 1e-4 · max(‖A‖_max, ‖N‖_max)` (at least `1e-12`).
pub fn max_rel_error(analytic: &DenseMatrix, numeric: &DenseMatrix) -> (f64, (usize, usize)) {
    assert_eq!(analytic.shape(), numeric.shape());
    let floor = (REL_ERROR_FLOOR * analytic.max_abs().max(numeric.max_abs())).max(1e-12);
    let mut worst = (0.0, (0, 0));
    for r in 0..analytic.rows() {
        for c in 0..analytic.cols() {
            let (a, n) = (analytic[(r, c)], numeric[(r, c)]);
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor);
            if rel > worst.0 {
                worst = (rel, (r, c));
            }
        }
    }
    worst
}

/// Compares [`oni_backward`] with [`oni_finite_diff_grad`] at step `h`.
pub fn grad_check(z: &DenseMatrix, cfg: &OniConfig, dw: &DenseMatrix, h: f64) -> Result<GradCheckReport> {
    let (_, cache) = oni_forward(z, cfg)?;
    let analytic = oni_backward(&cache, dw)?;
    let numeric = oni_finite_diff_grad(z, cfg, dw, h)?;
    let (max_rel_error, worst_entry) = max_rel_error(&analytic, &numeric);
    Ok(GradCheckReport {
        max_rel_error,
        worst_entry,
        analytic,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_matrix, seeded};

    const FLAGS: [(bool, bool); 4] = [(false, false), (true, false), (false, true), (true, true)];

    fn inputs(seed: u64, r: usize, c: usize) -> (DenseMatrix, DenseMatrix) {
        let mut rng = seeded(seed, 0);
        (
            gaussian_matrix(&mut rng, r, c, 0.3, 1.0),
            gaussian_matrix(&mut rng, r, c, 0.0, 1.0),
        )
    }

    #[test]
    fn zero_upstream_gives_zero() {
        let (z, _) = inputs(1, 4, 6);
        for (ce, cb) in FLAGS {
            let (_, cache) = oni_forward(&z, &OniConfig::basic(3).with_flags(ce, cb)).unwrap();
            let dz = oni_backward(&cache, &DenseMatrix::zeros(4, 6)).unwrap();
            assert_eq!(dz.max_abs(), 0.0);
        }
    }

    #[test]
    fn scalar_input_has_zero_gradient() {
        for c in [0.5, 2.0] {
            let z = DenseMatrix::from_rows(&[vec![c]]).unwrap();
            let dw = DenseMatrix::from_rows(&[vec![1.7]]).unwrap();
            let (_, cache) = oni_forward(&z, &OniConfig::basic(4)).unwrap();
            assert!(oni_backward(&cache, &dw).unwrap().max_abs() < 1e-15);
            let fd = oni_finite_diff_grad(&z, &OniConfig::basic(4), &dw, 1e-5).unwrap();
            assert!(fd.max_abs() < 1e-8);
        }
    }

    #[test]
    fn basic_matches_finite_differences() {
        let (z, dw) = inputs(2, 5, 7);
        for t in [1, 3, 5] {
            let report = grad_check(&z, &OniConfig::basic(t), &dw, DEFAULT_STEP).unwrap();
            assert!(report.max_rel_error <= 1e-5, "T={t}: {}", report.max_rel_error);
        }
    }

    #[test]
    fn accelerated_matches_finite_differences() {
        let (z, dw) = inputs(3, 6, 10);
        for t in [1, 5] {
            let report = grad_check(&z, &OniConfig::accelerated(t), &dw, DEFAULT_STEP).unwrap();
            assert!(report.max_rel_error <= 1e-5, "T={t}: {}", report.max_rel_error);
        }
    }

    #[test]
    fn mixed_flags_match_finite_differences() {
        let (z, dw) = inputs(4, 4, 6);
        for (ce, cb) in [(true, false), (false, true)] {
            let cfg = OniConfig::basic(3).with_flags(ce, cb);
            let report = grad_check(&z, &cfg, &dw, DEFAULT_STEP).unwrap();
            assert!(report.max_rel_error <= 1e-5, "{ce} {cb}: {}", report.max_rel_error);
        }
    }

    #[test]
    fn scaled_and_tall_inputs() {
        let (z, dw) = inputs(5, 7, 3);
        let cfg = OniConfig::accelerated(4).with_scale(2f64.sqrt());
        let report = grad_check(&z, &cfg, &dw, DEFAULT_STEP).unwrap();
        assert!(report.max_rel_error <= 1e-5, "{}", report.max_rel_error);
    }

    #[test]
    fn dispatch_and_flag_checks() {
        let (z, dw) = inputs(6, 3, 5);
        let (_, basic) = oni_forward(&z, &OniConfig::basic(2)).unwrap();
        assert_eq!(
            oni_backward_basic(&basic, &dw).unwrap(),
            oni_backward(&basic, &dw).unwrap()
        );
        assert!(matches!(oni_backward_accel(&basic, &dw), Err(Error::CacheMismatch(_))));

        let (_, accel) = oni_forward(&z, &OniConfig::accelerated(2)).unwrap();
        assert_eq!(
            oni_backward_accel(&accel, &dw).unwrap(),
            oni_backward(&accel, &dw).unwrap()
        );
        assert!(matches!(oni_backward_basic(&accel, &dw), Err(Error::CacheMismatch(_))));

        let wrong = DenseMatrix::zeros(5, 3);
        assert!(matches!(oni_backward(&accel, &wrong), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn uncoupled_recurrence_agrees_at_small_t() {
        let (z, dw) = inputs(7, 5, 8);
        for t in 0..=5 {
            let (_, cache) = oni_forward(&z, &OniConfig::accelerated(t)).unwrap();
            let seed = dw.matmul_nt(&cache.v);
            let coupled = coupled_newton_adjoint(&cache.b_list, &cache.y_list, &seed);
            let single = uncoupled_newton_adjoint(&cache.b_list, &cache.s, &seed);
            let rel = coupled.sub(&single).frobenius_norm() / coupled.frobenius_norm().max(1e-300);
            assert!(t == 0 || rel < 1e-9, "T={t}: {rel}");
        }
    }

    #[test]
    fn identity_map_oracle() {
        let (z, dw) = inputs(8, 3, 4);
        let fd = finite_diff_grad(|m| Ok(m.clone()), &z, &dw, 1e-5).unwrap();
        assert!(fd.sub(&dw).max_abs() < 1e-9);
        assert!(finite_diff_grad(|m| Ok(m.clone()), &z, &dw, 1e-2).is_err());
    }

    #[test]
    fn rel_error_metric() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let n = DenseMatrix::from_rows(&[vec![1.1, 1e-9]]).unwrap();
        let (err, at) = max_rel_error(&a, &n);
        assert!((err - 0.1 / 1.1).abs() < 1e-15);
        assert_eq!(at, (0, 0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn linear_in_upstream(
                r in 1usize..6, c in 1usize..6, t in 0usize..6, flags in 0usize..4,
                a in -2.0f64..2.0, b in -2.0f64..2.0, seed in any::<u64>()
            ) {
                let mut rng = seeded(seed, 0);
                let z = gaussian_matrix(&mut rng, r, c, 0.0, 1.0);
                let d1 = gaussian_matrix(&mut rng, r, c, 0.0, 1.0);
                let d2 = gaussian_matrix(&mut rng, r, c, 0.0, 1.0);
                let (ce, cb) = FLAGS[flags];
                let Ok((_, cache)) = oni_forward(&z, &OniConfig::basic(t).with_flags(ce, cb)) else {
                    return Ok(());
                };
                let mut combo = d1.scale(a);
                combo.axpy(b, &d2);
                let lhs = oni_backward(&cache, &combo).unwrap();
                let mut rhs = oni_backward(&cache, &d1).unwrap().scale(a);
                rhs.axpy(b, &oni_backward(&cache, &d2).unwrap());
                prop_assert_eq!(lhs.shape(), z.shape());
                prop_assert!(lhs.sub(&rhs).max_abs() <= 1e-10 * (1.0 + rhs.max_abs()));
            }

            #[test]
            fn gradient_orthogonal_to_proxy(
                r in 2usize..7, c in 2usize..7, flags in 0usize..4, seed in any::<u64>()
            ) {
                // W depends on Z only through its direction.
                let mut rng = seeded(seed, 0);
                let z = gaussian_matrix(&mut rng, r, c, 0.0, 1.0);
                let dw = gaussian_matrix(&mut rng, r, c, 0.0, 1.0);
                let (ce, cb) = FLAGS[flags];
                let (_, cache) = oni_forward(&z, &OniConfig::basic(30).with_flags(ce, cb)).unwrap();
                let dz = oni_backward(&cache, &dw).unwrap();
                let cos = dz.frobenius_dot(&z).abs() / (dz.frobenius_norm() * z.frobenius_norm() + 1e-12);
                prop_assert!(cos <= 1e-4, "cos = {}", cos);
            }
        }
    }
}
