//! Orthogonalization by Newton's iteration.
//!
//! A proxy matrix `Z` (n×d) is mapped to an approximately orthogonal `W`:
//!
//! ```text
//! Z_c = Z − (1/d) Z 1 1ᵀ                      (optional centering)
//! V   = Z_c / ‖Z_c‖_F   or   Z_c / sqrt(‖Z_c Z_cᵀ‖_F)
//! S   = V Vᵀ
//! B_0 = I,  B_t = 3/2 B_{t−1} − 1/2 B_{t−1}³ S
//! W   = σ · B_T V
//! ```
//!
//! Each iteration maps every singular value of `B_t V` through
//! `s ↦ (3s − s³)/2`, so after bounding (all singular values in `(0, 1]`) they
//! increase monotonically towards 1 and zero singular values stay zero.
//!
//! The iteration runs on whichever Gram matrix is smaller: `V Vᵀ` when
//! `n ≤ d`, otherwise `Vᵀ V` on the transposed problem, using
//! `p(V Vᵀ) V = V p(Vᵀ V)` for any polynomial `p`. The iterates are computed
//! through the coupled recurrence
//!
//! ```text
//! M_t = 3/2 I − 1/2 B_t Y_t,   B_{t+1} = M_t B_t,   Y_{t+1} = Y_t M_t,   Y_0 = S
//! ```
//!
//! which yields the same `B_t` as the single-sequence form (`Y_t = S B_t`) but
//! does not amplify rounding errors when `S` is ill-conditioned or singular.

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::spectral::{condition_number, singular_values};

pub const MAX_ITERATIONS: usize = 100;
/// Norm above which a Newton iterate is treated as divergent.
pub const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OniConfig {
    /// Number of Newton iterations `T`.
    pub iterations: usize,
    /// Subtract each row's mean before bounding.
    pub centering: bool,
    /// Bound by `sqrt(‖Z Zᵀ‖_F)` instead of `‖Z‖_F`.
    pub compact_bound: bool,
    /// Output scale `σ`, so that `W Wᵀ → σ² I`.
    pub scale: f64,
    pub zero_norm_eps: f64,
}

impl Default for OniConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            centering: true,
            compact_bound: true,
            scale: 1.0,
            zero_norm_eps: 1e-12,
        }
    }
}

impl OniConfig {
    /// Frobenius bounding, no centering.
    pub fn basic(iterations: usize) -> Self {
        Self {
            iterations,
            centering: false,
            compact_bound: false,
            ..Self::default()
        }
    }

    /// Centering plus compact spectral bounding.
    pub fn accelerated(iterations: usize) -> Self {
        Self {
            iterations,
            ..Self::default()
        }
    }

    pub fn with_flags(mut self, centering: bool, compact_bound: bool) -> Self {
        self.centering = centering;
        self.compact_bound = compact_bound;
        self
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations > MAX_ITERATIONS {
            return Err(Error::Config(format!(
                "iterations {} exceeds {MAX_ITERATIONS}",
                self.iterations
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("scale must be positive, got {}", self.scale)));
        }
        if self.zero_norm_eps.is_nan() || self.zero_norm_eps <= 0.0 {
            return Err(Error::Config("zero_norm_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Which Gram matrix the Newton iteration runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramSide {
    /// `S = V Vᵀ`, `W = B_T V` (rows ≤ cols).
    Rows,
    /// `S = Vᵀ V`, `W = (B_T Vᵀ)ᵀ` (rows > cols).
    Cols,
}

impl GramSide {
    pub fn for_shape(rows: usize, cols: usize) -> Self {
        if rows <= cols {
            GramSide::Rows
        } else {
            GramSide::Cols
        }
    }

    /// Puts a matrix into the orientation the iteration works in.
    pub fn orient(self, m: &DenseMatrix) -> DenseMatrix {
        match self {
            GramSide::Rows => m.clone(),
            GramSide::Cols => m.transpose(),
        }
    }

    pub fn unorient(self, m: DenseMatrix) -> DenseMatrix {
        match self {
            GramSide::Rows => m,
            GramSide::Cols => m.transpose(),
        }
    }
}

/// Intermediates of one forward pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct OniCache {
    /// Raw proxy.
    pub z: DenseMatrix,
    /// Matrix that was bounded (`Z`, or `Z_c` with centering).
    pub z_used: DenseMatrix,
    /// Bounded matrix, `z_used / denom`.
    pub v: DenseMatrix,
    /// Gram matrix the iteration ran on (see [`GramSide`]).
    pub s: DenseMatrix,
    /// `B_0 = I, …, B_T`.
    pub b_list: Vec<DenseMatrix>,
    /// Coupled partners `Y_t = S B_t`, same length as `b_list`.
    pub y_list: Vec<DenseMatrix>,
    /// Bounding denominator exactly as used.
    pub denom: f64,
    /// `Z_c Z_cᵀ`, present iff compact bounding is on.
    pub m: Option<DenseMatrix>,
    pub config: OniConfig,
    pub side: GramSide,
}

impl OniCache {
    pub fn iterations(&self) -> usize {
        self.b_list.len() - 1
    }

    /// Scaled output after `t` iterations, `σ · B_t V` in the original
    /// orientation.
    pub fn output_at(&self, t: usize) -> DenseMatrix {
        let v_it = self.side.orient(&self.v);
        let mut w = self.side.unorient(self.b_list[t].matmul(&v_it));
        w.scale_in_place(self.config.scale);
        w
    }

    /// Outputs for every `t` in `0..=T`.
    pub fn outputs(&self) -> Vec<DenseMatrix> {
        (0..=self.iterations()).map(|t| self.output_at(t)).collect()
    }
}

/// `Z − (1/d) Z 1 1ᵀ`: every row shifted to zero mean.
pub fn center_rows(z: &DenseMatrix) -> DenseMatrix {
    let mut out = z.clone();
    let d = z.cols() as f64;
    for r in 0..z.rows() {
        let row = out.row_mut(r);
        let mean = row.iter().sum::<f64>() / d;
        row.iter_mut().for_each(|x| *x -= mean);
    }
    out
}

/// `V = Z / ‖Z‖_F`.
pub fn frobenius_bound(z: &DenseMatrix, eps: f64) -> Result<(DenseMatrix, f64)> {
    let denom = z.frobenius_norm();
    if denom <= eps {
        return Err(Error::ZeroMatrix);
    }
    Ok((z.scale(1.0 / denom), denom))
}

/// `V = Z / sqrt(‖Z Zᵀ‖_F)`.
pub fn compact_spectral_bound(z: &DenseMatrix, eps: f64) -> Result<(DenseMatrix, f64)> {
    let (v, denom, _) = compact_bound_parts(z, eps)?;
    Ok((v, denom))
}

fn compact_bound_parts(z: &DenseMatrix, eps: f64) -> Result<(DenseMatrix, f64, DenseMatrix)> {
    if z.frobenius_norm() <= eps {
        return Err(Error::ZeroMatrix);
    }
    let m = z.gram_rows();
    let denom = m.frobenius_norm().sqrt();
    Ok((z.scale(1.0 / denom), denom, m))
}

/// Newton iterates `B_0..B_T` together with their coupled partners `Y_t`.
#[derive(Debug, Clone)]
pub struct NewtonTrace {
    pub b: Vec<DenseMatrix>,
    pub y: Vec<DenseMatrix>,
}

/// Runs `t` coupled Newton steps on `s`. Fails with `Divergence` when an
/// iterate turns non-finite or `‖Y_t‖_F` exceeds [`DIVERGENCE_NORM`]; under
/// the convergence condition `Y_t` has its spectrum in `[0, 1]`.
pub fn newton_iterate(s: &DenseMatrix, t: usize) -> Result<NewtonTrace> {
    assert!(s.is_square(), "Newton iteration needs a square matrix");
    let n = s.rows();
    let mut b = Vec::with_capacity(t + 1);
    let mut y = Vec::with_capacity(t + 1);
    b.push(DenseMatrix::identity(n));
    y.push(s.clone());
    for step in 1..=t {
        let (b_prev, y_prev) = (&b[step - 1], &y[step - 1]);
        let mut m = b_prev.matmul(y_prev);
        m.scale_in_place(-0.5);
        m.add_diag(1.5);
        let b_next = m.matmul(b_prev);
        let y_next = y_prev.matmul(&m);
        let norm = y_next.frobenius_norm();
        if !norm.is_finite() || norm > DIVERGENCE_NORM || !b_next.is_finite() {
            return Err(Error::Divergence { step, norm });
        }
        b.push(b_next);
        y.push(y_next);
    }
    Ok(NewtonTrace { b, y })
}

/// `B_0 = I, …, B_t` with `B_t = 3/2 B_{t−1} − 1/2 B_{t−1}³ S`, converging to
/// `S^{−1/2}` when `‖I − S‖_2 < 1`. Fails when `‖B_t‖_F` exceeds
/// [`DIVERGENCE_NORM`].
pub fn newton_schulz(s: &DenseMatrix, t: usize) -> Result<Vec<DenseMatrix>> {
    let trace = newton_iterate(s, t)?;
    for (step, b) in trace.b.iter().enumerate() {
        let norm = b.frobenius_norm();
        if norm > DIVERGENCE_NORM {
            return Err(Error::Divergence { step, norm });
        }
    }
    Ok(trace.b)
}

/// Bounds `z_used` per the config, returning `(V, denom, M)`.
fn bound(z_used: &DenseMatrix, cfg: &OniConfig) -> Result<(DenseMatrix, f64, Option<DenseMatrix>)> {
    if cfg.compact_bound {
        let (v, denom, m) = compact_bound_parts(z_used, cfg.zero_norm_eps)?;
        Ok((v, denom, Some(m)))
    } else {
        let (v, denom) = frobenius_bound(z_used, cfg.zero_norm_eps)?;
        Ok((v, denom, None))
    }
}

/// Forward pass: returns `W = σ · B_T V` and the cache for the backward pass.
pub fn oni_forward(z: &DenseMatrix, cfg: &OniConfig) -> Result<(DenseMatrix, OniCache)> {
    cfg.validate()?;
    let z_used = if cfg.centering {
        let zc = center_rows(z);
        if zc.frobenius_norm() <= cfg.zero_norm_eps * z.frobenius_norm().max(1.0) {
            return Err(Error::ZeroMatrix);
        }
        zc
    } else {
        z.clone()
    };
    let (v, denom, m) = bound(&z_used, cfg)?;
    let side = GramSide::for_shape(z.rows(), z.cols());
    let v_it = side.orient(&v);
    let s = v_it.gram_rows();
    let NewtonTrace { b, y } = newton_iterate(&s, cfg.iterations)?;
    let mut w = side.unorient(b[cfg.iterations].matmul(&v_it));
    w.scale_in_place(cfg.scale);
    let cache = OniCache {
        z: z.clone(),
        z_used,
        v,
        s,
        b_list: b,
        y_list: y,
        denom,
        m,
        config: *cfg,
        side,
    };
    Ok((w, cache))
}

/// Row ranges of consecutive groups; the last group holds the remainder.
pub fn group_ranges(rows: usize, group_size: usize) -> Vec<(usize, usize)> {
    (0..rows)
        .step_by(group_size.max(1))
        .map(|start| (start, (start + group_size).min(rows)))
        .collect()
}

fn check_group_size(z: &DenseMatrix, group_size: usize) -> Result<()> {
    if group_size == 0 || group_size > z.cols() {
        return Err(Error::BadGroupSize {
            group_size,
            cols: z.cols(),
        });
    }
    Ok(())
}

/// Orthogonalizes each contiguous block of `group_size` rows independently.
pub fn group_oni_forward(z: &DenseMatrix, group_size: usize, cfg: &OniConfig) -> Result<DenseMatrix> {
    Ok(group_oni_forward_cached(z, group_size, cfg)?.0)
}

/// As [`group_oni_forward`], also returning one cache per group.
pub fn group_oni_forward_cached(
    z: &DenseMatrix,
    group_size: usize,
    cfg: &OniConfig,
) -> Result<(DenseMatrix, Vec<OniCache>)> {
    check_group_size(z, group_size)?;
    let mut blocks = Vec::new();
    let mut caches = Vec::new();
    for (start, end) in group_ranges(z.rows(), group_size) {
        let (w, cache) = oni_forward(&z.row_block(start, end), cfg)?;
        blocks.push(w);
        caches.push(cache);
    }
    Ok((DenseMatrix::vstack(&blocks), caches))
}

/// `‖W Wᵀ − I‖_F`.
pub fn delta_row(w: &DenseMatrix) -> f64 {
    let mut g = w.gram_rows();
    g.add_diag(-1.0);
    g.frobenius_norm()
}

/// `‖Wᵀ W − I‖_F`.
pub fn delta_col(w: &DenseMatrix) -> f64 {
    let mut g = w.gram_cols();
    g.add_diag(-1.0);
    g.frobenius_norm()
}

/// The orthogonality error that can reach zero for this shape: row error
/// when `rows ≤ cols`, column error otherwise.
pub fn delta_attainable(w: &DenseMatrix) -> f64 {
    match GramSide::for_shape(w.rows(), w.cols()) {
        GramSide::Rows => delta_row(w),
        GramSide::Cols => delta_col(w),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrthoDiagnostics {
    pub delta_row: f64,
    pub delta_col: f64,
    /// Singular values, descending.
    pub sigmas: Vec<f64>,
    /// `σ_max / σ_min`; `+∞` for singular or zero matrices.
    pub cond: f64,
}

pub fn orthogonality_error(w: &DenseMatrix) -> Result<OrthoDiagnostics> {
    let sigmas = singular_values(w)?;
    let cond = match condition_number(w) {
        Ok(c) => c,
        Err(Error::ZeroMatrix) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    Ok(OrthoDiagnostics {
        delta_row: delta_row(w),
        delta_col: delta_col(w),
        sigmas,
        cond,
    })
}

/// Convolution filter bank `n × d × F_h × F_w`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub shape: [usize; 4],
    pub data: Vec<f64>,
}

impl FilterBank {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) || shape.iter().product::<usize>() != data.len() {
            return Err(Error::Config(format!(
                "filter bank shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }
}

/// Unrolls filters to `n × (d·F_h·F_w)`; within a row the input channel
/// varies slowest, then `F_h`, then `F_w`.
pub fn reshape_conv_filters(filters: &FilterBank) -> Result<DenseMatrix> {
    let [n, d, fh, fw] = filters.shape;
    DenseMatrix::from_vec(n, d * fh * fw, filters.data.clone())
}

/// Inverse of [`reshape_conv_filters`].
pub fn unreshape_conv_filters(m: &DenseMatrix, shape: [usize; 4]) -> Result<FilterBank> {
    let [n, d, fh, fw] = shape;
    if m.rows() != n || m.cols() != d * fh * fw {
        return Err(Error::ShapeMismatch {
            expected: (n, d * fh * fw),
            got: m.shape(),
        });
    }
    FilterBank::new(shape, m.as_slice().to_vec())
}
