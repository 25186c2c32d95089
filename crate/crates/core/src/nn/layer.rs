use crate::baselines::{olm_orthogonalize, weight_normalize_with_norms};
use crate::error::{Error, Result};
use crate::grad::oni_backward;
use crate::matrix::{dot, DenseMatrix};
use crate::oni::{group_oni_forward_cached, group_ranges, oni_forward, OniCache, OniConfig};
use crate::rng::{gaussian_matrix, Rng};

/// Iterations used for the gradient stand-in of [`WeightMap::Olm`].
pub const OLM_SURROGATE_ITERATIONS: usize = 30;

/// How a layer turns its proxy `Z` into the weight it applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightMap {
    /// `W = Z`.
    Plain,
    /// `W = oni_forward(Z)`, optionally per row-group.
    Oni { cfg: OniConfig, group_size: Option<usize> },
    /// `W = σ · olm_orthogonalize(Z)`. Forward only: the backward pass runs
    /// through a converged ONI instead.
    Olm { scale: f64 },
    /// `W = σ · Z` with rows scaled to unit norm.
    WeightNorm { scale: f64 },
}

#[derive(Debug, Clone)]
enum MapCache {
    Plain,
    Oni(OniCache),
    Groups(Vec<OniCache>, usize),
    Olm(OniCache),
    WeightNorm {
        unit: DenseMatrix,
        norms: Vec<f64>,
        scale: f64,
    },
}

#[derive(Debug, Clone)]
struct LayerCache {
    step: u64,
    base: DenseMatrix,
    weight: DenseMatrix,
    map: MapCache,
}

/// Gradients of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub dz: DenseMatrix,
    pub d_bias: Vec<f64>,
    pub d_gains: Option<Vec<f64>>,
    pub dx: DenseMatrix,
}

/// Mutable view of a layer's trainable parameters.
pub struct ParamsMut<'a> {
    pub z: &'a mut DenseMatrix,
    pub bias: &'a mut Vec<f64>,
    pub gains: &'a mut Option<Vec<f64>>,
}

/// Affine layer `x ↦ x Wᵀ + b` whose weight `W = diag(g) · map(Z)` is
/// rebuilt from the proxy `Z` whenever the parameters change.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    z: DenseMatrix,
    bias: Vec<f64>,
    gains: Option<Vec<f64>>,
    map: WeightMap,
    step: u64,
    cache: Option<LayerCache>,
}

impl LinearLayer {
    /// Layer with zero bias and no gains. `z` is `out × in`.
    pub fn new(z: DenseMatrix, map: WeightMap) -> Self {
        let n = z.rows();
        Self {
            z,
            bias: vec![0.0; n],
            gains: None,
            map,
            step: 1,
            cache: None,
        }
    }

    /// Adds per-row gains initialized to 1.
    pub fn with_gains(mut self) -> Self {
        self.gains = Some(vec![1.0; self.z.rows()]);
        self.touch();
        self
    }

    pub fn with_bias(mut self, bias: Vec<f64>) -> Self {
        assert_eq!(bias.len(), self.z.rows());
        self.bias = bias;
        self.touch();
        self
    }

    pub fn z(&self) -> &DenseMatrix {
        &self.z
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn gains(&self) -> Option<&[f64]> {
        self.gains.as_deref()
    }

    pub fn map(&self) -> &WeightMap {
        &self.map
    }

    /// Parameter version; bumped by every [`params_mut`](Self::params_mut).
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn in_dim(&self) -> usize {
        self.z.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.z.rows()
    }

    fn touch(&mut self) {
        self.step += 1;
    }

    /// Hands out the parameters for an update and invalidates the cache.
    pub fn params_mut(&mut self) -> ParamsMut<'_> {
        self.touch();
        ParamsMut {
            z: &mut self.z,
            bias: &mut self.bias,
            gains: &mut self.gains,
        }
    }

    fn build(&self) -> Result<LayerCache> {
        let (base, map) = match self.map {
            WeightMap::Plain => (self.z.clone(), MapCache::Plain),
            WeightMap::Oni { cfg, group_size: None } => {
                let (w, cache) = oni_forward(&self.z, &cfg)?;
                (w, MapCache::Oni(cache))
            }
            WeightMap::Oni {
                cfg,
                group_size: Some(g),
            } => {
                let (w, caches) = group_oni_forward_cached(&self.z, g, &cfg)?;
                (w, MapCache::Groups(caches, g))
            }
            WeightMap::Olm { scale } => {
                let w = olm_orthogonalize(&self.z)?.scale(scale);
                let cfg = OniConfig::basic(OLM_SURROGATE_ITERATIONS)
                    .with_flags(false, true)
                    .with_scale(scale);
                let (_, cache) = oni_forward(&self.z, &cfg)?;
                (w, MapCache::Olm(cache))
            }
            WeightMap::WeightNorm { scale } => {
                let (unit, norms) = weight_normalize_with_norms(&self.z)?;
                (unit.scale(scale), MapCache::WeightNorm { unit, norms, scale })
            }
        };
        let weight = match &self.gains {
            Some(g) => scale_rows(&base, g),
            None => base.clone(),
        };
        Ok(LayerCache {
            step: self.step,
            base,
            weight,
            map,
        })
    }

    /// Effective weight computed from scratch, bypassing the cache.
    pub fn weight(&self) -> Result<DenseMatrix> {
        Ok(self.build()?.weight)
    }

    /// Effective weight, rebuilding the cache if the parameters changed.
    pub fn refresh(&mut self) -> Result<&DenseMatrix> {
        if self.cache.as_ref().map(|c| c.step) != Some(self.step) {
            self.cache = Some(self.build()?);
        }
        Ok(&self.cache.as_ref().unwrap().weight)
    }

    /// `x Wᵀ + b` for a batch `x` of shape `batch × in`.
    pub fn forward(&mut self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::ShapeMismatch {
                expected: (x.rows(), self.in_dim()),
                got: x.shape(),
            });
        }
        let bias = self.bias.clone();
        let w = self.refresh()?;
        let mut out = x.matmul_nt(w);
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(&bias) {
                *o += b;
            }
        }
        Ok(out)
    }

    /// Gradients given the layer input `x` and `d_out = ∂L/∂(x Wᵀ + b)`.
    /// Requires a forward pass since the last parameter change.
    pub fn backward(&self, x: &DenseMatrix, d_out: &DenseMatrix) -> Result<LayerGrads> {
        let cache = match &self.cache {
            Some(c) if c.step == self.step => c,
            other => {
                return Err(Error::StaleCache {
                    cached: other.as_ref().map_or(0, |c| c.step),
                    current: self.step,
                })
            }
        };
        if d_out.shape() != (x.rows(), self.out_dim()) || x.cols() != self.in_dim() {
            return Err(Error::ShapeMismatch {
                expected: (x.rows(), self.out_dim()),
                got: d_out.shape(),
            });
        }
        let dw = d_out.matmul_tn(x);
        let dx = d_out.matmul(&cache.weight);
        let d_bias = d_out.column_sums();
        let (d_base, d_gains) = match &self.gains {
            Some(g) => {
                let dg = (0..dw.rows()).map(|r| dot(dw.row(r), cache.base.row(r))).collect();
                (scale_rows(&dw, g), Some(dg))
            }
            None => (dw, None),
        };
        let dz = map_backward(&cache.map, &d_base)?;
        Ok(LayerGrads {
            dz,
            d_bias,
            d_gains,
            dx,
        })
    }
}

fn scale_rows(m: &DenseMatrix, factors: &[f64]) -> DenseMatrix {
    let mut out = m.clone();
    for (r, &f) in factors.iter().enumerate() {
        out.row_mut(r).iter_mut().for_each(|x| *x *= f);
    }
    out
}

fn map_backward(map: &MapCache, dw: &DenseMatrix) -> Result<DenseMatrix> {
    match map {
        MapCache::Plain => Ok(dw.clone()),
        MapCache::Oni(cache) | MapCache::Olm(cache) => oni_backward(cache, dw),
        MapCache::Groups(caches, g) => {
            let blocks = group_ranges(dw.rows(), *g)
                .into_iter()
                .zip(caches)
                .map(|((start, end), c)| oni_backward(c, &dw.row_block(start, end)))
                .collect::<Result<Vec<_>>>()?;
            Ok(DenseMatrix::vstack(&blocks))
        }
        MapCache::WeightNorm { unit, norms, scale } => {
            // Row-wise: ∂L/∂z = σ (g − (g·u) u) / ‖z‖.
            let mut out = dw.clone();
            for (r, &norm) in norms.iter().enumerate() {
                let u = unit.row(r);
                let proj = dot(dw.row(r), u);
                for (o, &ui) in out.row_mut(r).iter_mut().zip(u) {
                    *o = scale * (*o - proj * ui) / norm;
                }
            }
            Ok(out)
        }
    }
}

/// Orthonormal rows (wide) or columns (tall) from the QR factorization of a
/// Gaussian matrix, with `R` given a positive diagonal.
pub fn orthogonal_init(rng: &mut Rng, rows: usize, cols: usize) -> DenseMatrix {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let a = gaussian_matrix(rng, tall, short, 0.0, 1.0);
    // Modified Gram-Schmidt, applied twice for orthogonality to full precision.
    let mut q: Vec<Vec<f64>> = (0..short).map(|c| a.column(c)).collect();
    for k in 0..short {
        for _ in 0..2 {
            for j in 0..k {
                let (done, rest) = q.split_at_mut(k);
                let p = dot(&done[j], &rest[0]);
                rest[0].iter_mut().zip(&done[j]).for_each(|(x, y)| *x -= p * y);
            }
        }
        let norm = dot(&q[k], &q[k]).sqrt();
        q[k].iter_mut().for_each(|x| *x /= norm);
    }
    let m = DenseMatrix::from_fn(tall, short, |r, c| q[c][r]);
    if rows >= cols {
        m
    } else {
        m.transpose()
    }
}
