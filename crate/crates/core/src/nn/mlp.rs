use std::fmt;
use std::str::FromStr;

use super::layer::{orthogonal_init, LayerGrads, LinearLayer, WeightMap};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::oni::OniConfig;
use crate::rng::{gaussian_matrix, seeded};

/// Weight parameterization shared by every layer of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Unconstrained weights, Gaussian init with variance `σ²/d`.
    Plain,
    /// Unconstrained weights starting from `σ ·` an orthogonal matrix.
    OrthInit,
    Oni,
    OlmForward,
    Wn,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Plain,
        Method::OrthInit,
        Method::Oni,
        Method::OlmForward,
        Method::Wn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Plain => "plain",
            Method::OrthInit => "orth_init",
            Method::Oni => "oni",
            Method::OlmForward => "olm_forward",
            Method::Wn => "wn",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    /// Number of linear layers.
    pub depth: usize,
    pub width: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Output scale of the constrained methods (`√2` for ReLU isometry).
    pub scale: f64,
    pub iterations: usize,
    pub centering: bool,
    pub compact_bound: bool,
    pub group_size: Option<usize>,
    pub learnable_gains: bool,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub method: Method,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            width: 256,
            input_dim: 784,
            output_dim: 10,
            scale: 1.0,
            iterations: 5,
            centering: true,
            compact_bound: true,
            group_size: None,
            learnable_gains: false,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 256,
            epochs: 10,
            seed: 0,
            method: Method::Oni,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("depth", self.depth),
            ("width", self.width),
            ("input_dim", self.input_dim),
            ("output_dim", self.output_dim),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be nonnegative".into()));
        }
        self.oni_config().validate()
    }

    pub fn oni_config(&self) -> OniConfig {
        OniConfig::basic(self.iterations)
            .with_flags(self.centering, self.compact_bound)
            .with_scale(self.scale)
    }

    /// `(out, in)` of every layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        (0..self.depth)
            .map(|l| {
                let d_in = if l == 0 { self.input_dim } else { self.width };
                let d_out = if l + 1 == self.depth {
                    self.output_dim
                } else {
                    self.width
                };
                (d_out, d_in)
            })
            .collect()
    }
}

/// Values kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input of each layer.
    pub inputs: Vec<DenseMatrix>,
    /// Output of each layer before the nonlinearity; the last one holds the
    /// logits.
    pub pre: Vec<DenseMatrix>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &DenseMatrix {
        self.pre.last().unwrap()
    }
}

/// Stack of linear layers with ReLU between them.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<LinearLayer>,
}

impl Mlp {
    /// Initializes layer `l` from stream `l + 1` of the config seed. Proxies
    /// are drawn from `N(0, 1/d)`.
    pub fn new(cfg: &MlpConfig) -> Result<Self> {
        cfg.validate()?;
        let layers = cfg
            .layer_shapes()
            .into_iter()
            .enumerate()
            .map(|(l, (n, d))| {
                let mut rng = seeded(cfg.seed, l as u64 + 1);
                let std = 1.0 / (d as f64).sqrt();
                let (z, map) = match cfg.method {
                    Method::Plain => (gaussian_matrix(&mut rng, n, d, 0.0, cfg.scale * std), WeightMap::Plain),
                    Method::OrthInit => (orthogonal_init(&mut rng, n, d).scale(cfg.scale), WeightMap::Plain),
                    Method::Oni => (
                        gaussian_matrix(&mut rng, n, d, 0.0, std),
                        WeightMap::Oni {
                            cfg: cfg.oni_config(),
                            group_size: cfg.group_size,
                        },
                    ),
                    Method::OlmForward => (
                        gaussian_matrix(&mut rng, n, d, 0.0, std),
                        WeightMap::Olm { scale: cfg.scale },
                    ),
                    Method::Wn => (
                        gaussian_matrix(&mut rng, n, d, 0.0, std),
                        WeightMap::WeightNorm { scale: cfg.scale },
                    ),
                };
                let layer = LinearLayer::new(z, map);
                if cfg.learnable_gains {
                    layer.with_gains()
                } else {
                    layer
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<LinearLayer>) -> Self {
        Self { layers }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn forward(&mut self, x: &DenseMatrix) -> Result<ForwardTrace> {
        let depth = self.depth();
        let mut inputs = Vec::with_capacity(depth);
        let mut pre = Vec::with_capacity(depth);
        let mut h = x.clone();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let out = layer.forward(&h)?;
            inputs.push(h);
            h = if l + 1 < depth { out.map(relu) } else { out.clone() };
            pre.push(out);
        }
        Ok(ForwardTrace { inputs, pre })
    }

    /// Per-layer gradients and `∂L/∂(pre-activation)` of each layer.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        d_logits: &DenseMatrix,
    ) -> Result<(Vec<LayerGrads>, Vec<DenseMatrix>)> {
        let depth = self.depth();
        let mut grads = Vec::with_capacity(depth);
        let mut d_pre = Vec::with_capacity(depth);
        let mut d = d_logits.clone();
        for l in (0..depth).rev() {
            let g = self.layers[l].backward(&trace.inputs[l], &d)?;
            let next = if l > 0 {
                g.dx.zip_with(&trace.pre[l - 1], |g, p| if p > 0.0 { g } else { 0.0 })
            } else {
                g.dx.clone()
            };
            d_pre.push(d);
            grads.push(g);
            d = next;
        }
        grads.reverse();
        d_pre.reverse();
        Ok((grads, d_pre))
    }

    /// Mean cross-entropy on a batch, its gradients and the forward trace.
    pub fn loss_and_grads(
        &mut self,
        x: &DenseMatrix,
        labels: &[usize],
    ) -> Result<(f64, Vec<LayerGrads>, ForwardTrace)> {
        let trace = self.forward(x)?;
        let (loss, d_logits) = softmax_cross_entropy(trace.logits(), labels);
        let (grads, _) = self.backward(&trace, &d_logits)?;
        Ok((loss, grads, trace))
    }

    /// Class predictions, evaluated in chunks.
    pub fn predict(&mut self, x: &DenseMatrix) -> Result<Vec<usize>> {
        const CHUNK: usize = 2048;
        let mut out = Vec::with_capacity(x.rows());
        for start in (0..x.rows()).step_by(CHUNK) {
            let block = x.row_block(start, (start + CHUNK).min(x.rows()));
            let trace = self.forward(&block)?;
            let logits = trace.logits();
            out.extend((0..logits.rows()).map(|r| argmax(logits.row(r))));
        }
        Ok(out)
    }

    /// Fraction of misclassified samples.
    pub fn error_rate(&mut self, x: &DenseMatrix, labels: &[usize]) -> Result<f64> {
        let pred = self.predict(x)?;
        let wrong = pred.iter().zip(labels).filter(|(p, l)| p != l).count();
        Ok(wrong as f64 / labels.len().max(1) as f64)
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &DenseMatrix, labels: &[usize]) -> (f64, DenseMatrix) {
    assert_eq!(logits.rows(), labels.len());
    let batch = labels.len() as f64;
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = grad.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        loss += sum.ln() - (logits[(r, label)] - max);
        for v in row.iter_mut() {
            *v /= sum * batch;
        }
        row[label] -= 1.0 / batch;
    }
    (loss / batch, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::{finite_diff_grad, max_rel_error};

    #[test]
    fn cross_entropy_gradient() {
        let logits = DenseMatrix::from_rows(&[vec![0.3, -1.2, 2.0], vec![0.0, 0.0, 0.0]]).unwrap();
        let labels = [2, 0];
        let (loss, grad) = softmax_cross_entropy(&logits, &labels);
        let row0 = (0.3f64.exp() + (-1.2f64).exp() + 2f64.exp()).ln() - 2.0;
        assert!((loss - 0.5 * (row0 + 3f64.ln())).abs() < 1e-14);
        let h = 1e-6;
        for r in 0..2 {
            for c in 0..3 {
                let mut p = logits.clone();
                p[(r, c)] += h;
                let mut m = logits.clone();
                m[(r, c)] -= h;
                let num = (softmax_cross_entropy(&p, &labels).0 - softmax_cross_entropy(&m, &labels).0) / (2.0 * h);
                assert!((num - grad[(r, c)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("bn".parse::<Method>().is_err());
    }

    #[test]
    fn layer_shapes_follow_depth() {
        let cfg = MlpConfig {
            depth: 3,
            width: 8,
            input_dim: 5,
            output_dim: 2,
            ..MlpConfig::default()
        };
        assert_eq!(cfg.layer_shapes(), vec![(8, 5), (8, 8), (2, 8)]);
        let single = MlpConfig { depth: 1, ..cfg };
        assert_eq!(single.layer_shapes(), vec![(2, 5)]);
    }

    /// Whole-network check: loss gradient w.r.t. every proxy entry.
    #[test]
    fn network_proxy_gradients() {
        let cfg = MlpConfig {
            depth: 3,
            width: 8,
            input_dim: 6,
            output_dim: 3,
            iterations: 5,
            seed: 3,
            ..MlpConfig::default()
        };
        let mut net = Mlp::new(&cfg).unwrap();
        let mut rng = seeded(99, 0);
        let x = gaussian_matrix(&mut rng, 7, 6, 0.0, 1.0);
        let labels = [0, 1, 2, 0, 1, 2, 0];
        let (_, grads, _) = net.loss_and_grads(&x, &labels).unwrap();
        let one = DenseMatrix::from_rows(&[vec![1.0]]).unwrap();
        #[allow(clippy::needless_range_loop)]
        for l in 0..net.depth() {
            let z = net.layers[l].z().clone();
            let probe = net.clone();
            let fd = finite_diff_grad(
                |m| {
                    let mut n = probe.clone();
                    *n.layers[l].params_mut().z = m.clone();
                    let trace = n.forward(&x)?;
                    Ok(one.scale(softmax_cross_entropy(trace.logits(), &labels).0))
                },
                &z,
                &one,
                1e-5,
            )
            .unwrap();
            let (err, _) = max_rel_error(&grads[l].dz, &fd);
            assert!(err <= 1e-4, "layer {l}: {err}");
        }
    }
}
