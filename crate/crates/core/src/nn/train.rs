use rand::seq::SliceRandom;

use super::layer::LayerGrads;
use super::mlp::{softmax_cross_entropy, Mlp, MlpConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::rng::{seeded, Rng};

/// RNG stream used for mini-batch shuffling (layers use streams `1..=depth`).
pub const SHUFFLE_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, Default)]
struct Velocity {
    z: Vec<f64>,
    bias: Vec<f64>,
    gains: Vec<f64>,
}

/// SGD with heavy-ball momentum: `v ← μ v + g (+ λ θ)`, `θ ← θ − η v`.
/// Weight decay applies to proxies only, never to biases or gains.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Velocity>,
}

fn momentum_step(param: &mut [f64], grad: &[f64], vel: &mut Vec<f64>, lr: f64, mu: f64, decay: f64) {
    if vel.len() != param.len() {
        *vel = vec![0.0; param.len()];
    }
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(vel.iter_mut()) {
        *v = mu * *v + g + decay * *p;
        *p -= lr * *v;
    }
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn apply(&mut self, net: &mut Mlp, grads: &[LayerGrads]) {
        self.velocity.resize_with(net.depth(), Velocity::default);
        let (lr, mu, wd) = (self.lr, self.momentum, self.weight_decay);
        for ((layer, g), vel) in net.layers.iter_mut().zip(grads).zip(&mut self.velocity) {
            let p = layer.params_mut();
            momentum_step(p.z.as_mut_slice(), g.dz.as_slice(), &mut vel.z, lr, mu, wd);
            momentum_step(p.bias, &g.d_bias, &mut vel.bias, lr, mu, 0.0);
            if let (Some(gains), Some(dg)) = (p.gains.as_mut(), &g.d_gains) {
                momentum_step(gains, dg, &mut vel.gains, lr, mu, 0.0);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean mini-batch loss over the epoch.
    pub train_loss: f64,
    /// Error on the full training set after the epoch.
    pub train_error: f64,
    pub test_error: f64,
}

/// Network, optimizer and shuffling state for one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub net: Mlp,
    pub opt: Sgd,
    pub batch_size: usize,
    shuffle_rng: Rng,
    steps: u64,
}

impl Trainer {
    pub fn new(cfg: &MlpConfig) -> Result<Self> {
        Ok(Self {
            net: Mlp::new(cfg)?,
            opt: Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay),
            batch_size: cfg.batch_size,
            shuffle_rng: seeded(cfg.seed, SHUFFLE_STREAM),
            steps: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One SGD step on a batch; returns the batch loss before the update.
    pub fn step(&mut self, x: &DenseMatrix, labels: &[usize]) -> Result<f64> {
        let (loss, grads, _) = self.net.loss_and_grads(x, labels)?;
        if !loss.is_finite() {
            return Err(Error::Config(format!("training diverged at step {}", self.steps)));
        }
        self.opt.apply(&mut self.net, &grads);
        self.steps += 1;
        Ok(loss)
    }

    /// Batch index lists for one epoch: a fresh shuffle, last partial batch
    /// kept.
    pub fn epoch_batches(&mut self, n: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.shuffle_rng);
        order.chunks(self.batch_size).map(|c| c.to_vec()).collect()
    }

    /// Runs one epoch and returns the mean batch loss.
    pub fn run_epoch(&mut self, train: &Dataset) -> Result<f64> {
        let batches = self.epoch_batches(train.len());
        let mut total = 0.0;
        for idx in &batches {
            let (x, y) = train.select(idx);
            total += self.step(&x, &y)?;
        }
        Ok(total / batches.len() as f64)
    }
}

fn check_dims(cfg: &MlpConfig, ds: &Dataset, which: &str) -> Result<()> {
    if ds.dim() != cfg.input_dim {
        return Err(Error::Config(format!(
            "{which} data has dimension {}, config expects {}",
            ds.dim(),
            cfg.input_dim
        )));
    }
    if ds.classes > cfg.output_dim {
        return Err(Error::Config(format!(
            "{which} data has {} classes, network outputs {}",
            ds.classes, cfg.output_dim
        )));
    }
    Ok(())
}

/// Trains for `cfg.epochs` epochs and reports the learning curves.
pub fn train_mlp(cfg: &MlpConfig, train: &Dataset, test: &Dataset) -> Result<Vec<EpochMetrics>> {
    check_dims(cfg, train, "training")?;
    check_dims(cfg, test, "test")?;
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut trainer = Trainer::new(cfg)?;
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let train_loss = trainer.run_epoch(train)?;
        let train_error = trainer.net.error_rate(&train.features, &train.labels)?;
        let test_error = if test.is_empty() {
            f64::NAN
        } else {
            trainer.net.error_rate(&test.features, &test.labels)?
        };
        curve.push(EpochMetrics {
            epoch,
            train_loss,
            train_error,
            test_error,
        });
    }
    Ok(curve)
}

/// Mean absolute pre-activation and mean absolute loss gradient w.r.t. it,
/// per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeProbe {
    pub activation: Vec<f64>,
    pub gradient: Vec<f64>,
}

pub fn probe_magnitudes(net: &mut Mlp, x: &DenseMatrix, labels: &[usize]) -> Result<MagnitudeProbe> {
    let trace = net.forward(x)?;
    let (_, d_logits) = softmax_cross_entropy(trace.logits(), labels);
    let (_, d_pre) = net.backward(&trace, &d_logits)?;
    Ok(MagnitudeProbe {
        activation: trace.pre.iter().map(DenseMatrix::mean_abs).collect(),
        gradient: d_pre.iter().map(DenseMatrix::mean_abs).collect(),
    })
}
