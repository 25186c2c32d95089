//! Feed-forward networks whose linear layers are parameterized through ONI
//! or one of the baselines, plus the training loop and signal-propagation
//! probes.

pub mod layer;
pub mod mlp;
pub mod theorems;
pub mod train;

pub use layer::{orthogonal_init, LayerGrads, LinearLayer, ParamsMut, WeightMap};
pub use mlp::{softmax_cross_entropy, ForwardTrace, Method, Mlp, MlpConfig};
pub use theorems::{theorem1_check, theorem2_check, Theorem1Report, Theorem2Report};
pub use train::{probe_magnitudes, train_mlp, EpochMetrics, MagnitudeProbe, Sgd, Trainer};
