//! Dense neural-network engine: GNN layers, temporal convolutions, losses,
//! optimizers, finite-difference gradient verification, metrics, and the
//! autoregressive baseline.
//!
//! Everything is 64-bit and summed in fixed index order, so a fixed seed
//! reproduces every number bit for bit. Backward passes are hand-written
//! per layer and checked against central finite differences in tests.

mod ar;
mod gradcheck;
mod layers;
mod loss;
mod metrics;
mod model;
mod optim;
mod param;
mod window;

pub use ar::{ar_baseline, ArPredictor};
pub use gradcheck::{grad_check_edges, grad_check_nodes};
pub use layers::{
    gcn_forward, mean_pool, normalize_adjacency, sage_mean_operator, GcnLayer, Layer, LinearLayer,
    ReluLayer, SageMeanLayer, TemporalConvLayer, TemporalScaleSpec, DEFAULT_TEMPORAL_SCALES,
};
pub use loss::{argmax_rows, compute_loss, compute_loss_masked, softmax_row, LossKind, LossTarget};
pub use metrics::{accuracy, evaluate_metrics, mae, mean_defined, pcc, rmse, MetricKind};
pub use model::{Decoder, DecoderKind, GraphModel, LayerKind, ModelSpec};
pub use optim::{Optimizer, OptimizerKind};
pub use param::ParamTensor;
pub use window::{make_windows, WindowSet};
