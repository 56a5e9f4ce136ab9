//! The three-level computation: local embedding training, agency pooling,
//! global exchange rounds, and integrated (virtual-node) training, plus the
//! centralized baseline.
//!
//! The exchange itself is abstracted behind [`ExchangeBackend`] so the same
//! pipeline runs against an in-process plaintext backend (tests, fast
//! experiments) or the encrypted peer protocol (the node service crate).
//! Paillier sums are exact integer sums, so both paths agree to the
//! fixed-point quantization bound and experiment results stay
//! deterministic either way.

mod embed;
mod exchange;
mod global;
mod integrated;
mod train;

pub use embed::{pool_agency, pool_agency_series, EmbeddingRecord};
pub use exchange::{ExchangeBackend, ExchangeOutcome, PlaintextExchange};
pub use global::{global_exchange_round, GlobalLayer, GlobalModel, GlobalTarget, GlobalTrainOutcome};
pub use integrated::{integrated_graph, INTEGRATED_VIRTUAL_WEIGHT};
pub use train::{
    run_global_rounds, train_integrated_model, train_task_model, AgencyRound, ClassificationData,
    EdgeRegressionData, EmbedModelKind, Hyper, PredictionOutput, RegressionData, TaskData,
    TrainedModel,
};
