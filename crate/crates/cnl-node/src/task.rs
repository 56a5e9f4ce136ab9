//! Task descriptors propagated through the mesh.

use serde::{Deserialize, Serialize};

use crate::error::{NodeError, NodeResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    NodeRegression,
    NodeClassification,
    EdgeRegression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingModel {
    Gcn,
    SageMean,
    CustomizedTemporal,
}

impl EmbeddingModel {
    pub fn to_core(self) -> cnl_core::learning::EmbedModelKind {
        match self {
            EmbeddingModel::Gcn => cnl_core::learning::EmbedModelKind::Gcn,
            EmbeddingModel::SageMean => cnl_core::learning::EmbedModelKind::SageMean,
            EmbeddingModel::CustomizedTemporal => {
                cnl_core::learning::EmbedModelKind::CustomizedTemporal
            }
        }
    }
}

/// Hyperparameters carried inside a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for TaskHyper {
    fn default() -> Self {
        TaskHyper {
            lr: 0.01,
            weight_decay: 5e-4,
            epochs: 200,
            lookback: 20,
            horizon: 5,
            seed: 0,
        }
    }
}

/// The task descriptor every node registers once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub task_id: String,
    pub task_kind: TaskKind,
    pub embedding_model: EmbeddingModel,
    /// Embedding dimension exchanged between agencies.
    pub dim: usize,
    /// Number of synchronized global exchange rounds.
    pub task_iter: usize,
    /// HE computing agencies chosen per target per round.
    pub he_agency_count: usize,
    pub hyper: TaskHyper,
    /// Dataset selector, resolved against each node's data directory.
    pub dataset: String,
    /// Paillier modulus size; 512 is test-only, production keys are
    /// 1024 or 2048 bits.
    #[serde(default = "default_paillier_bits")]
    pub paillier_bits: u64,
}

fn default_paillier_bits() -> u64 {
    1024
}

impl TaskConfig {
    pub fn validate(&self, neighbor_count: usize) -> NodeResult<()> {
        if self.task_id.is_empty() {
            return Err(NodeError::Config("task_id must be non-empty".into()));
        }
        if self.task_iter == 0 {
            return Err(NodeError::Config("task_iter must be at least 1".into()));
        }
        if self.dim == 0 {
            return Err(NodeError::Config("dim must be positive".into()));
        }
        if self.he_agency_count == 0 || self.he_agency_count > neighbor_count {
            return Err(NodeError::Config(format!(
                "he_agency_count {} outside 1..={}",
                self.he_agency_count, neighbor_count
            )));
        }
        Ok(())
    }
}
