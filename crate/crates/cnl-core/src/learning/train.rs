//! Task training: local and centralized models, the integrated
//! virtual-node model, and the synchronized multi-agency round runner.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;


use super::embed::pool_agency_series;
use super::exchange::ExchangeBackend;
use super::global::{GlobalModel, GlobalTarget};
use super::integrated::{integrated_graph, INTEGRATED_VIRTUAL_WEIGHT};
use crate::error::{CoreError, CoreResult};
use crate::graph::Graph;
use crate::matrix::DenseMatrix;
use crate::nn::{
    compute_loss_masked, DecoderKind, GraphModel, LayerKind, LossKind, LossTarget, ModelSpec,
    Optimizer, OptimizerKind, WindowSet,
};
use crate::seed_rng;

/// Embedding model choice for a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedModelKind {
    Gcn,
    SageMean,
    CustomizedTemporal,
}

impl EmbedModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            EmbedModelKind::Gcn => "gcn",
            EmbedModelKind::SageMean => "sage_mean",
            EmbedModelKind::CustomizedTemporal => "customized_temporal",
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct Hyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Early stopping: stop after this many epochs without validation
    /// improvement.
    pub patience: usize,
    pub optimizer: OptimizerKind,
    /// Embedding dimension (the temporal model requires a multiple of 3).
    pub dim: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            lr: 0.01,
            weight_decay: 5e-4,
            max_epochs: 200,
            patience: 50,
            optimizer: OptimizerKind::Adam,
            dim: 16,
            lookback: 20,
            horizon: 5,
            seed: 0,
        }
    }
}

/// Windowed contagion-style data over one graph.
#[derive(Debug, Clone)]
pub struct RegressionData {
    pub graph: Graph,
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
}

impl RegressionData {
    pub fn sample_count(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }
}

/// Node classification data; the graph carries features and labels.
#[derive(Debug, Clone)]
pub struct ClassificationData {
    pub graph: Graph,
    pub classes: usize,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Edge-weight regression data; the graph carries node features.
#[derive(Debug, Clone)]
pub struct EdgeRegressionData {
    pub graph: Graph,
    pub train_edges: Vec<(usize, usize, f64)>,
    pub val_edges: Vec<(usize, usize, f64)>,
    pub test_edges: Vec<(usize, usize, f64)>,
}

/// Per-task dataset bundle.
#[derive(Debug, Clone)]
pub enum TaskData {
    Regression(RegressionData),
    Classification(ClassificationData),
    EdgeRegression(EdgeRegressionData),
}

impl TaskData {
    pub fn graph(&self) -> &Graph {
        match self {
            TaskData::Regression(d) => &d.graph,
            TaskData::Classification(d) => &d.graph,
            TaskData::EdgeRegression(d) => &d.graph,
        }
    }
}

/// What a trained model predicts on the task's test portion.
#[derive(Debug, Clone)]
pub struct PredictionOutput {
    /// Regression: test windows x nodes. Edge regression: test edges x 1.
    pub continuous: Option<DenseMatrix>,
    /// Classification: nodes x classes logits (real nodes only).
    pub class_logits: Option<DenseMatrix>,
}

/// A trained model with its embeddings and training trace.
pub struct TrainedModel {
    pub model: GraphModel,
    /// Per-sample embedding matrices (train, val, test order for
    /// regression; a single entry for static tasks). Real nodes only.
    pub embeddings: Vec<DenseMatrix>,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub best_val_loss: f64,
    pub epochs_run: usize,
}

impl TrainedModel {
    /// Pools the per-sample embeddings into the agency embedding series
    /// (samples x dim).
    pub fn agency_series(&self) -> CoreResult<DenseMatrix> {
        pool_agency_series(&self.embeddings)
    }
}

fn spec_for(data: &TaskData, kind: EmbedModelKind, hyper: &Hyper) -> CoreResult<ModelSpec> {
    match data {
        TaskData::Regression(_) => {
            let input = hyper.lookback;
                Ok(match kind {
                EmbedModelKind::CustomizedTemporal => {
                    ModelSpec::customized_temporal(input, hyper.dim)?
                }
                EmbedModelKind::Gcn => ModelSpec::gcn(input, hyper.dim, DecoderKind::NodeScalar),
                EmbedModelKind::SageMean => {
                    ModelSpec::sage_mean(input, hyper.dim, DecoderKind::NodeScalar)
                }
            })
        }
        TaskData::Classification(d) => {
            let features = d
                .graph
                .node_features
                .as_ref()
                .ok_or_else(|| CoreError::invalid("classification needs node features"))?;
            let decoder = DecoderKind::ClassLogits { classes: d.classes };
            Ok(match kind {
                EmbedModelKind::Gcn => ModelSpec::gcn(features.cols(), hyper.dim, decoder),
                EmbedModelKind::SageMean => {
                    ModelSpec::sage_mean(features.cols(), hyper.dim, decoder)
                }
                EmbedModelKind::CustomizedTemporal => {
                    return Err(CoreError::invalid(
                        "temporal model applies to time-series tasks only",
                    ))
                }
            })
        }
        TaskData::EdgeRegression(d) => {
            let features = d
                .graph
                .node_features
                .as_ref()
                .ok_or_else(|| CoreError::invalid("edge regression needs node features"))?;
            Ok(match kind {
                EmbedModelKind::Gcn => {
                    ModelSpec::gcn(features.cols(), hyper.dim, DecoderKind::EdgeScalar)
                }
                EmbedModelKind::SageMean => {
                    ModelSpec::sage_mean(features.cols(), hyper.dim, DecoderKind::EdgeScalar)
                }
                EmbedModelKind::CustomizedTemporal => {
                    return Err(CoreError::invalid(
                        "temporal model applies to time-series tasks only",
                    ))
                }
            })
        }
    }
}

/// Integrated-stage spec: consumes local embeddings (or raw windows for
/// the temporal kind) on the integrated graph.
fn integrated_spec(data: &TaskData, kind: EmbedModelKind, hyper: &Hyper) -> CoreResult<ModelSpec> {
    let decoder = match data {
        TaskData::Regression(_) => DecoderKind::NodeScalar,
        TaskData::Classification(d) => DecoderKind::ClassLogits { classes: d.classes },
        TaskData::EdgeRegression(_) => DecoderKind::EdgeScalar,
    };
    Ok(match kind {
        EmbedModelKind::CustomizedTemporal => match data {
            TaskData::Regression(_) => ModelSpec::customized_temporal(hyper.lookback, hyper.dim)?,
            _ => {
                return Err(CoreError::invalid(
                    "temporal model applies to time-series tasks only",
                ))
            }
        },
        EmbedModelKind::Gcn => ModelSpec {
            input_width: hyper.dim,
            temporal: None,
            layers: vec![LayerKind::Gcn {
                width: hyper.dim,
                relu: true,
            }],
            dim: hyper.dim,
            decoder,
        },
        EmbedModelKind::SageMean => ModelSpec {
            input_width: hyper.dim,
            temporal: None,
            layers: vec![LayerKind::SageMean { width: hyper.dim }],
            dim: hyper.dim,
            decoder,
        },
    })
}

struct EarlyStopper {
    best: f64,
    wait: usize,
    patience: usize,
    snapshot: Option<Vec<DenseMatrix>>,
}

impl EarlyStopper {
    fn new(patience: usize) -> Self {
        EarlyStopper {
            best: f64::INFINITY,
            wait: 0,
            patience,
            snapshot: None,
        }
    }

    /// Returns true when training should stop.
    fn observe(&mut self, val_loss: f64, model: &GraphModel) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.wait = 0;
            self.snapshot = Some(model.snapshot());
            false
        } else {
            self.wait += 1;
            self.wait >= self.patience
        }
    }

    fn restore_best(&self, model: &mut GraphModel) -> CoreResult<()> {
        if let Some(s) = &self.snapshot {
            model.restore(s)?;
        }
        Ok(())
    }
}

/// Per-sample inputs for the integrated stage.
enum IntegratedInput<'a> {
    /// Raw windows (temporal kind re-learns its own features).
    Raw,
    /// Frozen local embeddings per sample.
    Embeddings(&'a [DenseMatrix]),
}

/// Trains a model on the task data. Used directly for both the Local
/// model (callers pass agency-restricted data) and the Centralized model
/// (callers pass the full undivided data).
pub fn train_task_model(
    data: &TaskData,
    kind: EmbedModelKind,
    hyper: &Hyper,
) -> CoreResult<(TrainedModel, PredictionOutput)> {
    let spec = spec_for(data, kind, hyper)?;
    let mut rng = seed_rng(hyper.seed);
    let mut model = spec.build(data.graph(), &mut rng)?;
    train_model_impl(&mut model, data, hyper, None, None)
}

/// Trains the integrated model: the task data's graph is extended with
/// the virtual node, whose feature row for sample `s` is `xi_fused`
/// row `s` (row 0 for static tasks). For non-temporal kinds the
/// per-sample inputs are the local model's frozen embeddings.
pub fn train_integrated_model(
    data: &TaskData,
    kind: EmbedModelKind,
    hyper: &Hyper,
    local_embeddings: &[DenseMatrix],
    xi_fused: &DenseMatrix,
) -> CoreResult<(TrainedModel, PredictionOutput)> {
    let spec = integrated_spec(data, kind, hyper)?;
    let graph_int = integrated_graph(data.graph(), INTEGRATED_VIRTUAL_WEIGHT)?;
    let mut rng = seed_rng(hyper.seed);
    let mut model = spec.build(&graph_int, &mut rng)?;
    let inputs = match kind {
        EmbedModelKind::CustomizedTemporal => IntegratedInput::Raw,
        _ => IntegratedInput::Embeddings(local_embeddings),
    };
    if let IntegratedInput::Embeddings(e) = &inputs {
        let expected = match data {
            TaskData::Regression(d) => d.sample_count(),
            _ => 1,
        };
        if e.len() != expected {
            return Err(CoreError::invalid(format!(
                "expected {} embedding samples, got {}",
                expected,
                e.len()
            )));
        }
    }
    train_model_impl(&mut model, data, hyper, Some(inputs), Some(xi_fused))
}

/// Shared training loop. `integrated_inputs`/`xi_fused` present only for
/// the integrated stage.
fn train_model_impl(
    model: &mut GraphModel,
    data: &TaskData,
    hyper: &Hyper,
    integrated_inputs: Option<IntegratedInput<'_>>,
    xi_fused: Option<&DenseMatrix>,
) -> CoreResult<(TrainedModel, PredictionOutput)> {
    let integrated = xi_fused.is_some();
    match data {
        TaskData::Regression(d) => {
            train_regression(model, d, hyper, integrated_inputs, xi_fused)
        }
        TaskData::Classification(d) => {
            if integrated {
                train_classification(model, d, hyper, integrated_inputs, xi_fused)
            } else {
                train_classification(model, d, hyper, None, None)
            }
        }
        TaskData::EdgeRegression(d) => {
            if integrated {
                train_edges(model, d, hyper, integrated_inputs, xi_fused)
            } else {
                train_edges(model, d, hyper, None, None)
            }
        }
    }
}

fn real_node_mask(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn train_regression(
    model: &mut GraphModel,
    data: &RegressionData,
    hyper: &Hyper,
    integrated_inputs: Option<IntegratedInput<'_>>,
    xi_fused: Option<&DenseMatrix>,
) -> CoreResult<(TrainedModel, PredictionOutput)> {
    let n = data.graph.node_count();
    let n_train = data.train.len();
    let n_val = data.val.len();
    let n_test = data.test.len();
    let total = n_train + n_val + n_test;
    if let Some(xi) = xi_fused {
        if xi.rows() != total {
            return Err(CoreError::invalid(format!(
                "fused embedding rows {} != sample count {}",
                xi.rows(),
                total
            )));
        }
    }
    let mask = xi_fused.map(|_| real_node_mask(n));

    // resolve the input matrix for global sample index s
    let sample_input = |s: usize| -> &DenseMatrix {
        match &integrated_inputs {
            Some(IntegratedInput::Embeddings(e)) => &e[s],
            _ => {
                if s < n_train {
                    &data.train.inputs[s]
                } else if s < n_train + n_val {
                    &data.val.inputs[s - n_train]
                } else {
                    &data.test.inputs[s - n_train - n_val]
                }
            }
        }
    };
    let sample_target = |s: usize| -> &[f64] {
        if s < n_train {
            &data.train.targets[s]
        } else if s < n_train + n_val {
            &data.val.targets[s - n_train]
        } else {
            &data.test.targets[s - n_train - n_val]
        }
    };

    let mut optimizer = Optimizer::new(hyper.optimizer, hyper.lr, hyper.weight_decay);
    let mut stopper = EarlyStopper::new(hyper.patience);
    let mut train_losses = Vec::new();
    let mut val_losses = Vec::new();
    let mut epochs_run = 0;

    let target_matrix = |model_rows: usize, s: usize| -> DenseMatrix {
        // targets live on real nodes; the virtual row (if any) is masked
        let mut t = DenseMatrix::zeros(model_rows, 1);
        for (i, v) in sample_target(s).iter().enumerate() {
            t.set(i, 0, *v);
        }
        t
    };

    let forward_loss = |model: &mut GraphModel,
                        s: usize,
                        mask: Option<&[usize]>,
                        xi_fused: Option<&DenseMatrix>|
     -> CoreResult<(f64, DenseMatrix, DenseMatrix)> {
        if let Some(xi) = xi_fused {
            model.virtual_feature = Some(xi.row(s).to_vec());
        }
        let (h, out) = model.forward_nodes(sample_input(s))?;
        let t = target_matrix(out.rows(), s);
        let (loss, d_out) = compute_loss_masked(LossKind::Mse, &out, &LossTarget::Values(&t), mask)?;
        let _ = h;
        Ok((loss, d_out, out))
    };

    for _epoch in 0..hyper.max_epochs {
        let mut epoch_loss = 0.0;
        for s in 0..n_train {
            model.zero_grads();
            let (loss, d_out, _) = forward_loss(model, s, mask.as_deref(), xi_fused)?;
            if !loss.is_finite() {
                return Err(CoreError::NonFinite(alloc::string::String::from(
                    "training loss diverged",
                )));
            }
            model.backward(&d_out)?;
            optimizer.step(&mut model.params_mut())?;
            epoch_loss += loss;
        }
        epochs_run += 1;
        train_losses.push(epoch_loss / n_train.max(1) as f64);
        let mut val_loss = 0.0;
        for s in n_train..(n_train + n_val) {
            let (loss, _, _) = forward_loss(model, s, mask.as_deref(), xi_fused)?;
            val_loss += loss;
        }
        let val_loss = val_loss / n_val.max(1) as f64;
        val_losses.push(val_loss);
        if stopper.observe(val_loss, model) {
            break;
        }
    }
    stopper.restore_best(model)?;

    // embeddings for every sample + test predictions
    let mut embeddings = Vec::with_capacity(total);
    let mut preds = DenseMatrix::zeros(n_test, n);
    for s in 0..total {
        if let Some(xi) = xi_fused {
            model.virtual_feature = Some(xi.row(s).to_vec());
        }
        let (h, out) = model.forward_nodes(sample_input(s))?;
        let mut h_real = DenseMatrix::zeros(n, h.cols());
        for r in 0..n {
            h_real.row_mut(r).copy_from_slice(h.row(r));
        }
        embeddings.push(h_real);
        if s >= n_train + n_val {
            let row = s - n_train - n_val;
            for node in 0..n {
                preds.set(row, node, out.get(node, 0));
            }
        }
    }

    let best_val_loss = stopper.best;
    Ok((
        TrainedModel {
            model: model.clone(),
            embeddings,
            train_losses,
            val_losses,
            best_val_loss,
            epochs_run,
        },
        PredictionOutput {
            continuous: Some(preds),
            class_logits: None,
        },
    ))
}

fn train_classification(
    model: &mut GraphModel,
    data: &ClassificationData,
    hyper: &Hyper,
    integrated_inputs: Option<IntegratedInput<'_>>,
    xi_fused: Option<&DenseMatrix>,
) -> CoreResult<(TrainedModel, PredictionOutput)> {
    let n = data.graph.node_count();
    let labels = data
        .graph
        .node_labels
        .as_ref()
        .ok_or_else(|| CoreError::invalid("classification needs labels"))?
        .clone();
    let raw_features = data
        .graph
        .node_features
        .as_ref()
        .ok_or_else(|| CoreError::invalid("classification needs node features"))?;
    let input: DenseMatrix = match &integrated_inputs {
        Some(IntegratedInput::Embeddings(e)) => e[0].clone(),
        _ => raw_features.clone(),
    };
    if let Some(xi) = xi_fused {
        model.virtual_feature = Some(xi.row(0).to_vec());
    }
    // label list padded for the virtual row; it never appears in masks
    let mut padded_labels = labels.clone();
    if xi_fused.is_some() {
        padded_labels.push(0);
    }

    let mut optimizer = Optimizer::new(hyper.optimizer, hyper.lr, hyper.weight_decay);
    let mut stopper = EarlyStopper::new(hyper.patience);
    let mut train_losses = Vec::new();
    let mut val_losses = Vec::new();
    let mut epochs_run = 0;
    for _epoch in 0..hyper.max_epochs {
        model.zero_grads();
        let (_, out) = model.forward_nodes(&input)?;
        let (loss, d_out) = compute_loss_masked(
            LossKind::CrossEntropy,
            &out,
            &LossTarget::Classes(&padded_labels),
            Some(&data.train_idx),
        )?;
        if !loss.is_finite() {
            return Err(CoreError::NonFinite(alloc::string::String::from(
                "training loss diverged",
            )));
        }
        model.backward(&d_out)?;
        optimizer.step(&mut model.params_mut())?;
        epochs_run += 1;
        train_losses.push(loss);
        let (_, out) = model.forward_nodes(&input)?;
        let (val_loss, _) = compute_loss_masked(
            LossKind::CrossEntropy,
            &out,
            &LossTarget::Classes(&padded_labels),
            Some(&data.val_idx),
        )?;
        val_losses.push(val_loss);
        if stopper.observe(val_loss, model) {
            break;
        }
    }
    stopper.restore_best(model)?;

    let (h, out) = model.forward_nodes(&input)?;
    let mut h_real = DenseMatrix::zeros(n, h.cols());
    let mut logits = DenseMatrix::zeros(n, out.cols());
    for r in 0..n {
        h_real.row_mut(r).copy_from_slice(h.row(r));
        logits.row_mut(r).copy_from_slice(out.row(r));
    }
    let best_val_loss = stopper.best;
    Ok((
        TrainedModel {
            model: model.clone(),
            embeddings: vec![h_real],
            train_losses,
            val_losses,
            best_val_loss,
            epochs_run,
        },
        PredictionOutput {
            continuous: None,
            class_logits: Some(logits),
        },
    ))
}

fn train_edges(
    model: &mut GraphModel,
    data: &EdgeRegressionData,
    hyper: &Hyper,
    integrated_inputs: Option<IntegratedInput<'_>>,
    xi_fused: Option<&DenseMatrix>,
) -> CoreResult<(TrainedModel, PredictionOutput)> {
    let n = data.graph.node_count();
    let raw_features = data
        .graph
        .node_features
        .as_ref()
        .ok_or_else(|| CoreError::invalid("edge regression needs node features"))?;
    let input: DenseMatrix = match &integrated_inputs {
        Some(IntegratedInput::Embeddings(e)) => e[0].clone(),
        _ => raw_features.clone(),
    };
    if let Some(xi) = xi_fused {
        model.virtual_feature = Some(xi.row(0).to_vec());
    }
    let pairs = |edges: &[(usize, usize, f64)]| -> (Vec<(usize, usize)>, DenseMatrix) {
        let idx: Vec<(usize, usize)> = edges.iter().map(|&(u, v, _)| (u, v)).collect();
        let mut w = DenseMatrix::zeros(edges.len(), 1);
        for (i, &(_, _, weight)) in edges.iter().enumerate() {
            w.set(i, 0, weight);
        }
        (idx, w)
    };
    let (train_pairs, train_w) = pairs(&data.train_edges);
    let (val_pairs, val_w) = pairs(&data.val_edges);
    let (test_pairs, _) = pairs(&data.test_edges);

    let mut optimizer = Optimizer::new(hyper.optimizer, hyper.lr, hyper.weight_decay);
    let mut stopper = EarlyStopper::new(hyper.patience);
    let mut train_losses = Vec::new();
    let mut val_losses = Vec::new();
    let mut epochs_run = 0;
    for _epoch in 0..hyper.max_epochs {
        model.zero_grads();
        let (_, out) = model.forward_edges(&input, &train_pairs)?;
        let (loss, d_out) =
            compute_loss_masked(LossKind::Mse, &out, &LossTarget::Values(&train_w), None)?;
        if !loss.is_finite() {
            return Err(CoreError::NonFinite(alloc::string::String::from(
                "training loss diverged",
            )));
        }
        model.backward(&d_out)?;
        optimizer.step(&mut model.params_mut())?;
        epochs_run += 1;
        train_losses.push(loss);
        let (_, out) = model.forward_edges(&input, &val_pairs)?;
        let (val_loss, _) =
            compute_loss_masked(LossKind::Mse, &out, &LossTarget::Values(&val_w), None)?;
        val_losses.push(val_loss);
        if stopper.observe(val_loss, model) {
            break;
        }
    }
    stopper.restore_best(model)?;

    let (h, test_out) = model.forward_edges(&input, &test_pairs)?;
    let mut h_real = DenseMatrix::zeros(n, h.cols());
    for r in 0..n {
        h_real.row_mut(r).copy_from_slice(h.row(r));
    }
    let best_val_loss = stopper.best;
    Ok((
        TrainedModel {
            model: model.clone(),
            embeddings: vec![h_real],
            train_losses,
            val_losses,
            best_val_loss,
            epochs_run,
        },
        PredictionOutput {
            continuous: Some(test_out),
            class_logits: None,
        },
    ))
}

/// One agency's state inside the synchronized global rounds.
pub struct AgencyRound {
    pub xi: DenseMatrix,
    pub model: GlobalModel,
    pub optimizer: Optimizer,
    pub target: GlobalTarget,
    pub any_partial: bool,
    pub losses: Vec<f64>,
}

/// Runs `rounds` synchronized exchange rounds for all agencies over one
/// backend: everyone publishes, then everyone fetches and updates, with
/// `steps_per_round` gradient steps on each agency's private global model.
pub fn run_global_rounds(
    agencies: &mut [AgencyRound],
    backend: &mut dyn ExchangeBackend,
    rounds: usize,
    steps_per_round: usize,
) -> CoreResult<()> {
    for _round in 0..rounds {
        for (k, a) in agencies.iter().enumerate() {
            backend.publish(k, &a.xi)?;
        }
        for (k, a) in agencies.iter_mut().enumerate() {
            let outcome = backend.fetch_neighbor_sum(k)?;
            a.any_partial |= outcome.partial;
            let (xi, losses) =
                a.model
                    .round_update(&a.xi, &outcome, steps_per_round, &mut a.optimizer, &a.target)?;
            a.xi = xi;
            a.losses.extend(losses);
        }
        backend.end_round()?;
    }
    Ok(())
}
