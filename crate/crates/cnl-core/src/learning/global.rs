//! The agency-level (global) model and its exchange-round update.
//!
//! The neighbor summation runs under encryption (or the plaintext
//! simulation of it); the learnable transform is applied by the owner
//! after decryption:
//!
//!   Xi' = ReLU(Xi * W_self + (neighbor_sum / max(1, addends)) * W_neigh)
//!
//! With zero contributing neighbors the neighbor term is dropped
//! entirely. Each agency keeps its own private parameters.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::exchange::{ExchangeBackend, ExchangeOutcome};
use crate::error::{CoreError, CoreResult};
use crate::matrix::DenseMatrix;
use crate::nn::{LinearLayer, Optimizer, ParamTensor};

/// The exchange-round transform parameters (part of the agency-private
/// global model).
#[derive(Debug, Clone)]
pub struct GlobalLayer {
    pub w_self: ParamTensor,
    pub w_neigh: ParamTensor,
    cache_xi: Option<DenseMatrix>,
    cache_neigh: Option<DenseMatrix>,
    cache_pre: Option<DenseMatrix>,
}

impl GlobalLayer {
    pub fn new(dim: usize, rng: &mut impl Rng) -> Self {
        GlobalLayer {
            w_self: ParamTensor::glorot("global_w_self", dim, dim, rng),
            w_neigh: ParamTensor::glorot("global_w_neigh", dim, dim, rng),
            cache_xi: None,
            cache_neigh: None,
            cache_pre: None,
        }
    }

    /// Identity-self, zero-neighbor transform (keeps Xi unchanged up to
    /// ReLU); used by tests and as a conservative default.
    pub fn identity(dim: usize) -> Self {
        let mut w_self = ParamTensor::zeros("global_w_self", dim, dim);
        for i in 0..dim {
            w_self.value.set(i, i, 1.0);
        }
        GlobalLayer {
            w_self,
            w_neigh: ParamTensor::zeros("global_w_neigh", dim, dim),
            cache_xi: None,
            cache_neigh: None,
            cache_pre: None,
        }
    }

    /// Forward with cached activations; `neigh_mean` is `None` when no
    /// neighbor contributed this round.
    pub fn forward(
        &mut self,
        xi: &DenseMatrix,
        neigh_mean: Option<&DenseMatrix>,
    ) -> CoreResult<DenseMatrix> {
        let mut pre = xi.matmul(&self.w_self.value)?;
        if let Some(nm) = neigh_mean {
            pre = pre.add(&nm.matmul(&self.w_neigh.value)?)?;
        }
        self.cache_xi = Some(xi.clone());
        self.cache_neigh = neigh_mean.cloned();
        self.cache_pre = Some(pre.clone());
        Ok(pre.map(|v| v.max(0.0)))
    }

    /// Accumulates parameter gradients; the embedding itself is treated as
    /// data (detached between rounds), so no input gradient is returned.
    pub fn backward(&mut self, grad_out: &DenseMatrix) -> CoreResult<()> {
        let pre = self
            .cache_pre
            .as_ref()
            .ok_or_else(|| CoreError::invalid("backward before forward"))?;
        if !pre.same_shape(grad_out) {
            return Err(CoreError::shape("global layer grad shape"));
        }
        let d_pre_data: Vec<f64> = pre
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(p, g)| if *p > 0.0 { *g } else { 0.0 })
            .collect();
        let d_pre = DenseMatrix::from_vec(pre.rows(), pre.cols(), d_pre_data)?;
        let xi = self.cache_xi.as_ref().expect("cached with pre");
        self.w_self.grad = self.w_self.grad.add(&xi.transpose().matmul(&d_pre)?)?;
        if let Some(nm) = &self.cache_neigh {
            self.w_neigh.grad = self.w_neigh.grad.add(&nm.transpose().matmul(&d_pre)?)?;
        }
        Ok(())
    }
}

/// One exchange-round update of the agency embedding.
pub fn global_exchange_round(
    layer: &mut GlobalLayer,
    xi: &DenseMatrix,
    outcome: &ExchangeOutcome,
) -> CoreResult<DenseMatrix> {
    if outcome.addend_count == 0 {
        return layer.forward(xi, None);
    }
    if !outcome.sum.same_shape(xi) {
        return Err(CoreError::shape(format!(
            "neighbor sum {}x{} vs embedding {}x{}",
            outcome.sum.rows(),
            outcome.sum.cols(),
            xi.rows(),
            xi.cols()
        )));
    }
    let mean = outcome.sum.scale(1.0 / outcome.addend_count as f64);
    layer.forward(xi, Some(&mean))
}

/// Full agency-private global model: exchange transform plus a decoder
/// trained on agency-level targets.
#[derive(Debug, Clone)]
pub struct GlobalModel {
    pub layer: GlobalLayer,
    pub decoder: LinearLayer,
    pub dim: usize,
}

/// Targets for the global decoder.
#[derive(Debug, Clone)]
pub enum GlobalTarget {
    /// Per-row continuous targets (rows aligned with the Xi series), with
    /// an optional row mask restricting the loss (e.g. train rows only).
    Continuous {
        values: DenseMatrix,
        train_rows: Option<Vec<usize>>,
    },
    /// One class id for the whole agency.
    Class { label: usize, classes: usize },
}

/// Result of running `task_iter` exchange rounds with interleaved
/// gradient steps.
#[derive(Debug, Clone)]
pub struct GlobalTrainOutcome {
    pub xi: DenseMatrix,
    pub losses: Vec<f64>,
    pub rounds_run: usize,
    pub any_partial: bool,
}

impl GlobalModel {
    pub fn new(dim: usize, target: &GlobalTarget, rng: &mut impl Rng) -> Self {
        let out_width = match target {
            GlobalTarget::Continuous { .. } => 1,
            GlobalTarget::Class { classes, .. } => *classes,
        };
        GlobalModel {
            layer: GlobalLayer::new(dim, rng),
            decoder: LinearLayer::new(
                ParamTensor::glorot("global_decode_w", dim, out_width, rng),
                ParamTensor::zeros("global_decode_b", 1, out_width),
                false,
            ),
            dim,
        }
    }

    fn params_mut(&mut self) -> [&mut ParamTensor; 4] {
        [
            &mut self.layer.w_self,
            &mut self.layer.w_neigh,
            &mut self.decoder.weight,
            &mut self.decoder.bias,
        ]
    }

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// One exchange-round update on a fetched neighbor sum, followed by
    /// `steps` gradient steps on the agency-level loss. Returns the
    /// updated (detached) embedding and the per-step losses.
    pub fn round_update(
        &mut self,
        xi: &DenseMatrix,
        outcome: &ExchangeOutcome,
        steps: usize,
        optimizer: &mut Optimizer,
        target: &GlobalTarget,
    ) -> CoreResult<(DenseMatrix, Vec<f64>)> {
        let mut losses = Vec::with_capacity(steps);
        let mut updated = global_exchange_round(&mut self.layer, xi, outcome)?;
        for _ in 0..steps {
            self.zero_grads();
            updated = global_exchange_round(&mut self.layer, xi, outcome)?;
            let out = self.decoder.forward(&updated)?;
            let (loss, d_out) = match target {
                GlobalTarget::Continuous { values, train_rows } => crate::nn::compute_loss_masked(
                    crate::nn::LossKind::Mse,
                    &out,
                    &crate::nn::LossTarget::Values(values),
                    train_rows.as_deref(),
                )?,
                GlobalTarget::Class { label, .. } => {
                    let labels: Vec<usize> = (0..out.rows()).map(|_| *label).collect();
                    crate::nn::compute_loss(
                        crate::nn::LossKind::CrossEntropy,
                        &out,
                        &crate::nn::LossTarget::Classes(&labels),
                    )?
                }
            };
            losses.push(loss);
            let d_h = self.decoder.backward(&d_out)?;
            self.layer.backward(&d_h)?;
            optimizer.step(&mut self.params_mut())?;
        }
        Ok((updated, losses))
    }

    /// Runs `rounds` exchange rounds for a single agency, publishing its
    /// embedding each round; `publish_peers` lets the caller publish the
    /// other agencies' embeddings at the start of every round.
    #[allow(clippy::too_many_arguments)]
    pub fn train(
        &mut self,
        agency: usize,
        xi0: &DenseMatrix,
        target: &GlobalTarget,
        rounds: usize,
        steps_per_round: usize,
        optimizer: &mut Optimizer,
        backend: &mut dyn ExchangeBackend,
        publish_peers: &mut dyn FnMut(&mut dyn ExchangeBackend, usize) -> CoreResult<()>,
    ) -> CoreResult<GlobalTrainOutcome> {
        let mut xi = xi0.clone();
        let mut losses = Vec::new();
        let mut any_partial = false;
        for round in 0..rounds {
            publish_peers(backend, round)?;
            backend.publish(agency, &xi)?;
            let outcome = backend.fetch_neighbor_sum(agency)?;
            any_partial |= outcome.partial;
            let (updated, step_losses) =
                self.round_update(&xi, &outcome, steps_per_round, optimizer, target)?;
            losses.extend(step_losses);
            xi = updated;
            backend.end_round()?;
        }
        Ok(GlobalTrainOutcome {
            xi,
            losses,
            rounds_run: rounds,
            any_partial,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::exchange::PlaintextExchange;
    use crate::graph::{build_global_graph, AgencyPartition, GlobalGraphMode};
    use crate::nn::OptimizerKind;
    use crate::seed_rng;
    use alloc::vec;

    #[test]
    fn zero_neighbors_is_self_transform_only() {
        let mut layer = GlobalLayer::identity(2);
        let xi = DenseMatrix::from_rows(&[vec![1.5, -2.0]]).unwrap();
        let outcome = ExchangeOutcome {
            sum: DenseMatrix::zeros(1, 2),
            addend_count: 0,
            partial: false,
        };
        let out = global_exchange_round(&mut layer, &xi, &outcome).unwrap();
        assert_eq!(out.data(), &[1.5, 0.0]); // identity then ReLU
    }

    #[test]
    fn identity_self_zero_neighbor_keeps_xi_up_to_relu() {
        let mut layer = GlobalLayer::identity(3);
        let xi = DenseMatrix::from_rows(&[vec![0.25, 3.0, -1.0]]).unwrap();
        let outcome = ExchangeOutcome {
            sum: DenseMatrix::from_rows(&[vec![100.0, 100.0, 100.0]]).unwrap(),
            addend_count: 2,
            partial: false,
        };
        let out = global_exchange_round(&mut layer, &xi, &outcome).unwrap();
        assert_eq!(out.data(), &[0.25, 3.0, 0.0]);
    }

    #[test]
    fn three_neighbors_identity_transforms_match_plaintext_oracle() {
        // Xi' = ReLU(Xi + mean(neighbors)) with identity self and identity
        // neighbor weights.
        let mut layer = GlobalLayer::identity(2);
        for i in 0..2 {
            layer.w_neigh.value.set(i, i, 1.0);
        }
        let xi = DenseMatrix::from_rows(&[vec![1.0, -4.0]]).unwrap();
        let neighbors = [
            vec![1.0, 1.0],
            vec![2.0, 2.0],
            vec![3.0, 0.0],
        ];
        let mut sum = DenseMatrix::zeros(1, 2);
        for nb in &neighbors {
            sum = sum.add(&DenseMatrix::from_rows(&[nb.clone()]).unwrap()).unwrap();
        }
        let outcome = ExchangeOutcome {
            sum,
            addend_count: 3,
            partial: false,
        };
        let out = global_exchange_round(&mut layer, &xi, &outcome).unwrap();
        // oracle: ReLU([1, -4] + [2, 1]) = [3, 0]
        assert_eq!(out.data(), &[3.0, 0.0]);
    }

    #[test]
    fn constant_targets_drive_loss_to_zero() {
        let p = AgencyPartition::new(vec![0, 1, 2], 3).unwrap();
        let gg = build_global_graph(&p, GlobalGraphMode::FullyConnected, None).unwrap();
        let mut rng = seed_rng(9);
        let target = GlobalTarget::Continuous {
            values: DenseMatrix::from_rows(&[vec![2.5], vec![2.5]]).unwrap(),
            train_rows: None,
        };
        let mut model = GlobalModel::new(4, &target, &mut rng);
        let mut optimizer = Optimizer::new(OptimizerKind::Adam, 0.05, 0.0);
        let mut backend = PlaintextExchange::new(&gg);
        let xi0 = DenseMatrix::zeros(2, 4);
        let peers_xi = DenseMatrix::zeros(2, 4);
        let mut publish = |b: &mut dyn ExchangeBackend, _round: usize| {
            b.publish(1, &peers_xi)?;
            b.publish(2, &peers_xi)?;
            Ok(())
        };
        let out = model
            .train(0, &xi0, &target, 30, 10, &mut optimizer, &mut backend, &mut publish)
            .unwrap();
        let last = *out.losses.last().unwrap();
        assert!(last < 1e-3, "final loss {}", last);
        assert_eq!(out.rounds_run, 30);
    }

    #[test]
    fn every_agency_changes_after_round_one_unless_neighbors_zeroed() {
        let p = AgencyPartition::new(vec![0, 1, 2, 3, 4], 5).unwrap();
        let gg = build_global_graph(&p, GlobalGraphMode::FullyConnected, None).unwrap();
        let mut backend = PlaintextExchange::new(&gg);
        let mut rng = seed_rng(10);
        let dim = 3;
        let mut embeddings: Vec<DenseMatrix> = (0..5)
            .map(|_| {
                let mut m = DenseMatrix::zeros(1, dim);
                for v in m.data_mut() {
                    *v = rand::Rng::gen_range(&mut rng, 0.1..1.0);
                }
                m
            })
            .collect();
        let mut layers: Vec<GlobalLayer> = (0..5)
            .map(|_| {
                let mut l = GlobalLayer::identity(dim);
                for i in 0..dim {
                    l.w_neigh.value.set(i, i, 0.5);
                }
                l
            })
            .collect();
        for k in 0..5 {
            backend.publish(k, &embeddings[k]).unwrap();
        }
        let before = embeddings.clone();
        for k in 0..5 {
            let outcome = backend.fetch_neighbor_sum(k).unwrap();
            embeddings[k] = global_exchange_round(&mut layers[k], &before[k], &outcome).unwrap();
            assert_ne!(embeddings[k], before[k], "agency {} unchanged", k);
        }
    }
}
