//! Model specification and the runnable graph model.
//!
//! A [`GraphModel`] is an optional temporal front-end (raw look-back
//! windows to per-node features), an optional virtual row appended after
//! the front-end (the agency embedding as an extra node), a stack of
//! graph/dense layers, and a decoder. Embeddings are the stack output,
//! taken before the decoder.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::layers::{
    normalize_adjacency, sage_mean_operator, GcnLayer, Layer, LinearLayer, ReluLayer,
    SageMeanLayer, TemporalConvLayer, TemporalScaleSpec, DEFAULT_TEMPORAL_SCALES,
};
use super::param::ParamTensor;
use crate::error::{CoreError, CoreResult};
use crate::graph::Graph;
use crate::matrix::DenseMatrix;

/// One entry of the layer stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    Gcn { width: usize, relu: bool },
    SageMean { width: usize },
    Linear { width: usize, relu: bool },
    Relu,
}

/// How node embeddings become task outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderKind {
    /// One continuous value per node.
    NodeScalar,
    /// Class logits per node.
    ClassLogits { classes: usize },
    /// One continuous value per (u, v) edge from concatenated endpoint
    /// embeddings.
    EdgeScalar,
}

/// Architecture description; validated before building.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub input_width: usize,
    /// Present for the customized temporal model: (scales, channels per
    /// scale). The front-end output feeds the layer stack.
    pub temporal: Option<(Vec<TemporalScaleSpec>, usize)>,
    pub layers: Vec<LayerKind>,
    /// Embedding dimension: the layer stack must end at this width.
    pub dim: usize,
    pub decoder: DecoderKind,
}

impl ModelSpec {
    /// Customized temporal model: multiscale conv front-end into one GCN
    /// layer, scalar decoder. The conv output width equals `dim` (so the
    /// virtual-node row can join right after the front-end), which makes
    /// `dim` a multiple of the scale count; dim 24 gives the default
    /// 8 channels per scale.
    pub fn customized_temporal(lookback: usize, dim: usize) -> CoreResult<Self> {
        let scale_count = DEFAULT_TEMPORAL_SCALES.len();
        if dim == 0 || dim % scale_count != 0 {
            return Err(CoreError::invalid(format!(
                "temporal dim must be a positive multiple of {}, got {}",
                scale_count, dim
            )));
        }
        let channels = dim / scale_count;
        let scales: Vec<TemporalScaleSpec> = DEFAULT_TEMPORAL_SCALES
            .iter()
            .map(|&(size, dilation)| TemporalScaleSpec {
                size,
                dilation,
                channels,
            })
            .collect();
        Ok(ModelSpec {
            input_width: lookback,
            temporal: Some((scales, dim)),
            layers: vec![LayerKind::Gcn {
                width: dim,
                relu: true,
            }],
            dim,
            decoder: DecoderKind::NodeScalar,
        })
    }

    /// Plain two-layer GCN encoder.
    pub fn gcn(input_width: usize, dim: usize, decoder: DecoderKind) -> Self {
        ModelSpec {
            input_width,
            temporal: None,
            layers: vec![
                LayerKind::Gcn {
                    width: dim,
                    relu: true,
                },
                LayerKind::Gcn {
                    width: dim,
                    relu: false,
                },
            ],
            dim,
            decoder,
        }
    }

    /// Plain two-layer GraphSAGE-mean encoder.
    pub fn sage_mean(input_width: usize, dim: usize, decoder: DecoderKind) -> Self {
        ModelSpec {
            input_width,
            temporal: None,
            layers: vec![
                LayerKind::SageMean { width: dim },
                LayerKind::SageMean { width: dim },
            ],
            dim,
            decoder,
        }
    }

    pub fn validate(&self) -> CoreResult<()> {
        if self.dim == 0 {
            return Err(CoreError::invalid("embedding dim must be positive"));
        }
        let mut width = match &self.temporal {
            Some((scales, conv_width)) => {
                let total: usize = scales.iter().map(|s| s.channels).sum();
                if total != *conv_width {
                    return Err(CoreError::invalid("temporal channel sum mismatch"));
                }
                total
            }
            None => self.input_width,
        };
        for layer in &self.layers {
            width = match layer {
                LayerKind::Gcn { width: w, .. }
                | LayerKind::SageMean { width: w }
                | LayerKind::Linear { width: w, .. } => *w,
                LayerKind::Relu => width,
            };
        }
        if width != self.dim {
            return Err(CoreError::invalid(format!(
                "layer stack ends at width {}, expected dim {}",
                width, self.dim
            )));
        }
        Ok(())
    }

    /// Instantiates the model over `graph` (the graph the stack layers
    /// propagate on). Parameter init order is fixed, so a fixed RNG seed
    /// reproduces the same model.
    pub fn build(&self, graph: &Graph, rng: &mut impl Rng) -> CoreResult<GraphModel> {
        self.validate()?;
        let a_hat = normalize_adjacency(graph);
        let mean_op = sage_mean_operator(graph);
        let temporal = self
            .temporal
            .as_ref()
            .map(|(scales, _)| TemporalConvLayer::new(scales, rng));
        let mut width = match &self.temporal {
            Some((_, conv_width)) => *conv_width,
            None => self.input_width,
        };
        let mut stack = Vec::new();
        for (i, kind) in self.layers.iter().enumerate() {
            match kind {
                LayerKind::Gcn { width: w, relu } => {
                    let weight = ParamTensor::glorot(format!("gcn{}_w", i), width, *w, rng);
                    stack.push(Layer::Gcn(GcnLayer::new(a_hat.clone(), weight, *relu)));
                    width = *w;
                }
                LayerKind::SageMean { width: w } => {
                    let w_self = ParamTensor::glorot(format!("sage{}_wself", i), width, *w, rng);
                    let w_neigh = ParamTensor::glorot(format!("sage{}_wneigh", i), width, *w, rng);
                    stack.push(Layer::SageMean(SageMeanLayer::new(
                        mean_op.clone(),
                        w_self,
                        w_neigh,
                        true,
                    )));
                    width = *w;
                }
                LayerKind::Linear { width: w, relu } => {
                    let weight = ParamTensor::glorot(format!("linear{}_w", i), width, *w, rng);
                    let bias = ParamTensor::zeros(format!("linear{}_b", i), 1, *w);
                    stack.push(Layer::Linear(LinearLayer::new(weight, bias, *relu)));
                    width = *w;
                }
                LayerKind::Relu => stack.push(Layer::Relu(ReluLayer::default())),
            }
        }
        let decoder = match self.decoder {
            DecoderKind::NodeScalar => Decoder::NodeScalar(LinearLayer::new(
                ParamTensor::glorot("decode_w", self.dim, 1, rng),
                ParamTensor::zeros("decode_b", 1, 1),
                false,
            )),
            DecoderKind::ClassLogits { classes } => Decoder::ClassLogits(LinearLayer::new(
                ParamTensor::glorot("decode_w", self.dim, classes, rng),
                ParamTensor::zeros("decode_b", 1, classes),
                false,
            )),
            DecoderKind::EdgeScalar => Decoder::EdgeScalar {
                linear: LinearLayer::new(
                    ParamTensor::glorot("decode_w", 2 * self.dim, 1, rng),
                    ParamTensor::zeros("decode_b", 1, 1),
                    false,
                ),
                cached_edges: Vec::new(),
                cached_rows: 0,
            },
        };
        Ok(GraphModel {
            temporal,
            virtual_feature: None,
            stack,
            decoder,
        })
    }
}

/// Decoder head over the embedding matrix.
#[derive(Debug, Clone)]
pub enum Decoder {
    NodeScalar(LinearLayer),
    ClassLogits(LinearLayer),
    EdgeScalar {
        linear: LinearLayer,
        cached_edges: Vec<(usize, usize)>,
        cached_rows: usize,
    },
}

/// A runnable model: optional temporal front-end, optional virtual row,
/// layer stack, decoder.
#[derive(Debug, Clone)]
pub struct GraphModel {
    pub temporal: Option<TemporalConvLayer>,
    /// When set, appended as the final row after the temporal front-end;
    /// this is the integrated graph's virtual node feature (no gradient).
    pub virtual_feature: Option<Vec<f64>>,
    pub stack: Vec<Layer>,
    pub decoder: Decoder,
}

impl GraphModel {
    /// Forward to embeddings (stack output; includes the virtual row when
    /// one is configured).
    pub fn forward_embed(&mut self, input: &DenseMatrix) -> CoreResult<DenseMatrix> {
        let mut z = match &mut self.temporal {
            Some(t) => t.forward(input)?,
            None => input.clone(),
        };
        if let Some(vf) = &self.virtual_feature {
            if vf.len() != z.cols() {
                return Err(CoreError::shape(format!(
                    "virtual feature width {} vs features {}",
                    vf.len(),
                    z.cols()
                )));
            }
            z.push_row(vf)?;
        }
        let mut h = z;
        for layer in &mut self.stack {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    /// Forward pass for node tasks: (embeddings, node outputs).
    pub fn forward_nodes(&mut self, input: &DenseMatrix) -> CoreResult<(DenseMatrix, DenseMatrix)> {
        let h = self.forward_embed(input)?;
        let out = match &mut self.decoder {
            Decoder::NodeScalar(l) | Decoder::ClassLogits(l) => l.forward(&h)?,
            Decoder::EdgeScalar { .. } => {
                return Err(CoreError::invalid("edge decoder needs forward_edges"))
            }
        };
        Ok((h, out))
    }

    /// Forward pass for edge tasks: (embeddings, one scalar per edge).
    pub fn forward_edges(
        &mut self,
        input: &DenseMatrix,
        edges: &[(usize, usize)],
    ) -> CoreResult<(DenseMatrix, DenseMatrix)> {
        let h = self.forward_embed(input)?;
        match &mut self.decoder {
            Decoder::EdgeScalar {
                linear,
                cached_edges,
                cached_rows,
            } => {
                let d = h.cols();
                let mut concat = DenseMatrix::zeros(edges.len(), 2 * d);
                for (i, &(u, v)) in edges.iter().enumerate() {
                    if u >= h.rows() || v >= h.rows() {
                        return Err(CoreError::invalid("edge endpoint out of range"));
                    }
                    concat.row_mut(i)[..d].copy_from_slice(h.row(u));
                    concat.row_mut(i)[d..].copy_from_slice(h.row(v));
                }
                let out = linear.forward(&concat)?;
                *cached_edges = edges.to_vec();
                *cached_rows = h.rows();
                Ok((h, out))
            }
            _ => Err(CoreError::invalid("node decoder needs forward_nodes")),
        }
    }

    /// Backward pass matching the latest forward; accumulates parameter
    /// gradients and returns the gradient w.r.t. the raw input.
    pub fn backward(&mut self, grad_out: &DenseMatrix) -> CoreResult<DenseMatrix> {
        let d_h = match &mut self.decoder {
            Decoder::NodeScalar(l) | Decoder::ClassLogits(l) => l.backward(grad_out)?,
            Decoder::EdgeScalar {
                linear,
                cached_edges,
                cached_rows,
            } => {
                let d_concat = linear.backward(grad_out)?;
                let d = d_concat.cols() / 2;
                let mut d_h = DenseMatrix::zeros(*cached_rows, d);
                for (i, &(u, v)) in cached_edges.iter().enumerate() {
                    for c in 0..d {
                        d_h.add_at(u, c, d_concat.get(i, c));
                        d_h.add_at(v, c, d_concat.get(i, d + c));
                    }
                }
                d_h
            }
        };
        let mut grad = d_h;
        for layer in self.stack.iter_mut().rev() {
            grad = layer.backward(&grad)?;
        }
        if self.virtual_feature.is_some() {
            // drop the virtual row: its feature is a constant, not a parameter
            let real = grad.rows() - 1;
            let mut trimmed = DenseMatrix::zeros(real, grad.cols());
            for r in 0..real {
                trimmed.row_mut(r).copy_from_slice(grad.row(r));
            }
            grad = trimmed;
        }
        match &mut self.temporal {
            Some(t) => t.backward(&grad),
            None => Ok(grad),
        }
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        let mut out = Vec::new();
        if let Some(t) = &self.temporal {
            out.extend(t.params());
        }
        for layer in &self.stack {
            out.extend(layer.params());
        }
        match &self.decoder {
            Decoder::NodeScalar(l) | Decoder::ClassLogits(l) => {
                out.push(&l.weight);
                out.push(&l.bias);
            }
            Decoder::EdgeScalar { linear, .. } => {
                out.push(&linear.weight);
                out.push(&linear.bias);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out = Vec::new();
        if let Some(t) = &mut self.temporal {
            out.extend(t.params_mut());
        }
        for layer in &mut self.stack {
            out.extend(layer.params_mut());
        }
        match &mut self.decoder {
            Decoder::NodeScalar(l) | Decoder::ClassLogits(l) => {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
            Decoder::EdgeScalar { linear, .. } => {
                out.push(&mut linear.weight);
                out.push(&mut linear.bias);
            }
        }
        out
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Copies all parameter values out (optimizer state excluded).
    pub fn snapshot(&self) -> Vec<DenseMatrix> {
        self.params().iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[DenseMatrix]) -> CoreResult<()> {
        let mut params = self.params_mut();
        if params.len() != snapshot.len() {
            return Err(CoreError::invalid("snapshot length mismatch"));
        }
        for (p, s) in params.iter_mut().zip(snapshot) {
            p.value = s.clone();
        }
        Ok(())
    }

    /// Names of all parameters, in optimizer order.
    pub fn param_names(&self) -> Vec<String> {
        self.params().iter().map(|p| p.name.clone()).collect()
    }
}
