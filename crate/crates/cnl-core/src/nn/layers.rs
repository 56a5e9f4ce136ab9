//! Forward/backward implementations of the individual layers.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::param::ParamTensor;
use crate::error::{CoreError, CoreResult};
use crate::fp;
use crate::graph::Graph;
use crate::matrix::DenseMatrix;

/// Symmetric GCN propagation operator: D̃^{-1/2} (A + I) D̃^{-1/2} with D̃
/// the (weighted) degree matrix of A + I. Equals the identity for an
/// edgeless graph.
pub fn normalize_adjacency(g: &Graph) -> DenseMatrix {
    let n = g.node_count();
    let mut a = g.adjacency_matrix();
    for i in 0..n {
        a.add_at(i, i, 1.0);
    }
    let mut inv_sqrt = vec![0.0; n];
    for i in 0..n {
        let deg: f64 = a.row(i).iter().sum();
        inv_sqrt[i] = 1.0 / fp::sqrt(deg);
    }
    for i in 0..n {
        for j in 0..n {
            let v = a.get(i, j);
            if v != 0.0 {
                a.set(i, j, inv_sqrt[i] * v * inv_sqrt[j]);
            }
        }
    }
    a
}

/// Weighted neighbor-mean operator: row i averages i's neighbors with
/// weights proportional to edge weight; isolated rows stay zero.
pub fn sage_mean_operator(g: &Graph) -> DenseMatrix {
    let n = g.node_count();
    let mut m = DenseMatrix::zeros(n, n);
    let adj = g.weighted_adjacency_lists();
    for (i, neighbors) in adj.iter().enumerate() {
        let total: f64 = neighbors.iter().map(|(_, w)| *w).sum();
        if total == 0.0 {
            continue;
        }
        for &(j, w) in neighbors {
            m.add_at(i, j, w / total);
        }
    }
    m
}

/// Mean of the selected rows of `H`, summed in ascending index order.
pub fn mean_pool(h: &DenseMatrix, rows: &[usize]) -> CoreResult<Vec<f64>> {
    if rows.is_empty() {
        return Err(CoreError::invalid("mean_pool over empty row set"));
    }
    let mut sorted = rows.to_vec();
    sorted.sort_unstable();
    let mut acc = vec![0.0; h.cols()];
    for &r in &sorted {
        if r >= h.rows() {
            return Err(CoreError::invalid(format!("row {} out of range", r)));
        }
        for (a, v) in acc.iter_mut().zip(h.row(r)) {
            *a += *v;
        }
    }
    let inv = 1.0 / sorted.len() as f64;
    for a in acc.iter_mut() {
        *a *= inv;
    }
    Ok(acc)
}

/// One-shot GCN propagation: sigma(Â · H · W).
pub fn gcn_forward(
    a_hat: &DenseMatrix,
    h: &DenseMatrix,
    w: &DenseMatrix,
    relu: bool,
) -> CoreResult<DenseMatrix> {
    let pre = a_hat.matmul(h)?.matmul(w)?;
    Ok(if relu { pre.map(|v| v.max(0.0)) } else { pre })
}

fn relu_mask_backward(pre: &DenseMatrix, grad_out: &DenseMatrix) -> CoreResult<DenseMatrix> {
    pre.zip_mask(grad_out)
}

/// GCN layer with cached activations for the backward pass.
#[derive(Debug, Clone)]
pub struct GcnLayer {
    pub a_hat: DenseMatrix,
    pub weight: ParamTensor,
    pub relu: bool,
    cache_ax: Option<DenseMatrix>,
    cache_pre: Option<DenseMatrix>,
}

impl GcnLayer {
    pub fn new(a_hat: DenseMatrix, weight: ParamTensor, relu: bool) -> Self {
        GcnLayer {
            a_hat,
            weight,
            relu,
            cache_ax: None,
            cache_pre: None,
        }
    }

    pub fn forward(&mut self, x: &DenseMatrix) -> CoreResult<DenseMatrix> {
        let ax = self.a_hat.matmul(x)?;
        let pre = ax.matmul(&self.weight.value)?;
        self.cache_ax = Some(ax);
        let out = if self.relu {
            pre.map(|v| v.max(0.0))
        } else {
            pre.clone()
        };
        self.cache_pre = Some(pre);
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &DenseMatrix) -> CoreResult<DenseMatrix> {
        let pre = self.cache_pre.as_ref().ok_or_else(no_forward)?;
        let ax = self.cache_ax.as_ref().ok_or_else(no_forward)?;
        let d_pre = if self.relu {
            relu_mask_backward(pre, grad_out)?
        } else {
            grad_out.clone()
        };
        let d_w = ax.transpose().matmul(&d_pre)?;
        self.weight.grad = self.weight.grad.add(&d_w)?;
        // Â is symmetric, so Âᵀ = Â.
        let d_x = self.a_hat.matmul(&d_pre)?.matmul(&self.weight.value.transpose())?;
        Ok(d_x)
    }
}

/// GraphSAGE-mean layer: ReLU(X·W_self + (M·X)·W_neigh) with M the
/// weighted neighbor-mean operator; full neighborhoods, no sampling.
#[derive(Debug, Clone)]
pub struct SageMeanLayer {
    pub mean_op: DenseMatrix,
    pub w_self: ParamTensor,
    pub w_neigh: ParamTensor,
    pub relu: bool,
    cache_x: Option<DenseMatrix>,
    cache_mx: Option<DenseMatrix>,
    cache_pre: Option<DenseMatrix>,
}

impl SageMeanLayer {
    pub fn new(mean_op: DenseMatrix, w_self: ParamTensor, w_neigh: ParamTensor, relu: bool) -> Self {
        SageMeanLayer {
            mean_op,
            w_self,
            w_neigh,
            relu,
            cache_x: None,
            cache_mx: None,
            cache_pre: None,
        }
    }

    pub fn forward(&mut self, x: &DenseMatrix) -> CoreResult<DenseMatrix> {
        let mx = self.mean_op.matmul(x)?;
        let pre = x.matmul(&self.w_self.value)?.add(&mx.matmul(&self.w_neigh.value)?)?;
        self.cache_x = Some(x.clone());
        self.cache_mx = Some(mx);
        let out = if self.relu {
            pre.map(|v| v.max(0.0))
        } else {
            pre.clone()
        };
        self.cache_pre = Some(pre);
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &DenseMatrix) -> CoreResult<DenseMatrix> {
        let pre = self.cache_pre.as_ref().ok_or_else(no_forward)?;
        let x = self.cache_x.as_ref().ok_or_else(no_forward)?;
        let mx = self.cache_mx.as_ref().ok_or_else(no_forward)?;
        let d_pre = if self.relu {
            relu_mask_backward(pre, grad_out)?
        } else {
            grad_out.clone()
        };
        self.w_self.grad = self.w_self.grad.add(&x.transpose().matmul(&d_pre)?)?;
        self.w_neigh.grad = self.w_neigh.grad.add(&mx.transpose().matmul(&d_pre)?)?;
        let d_x_self = d_pre.matmul(&self.w_self.value.transpose())?;
        let d_x_neigh = self
            .mean_op
            .transpose()
            .matmul(&d_pre.matmul(&self.w_neigh.value.transpose())?)?;
        d_x_self.add(&d_x_neigh)
    }
}

/// Fully connected layer with bias; optional fused ReLU.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub weight: ParamTensor,
    pub bias: ParamTensor,
    pub relu: bool,
    cache_x: Option<DenseMatrix>,
    cache_pre: Option<DenseMatrix>,
}

impl LinearLayer {
    pub fn new(weight: ParamTensor, bias: ParamTensor, relu: bool) -> Self {
        LinearLayer {
            weight,
            bias,
            relu,
            cache_x: None,
            cache_pre: None,
        }
    }

    pub fn forward(&mut self, x: &DenseMatrix) -> CoreResult<DenseMatrix> {
        let pre = x.matmul(&self.weight.value)?.add_row_broadcast(self.bias.value.row(0))?;
        self.cache_x = Some(x.clone());
        let out = if self.relu {
            pre.map(|v| v.max(0.0))
        } else {
            pre.clone()
        };
        self.cache_pre = Some(pre);
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &DenseMatrix) -> CoreResult<DenseMatrix> {
        let pre = self.cache_pre.as_ref().ok_or_else(no_forward)?;
        let x = self.cache_x.as_ref().ok_or_else(no_forward)?;
        let d_pre = if self.relu {
            relu_mask_backward(pre, grad_out)?
        } else {
            grad_out.clone()
        };
        self.weight.grad = self.weight.grad.add(&x.transpose().matmul(&d_pre)?)?;
        let col_sums = d_pre.col_sums();
        for (g, s) in self.bias.grad.row_mut(0).iter_mut().zip(&col_sums) {
            *g += *s;
        }
        d_pre.matmul(&self.weight.value.transpose())
    }
}

/// Standalone elementwise ReLU.
#[derive(Debug, Clone, Default)]
pub struct ReluLayer {
    cache_pre: Option<DenseMatrix>,
}

impl ReluLayer {
    pub fn forward(&mut self, x: &DenseMatrix) -> CoreResult<DenseMatrix> {
        self.cache_pre = Some(x.clone());
        Ok(x.map(|v| v.max(0.0)))
    }

    pub fn backward(&mut self, grad_out: &DenseMatrix) -> CoreResult<DenseMatrix> {
        let pre = self.cache_pre.as_ref().ok_or_else(no_forward)?;
        relu_mask_backward(pre, grad_out)
    }
}

/// Default multiscale configuration: (filter size, dilation) pairs.
pub const DEFAULT_TEMPORAL_SCALES: [(usize, usize); 3] = [(3, 1), (3, 2), (5, 1)];

/// One (size, dilation, channels) scale of the temporal module.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemporalScaleSpec {
    pub size: usize,
    pub dilation: usize,
    pub channels: usize,
}

impl TemporalScaleSpec {
    pub fn receptive_field(&self) -> usize {
        (self.size - 1) * self.dilation + 1
    }
}

#[derive(Debug, Clone)]
struct TemporalScale {
    spec: TemporalScaleSpec,
    weight: ParamTensor, // channels x size
    bias: ParamTensor,   // 1 x channels
}

/// Multiscale causal 1-D convolution bank over each node's look-back
/// window, with ReLU and a temporal max-pool per channel. Input is
/// nodes x T; output is nodes x (sum of channels), independent of T.
#[derive(Debug, Clone)]
pub struct TemporalConvLayer {
    scales: Vec<TemporalScale>,
    cache_x: Option<DenseMatrix>,
    // per (node, flat channel): (argmax t, pre-activation at argmax)
    cache_argmax: Option<Vec<(usize, f64)>>,
}

impl TemporalConvLayer {
    pub fn new(scales: &[TemporalScaleSpec], rng: &mut impl rand::Rng) -> Self {
        let scales = scales
            .iter()
            .enumerate()
            .map(|(i, spec)| TemporalScale {
                spec: *spec,
                weight: ParamTensor::glorot(
                    format!("temporal{}_w", i),
                    spec.channels,
                    spec.size,
                    rng,
                ),
                bias: ParamTensor::zeros(format!("temporal{}_b", i), 1, spec.channels),
            })
            .collect();
        TemporalConvLayer {
            scales,
            cache_x: None,
            cache_argmax: None,
        }
    }

    pub fn output_width(&self) -> usize {
        self.scales.iter().map(|s| s.spec.channels).sum()
    }

    pub fn min_window(&self) -> usize {
        self.scales
            .iter()
            .map(|s| s.spec.receptive_field())
            .max()
            .unwrap_or(1)
    }

    pub fn forward(&mut self, x: &DenseMatrix) -> CoreResult<DenseMatrix> {
        let t_len = x.cols();
        if t_len < self.min_window() {
            return Err(CoreError::invalid(format!(
                "window length {} shorter than receptive field {}",
                t_len,
                self.min_window()
            )));
        }
        let n = x.rows();
        let width = self.output_width();
        let mut out = DenseMatrix::zeros(n, width);
        let mut argmax = vec![(0usize, 0.0f64); n * width];
        let mut flat_base = 0;
        for scale in &self.scales {
            let spec = scale.spec;
            let start = (spec.size - 1) * spec.dilation;
            for node in 0..n {
                let row = x.row(node);
                for c in 0..spec.channels {
                    let w = scale.weight.value.row(c);
                    let b = scale.bias.value.get(0, c);
                    let mut best_t = start;
                    let mut best_pre = f64::NEG_INFINITY;
                    for t in start..t_len {
                        let mut acc = b;
                        for (j, wj) in w.iter().enumerate() {
                            acc += wj * row[t - j * spec.dilation];
                        }
                        if acc > best_pre {
                            best_pre = acc;
                            best_t = t;
                        }
                    }
                    let flat = flat_base + c;
                    argmax[node * width + flat] = (best_t, best_pre);
                    out.set(node, flat, best_pre.max(0.0));
                }
            }
            flat_base += spec.channels;
        }
        self.cache_x = Some(x.clone());
        self.cache_argmax = Some(argmax);
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &DenseMatrix) -> CoreResult<DenseMatrix> {
        let x = self.cache_x.as_ref().ok_or_else(no_forward)?;
        let argmax = self.cache_argmax.as_ref().ok_or_else(no_forward)?;
        let n = x.rows();
        let width = self.output_width();
        if grad_out.rows() != n || grad_out.cols() != width {
            return Err(CoreError::shape("temporal backward grad shape"));
        }
        let mut d_x = DenseMatrix::zeros(n, x.cols());
        let mut flat_base = 0;
        for scale in &mut self.scales {
            let spec = scale.spec;
            for node in 0..n {
                for c in 0..spec.channels {
                    let flat = flat_base + c;
                    let (best_t, best_pre) = argmax[node * width + flat];
                    if best_pre <= 0.0 {
                        continue; // ReLU clamped the pooled maximum
                    }
                    let g = grad_out.get(node, flat);
                    if g == 0.0 {
                        continue;
                    }
                    scale.bias.grad.add_at(0, c, g);
                    for j in 0..spec.size {
                        let src = best_t - j * spec.dilation;
                        scale
                            .weight
                            .grad
                            .add_at(c, j, g * x.get(node, src));
                        d_x.add_at(node, src, g * scale.weight.value.get(c, j));
                    }
                }
            }
            flat_base += spec.channels;
        }
        Ok(d_x)
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        self.scales
            .iter()
            .flat_map(|s| [&s.weight, &s.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.scales
            .iter_mut()
            .flat_map(|s| [&mut s.weight, &mut s.bias])
            .collect()
    }
}

/// A graph-stack layer: everything except the temporal front-end.
#[derive(Debug, Clone)]
pub enum Layer {
    Gcn(GcnLayer),
    SageMean(SageMeanLayer),
    Linear(LinearLayer),
    Relu(ReluLayer),
}

impl Layer {
    pub fn forward(&mut self, x: &DenseMatrix) -> CoreResult<DenseMatrix> {
        match self {
            Layer::Gcn(l) => l.forward(x),
            Layer::SageMean(l) => l.forward(x),
            Layer::Linear(l) => l.forward(x),
            Layer::Relu(l) => l.forward(x),
        }
    }

    pub fn backward(&mut self, grad_out: &DenseMatrix) -> CoreResult<DenseMatrix> {
        match self {
            Layer::Gcn(l) => l.backward(grad_out),
            Layer::SageMean(l) => l.backward(grad_out),
            Layer::Linear(l) => l.backward(grad_out),
            Layer::Relu(l) => l.backward(grad_out),
        }
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        match self {
            Layer::Gcn(l) => vec![&l.weight],
            Layer::SageMean(l) => vec![&l.w_self, &l.w_neigh],
            Layer::Linear(l) => vec![&l.weight, &l.bias],
            Layer::Relu(_) => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        match self {
            Layer::Gcn(l) => vec![&mut l.weight],
            Layer::SageMean(l) => vec![&mut l.w_self, &mut l.w_neigh],
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Relu(_) => vec![],
        }
    }
}

fn no_forward() -> CoreError {
    CoreError::invalid("backward called before forward")
}

impl DenseMatrix {
    /// grad_out gated by `self > 0` elementwise (ReLU backward).
    fn zip_mask(&self, grad_out: &DenseMatrix) -> CoreResult<DenseMatrix> {
        if !self.same_shape(grad_out) {
            return Err(CoreError::shape("relu backward shape"));
        }
        let data = self
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(p, g)| if *p > 0.0 { *g } else { 0.0 })
            .collect();
        DenseMatrix::from_vec(self.rows(), self.cols(), data)
    }
}
