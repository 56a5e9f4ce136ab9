//! Central finite-difference verification of the analytic backward passes.

use alloc::vec::Vec;

use super::loss::{compute_loss_masked, LossKind, LossTarget};
use super::model::GraphModel;
use crate::error::{CoreError, CoreResult};
use crate::fp;
use crate::matrix::DenseMatrix;

const FD_STEP: f64 = 1e-5;
const MAX_PARAMS: usize = 10_000;

/// Max relative error between analytic and central finite-difference
/// gradients for a node-task model, `|g_a - g_fd| / max(1, |g_fd|)`.
pub fn grad_check_nodes(
    model: &mut GraphModel,
    input: &DenseMatrix,
    kind: LossKind,
    target: &LossTarget<'_>,
    mask: Option<&[usize]>,
) -> CoreResult<f64> {
    grad_check_impl(model, kind, target, mask, &mut |m| {
        let (_, out) = m.forward_nodes(input)?;
        Ok(out)
    })
}

/// As [`grad_check_nodes`], for the edge decoder.
pub fn grad_check_edges(
    model: &mut GraphModel,
    input: &DenseMatrix,
    edges: &[(usize, usize)],
    kind: LossKind,
    target: &LossTarget<'_>,
) -> CoreResult<f64> {
    grad_check_impl(model, kind, target, None, &mut |m| {
        let (_, out) = m.forward_edges(input, edges)?;
        Ok(out)
    })
}

fn grad_check_impl(
    model: &mut GraphModel,
    kind: LossKind,
    target: &LossTarget<'_>,
    mask: Option<&[usize]>,
    forward: &mut dyn FnMut(&mut GraphModel) -> CoreResult<DenseMatrix>,
) -> CoreResult<f64> {
    if model.param_count() > MAX_PARAMS {
        return Err(CoreError::invalid("model too large for finite differences"));
    }
    // analytic gradients
    model.zero_grads();
    let out = forward(model)?;
    let (_, d_out) = compute_loss_masked(kind, &out, target, mask)?;
    model.backward(&d_out)?;
    let analytic: Vec<DenseMatrix> = model.params().iter().map(|p| p.grad.clone()).collect();
    for g in &analytic {
        if !g.is_finite() {
            return Err(CoreError::NonFinite(alloc::string::String::from(
                "analytic gradient",
            )));
        }
    }

    let mut loss_at = |m: &mut GraphModel| -> CoreResult<f64> {
        let out = forward(m)?;
        let (loss, _) = compute_loss_masked(kind, &out, target, mask)?;
        Ok(loss)
    };

    let mut max_rel = 0.0f64;
    let param_count = analytic.len();
    for p_idx in 0..param_count {
        let entries = analytic[p_idx].data().len();
        for e_idx in 0..entries {
            let original = model.params()[p_idx].value.data()[e_idx];
            model.params_mut()[p_idx].value.data_mut()[e_idx] = original + FD_STEP;
            let plus = loss_at(model)?;
            model.params_mut()[p_idx].value.data_mut()[e_idx] = original - FD_STEP;
            let minus = loss_at(model)?;
            model.params_mut()[p_idx].value.data_mut()[e_idx] = original;
            let fd = (plus - minus) / (2.0 * FD_STEP);
            let ga = analytic[p_idx].data()[e_idx];
            let rel = fp::abs(ga - fd) / fp::abs(fd).max(1.0);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_er, Graph};
    use crate::nn::model::{DecoderKind, LayerKind, ModelSpec};
    use crate::seed_rng;
    use alloc::vec;
    use rand::Rng;

    fn random_features(rows: usize, cols: usize, rng: &mut impl Rng) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(rows, cols);
        for v in m.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        m
    }

    #[test]
    fn two_layer_gcn_on_six_node_graph() {
        let mut rng = seed_rng(100);
        let g = generate_er(6, 9, &mut rng).unwrap();
        let spec = ModelSpec::gcn(4, 3, DecoderKind::NodeScalar);
        let mut model = spec.build(&g, &mut rng).unwrap();
        let x = random_features(6, 4, &mut rng);
        let t = random_features(6, 1, &mut rng);
        let err = grad_check_nodes(&mut model, &x, LossKind::Mse, &LossTarget::Values(&t), None)
            .unwrap();
        assert!(err < 1e-4, "relative error {}", err);
    }

    #[test]
    fn temporal_plus_linear_decoder() {
        let mut rng = seed_rng(200);
        let g = Graph::new(3, vec![crate::graph::Edge::new(0, 1)]).unwrap();
        let spec = ModelSpec::customized_temporal(12, 6).unwrap();
        let mut model = spec.build(&g, &mut rng).unwrap();
        let x = random_features(3, 12, &mut rng);
        let t = random_features(3, 1, &mut rng);
        let err = grad_check_nodes(&mut model, &x, LossKind::Mse, &LossTarget::Values(&t), None)
            .unwrap();
        assert!(err < 1e-4, "relative error {}", err);
    }

    #[test]
    fn ce_loss_with_sage_layers() {
        let mut rng = seed_rng(300);
        let g = generate_er(5, 6, &mut rng).unwrap();
        let spec = ModelSpec::sage_mean(3, 4, DecoderKind::ClassLogits { classes: 3 });
        let mut model = spec.build(&g, &mut rng).unwrap();
        let x = random_features(5, 3, &mut rng);
        let labels = vec![0usize, 2, 1, 0, 2];
        let err = grad_check_nodes(
            &mut model,
            &x,
            LossKind::CrossEntropy,
            &LossTarget::Classes(&labels),
            None,
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {}", err);
    }

    #[test]
    fn edge_decoder_gradients() {
        let mut rng = seed_rng(400);
        let g = generate_er(5, 7, &mut rng).unwrap();
        let spec = ModelSpec {
            input_width: 3,
            temporal: None,
            layers: vec![LayerKind::Gcn {
                width: 4,
                relu: true,
            }],
            dim: 4,
            decoder: DecoderKind::EdgeScalar,
        };
        let mut model = spec.build(&g, &mut rng).unwrap();
        let x = random_features(5, 3, &mut rng);
        let edges = [(0usize, 1usize), (1, 3), (2, 4)];
        let t = random_features(3, 1, &mut rng);
        let err = grad_check_edges(&mut model, &x, &edges, LossKind::Mse, &LossTarget::Values(&t))
            .unwrap();
        assert!(err < 1e-4, "relative error {}", err);
    }

    #[test]
    fn zero_loss_point_has_near_zero_gradients() {
        let mut rng = seed_rng(500);
        let g = generate_er(4, 4, &mut rng).unwrap();
        let spec = ModelSpec::gcn(2, 2, DecoderKind::NodeScalar);
        let mut model = spec.build(&g, &mut rng).unwrap();
        let x = random_features(4, 2, &mut rng);
        // target = model output => loss identically 0 at this point
        model.zero_grads();
        let (_, out) = model.forward_nodes(&x).unwrap();
        let t = out.clone();
        model.zero_grads();
        let (_, out2) = model.forward_nodes(&x).unwrap();
        let (loss, d_out) =
            compute_loss_masked(LossKind::Mse, &out2, &LossTarget::Values(&t), None).unwrap();
        assert_eq!(loss, 0.0);
        model.backward(&d_out).unwrap();
        for p in model.params() {
            assert!(p.grad.max_abs() < 1e-7);
        }
    }

    #[test]
    fn masked_virtual_row_gradients_verified() {
        let mut rng = seed_rng(600);
        // 4-node graph acting as integrated (node 3 = virtual)
        let g = Graph::new(
            4,
            vec![
                crate::graph::Edge::new(0, 1),
                crate::graph::Edge::new(0, 3),
                crate::graph::Edge::new(1, 3),
                crate::graph::Edge::new(2, 3),
            ],
        )
        .unwrap();
        let spec = ModelSpec::gcn(2, 2, DecoderKind::NodeScalar);
        let mut model = spec.build(&g, &mut rng).unwrap();
        model.virtual_feature = Some(vec![0.3, -0.7]);
        let x = random_features(3, 2, &mut rng);
        let t = random_features(4, 1, &mut rng);
        let err = grad_check_nodes(
            &mut model,
            &x,
            LossKind::Mse,
            &LossTarget::Values(&t),
            Some(&[0, 1, 2]),
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {}", err);
    }
}
