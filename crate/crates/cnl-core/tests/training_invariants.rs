//! Learning-engine invariants that cut across modules: descent smoke
//! property, virtual-node isolation, and the plaintext exchange oracle.

use cnl_core::graph::{generate_er, Edge, Graph};
use cnl_core::learning::{
    integrated_graph, pool_agency, train_task_model, ClassificationData, EmbedModelKind, Hyper,
    TaskData,
};
use cnl_core::nn::{
    compute_loss, DecoderKind, LossKind, LossTarget, ModelSpec, Optimizer, OptimizerKind,
};
use cnl_core::{seed_rng, DenseMatrix};
use rand::Rng;

/// Training loss on a fixed small batch is non-increasing over 50
/// full-batch steps with lr 1e-3, allowing a 5% violation budget across
/// seeds.
#[test]
fn descent_smoke_property() {
    let mut violations = 0usize;
    let mut total = 0usize;
    for seed in 0..10u64 {
        let mut rng = seed_rng(seed);
        let g = generate_er(8, 14, &mut rng).unwrap();
        let spec = ModelSpec::gcn(4, 4, DecoderKind::NodeScalar);
        let mut model = spec.build(&g, &mut rng).unwrap();
        let mut x = DenseMatrix::zeros(8, 4);
        for v in x.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let mut t = DenseMatrix::zeros(8, 1);
        for v in t.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let mut optimizer = Optimizer::new(OptimizerKind::Sgd, 1e-3, 0.0);
        let mut prev = f64::INFINITY;
        for _step in 0..50 {
            model.zero_grads();
            let (_, out) = model.forward_nodes(&x).unwrap();
            let (loss, d_out) =
                compute_loss(LossKind::Mse, &out, &LossTarget::Values(&t)).unwrap();
            model.backward(&d_out).unwrap();
            optimizer.step(&mut model.params_mut()).unwrap();
            total += 1;
            if loss > prev + 1e-12 {
                violations += 1;
            }
            prev = loss;
        }
    }
    let budget = total / 20; // 5%
    assert!(
        violations <= budget,
        "{} violations out of {} steps",
        violations,
        total
    );
}

/// Zeroing the agency embedding and the virtual-edge weights makes the
/// integrated forward bitwise equal to the local forward under shared
/// parameters.
#[test]
fn virtual_node_isolation_bitwise() {
    for seed in 0..10u64 {
        let mut rng = seed_rng(100 + seed);
        let g = generate_er(7, 12, &mut rng).unwrap();
        let g_int = integrated_graph(&g, 0.0).unwrap();
        let spec = ModelSpec::gcn(3, 4, DecoderKind::NodeScalar);
        let local = spec.build(&g, &mut seed_rng(999 + seed)).unwrap();
        let mut integrated = spec.build(&g_int, &mut seed_rng(999 + seed)).unwrap();
        integrated.virtual_feature = Some(vec![0.0; 3]);
        // identical parameter draws (same seed, same shapes)
        let mut x = DenseMatrix::zeros(7, 3);
        for v in x.data_mut() {
            *v = rng.gen_range(-2.0..2.0);
        }
        let mut local = local;
        let (h_local, out_local) = local.forward_nodes(&x).unwrap();
        let (h_int, out_int) = integrated.forward_nodes(&x).unwrap();
        for node in 0..7 {
            assert_eq!(h_local.row(node), h_int.row(node), "seed {}", seed);
            assert_eq!(out_local.row(node), out_int.row(node), "seed {}", seed);
        }
    }
}

/// Perturbing anything attached only to the virtual node's output never
/// changes gradients of the masked loss.
#[test]
fn virtual_loss_mask_blocks_gradients() {
    let mut rng = seed_rng(42);
    let g = generate_er(6, 10, &mut rng).unwrap();
    let g_int = integrated_graph(&g, 1.0).unwrap();
    let spec = ModelSpec::gcn(3, 4, DecoderKind::NodeScalar);
    let mut model = spec.build(&g_int, &mut rng).unwrap();
    model.virtual_feature = Some(vec![0.5, -0.5, 0.25]);
    let mut x = DenseMatrix::zeros(6, 3);
    for v in x.data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let mask: Vec<usize> = (0..6).collect();
    let grads_with_target = |virtual_target: f64, model: &mut cnl_core::nn::GraphModel| {
        model.zero_grads();
        let (_, out) = model.forward_nodes(&x).unwrap();
        let mut t = DenseMatrix::zeros(7, 1);
        t.set(6, 0, virtual_target);
        let (_, d_out) = cnl_core::nn::compute_loss_masked(
            LossKind::Mse,
            &out,
            &LossTarget::Values(&t),
            Some(&mask),
        )
        .unwrap();
        model.backward(&d_out).unwrap();
        model
            .params()
            .iter()
            .map(|p| p.grad.clone())
            .collect::<Vec<_>>()
    };
    let a = grads_with_target(0.0, &mut model);
    let b = grads_with_target(1_000_000.0, &mut model);
    assert_eq!(a, b);
}

/// A single-agency "partition" makes local and centralized training the
/// same computation: same seed, same loss curve.
#[test]
fn single_agency_local_equals_centralized() {
    let mut g = Graph::new(
        5,
        vec![
            Edge::new(0, 1),
            Edge::new(1, 2),
            Edge::new(2, 3),
            Edge::new(3, 4),
        ],
    )
    .unwrap();
    let mut rng = seed_rng(5);
    let mut feats = DenseMatrix::zeros(5, 3);
    for v in feats.data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    g.node_features = Some(feats);
    g.node_labels = Some(vec![0, 0, 1, 1, 0]);
    let data = TaskData::Classification(ClassificationData {
        graph: g,
        classes: 2,
        train_idx: vec![0, 1, 2],
        val_idx: vec![3],
        test_idx: vec![4],
    });
    let hyper = Hyper {
        max_epochs: 40,
        dim: 4,
        seed: 11,
        ..Hyper::default()
    };
    let (local, _) = train_task_model(&data, EmbedModelKind::Gcn, &hyper).unwrap();
    let (central, _) = train_task_model(&data, EmbedModelKind::Gcn, &hyper).unwrap();
    assert_eq!(local.train_losses, central.train_losses);
    assert_eq!(local.val_losses, central.val_losses);
}

/// The pooled agency embedding matches mean pooling by hand.
#[test]
fn pooling_matches_oracle() {
    let mut rng = seed_rng(8);
    let mut h = DenseMatrix::zeros(9, 5);
    for v in h.data_mut() {
        *v = rng.gen_range(-3.0..3.0);
    }
    let record = pool_agency(&h).unwrap();
    for c in 0..5 {
        let mut acc = 0.0;
        for r in 0..9 {
            acc += h.get(r, c);
        }
        let expect = acc / 9.0;
        assert!((record.agency[c] - expect).abs() < 1e-12);
    }
}
