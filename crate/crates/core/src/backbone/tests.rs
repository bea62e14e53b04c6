use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::oracle::central_difference;

fn tiny_config() -> ModelConfig {
    ModelConfig::tiny()
}

fn random_input(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

#[test]
fn angle_scale_is_just_below_pi() {
    assert!(ANGLE_SCALE < PI);
    assert_eq!(ANGLE_SCALE, PI.next_down());
    assert!(ANGLE_SCALE * 1.0f64.tanh() < PI);
}

#[test]
fn zero_convs_give_zero_features() {
    let model = HybridModel::zeros(ModelConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_input(&mut rng, &[2, 1, 64, 64]);
    let f = model.backbone_forward(&x).unwrap();
    assert_eq!(f.shape(), &[2, 64]);
    assert!(f.data().iter().all(|v| *v == 0.0));
}

#[test]
fn zeroed_block_is_its_shortcut() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = tiny_config();
    let mut model = HybridModel::new(cfg.clone(), &mut rng).unwrap();
    for p in model.params_mut().iter_mut() {
        if p.name.ends_with("conv1") || p.name.ends_with("conv2") {
            p.tensor.data_mut().fill(0.0);
        }
    }
    let x = random_input(&mut rng, &[2, 1, 8, 8]);
    let f = model.backbone_forward(&x).unwrap();

    // manual path: stem, identity (stage 0), strided 1×1 projection (stage 1)
    let mut g = Graph::new();
    let p = |n: &str| model.params().get(n).unwrap().tensor.detached();
    let xi = g.constant(x);
    let (w, s, t) = (g.constant(p(STEM_CONV)), g.constant(p(STEM_SCALE)), g.constant(p(STEM_SHIFT)));
    let h = g.conv2d(xi, w, 1, 1).unwrap();
    let h = g.channel_affine(h, s, t).unwrap();
    let h = g.relu(h).unwrap();
    let sc = g.constant(p("stage1.block0.shortcut"));
    let h = g.conv2d(h, sc, 2, 0).unwrap();
    let h = g.relu(h).unwrap();
    let want = g.global_avg_pool(h).unwrap();
    assert!(f.bitwise_eq(g.value(want)));
}

#[test]
fn default_shapes_and_registry() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = HybridModel::new(ModelConfig::default(), &mut rng).unwrap();
    let summary = parameter_summary(model.params());
    let total: usize = summary.iter().map(|(_, n)| n).sum();
    assert_eq!(total, model.params().numel());
    assert_eq!(summary.iter().find(|(k, _)| *k == "theta").unwrap().1, 24);
    assert_eq!(model.params().get(PROJ_WEIGHT).unwrap().tensor.shape(), &[4, 64]);
    assert_eq!(model.params().get(HEAD_WEIGHT).unwrap().tensor.shape(), &[1, 68]);
    let groups = model.params().numel_in(ParamGroup::Backbone) + model.params().numel_in(ParamGroup::QuantumAndHead);
    assert_eq!(groups, total);
    let x = random_input(&mut rng, &[2, 1, 64, 64]);
    let pass = model.forward_pass(&x, &ForwardOptions::default()).unwrap();
    assert_eq!(pass.logits().len(), 2);
    assert!(pass.logits().iter().all(|v| v.is_finite()));
    assert!(pass.quantum_features().data().iter().all(|v| (-1.0..=1.0).contains(v)));
    assert!(pass.angles().data().iter().all(|a| a.abs() < PI));
}

#[test]
fn input_geometry_is_checked() {
    let model = HybridModel::zeros(tiny_config()).unwrap();
    assert!(matches!(
        model.forward_pass(&Tensor::zeros(&[1, 1, 9, 8]), &ForwardOptions::default()),
        Err(Error::Structural(_))
    ));
    assert!(model.backbone_forward(&Tensor::zeros(&[1, 2, 8, 8])).is_err());
}

#[test]
fn config_validation() {
    let mut cfg = ModelConfig::default();
    cfg.backbone.feature_dim = 32;
    assert!(matches!(HybridModel::zeros(cfg), Err(Error::Config(_))));
    let mut cfg = ModelConfig::default();
    cfg.backbone.blocks_per_stage = vec![1, 1];
    assert!(HybridModel::zeros(cfg).is_err());
}

#[test]
fn projection_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut cfg = tiny_config();
    cfg.pqc.n_qubits = 4;
    let mut model = HybridModel::new(cfg, &mut rng).unwrap();
    model.params_mut().get_mut(PROJ_WEIGHT).unwrap().tensor.data_mut().fill(0.0);
    model.params_mut().get_mut(PROJ_BIAS).unwrap().tensor.data_mut().copy_from_slice(&[0.1, 0.2, 0.3, 0.4]);
    let x = random_input(&mut rng, &[3, 1, 8, 8]);
    let pass = model.forward_pass(&x, &ForwardOptions::default()).unwrap();
    let z = pass.graph.value(pass.projected);
    assert_eq!(z.shape(), &[3, 4]);
    for row in z.data().chunks(4) {
        assert_eq!(row, &[0.1, 0.2, 0.3, 0.4]);
    }

    // d = 4 = n with identity weights: z = f
    let mut cfg = tiny_config();
    cfg.backbone.stage_widths = vec![4, 4];
    cfg.backbone.feature_dim = 4;
    cfg.pqc.n_qubits = 4;
    let mut model = HybridModel::new(cfg, &mut rng).unwrap();
    let w = model.params_mut().get_mut(PROJ_WEIGHT).unwrap();
    w.tensor.data_mut().fill(0.0);
    for i in 0..4 {
        w.tensor.data_mut()[i * 4 + i] = 1.0;
    }
    model.params_mut().get_mut(PROJ_BIAS).unwrap().tensor.data_mut().fill(0.0);
    let pass = model.forward_pass(&x, &ForwardOptions::default()).unwrap();
    assert!(pass.graph.value(pass.projected).bitwise_eq(pass.features()));
}

#[test]
fn squash_examples() {
    let mut g = Graph::new();
    let z = g.leaf(Tensor::new(vec![4], vec![0.0, 50.0, -50.0, 0.3]).unwrap().requiring_grad());
    let t = g.tanh(z).unwrap();
    let a = g.scale(t, ANGLE_SCALE).unwrap();
    let v = g.value(a).data().to_vec();
    assert_eq!(v[0], 0.0);
    assert!(v[1] < PI && v[1] > 3.14159);
    assert!(v[2] > -PI && v[2] < -3.14159);
    let s = g.sum(a).unwrap();
    g.backward(s).unwrap();
    let analytic = g.grad(z).unwrap()[3];
    let fd = central_difference(&[0.3], 1e-5, |x| ANGLE_SCALE * x[0].tanh())[0];
    assert!((analytic - fd).abs() < 1e-8);
    assert!((analytic - PI * (1.0 - 0.3f64.tanh().powi(2))).abs() < 1e-12);
}

#[test]
fn zeroed_quantum_columns_match_classical_path_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model = HybridModel::new(tiny_config(), &mut rng).unwrap();
    model.zero_quantum_head_columns();
    for _ in 0..5 {
        let x = random_input(&mut rng, &[3, 1, 8, 8]);
        let hybrid = model.forward_pass(&x, &ForwardOptions::default()).unwrap();
        let classical = model
            .forward_pass(&x, &ForwardOptions { classical_only: true, ..Default::default() })
            .unwrap();
        for (a, b) in hybrid.logits().iter().zip(classical.logits()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn zeroed_quantum_columns_stop_theta_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut model = HybridModel::new(tiny_config(), &mut rng).unwrap();
    model.zero_quantum_head_columns();
    let x = random_input(&mut rng, &[2, 1, 8, 8]);
    let mut pass = model.forward_pass(&x, &ForwardOptions::training()).unwrap();
    pass.bce_loss(&[1.0, 0.0]).unwrap();
    model.backward(&mut pass).unwrap();
    assert!(model.params().get(THETA).unwrap().tensor.grad().unwrap().iter().all(|v| *v == 0.0));
}

#[test]
fn frozen_backbone_gets_no_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut model = HybridModel::new(tiny_config(), &mut rng).unwrap();
    let x = random_input(&mut rng, &[2, 1, 8, 8]);
    let opts = ForwardOptions {
        track_grads: true,
        freeze: vec![ParamGroup::Backbone],
        ..Default::default()
    };
    let mut pass = model.forward_pass(&x, &opts).unwrap();
    pass.bce_loss(&[1.0, 0.0]).unwrap();
    model.backward(&mut pass).unwrap();
    for p in model.params().iter() {
        let nonzero = p.tensor.grad().is_some_and(|g| g.iter().any(|v| *v != 0.0));
        match p.group {
            ParamGroup::Backbone => assert!(p.tensor.grad().is_none(), "{}", p.name),
            ParamGroup::QuantumAndHead => assert!(nonzero, "{}", p.name),
        }
    }
}

#[test]
fn backward_needs_a_loss() {
    let mut model = HybridModel::zeros(tiny_config()).unwrap();
    let mut pass = model.forward_pass(&Tensor::zeros(&[1, 1, 8, 8]), &ForwardOptions::training()).unwrap();
    assert!(matches!(model.backward(&mut pass), Err(Error::Usage(_))));
}

fn loss_of(model: &HybridModel, x: &Tensor, labels: &[f64]) -> f64 {
    let mut pass = model.forward_pass(x, &ForwardOptions::default()).unwrap();
    pass.bce_loss(labels).unwrap()
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut model = HybridModel::new(tiny_config(), &mut rng).unwrap();
    // non-trivial affine parameters so every group is exercised
    for p in model.params_mut().iter_mut() {
        if p.name.contains("shift") || p.name.contains("scale") {
            p.tensor.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.2..0.2));
        }
    }
    let x = random_input(&mut rng, &[2, 1, 8, 8]);
    let labels = [1.0, 0.0];
    let mut pass = model.forward_pass(&x, &ForwardOptions::training()).unwrap();
    pass.bce_loss(&labels).unwrap();
    model.backward(&mut pass).unwrap();
    let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
    for name in names {
        let analytic = model.params().get(&name).unwrap().tensor.grad().unwrap().to_vec();
        let base = model.params().get(&name).unwrap().tensor.data().to_vec();
        let mut probe = model.clone();
        let numeric = central_difference(&base, 1e-5, |v| {
            probe.params_mut().get_mut(&name).unwrap().tensor.data_mut().copy_from_slice(v);
            loss_of(&probe, &x, &labels)
        });
        for (a, n) in analytic.iter().zip(&numeric) {
            let tol = (1e-4 * n.abs()).max(1e-8);
            assert!((a - n).abs() <= tol, "{name}: analytic {a} vs numeric {n}");
        }
    }
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = HybridModel::new(tiny_config(), &mut rng).unwrap();
    let bytes = model.to_checkpoint_bytes(&serde_json::json!({"epoch": 3}));
    let (back, extra) = HybridModel::from_checkpoint_bytes(&bytes, Some(&tiny_config())).unwrap();
    assert!(back.params().values_bitwise_eq(model.params()));
    assert_eq!(extra["epoch"], 3);

    let mut other = tiny_config();
    other.pqc.depth = 2;
    match HybridModel::from_checkpoint_bytes(&bytes, Some(&other)) {
        Err(Error::Incompatible { field, .. }) => assert_eq!(field, "model.pqc.depth"),
        other => panic!("expected incompatibility, got {other:?}"),
    }
}

#[test]
fn classical_ablation_freezes_quantum_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut cfg = tiny_config();
    cfg.ablation = Ablation::ClassicalOnly;
    let mut model = HybridModel::new(cfg, &mut rng).unwrap();
    let x = random_input(&mut rng, &[2, 1, 8, 8]);
    let mut pass = model.forward_pass(&x, &ForwardOptions::training()).unwrap();
    assert!(pass.quantum_features().data().iter().all(|v| *v == 0.0));
    pass.bce_loss(&[0.0, 1.0]).unwrap();
    model.backward(&mut pass).unwrap();
    for name in [PROJ_WEIGHT, PROJ_BIAS, THETA] {
        assert!(model.params().get(name).unwrap().frozen);
        assert!(model.params().get(name).unwrap().tensor.grad().is_none());
    }
    let head = model.params().get(HEAD_WEIGHT).unwrap();
    assert!(head.tensor.data()[8..].iter().all(|v| *v == 0.0));
    assert!(head.tensor.grad().unwrap()[8..].iter().all(|v| *v == 0.0));
}
