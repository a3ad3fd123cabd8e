mod common;

use common::gradients::*;
use common::*;
use roofseg::autodiff::{Mode, Module, Shape4, Tensor4};
use roofseg::losses::{multiclass_dice_loss_with_grad, DiceConfig};
use roofseg::network::{NetworkConfig, SegNet};

#[test]
fn desk_output_shapes() {
    let mut r = rng(1);
    let x = random_tensor(Shape4::new(1, 64, 64, 3), &mut r).cast::<f32>();
    for sigmoid in [false, true] {
        let mut cfg = NetworkConfig::desk(4);
        cfg.use_sigmoid = sigmoid;
        let mut net = SegNet::<f32>::new(cfg, 7).unwrap();
        let out = net.forward(&x, Mode::Train).unwrap();
        let k = if sigmoid { 4 } else { 5 };
        assert_eq!(out.main.shape(), Shape4::new(1, 64, 64, k));
        if sigmoid {
            assert!(out.main.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        } else {
            for px in out.main.data().chunks(k) {
                assert!((px.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn full_scale_parameter_count_is_declared() {
    let cfg = NetworkConfig::full_scale(4);
    cfg.validate().unwrap();
    cfg.validate_input(512, 512).unwrap();
    let n = 64usize;
    let block = |cin: usize| 9 * cin * n + 3 * n;
    // 10 encoder/bottom levels, 8 decoder levels, one head plus classifier.
    let expected = block(3) + 2 * block(n) + 9 * 3 * block(n) + 8 * (block(2 * n) + 2 * block(n))
        + 3 * block(n)
        + 5 * n
        + 5;
    assert_eq!(cfg.parameter_count(), expected);
}

#[test]
fn built_parameter_count_matches_config() {
    for (s, a, h) in END_TO_END_VARIANTS {
        let mut cfg = NetworkConfig::desk(4);
        cfg.use_sigmoid = s;
        cfg.use_aux_head = a;
        cfg.use_separate_heads = h;
        let mut net = SegNet::<f32>::new(cfg.clone(), 0).unwrap();
        assert_eq!(net.parameter_count(), cfg.parameter_count());
    }
}

#[test]
fn separate_heads_add_head_blocks() {
    for sigmoid in [false, true] {
        let mut shared = NetworkConfig::desk(4);
        shared.use_sigmoid = sigmoid;
        let mut separate = shared.clone();
        separate.use_separate_heads = true;
        let heads = if sigmoid { 4 } else { 5 };
        let diff = separate.parameter_count() - shared.parameter_count();
        assert_eq!(diff, (heads - 1) * shared.head_parameter_count());
    }
}

#[test]
fn same_seed_same_parameters() {
    let cfg = NetworkConfig::desk(4);
    let mut a = SegNet::<f32>::new(cfg.clone(), 3).unwrap();
    let mut b = SegNet::<f32>::new(cfg.clone(), 3).unwrap();
    let mut c = SegNet::<f32>::new(cfg, 4).unwrap();
    let va: Vec<f32> = a.params_mut().iter().flat_map(|p| p.value.clone()).collect();
    let vb: Vec<f32> = b.params_mut().iter().flat_map(|p| p.value.clone()).collect();
    let vc: Vec<f32> = c.params_mut().iter().flat_map(|p| p.value.clone()).collect();
    assert_eq!(va, vb);
    assert_ne!(va, vc);
}

#[test]
fn aux_only_present_in_training() {
    let mut cfg = NetworkConfig::desk(4);
    cfg.use_aux_head = true;
    cfg.use_sigmoid = true;
    let mut net = SegNet::<f32>::new(cfg, 0).unwrap();
    let x = random_tensor(Shape4::new(2, 32, 32, 3), &mut rng(2)).cast::<f32>();
    let train = net.forward(&x, Mode::Train).unwrap();
    assert_eq!(train.aux.unwrap().shape(), Shape4::new(2, 32, 32, 1));
    let eval = net.forward(&x, Mode::Eval).unwrap();
    assert!(eval.aux.is_none());
    assert!(net.infer_with_aux(&x).unwrap().aux.is_some());
}

#[test]
fn indivisible_input_rejected() {
    let mut net = SegNet::<f32>::new(NetworkConfig::desk(4), 0).unwrap();
    let x = Tensor4::<f32>::zeros(Shape4::new(1, 24, 24, 3));
    assert!(net.forward(&x, Mode::Train).is_err());
}

#[test]
fn eval_forward_is_independent_of_batch_composition() {
    let net = SegNet::<f32>::new(NetworkConfig::desk(4), 5).unwrap();
    let mut r = rng(3);
    let a = random_tensor(Shape4::new(1, 16, 16, 3), &mut r).cast::<f32>();
    let b = random_tensor(Shape4::new(1, 16, 16, 3), &mut r).cast::<f32>();
    let mut both = a.data().to_vec();
    both.extend_from_slice(b.data());
    let both = Tensor4::from_vec(Shape4::new(2, 16, 16, 3), both).unwrap();
    let alone = net.infer(&a).unwrap().main;
    let joint = net.infer(&both).unwrap().main;
    assert_eq!(alone.data(), &joint.data()[..alone.data().len()]);
    assert_eq!(net.infer(&a).unwrap().main, alone);
}

#[test]
fn backward_before_forward_errors() {
    let mut net = SegNet::<f64>::new(tiny(false, false, false), 0).unwrap();
    let grads = roofseg::losses::LossGradients {
        main: Tensor4::zeros(Shape4::new(1, 8, 8, 3)),
        aux: None,
    };
    assert!(matches!(
        net.backward(&grads),
        Err(roofseg::Error::BackwardBeforeForward)
    ));
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for (s, a, h) in END_TO_END_VARIANTS {
        let err = end_to_end_error(tiny(s, a, h), 42);
        assert!(err < 1e-2, "sigmoid={s} aux={a} separate={h}: max relative error {err}");
    }
}

#[test]
fn aux_head_changes_backbone_gradients() {
    let dice = DiceConfig::default();
    let x = random_tensor(Shape4::new(2, 8, 8, 3), &mut rng(9));
    let labels = random_labels(128, 2, 10);
    let grads_for = |aux: bool| {
        let cfg = tiny(true, aux, false);
        let mut net = SegNet::<f64>::new(cfg.clone(), 11).unwrap();
        let out = net.forward(&x, Mode::Train).unwrap();
        let (_, g) =
            multiclass_dice_loss_with_grad(&out.main, &labels, cfg.head_kind(), out.aux.as_ref(), &dice)
                .unwrap();
        net.backward(&g).unwrap();
        net.params_mut()[0].grad.clone()
    };
    let with = grads_for(true);
    let without = grads_for(false);
    assert_eq!(with.len(), without.len());
    assert!(with.iter().zip(&without).any(|(a, b)| (a - b).abs() > 1e-9));
}
