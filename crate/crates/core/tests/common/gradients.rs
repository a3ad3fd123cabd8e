//! Finite-difference checks returning the worst relative error, shared by the
//! op tests and the acceptance run.

use super::*;
use roofseg::autodiff::*;
use roofseg::losses::{multiclass_dice_loss, multiclass_dice_loss_with_grad, DiceConfig};
use roofseg::network::{NetworkConfig, SegNet};

fn with_data(t: &Tensor4<f64>, x: &[f64]) -> Tensor4<f64> {
    Tensor4::from_vec(t.shape(), x.to_vec()).unwrap()
}

/// Worst error over input, weight and bias for 3x3 and 1x1 kernels.
pub fn conv2d_error() -> f64 {
    let mut r = rng(11);
    let mut worst = 0.0f64;
    for k in [3usize, 1] {
        let x = random_tensor(Shape4::new(1, 5, 5, 2), &mut r);
        let mut conv = Conv2d::<f64>::new("c", k, 2, 3, &mut r);
        for b in conv.bias.value.iter_mut() {
            *b = 0.1;
        }
        let (y, cache) = conv.forward(&x).unwrap();
        let w = random_tensor(y.shape(), &mut r);
        let dx = conv.backward(&cache, &w, true).unwrap().unwrap();

        let c0 = conv.clone();
        let err_x = max_fd_error(
            |v| probe(&c0.forward(&with_data(&x, v)).unwrap().0, &w),
            x.data(),
            dx.data(),
            FD_STEP,
        );
        let err_w = max_fd_error(
            |v| {
                let mut c = c0.clone();
                c.weight.value = v.to_vec();
                probe(&c.forward(&x).unwrap().0, &w)
            },
            &c0.weight.value,
            &conv.weight.grad,
            FD_STEP,
        );
        let err_b = max_fd_error(
            |v| {
                let mut c = c0.clone();
                c.bias.value = v.to_vec();
                probe(&c.forward(&x).unwrap().0, &w)
            },
            &c0.bias.value,
            &conv.bias.grad,
            FD_STEP,
        );
        worst = worst.max(err_x).max(err_w).max(err_b);
    }
    worst
}

pub fn relu_error() -> f64 {
    let mut r = rng(12);
    let x = random_away_from_zero(Shape4::new(1, 4, 4, 2), 1e-2, &mut r);
    let w = random_tensor(x.shape(), &mut r);
    let dx = relu_backward(&relu(&x), &w).unwrap();
    max_fd_error(|v| probe(&relu(&with_data(&x, v)), &w), x.data(), dx.data(), FD_STEP)
}

pub fn batch_norm_error() -> f64 {
    let mut r = rng(13);
    let x = random_tensor(Shape4::new(2, 4, 4, 3), &mut r);
    let mut bn = BatchNorm::<f64>::new("bn", 3);
    bn.scale.value = vec![0.7, 1.3, -0.4];
    bn.shift.value = vec![0.1, -0.2, 0.3];
    let base = bn.clone();
    let (y, cache) = bn.forward_train(&x).unwrap();
    let w = random_tensor(y.shape(), &mut r);
    let dx = bn.backward(&cache, &w).unwrap();
    let eval = |b: &BatchNorm<f64>, input: &Tensor4<f64>| {
        let mut b = b.clone();
        probe(&b.forward_train(input).unwrap().0, &w)
    };
    let err_x = max_fd_error(|v| eval(&base, &with_data(&x, v)), x.data(), dx.data(), FD_STEP);
    let err_s = max_fd_error(
        |v| {
            let mut b = base.clone();
            b.scale.value = v.to_vec();
            eval(&b, &x)
        },
        &base.scale.value,
        &bn.scale.grad,
        FD_STEP,
    );
    let err_t = max_fd_error(
        |v| {
            let mut b = base.clone();
            b.shift.value = v.to_vec();
            eval(&b, &x)
        },
        &base.shift.value,
        &bn.shift.grad,
        FD_STEP,
    );
    err_x.max(err_s).max(err_t)
}

pub fn max_pool_error() -> f64 {
    let mut r = rng(14);
    let x = random_distinct(Shape4::new(1, 4, 4, 2), &mut r);
    let (y, cache) = max_pool2(&x).unwrap();
    let w = random_tensor(y.shape(), &mut r);
    let dx = max_pool2_backward(&cache, &w).unwrap();
    // Step stays below half the minimum gap between distinct values.
    let step = 0.25 / x.shape().len() as f64;
    max_fd_error(
        |v| probe(&max_pool2(&with_data(&x, v)).unwrap().0, &w),
        x.data(),
        dx.data(),
        step.min(FD_STEP),
    )
}

pub fn upsample_error() -> f64 {
    let mut r = rng(15);
    let x = random_tensor(Shape4::new(2, 3, 3, 2), &mut r);
    let y = upsample2(&x);
    let w = random_tensor(y.shape(), &mut r);
    let dx = upsample2_backward(&w).unwrap();
    max_fd_error(|v| probe(&upsample2(&with_data(&x, v)), &w), x.data(), dx.data(), FD_STEP)
}

pub fn concat_error() -> f64 {
    let mut r = rng(16);
    let a = random_tensor(Shape4::new(1, 3, 3, 2), &mut r);
    let b = random_tensor(Shape4::new(1, 3, 3, 3), &mut r);
    let y = concat_channels(&a, &b).unwrap();
    let w = random_tensor(y.shape(), &mut r);
    let (da, db) = concat_channels_backward(&w, 2).unwrap();
    let err_a = max_fd_error(
        |v| probe(&concat_channels(&with_data(&a, v), &b).unwrap(), &w),
        a.data(),
        da.data(),
        FD_STEP,
    );
    let err_b = max_fd_error(
        |v| probe(&concat_channels(&a, &with_data(&b, v)).unwrap(), &w),
        b.data(),
        db.data(),
        FD_STEP,
    );
    err_a.max(err_b)
}

pub fn softmax_error() -> f64 {
    let mut r = rng(17);
    let x = random_tensor(Shape4::new(1, 2, 2, 3), &mut r).map(|v| 3.0 * v);
    let y = softmax_channels(&x).unwrap();
    let w = random_tensor(y.shape(), &mut r);
    let dx = softmax_channels_backward(&y, &w).unwrap();
    max_fd_error(
        |v| probe(&softmax_channels(&with_data(&x, v)).unwrap(), &w),
        x.data(),
        dx.data(),
        FD_STEP,
    )
}

pub fn sigmoid_error() -> f64 {
    let mut r = rng(18);
    let x = random_tensor(Shape4::new(1, 3, 3, 2), &mut r).map(|v| 4.0 * v);
    let y = sigmoid(&x);
    let w = random_tensor(y.shape(), &mut r);
    let dx = sigmoid_backward(&y, &w).unwrap();
    max_fd_error(|v| probe(&sigmoid(&with_data(&x, v)), &w), x.data(), dx.data(), FD_STEP)
}

/// Every op check by name.
pub fn op_errors() -> Vec<(&'static str, f64)> {
    vec![
        ("conv2d", conv2d_error()),
        ("relu", relu_error()),
        ("batch_norm", batch_norm_error()),
        ("max_pool2", max_pool_error()),
        ("upsample2", upsample_error()),
        ("concat_channels", concat_error()),
        ("softmax_channels", softmax_error()),
        ("sigmoid", sigmoid_error()),
    ]
}

/// Depth 2, two filters, two classes.
pub fn tiny(sigmoid: bool, aux: bool, separate: bool) -> NetworkConfig {
    NetworkConfig {
        depth: 2,
        convs_per_level: 3,
        filters: 2,
        classes: 2,
        in_channels: 3,
        use_sigmoid: sigmoid,
        use_aux_head: aux,
        use_separate_heads: separate,
    }
}

pub fn random_labels(n: usize, classes: u8, seed: u64) -> Vec<u8> {
    use rand::Rng;
    let mut r = rng(seed);
    (0..n).map(|_| r.gen_range(0..=classes)).collect()
}

// Small enough that ReLU kinks are rarely crossed; coordinates where the two
// one-sided slopes still disagree sit on a kink and are skipped.
const STEP: f64 = 1e-6;

/// Worst relative error of every parameter gradient of `cfg` on 2 random
/// 8x8 inputs, with the full Dice loss on top.
pub fn end_to_end_error(cfg: NetworkConfig, seed: u64) -> f64 {
    let dice = DiceConfig::default();
    let mut net = SegNet::<f64>::new(cfg.clone(), seed).unwrap();
    let x = random_tensor(Shape4::new(2, 8, 8, 3), &mut rng(seed + 100));
    let labels = random_labels(2 * 64, cfg.classes as u8, seed + 200);
    let head = cfg.head_kind();

    let out = net.forward(&x, Mode::Train).unwrap();
    let (_, grads) =
        multiclass_dice_loss_with_grad(&out.main, &labels, head, out.aux.as_ref(), &dice).unwrap();
    net.zero_grad();
    net.backward(&grads).unwrap();
    let analytic: Vec<Vec<f64>> = net.params_mut().iter().map(|p| p.grad.clone()).collect();

    let mut worst = 0.0f64;
    let mut skipped = 0usize;
    let mut total = 0usize;
    let count = analytic.len();
    for pi in 0..count {
        let len = analytic[pi].len();
        total += len;
        for i in 0..len {
            let orig = net.params_mut()[pi].value[i];
            let mut loss_at = |v: f64| {
                net.params_mut()[pi].value[i] = v;
                let out = net.forward(&x, Mode::Train).unwrap();
                multiclass_dice_loss(&out.main, &labels, head, out.aux.as_ref(), &dice)
                    .unwrap()
                    .total
            };
            let base = loss_at(orig);
            let up = loss_at(orig + STEP);
            let down = loss_at(orig - STEP);
            net.params_mut()[pi].value[i] = orig;
            let right = (up - base) / STEP;
            let left = (base - down) / STEP;
            if relative_error(right, left, 1e-4) > 0.1 {
                skipped += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic[pi][i], numeric, 1e-6));
        }
    }
    assert!(skipped * 20 < total, "{skipped} of {total} coordinates on kinks");
    worst
}

/// The four head variants checked end to end.
pub const END_TO_END_VARIANTS: [(bool, bool, bool); 4] =
    [(false, false, false), (true, true, true), (false, true, true), (true, false, false)];
