use monsoon_core::tensor::{
    conv3d_reference, grad_check, BatchNormConfig, BatchNormStats, Conv3dConfig, GradCheckConfig, Mode, OpKind,
    Padding, Tape, Tensor,
};
use monsoon_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(dims: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(dims, |_| rng.gen_range(-1.0..1.0))
}

fn conv_on_tape(input: &Tensor<f64>, kernel: &Tensor<f64>, bias: &Tensor<f64>, cfg: Conv3dConfig) -> Tensor<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let k = tape.constant(kernel.clone());
    let b = tape.constant(bias.clone());
    let y = tape.conv3d(x, k, b, cfg).unwrap();
    tape.value(y).clone()
}

fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.dims(), b.dims());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn conv3d_zero_input_yields_bias() {
    let x = Tensor::zeros(&[3, 5, 4, 2]);
    let k = random(&[3, 3, 3, 2, 3], 1);
    let b = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
    let y = conv_on_tape(&x, &k, &b, Conv3dConfig::same([1, 2, 2]));
    assert_eq!(y.dims(), &[3, 3, 2, 3]);
    for row in y.data().chunks(3) {
        assert_eq!(row, b.data());
    }
}

#[test]
fn conv3d_scalar_product() {
    let x = Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap();
    let k = Tensor::new(vec![1, 1, 1, 1, 1], vec![3.0]).unwrap();
    let y = conv_on_tape(&x, &k, &Tensor::zeros(&[1]), Conv3dConfig::valid([1; 3]));
    assert_eq!(y.data(), &[6.0]);
}

#[test]
fn conv3d_gemm_path_matches_nested_loop_reference() {
    let x = random(&[4, 6, 6, 2], 2);
    let k = random(&[2, 3, 3, 2, 4], 3);
    let b = random(&[4], 4);
    let cfg = Conv3dConfig::valid([2, 2, 2]);
    let fast = conv_on_tape(&x, &k, &b, cfg);
    let slow = conv3d_reference(&x, &k, &b, &cfg).unwrap();
    assert_eq!(fast.dims(), &[2, 2, 2, 4]);
    assert!(max_abs_diff(&fast, &slow) < 1e-12);

    // batched, same padding, odd extents
    let xb = random(&[3, 5, 7, 9, 3], 5);
    let kb = random(&[3, 3, 3, 3, 5], 6);
    let bb = random(&[5], 7);
    let cfg = Conv3dConfig::same([2, 2, 2]);
    let fast = conv_on_tape(&xb, &kb, &bb, cfg);
    let slow = conv3d_reference(&xb, &kb, &bb, &cfg).unwrap();
    assert_eq!(fast.dims(), &[3, 3, 4, 5, 5]);
    assert!(max_abs_diff(&fast, &slow) < 1e-12);

    // valid in time, same in space
    let cfg = Conv3dConfig {
        strides: [1, 1, 1],
        padding: [Padding::Valid, Padding::Same, Padding::Same],
    };
    let kc = random(&[5, 3, 3, 3, 2], 8);
    let fast = conv_on_tape(&xb, &kc, &random(&[2], 9), cfg);
    let slow = conv3d_reference(&xb, &kc, &random(&[2], 9), &cfg).unwrap();
    assert_eq!(fast.dims(), &[3, 1, 7, 9, 2]);
    assert!(max_abs_diff(&fast, &slow) < 1e-12);
}

#[test]
fn conv3d_channel_mismatch_is_shape_error() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[2, 4, 4, 3]));
    let k = tape.constant(Tensor::zeros(&[1, 1, 1, 2, 1]));
    let b = tape.constant(Tensor::zeros(&[1]));
    assert!(matches!(tape.conv3d(x, k, b, Conv3dConfig::same([1; 3])), Err(Error::Shape(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv3d_is_linear_in_input(scale in -3.0f64..3.0, seed in 0u64..1000) {
        let x = random(&[3, 4, 5, 2], seed);
        let k = random(&[3, 3, 3, 2, 3], seed + 1);
        let zero = Tensor::zeros(&[3]);
        let cfg = Conv3dConfig::same([2, 1, 2]);
        let y = conv_on_tape(&x, &k, &zero, cfg);
        let ys = conv_on_tape(&x.map(|v| v * scale), &k, &zero, cfg);
        let scaled = y.map(|v| v * scale);
        prop_assert!(max_abs_diff(&ys, &scaled) < 1e-12);
    }

    #[test]
    fn same_padding_shape_law(t in 1usize..12, h in 1usize..20, w in 1usize..20, s in 1usize..4) {
        let y = conv_on_tape(
            &Tensor::zeros(&[t, h, w, 1]),
            &Tensor::zeros(&[3, 3, 3, 1, 1]),
            &Tensor::zeros(&[1]),
            Conv3dConfig::same([s; 3]),
        );
        prop_assert_eq!(y.dims(), &[t.div_ceil(s), h.div_ceil(s), w.div_ceil(s), 1][..]);
    }
}

#[test]
fn sigmoid_gradient_at_zero_via_tape() {
    let report = grad_check(
        |tape, p| {
            let s = tape.sigmoid(p[0]);
            Ok(tape.sum(s))
        },
        &[Tensor::zeros(&[1])],
        &GradCheckConfig::with_tolerance(1e-8),
    )
    .unwrap();
    assert!((report.analytic - 0.25).abs() < 1e-15);
    assert!(report.passed);
}

#[test]
fn batch_norm_train_gradient_matches_finite_differences() {
    let x = random(&[4, 3, 3], 11);
    let gamma = random(&[3], 12).map(|v| 1.0 + 0.5 * v);
    let beta = random(&[3], 13);
    // weight the output so the loss is not invariant to the normalization
    let weights = random(&[4, 3, 3], 14);
    let mut stats = BatchNormStats::new(3);
    let report = grad_check(
        |tape, p| {
            let y = tape.batch_norm(p[0], p[1], p[2], &mut stats, Mode::Train, BatchNormConfig::default())?;
            let w = tape.constant(weights.clone());
            let z = tape.constant(Tensor::zeros(&[4, 3, 3]));
            let yw = tape.add(y, w)?;
            tape.mse_loss(yw, z, &[])
        },
        &[x, gamma, beta],
        &GradCheckConfig::with_tolerance(1e-4),
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn batch_norm_infer_gradient_matches_finite_differences() {
    let mut stats = BatchNormStats {
        mean: random(&[2], 21),
        var: random(&[2], 22).map(|v| 1.5 + v),
    };
    let report = grad_check(
        |tape, p| {
            let y = tape.batch_norm(p[0], p[1], p[2], &mut stats, Mode::Infer, BatchNormConfig::default())?;
            let z = tape.constant(Tensor::full(&[5, 2], 0.3));
            tape.mse_loss(y, z, &[])
        },
        &[random(&[5, 2], 23), random(&[2], 24), random(&[2], 25)],
        &GradCheckConfig::with_tolerance(1e-6),
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

fn dense_net(tape: &mut Tape<f64>, p: &[monsoon_core::tensor::Var]) -> monsoon_core::Result<monsoon_core::tensor::Var> {
    let h = tape.dense(p[0], p[1], p[2])?;
    let h = tape.sigmoid(h);
    let y = tape.dense(h, p[3], p[4])?;
    let t = tape.constant(Tensor::full(&[3, 2], 0.25));
    tape.mse_loss(y, t, &[(0.01, p[1]), (0.01, p[3])])
}

#[test]
fn dense_network_gradients_within_1e6() {
    let params = vec![
        random(&[3, 4], 31),
        random(&[4, 5], 32),
        random(&[5], 33),
        random(&[5, 2], 34),
        random(&[2], 35),
    ];
    let report = grad_check(dense_net, &params, &GradCheckConfig::with_tolerance(1e-6)).unwrap();
    assert!(report.passed, "{report:?}");
    assert_eq!(report.checked, 12 + 20 + 5 + 10 + 2);
}

#[test]
fn conv_batch_norm_micro_net_within_1e3() {
    let mut stats = BatchNormStats::new(3);
    let params = vec![
        random(&[2, 4, 4, 2], 41),
        random(&[3, 3, 3, 2, 3], 42),
        random(&[3], 43),
        random(&[3], 44).map(|v| 1.0 + 0.3 * v),
        random(&[3], 45),
    ];
    let report = grad_check(
        |tape, p| {
            let c = tape.conv3d(p[0], p[1], p[2], Conv3dConfig::same([1, 2, 2]))?;
            let n = tape.batch_norm(c, p[3], p[4], &mut stats, Mode::Train, BatchNormConfig::default())?;
            let r = tape.relu(n);
            let g = tape.reshape(r, &[2, 2, 2, 3])?;
            let pooled = tape.global_avg_pool2d(g)?;
            let t = tape.constant(Tensor::full(&[2, 3], 0.4));
            tape.mse_loss(pooled, t, &[])
        },
        &params,
        &GradCheckConfig::with_tolerance(1e-3),
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn negated_adjoint_is_caught_by_the_oracle() {
    let params = vec![
        random(&[3, 4], 31),
        random(&[4, 5], 32),
        random(&[5], 33),
        random(&[5, 2], 34),
        random(&[2], 35),
    ];
    let cfg = GradCheckConfig {
        negate_adjoint: Some(OpKind::Dense),
        ..GradCheckConfig::with_tolerance(1e-6)
    };
    let report = grad_check(dense_net, &params, &cfg).unwrap();
    assert!(report.max_rel_error > 0.5, "{report:?}");
    assert!(!report.passed);
}

#[test]
fn non_deterministic_forward_is_an_oracle_error() {
    let mut calls = 0u32;
    let r = grad_check(
        |tape, p| {
            calls += 1;
            let c = tape.constant(Tensor::scalar(calls as f64));
            let s = tape.add(p[0], c)?;
            Ok(tape.sum(s))
        },
        &[Tensor::zeros(&[1])],
        &GradCheckConfig::default(),
    );
    assert!(matches!(r, Err(Error::Oracle(_))));
}
