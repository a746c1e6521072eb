use monsoon_core::network::{
    forward_on_tape, init_params, load_checkpoint, residual_block, save_checkpoint, temporal_collapse, BlockVars,
    NetworkSpec, ReluPlacement, TABLE_BLOCKS, TABLE_BOTTLENECKS,
};
use monsoon_core::tensor::{grad_check, BatchNormConfig, BatchNormStats, GradCheckConfig, Mode, Tape, Tensor};
use monsoon_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(dims: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(dims, |_| rng.gen_range(lo..hi))
}

fn micro_spec(input: [usize; 4], bottleneck: usize, outputs: usize) -> NetworkSpec {
    NetworkSpec {
        num_blocks: 1,
        bottleneck,
        output_units: outputs,
        hidden_units: 6,
        input_shape: input,
        ..Default::default()
    }
}

#[test]
fn residual_block_with_zeroed_main_path_is_relu_of_input() {
    let c = 3;
    let x = random(&[2, 4, 4, c], 1, -1.0, 1.0);
    let mut tape = Tape::<f64>::new();
    let xv = tape.constant(x.clone());
    let mut zero = |dims: &[usize]| tape.constant(Tensor::zeros(dims));
    let (k1, b1, k2, b2) = (zero(&[3, 3, 3, c, c]), zero(&[c]), zero(&[3, 3, 3, c, c]), zero(&[c]));
    let (beta1, beta2) = (zero(&[c]), zero(&[c]));
    let g1 = tape.constant(Tensor::full(&[c], 1.0));
    let g2 = tape.constant(Tensor::full(&[c], 1.0));
    let vars = BlockVars {
        conv1: (k1, b1),
        bn1: (g1, beta1),
        conv2: (k2, b2),
        bn2: (g2, beta2),
        shortcut: None,
    };
    let (mut s1, mut s2) = (BatchNormStats::new(c), BatchNormStats::new(c));
    let y = residual_block(
        &mut tape,
        xv,
        &vars,
        (&mut s1, &mut s2),
        [1, 1, 1],
        Mode::Infer,
        BatchNormConfig::default(),
        ReluPlacement::AfterAdd,
    )
    .unwrap();
    let expect: Vec<f64> = x.data().iter().map(|v| v.max(0.0)).collect();
    assert_eq!(tape.value(y).data(), &expect[..]);
}

#[test]
fn identity_shortcut_with_channel_change_is_a_shape_error() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[2, 4, 4, 2]));
    let mut t = |dims: &[usize]| tape.constant(Tensor::full(dims, 1.0));
    let vars = BlockVars {
        conv1: (t(&[3, 3, 3, 2, 4]), t(&[4])),
        bn1: (t(&[4]), t(&[4])),
        conv2: (t(&[3, 3, 3, 4, 4]), t(&[4])),
        bn2: (t(&[4]), t(&[4])),
        shortcut: None,
    };
    let (mut s1, mut s2) = (BatchNormStats::new(4), BatchNormStats::new(4));
    let r = residual_block(
        &mut tape,
        x,
        &vars,
        (&mut s1, &mut s2),
        [1, 1, 1],
        Mode::Infer,
        BatchNormConfig::default(),
        ReluPlacement::AfterAdd,
    );
    assert!(matches!(r, Err(Error::Shape(_))));
}

#[test]
fn first_block_shape_at_full_scale() {
    let spec = NetworkSpec::table(1, 64);
    let state = init_params::<f32>(&spec, 0).unwrap();
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::full(&[1, 11, 87, 180, 25], 0.5));
    let p: Vec<_> = state.params[..10].iter().map(|t| tape.constant(t.clone())).collect();
    let vars = BlockVars {
        conv1: (p[0], p[1]),
        bn1: (p[2], p[3]),
        conv2: (p[4], p[5]),
        bn2: (p[6], p[7]),
        shortcut: Some((p[8], p[9])),
    };
    let mut stats = state.bn_stats.clone();
    let (a, b) = stats.split_at_mut(1);
    let y = residual_block(
        &mut tape,
        x,
        &vars,
        (&mut a[0], &mut b[0]),
        [2, 2, 2],
        Mode::Infer,
        BatchNormConfig::default(),
        ReluPlacement::AfterAdd,
    )
    .unwrap();
    assert_eq!(tape.value(y).dims(), &[1, 6, 44, 90, 32]);
}

fn block_params(cin: usize, cout: usize, seed: u64) -> Vec<Tensor<f64>> {
    vec![
        random(&[3, 3, 3, cin, cout], seed, -0.5, 0.5),
        random(&[cout], seed + 1, -0.1, 0.1),
        random(&[cout], seed + 2, 0.5, 1.5),
        random(&[cout], seed + 3, -0.1, 0.1),
        random(&[3, 3, 3, cout, cout], seed + 4, -0.5, 0.5),
        random(&[cout], seed + 5, -0.1, 0.1),
        random(&[cout], seed + 6, 0.5, 1.5),
        random(&[cout], seed + 7, -0.1, 0.1),
        random(&[1, 1, 1, cin, cout], seed + 8, -0.5, 0.5),
        random(&[cout], seed + 9, -0.1, 0.1),
    ]
}

#[test]
fn micro_block_gradients_match_finite_differences() {
    let x = random(&[1, 2, 6, 6, 2], 40, -1.0, 1.0);
    let weights = random(&[1, 1, 3, 3, 4], 41, -1.0, 1.0);
    let params = block_params(2, 4, 50);
    for placement in [ReluPlacement::AfterAdd, ReluPlacement::BeforeAdd] {
        let report = grad_check(
            |tape, v| {
                let xv = tape.constant(x.clone());
                let vars = BlockVars {
                    conv1: (v[0], v[1]),
                    bn1: (v[2], v[3]),
                    conv2: (v[4], v[5]),
                    bn2: (v[6], v[7]),
                    shortcut: Some((v[8], v[9])),
                };
                let (mut s1, mut s2) = (BatchNormStats::new(4), BatchNormStats::new(4));
                let y = residual_block(
                    tape,
                    xv,
                    &vars,
                    (&mut s1, &mut s2),
                    [2, 2, 2],
                    Mode::Train,
                    BatchNormConfig::default(),
                    placement,
                )?;
                assert_eq!(tape.value(y).dims(), &[1, 1, 3, 3, 4]);
                let w = tape.constant(weights.clone());
                let target = tape.constant(Tensor::zeros(&[1, 1, 3, 3, 4]));
                let shifted = tape.add(y, w)?;
                tape.mse_loss(shifted, target, &[])
            },
            &params,
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed, "{placement:?}: {report:?}");
    }
}

#[test]
fn temporal_collapse_matches_unrolled_sum_over_slices() {
    let (t, h, w, c, o) = (3, 4, 5, 2, 3);
    let x = random(&[1, t, h, w, c], 60, -1.0, 1.0);
    let k = random(&[t, 3, 3, c, o], 61, -1.0, 1.0);
    let mut tape = Tape::<f64>::new();
    let (xv, kv, bv) = (
        tape.constant(x.clone()),
        tape.constant(k.clone()),
        tape.constant(Tensor::zeros(&[o])),
    );
    let y = temporal_collapse(&mut tape, xv, kv, bv).unwrap();
    let y = tape.value(y);
    assert_eq!(y.dims(), &[1, h, w, o]);

    let xi = |ti: usize, r: isize, cc: isize, ch: usize| -> f64 {
        if r < 0 || cc < 0 || r >= h as isize || cc >= w as isize {
            0.0
        } else {
            x.data()[((ti * h + r as usize) * w + cc as usize) * c + ch]
        }
    };
    for r in 0..h {
        for col in 0..w {
            for oc in 0..o {
                let mut acc = 0.0;
                for ti in 0..t {
                    for dr in 0..3 {
                        for dc in 0..3 {
                            for ch in 0..c {
                                let kk = k.data()[(((ti * 3 + dr) * 3 + dc) * c + ch) * o + oc];
                                acc += kk * xi(ti, r as isize + dr as isize - 1, col as isize + dc as isize - 1, ch);
                            }
                        }
                    }
                }
                let got = y.data()[((r * w) + col) * o + oc];
                assert!((got - acc).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn temporal_collapse_rejects_short_kernel() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[1, 3, 4, 4, 2]));
    let k = tape.constant(Tensor::zeros(&[2, 3, 3, 2, 1]));
    let b = tape.constant(Tensor::zeros(&[1]));
    assert!(matches!(temporal_collapse(&mut tape, x, k, b), Err(Error::Shape(_))));
}

/// Shapes enumerated independently of the implementation.
fn golden_manifest(blocks: usize, bottleneck: usize, cin0: usize, t0: usize) -> Vec<(String, Vec<usize>)> {
    let mut m = Vec::new();
    let mut cin = cin0;
    let mut t = t0;
    for k in 1..=blocks {
        let f = (32 * 2usize.pow(k as u32 - 1)).min(bottleneck);
        let b = format!("block{k}");
        m.push((format!("{b}.conv1.kernel"), vec![3, 3, 3, cin, f]));
        m.push((format!("{b}.conv1.bias"), vec![f]));
        m.push((format!("{b}.bn1.gamma"), vec![f]));
        m.push((format!("{b}.bn1.beta"), vec![f]));
        m.push((format!("{b}.conv2.kernel"), vec![3, 3, 3, f, f]));
        m.push((format!("{b}.conv2.bias"), vec![f]));
        m.push((format!("{b}.bn2.gamma"), vec![f]));
        m.push((format!("{b}.bn2.beta"), vec![f]));
        m.push((format!("{b}.shortcut.kernel"), vec![1, 1, 1, cin, f]));
        m.push((format!("{b}.shortcut.bias"), vec![f]));
        cin = f;
        t = t.div_ceil(2);
    }
    m.push(("collapse.kernel".into(), vec![t, 3, 3, cin, bottleneck]));
    m.push(("collapse.bias".into(), vec![bottleneck]));
    m.push(("dense1.weight".into(), vec![bottleneck, 512]));
    m.push(("dense1.bias".into(), vec![512]));
    m.push(("dense2.weight".into(), vec![512, 357]));
    m.push(("dense2.bias".into(), vec![357]));
    m
}

#[test]
fn parameter_manifest_matches_golden_enumeration() {
    for blocks in TABLE_BLOCKS {
        for bottleneck in TABLE_BOTTLENECKS {
            let got: Vec<_> = NetworkSpec::table(blocks, bottleneck)
                .param_manifest()
                .into_iter()
                .map(|p| (p.name, p.dims))
                .collect();
            assert_eq!(got, golden_manifest(blocks, bottleneck, 25, 11));
        }
    }
}

#[test]
fn parameter_count_is_monotone_in_blocks_and_bottleneck() {
    for blocks in TABLE_BLOCKS {
        let counts: Vec<_> = TABLE_BOTTLENECKS
            .iter()
            .map(|&b| NetworkSpec::table(blocks, b).param_count())
            .collect();
        assert!(counts.windows(2).all(|w| w[0] < w[1]), "{counts:?}");
    }
    for bottleneck in TABLE_BOTTLENECKS {
        let counts: Vec<_> = TABLE_BLOCKS
            .iter()
            .map(|&k| NetworkSpec::table(k, bottleneck).param_count())
            .collect();
        assert!(counts.windows(2).all(|w| w[0] < w[1]), "{counts:?}");
    }
}

#[test]
fn infer_is_deterministic_and_bounded_on_fill_input() {
    let spec = micro_spec([11, 12, 15, 4], 16, 7);
    let state = init_params::<f32>(&spec, 3).unwrap();
    let x = Tensor::full(&[2, 11, 12, 15, 4], -1.0f32);
    let (a, trace) = state.predict(&x).unwrap();
    let (b, _) = state.predict(&x).unwrap();
    assert_eq!(a, b);
    assert_eq!(trace.output, vec![2, 7]);
    assert_eq!(trace.pooled, vec![2, 16]);
    assert!(a.data().iter().all(|v| v.is_finite() && *v > 0.0 && *v < 1.0));
}

#[test]
fn initial_output_is_not_saturated() {
    let spec = micro_spec([11, 12, 15, 4], 16, 50);
    let spec = NetworkSpec {
        hidden_units: 64,
        ..spec
    };
    let state = init_params::<f32>(&spec, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = Tensor::from_fn(&[4, 11, 12, 15, 4], |_| rng.gen_range(0.0f32..1.0));
    let (y, _) = state.predict(&x).unwrap();
    let mean = y.mean();
    assert!(mean > 0.2 && mean < 0.8, "{mean}");
}

#[test]
fn wrong_input_shape_names_the_axis() {
    let spec = micro_spec([11, 12, 15, 4], 8, 3);
    let state = init_params::<f32>(&spec, 0).unwrap();
    match state.predict(&Tensor::zeros(&[1, 11, 12, 14, 4])) {
        Err(Error::Shape(msg)) => assert!(msg.contains("lon"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let spec = micro_spec([11, 6, 6, 2], 4, 3);
    let mut state = init_params::<f32>(&spec, 5).unwrap();
    state.step = 17;
    state.bn_stats[0].mean.data_mut()[0] = 0.25;
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&state, dir.path()).unwrap();
    assert_eq!(load_checkpoint(dir.path()).unwrap(), state);
}

#[test]
fn full_micro_network_gradients_match_finite_differences() {
    let spec = NetworkSpec {
        num_blocks: 1,
        bottleneck: 8,
        output_units: 5,
        hidden_units: 16,
        input_shape: [2, 12, 12, 3],
        ..Default::default()
    };
    let state = init_params::<f64>(&spec, 21).unwrap();
    let x = random(&[2, 2, 12, 12, 3], 22, 0.0, 1.0);
    let target = random(&[2, 5], 23, 0.0, 1.0);
    let report = grad_check(
        |tape, v| {
            let mut stats = state.bn_stats.clone();
            let xv = tape.constant(x.clone());
            let out = forward_on_tape(tape, &spec, v, &mut stats, xv, Mode::Train, 99)?;
            let t = tape.constant(target.clone());
            tape.mse_loss(out.output, t, &[])
        },
        &state.params,
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
    assert!(report.checked > 1000);
}
