use monsoon_core::augment::plan_originals;
use monsoon_core::grid::SplitRole;
use monsoon_core::metrics::{metric_mae, metric_mse, metric_snmae, MetricsReport, SNMAE_EPS};
use monsoon_core::network::NetworkSpec;
use monsoon_core::pipeline::{prepare, PreparedData};
use monsoon_core::preprocess::{normalize_value, NormParams, SplitSpec};
use monsoon_core::synth::{gen_synthetic, SyntheticWorldSpec};
use monsoon_core::tensor::AdamConfig;
use monsoon_core::train::{
    climatology_baseline, evaluate, evaluate_baseline, predict, train, Trainer, TrainConfig, TrainSet,
};
use monsoon_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn data() -> PreparedData {
    let world = gen_synthetic(&SyntheticWorldSpec {
        first_year: 2000,
        years: 12,
        grid: (24, 31),
        target_grid: (5, 6),
        signal_rows: (3, 21),
        signal_cols: (3, 24),
        land_from_col: 27,
        ..SyntheticWorldSpec::micro()
    })
    .unwrap();
    prepare(&world.predictors, world.target("june").unwrap(), SplitSpec { start: 2000, stride: 4 }).unwrap()
}

fn set(d: &PreparedData) -> TrainSet {
    let plan = plan_originals(&d.train.years, d.train.grid(), d.train.role, 3).unwrap();
    TrainSet::new(d.train.clone(), d.train_targets.clone(), plan).unwrap()
}

fn spec(d: &PreparedData) -> NetworkSpec {
    let (_, t, h, w, c) = d.train.values.dim();
    NetworkSpec {
        num_blocks: 1,
        bottleneck: 8,
        hidden_units: 16,
        output_units: d.train_targets.cells(),
        input_shape: [t, h, w, c],
        ..Default::default()
    }
}

fn frozen(epochs: usize, patience: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        patience,
        batch_size: 4,
        adam: AdamConfig {
            lr: 0.0,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn zero_learning_rate_is_a_fixed_point() {
    let d = data();
    let s = spec(&d);
    let (state, history) = train(&frozen(3, 10), &s, &set(&d)).unwrap();
    let init = monsoon_core::network::init_params::<f32>(&s, 0).unwrap();
    assert_eq!(state.params, init.params);
    assert_eq!(history.epochs.len(), 3);
}

#[test]
fn frozen_loss_stops_after_patience_and_restores_best() {
    let d = data();
    let s = NetworkSpec {
        dropout_rate: 0.0,
        ..spec(&d)
    };
    let (state, history) = train(&frozen(20, 2), &s, &set(&d)).unwrap();
    assert_eq!(history.epochs.len(), 3);
    assert!(history.stopped_early);
    assert_eq!(history.best_epoch, Some(1));
    assert_eq!(state.step, 3, "best-epoch snapshot is taken after the first epoch");
    let losses: Vec<f64> = history.epochs.iter().map(|e| e.loss).collect();
    assert!(losses.iter().all(|l| *l == losses[0]));
}

#[test]
fn best_weights_never_exceed_any_observed_loss() {
    let d = data();
    let config = TrainConfig {
        epochs: 6,
        patience: 2,
        batch_size: 4,
        ..Default::default()
    };
    let (_, h) = train(&config, &spec(&d), &set(&d)).unwrap();
    let best = h.epochs[h.best_epoch.unwrap() - 1].loss;
    assert!(h.epochs.iter().all(|e| best <= e.loss + config.min_delta));
}

#[test]
fn planted_signal_is_learned_on_a_tiny_world() {
    let d = data();
    let config = TrainConfig {
        epochs: 25,
        batch_size: 4,
        adam: AdamConfig {
            lr: 3e-3,
            ..Default::default()
        },
        ..Default::default()
    };
    let s = NetworkSpec {
        dropout_rate: 0.0,
        l2_coeff: 0.0,
        ..spec(&d)
    };
    let (_, h) = train(&config, &s, &set(&d)).unwrap();
    let mse: Vec<f64> = h.epochs.iter().map(|e| e.mse).collect();
    assert!(mse[0] < h.initial_mse);
    assert!(mse[..5].windows(2).all(|w| w[1] < w[0]), "{mse:?}");
    assert!(*mse.last().unwrap() < 0.5 * h.initial_mse, "{} vs {}", mse.last().unwrap(), h.initial_mse);
}

#[test]
fn identical_runs_are_bit_identical() {
    let d = data();
    let config = TrainConfig {
        epochs: 2,
        batch_size: 4,
        ..Default::default()
    };
    let (a, ha) = train(&config, &spec(&d), &set(&d)).unwrap();
    let (b, hb) = train(&config, &spec(&d), &set(&d)).unwrap();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
}

#[test]
fn nan_input_aborts_with_a_training_error_and_keeps_last_good() {
    // ReLU drops a NaN from the forward value, but the kernel gradient
    // carries it, so the step is refused by the optimizer guard
    let d = data();
    let mut ts = set(&d);
    let first = ts.plan.entries[0].year;
    let yi = ts.predictors.years.iter().position(|y| *y == first).unwrap();
    ts.predictors.values[[yi, 0, 0, 0, 0]] = f32::NAN;
    let mut trainer = Trainer::new(&frozen(1, 1), &spec(&d), &ts).unwrap();
    match trainer.run_epoch() {
        Err(Error::Training { param, .. }) => assert!(param == "loss" || param.starts_with("block1.conv1")),
        other => panic!("{other:?}"),
    }
    assert!(trainer.last_good().params.iter().all(|p| p.is_finite()));
}

#[test]
fn empty_plan_and_wrong_roles_are_rejected() {
    let d = data();
    let mut plan = plan_originals(&d.train.years, d.train.grid(), SplitRole::Train, 0).unwrap();
    plan.entries.clear();
    assert!(matches!(
        TrainSet::new(d.train.clone(), d.train_targets.clone(), plan),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        plan_originals(&d.test.years, d.test.grid(), d.test.role, 0),
        Err(Error::Protocol(_))
    ));
}

#[test]
fn untrained_model_evaluates_to_finite_metrics_and_is_repeatable() {
    let d = data();
    let state = monsoon_core::network::init_params::<f32>(&spec(&d), 4).unwrap();
    let a = evaluate(&state, &d.test, &d.test_targets, &d.target_norm).unwrap();
    let b = evaluate(&state, &d.test, &d.test_targets, &d.target_norm).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.samples.len(), d.test.years.len());
    assert!(a.mean.mse.is_finite() && a.mean.mae.is_finite() && a.mean.snmae.is_finite());
}

#[test]
fn evaluating_training_or_repeated_years_is_a_protocol_error() {
    let d = data();
    let state = monsoon_core::network::init_params::<f32>(&spec(&d), 4).unwrap();
    let r = evaluate(&state, &d.train, &d.train_targets, &d.target_norm);
    assert!(matches!(r, Err(Error::Protocol(_))));
    let y = d.test.years[0];
    let doubled = d.test.select_years(&[y, y]).unwrap();
    let r = evaluate(&state, &doubled, &d.test_targets, &d.target_norm);
    assert!(matches!(r, Err(Error::Protocol(_))));
}

#[test]
fn predictions_are_denormalized_with_target_range() {
    let d = data();
    let state = monsoon_core::network::init_params::<f32>(&spec(&d), 4).unwrap();
    let june = NormParams::published_target("june").unwrap();
    for p in predict(&state, &d.test, &june).unwrap() {
        for (n, mm) in p.normalized.iter().zip(&p.mm_per_day) {
            let expect = *n as f64 * 58.0408;
            assert!((*mm as f64 - expect).abs() <= 1e-5 * expect.max(1.0));
            let back = normalize_value(*mm as f64, 0.0, 58.0408);
            assert!((back - *n as f64).abs() < 1e-6);
        }
    }
    let two = NormParams {
        channels: [june.channels.clone(), june.channels.clone()].concat(),
        ..june
    };
    assert!(matches!(predict(&state, &d.test, &two), Err(Error::Config(_))));
}

#[test]
fn climatology_mse_matches_exhaustive_sum() {
    let d = data();
    let base = climatology_baseline(&d.train_targets).unwrap();
    let report = evaluate_baseline(&base, &d.test_targets, &d.target_norm).unwrap();
    let mut total = 0.0;
    for row in d.test_targets.values.outer_iter() {
        let mut s = 0.0;
        for (y, b) in row.iter().zip(&base) {
            s += (*y as f64 - *b as f64).powi(2);
        }
        total += s / base.len() as f64;
    }
    let oracle = total / d.test_targets.years.len() as f64;
    assert!((report.mean.mse - oracle).abs() < 1e-15);
}

fn pair(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let yhat = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    (y, yhat)
}

proptest! {
    #[test]
    fn metrics_are_permutation_invariant_and_satisfy_jensen(seed in 0u64..1000, shift in 1usize..356) {
        let (y, yhat) = pair(seed, 357);
        let mse = metric_mse(&y, &yhat).unwrap();
        let mae = metric_mae(&y, &yhat).unwrap();
        prop_assert!(mae * mae <= mse);
        let mut yr = y.clone();
        let mut yhr = yhat.clone();
        yr.rotate_left(shift);
        yhr.rotate_left(shift);
        prop_assert!((metric_mse(&yr, &yhr).unwrap() - mse).abs() < 1e-15);
        prop_assert!((metric_mae(&yr, &yhr).unwrap() - mae).abs() < 1e-15);
    }

    #[test]
    fn snmae_is_scale_invariant_up_to_eps(seed in 0u64..1000, c in 0.5f64..10.0) {
        let (y, yhat) = pair(seed, 357);
        let scaled = |v: &[f64]| v.iter().map(|x| x * c).collect::<Vec<_>>();
        let a = metric_snmae(&y, &yhat, SNMAE_EPS).unwrap();
        let b = metric_snmae(&scaled(&y), &scaled(&yhat), SNMAE_EPS).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        prop_assert!((a - b).abs() <= SNMAE_EPS * 2.0 / mean);
        // exact first-order gap: snMAE · eps · |1/c − 1| / mean
        prop_assert!((a - b).abs() <= a * SNMAE_EPS * (1.0 / c - 1.0).abs() / mean * (1.0 + 1e-6) + 1e-16);
    }
}

#[test]
fn aggregate_is_mean_of_samples() {
    let june = NormParams::published_target("june").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rows: Vec<(Vec<f32>, Vec<f32>)> = (0..9)
        .map(|_| {
            let a = (0..40).map(|_| rng.gen_range(0.0..1.0)).collect();
            let b = (0..40).map(|_| rng.gen_range(0.0..1.0)).collect();
            (a, b)
        })
        .collect();
    let r = MetricsReport::from_samples(
        "june",
        rows.iter().enumerate().map(|(i, (a, b))| (i as i32, a.as_slice(), b.as_slice())),
        &june,
    )
    .unwrap();
    let mean_mae = r.samples.iter().map(|s| s.mae).sum::<f64>() / 9.0;
    assert_eq!(r.mean.mae, mean_mae);
    let twice = MetricsReport::from_samples(
        "june",
        [(1, rows[0].0.as_slice(), rows[0].1.as_slice()), (2, rows[0].0.as_slice(), rows[0].1.as_slice())],
        &june,
    )
    .unwrap();
    assert_eq!(twice.mean.mse, twice.samples[0].mse);
}

#[test]
fn perfect_prediction_scores_zero() {
    let y = vec![0.3f32; 10];
    let june = NormParams::published_target("june").unwrap();
    let r = MetricsReport::from_samples("june", [(2000, y.as_slice(), y.as_slice())], &june).unwrap();
    assert_eq!((r.mean.mse, r.mean.mae, r.mean.snmae), (0.0, 0.0, 0.0));
}
