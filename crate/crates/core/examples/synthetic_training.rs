//! Generate a micro synthetic world, train a one-block model on augmented
//! samples and compare it with climatology on the held-out years.
//!
//!     cargo run --release --example synthetic_training -- [epochs] [world-seed]

use std::time::Instant;

use monsoon_core::augment::{augment_dataset, WindowSpec};
use monsoon_core::network::NetworkSpec;
use monsoon_core::pipeline::prepare;
use monsoon_core::preprocess::SplitSpec;
use monsoon_core::synth::{gen_synthetic, SyntheticWorldSpec};
use monsoon_core::train::{climatology_baseline, evaluate, evaluate_baseline, Trainer, TrainConfig, TrainSet};

fn main() -> monsoon_core::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<u64>().ok());
    let epochs = args.next().flatten().unwrap_or(30) as usize;
    let seed = args.next().flatten().unwrap_or(0);
    let world = gen_synthetic(&SyntheticWorldSpec {
        seed,
        ..SyntheticWorldSpec::micro()
    })?;
    let data = prepare(&world.predictors, world.target("june").unwrap(), SplitSpec::default())?;
    println!(
        "train years {}, test years {}, grid {:?}, cells {}",
        data.train.years.len(),
        data.test.years.len(),
        data.train.grid(),
        data.train_targets.cells()
    );

    let window = WindowSpec {
        window: (14, 15),
        stride: (9, 10),
        fill: -1.0,
    };
    let plan = augment_dataset(&data.train, &window, 7)?;
    let set = TrainSet::new(data.train.clone(), data.train_targets.clone(), plan)?;
    let (_, t, h, w, c) = data.train.values.dim();
    let spec = NetworkSpec {
        num_blocks: 1,
        bottleneck: 16,
        hidden_units: 64,
        output_units: data.train_targets.cells(),
        input_shape: [t, h, w, c],
        ..Default::default()
    };
    let config = TrainConfig {
        epochs,
        ..Default::default()
    };

    let start = Instant::now();
    let mut trainer = Trainer::new(&config, &spec, &set)?;
    println!("{} samples, initial mse {:.5}", set.len(), trainer.history.initial_mse);
    for _ in 0..epochs {
        let go = trainer.run_epoch()?;
        let e = trainer.history.epochs.last().unwrap();
        println!(
            "epoch {:>3}  loss {:.5}  mse {:.5}  {:.1}s",
            e.epoch,
            e.loss,
            e.mse,
            start.elapsed().as_secs_f64()
        );
        if !go {
            break;
        }
    }
    let (state, _) = trainer.finish();

    let model = evaluate(&state, &data.test, &data.test_targets, &data.target_norm)?;
    let baseline = climatology_baseline(&data.train_targets)?;
    let clim = evaluate_baseline(&baseline, &data.test_targets, &data.target_norm)?;
    println!(
        "test mse: model {:.5}, climatology {:.5} (ratio {:.3})",
        model.mean.mse,
        clim.mean.mse,
        model.mean.mse / clim.mean.mse
    );
    println!(
        "test mae: model {:.3} mm/day, climatology {:.3} mm/day",
        model.mean.mae_mm_per_day, clim.mean.mae_mm_per_day
    );
    Ok(())
}
