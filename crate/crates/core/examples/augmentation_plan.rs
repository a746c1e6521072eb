//! Sliding-window augmentation: window positions, the shuffled plan and
//! what inclusive and occlusive variants keep of a sample.
//!
//!     cargo run --release --example augmentation_plan

use monsoon_core::augment::{augment_dataset, materialize, plan_augmentation, window_positions, Variant, WindowSpec};
use monsoon_core::grid::SplitRole;
use monsoon_core::pipeline::prepare;
use monsoon_core::preprocess::SplitSpec;
use monsoon_core::synth::{gen_synthetic, SyntheticWorldSpec};
use ndarray::Axis;

fn main() -> monsoon_core::Result<()> {
    let full = WindowSpec::default();
    let positions = window_positions((87, 180), &full)?;
    let years: Vec<i32> = (1940..2025).filter(|y| !SplitSpec::default().is_test(*y)).collect();
    let plan = plan_augmentation(&years, (87, 180), SplitRole::Train, &full, 0)?;
    println!(
        "full grid (87, 180), window {:?}, stride {:?}: {} positions {:?}",
        full.window,
        full.stride,
        positions.len(),
        positions
    );
    println!("{} training years -> {} samples", years.len(), plan.len());

    let world = gen_synthetic(&SyntheticWorldSpec::micro())?;
    let data = prepare(&world.predictors, world.target("june").unwrap(), SplitSpec::default())?;
    let spec = WindowSpec {
        window: (14, 15),
        stride: (9, 10),
        fill: -1.0,
    };
    let plan = augment_dataset(&data.train, &spec, 7)?;
    println!("\nmicro grid {:?}: {} positions, {} samples", data.train.grid(), plan.positions.len(), plan.len());
    for e in plan.entries.iter().take(5) {
        println!("  {} {:?}", e.year, e.variant);
    }

    let sample = data.train.values.index_axis(Axis(0), 0);
    let filled = |a: &ndarray::Array4<f32>| a.iter().filter(|v| **v == spec.fill).count();
    let (row, col) = plan.positions[4];
    for variant in [Variant::Original, Variant::Inclusive { row, col }, Variant::Occlusive { row, col }] {
        let v = materialize(sample, variant, &spec)?;
        println!("  {variant:?}: {} of {} values equal to the fill value", filled(&v), v.len());
    }
    Ok(())
}
