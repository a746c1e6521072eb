//! Raw synthetic cube to model-ready tensors: year split, min-max scaling
//! fitted on training years, SST land fill and 3×3 average pooling.
//!
//!     cargo run --release --example preprocessing

use monsoon_core::pipeline::prepare;
use monsoon_core::preprocess::SplitSpec;
use monsoon_core::synth::{gen_synthetic, SyntheticWorldSpec};

fn range(values: impl Iterator<Item = f32>) -> (f32, f32, usize) {
    values.fold((f32::INFINITY, f32::NEG_INFINITY, 0), |(lo, hi, nan), v| {
        if v.is_nan() {
            (lo, hi, nan + 1)
        } else {
            (lo.min(v), hi.max(v), nan)
        }
    })
}

fn main() -> monsoon_core::Result<()> {
    let world = gen_synthetic(&SyntheticWorldSpec::micro())?;
    let raw = &world.predictors;
    println!("raw cube {:?}, channels {:?}", raw.values.dim(), raw.channels);
    let sst = raw.channel_index("sst").expect("sst channel");
    let (lo, hi, nan) = range(raw.values.index_axis(ndarray::Axis(4), sst).iter().copied());
    println!("raw sst: [{lo:.3}, {hi:.3}], {nan} land (NaN) values");

    let data = prepare(raw, world.target("june").unwrap(), SplitSpec::default())?;
    println!("train years {:?}", data.train.years);
    println!("test years  {:?}", data.test.years);
    println!("model-ready train {:?} ({:?}, {:?})", data.train.values.dim(), data.train.role, data.train.stage);
    for c in &data.predictor_norm.channels {
        println!("  {:<6} fitted range [{:>9.3}, {:>9.3}]", c.name, c.min, c.max);
    }
    let (lo, hi, nan) = range(data.train.values.iter().copied());
    println!("train values in [{lo:.3}, {hi:.3}], {nan} NaN");
    let (lo, hi, nan) = range(data.test.values.iter().copied());
    println!("test values in [{lo:.3}, {hi:.3}] (not clipped), {nan} NaN");

    let r = &data.target_norm.channels[0];
    println!(
        "june target: {} valid cells, training range [{:.3}, {:.3}] mm/day",
        data.train_targets.cells(),
        r.min,
        r.max
    );
    Ok(())
}
