//! Render a test year's truth next to a climatology forecast as a PPM image.
//!
//!     cargo run --release --example render_map -- [out.ppm]

use monsoon_core::grid::reverse_map;
use monsoon_core::pipeline::prepare;
use monsoon_core::preprocess::{denormalize_value, SplitSpec};
use monsoon_core::render::{render_map, scale_sidecar_path};
use monsoon_core::synth::{gen_synthetic, SyntheticWorldSpec};
use monsoon_core::train::climatology_baseline;

fn main() -> monsoon_core::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "june_map.ppm".into());
    let world = gen_synthetic(&SyntheticWorldSpec::micro())?;
    let data = prepare(&world.predictors, world.target("june").unwrap(), SplitSpec::default())?;
    let (lo, hi) = data.target_norm.range(0);
    let mm = |v: &[f32]| -> Vec<f32> { v.iter().map(|x| denormalize_value(*x as f64, lo, hi) as f32).collect() };

    let year = data.test.years[0];
    let truth = reverse_map(&mm(&data.test_targets.vector(year)?.values), &data.test_targets.mask)?;
    let clim = reverse_map(&mm(&climatology_baseline(&data.train_targets)?), &data.test_targets.mask)?;
    let scale = render_map(truth.view(), clim.view(), out.as_ref(), 16)?;
    println!(
        "{year}: truth (left) vs climatology (right) -> {out}, scale [{:.2}, {:.2}] mm/day in {}",
        scale.min,
        scale.max,
        scale_sidecar_path(out.as_ref()).display()
    );
    Ok(())
}
