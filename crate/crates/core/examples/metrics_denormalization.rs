//! Per-sample MSE, MAE and scale-normalized MAE, and converting a
//! normalized MAE back to mm/day with the training-set range.
//!
//!     cargo run --release --example metrics_denormalization

use monsoon_core::metrics::{mae_to_physical, metric_mae, metric_mse, metric_snmae, MetricsReport, SNMAE_EPS};
use monsoon_core::preprocess::{NormParams, PUBLISHED_TARGET_RANGES};

fn main() -> monsoon_core::Result<()> {
    let y = [0.2f32, 0.4, 0.6, 0.3];
    let yhat = [0.25f32, 0.35, 0.5, 0.3];
    println!("y    = {y:?}\nyhat = {yhat:?}");
    println!(
        "mse {:.5}  mae {:.5}  snmae {:.5}",
        metric_mse(&y, &yhat)?,
        metric_mae(&y, &yhat)?,
        metric_snmae(&y, &yhat, SNMAE_EPS)?
    );

    println!("\nnormalized MAE 0.04 in physical units:");
    for (name, lo, hi) in PUBLISHED_TARGET_RANGES {
        let norm = NormParams::published_target(name).unwrap();
        println!("  {name:<9} range [{lo}, {hi}] -> {:.3} mm/day", mae_to_physical(0.04, &norm)?);
    }

    let norm = NormParams::published_target("june").unwrap();
    let truth = [vec![0.2f32, 0.4, 0.1], vec![0.3, 0.5, 0.2]];
    let pred = [vec![0.25f32, 0.35, 0.1], vec![0.3, 0.3, 0.25]];
    let report = MetricsReport::from_samples(
        "june",
        [(2001, &truth[0][..], &pred[0][..]), (2005, &truth[1][..], &pred[1][..])],
        &norm,
    )?;
    for s in &report.samples {
        println!("{}: mse {:.5} mae {:.5} ({:.3} mm/day)", s.year, s.mse, s.mae, s.mae_mm_per_day);
    }
    println!("mean: mse {:.5} mae {:.5} snmae {:.5}", report.mean.mse, report.mean.mae, report.mean.snmae);
    Ok(())
}
