//! Layer shapes and parameter counts for every (blocks, bottleneck)
//! configuration at full resolution, plus one traced forward pass.
//!
//!     cargo run --release --example shape_ledger -- [blocks] [bottleneck]

use monsoon_core::network::{init_params, NetworkSpec, TABLE_BLOCKS, TABLE_BOTTLENECKS};
use monsoon_core::tensor::Tensor;

fn main() -> monsoon_core::Result<()> {
    println!("{:>6} {:>10} {:>12}  block outputs (T, H, W, C)", "blocks", "bottleneck", "parameters");
    for &blocks in &TABLE_BLOCKS {
        for &bottleneck in &TABLE_BOTTLENECKS {
            let spec = NetworkSpec::table(blocks, bottleneck);
            spec.validate()?;
            println!(
                "{blocks:>6} {bottleneck:>10} {:>12}  {:?}",
                spec.param_count(),
                spec.block_output_shapes()
            );
        }
    }

    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().ok());
    let blocks = args.next().flatten().unwrap_or(1);
    let bottleneck = args.next().flatten().unwrap_or(64);
    let spec = NetworkSpec::table(blocks, bottleneck);
    let state = init_params::<f32>(&spec, 0)?;
    let [t, h, w, c] = spec.input_shape;
    let (out, trace) = state.predict(&Tensor::full(&[1, t, h, w, c], 0.5))?;
    println!("\ntraced forward pass, {blocks} block(s), bottleneck {bottleneck}");
    for (k, s) in trace.blocks.iter().enumerate() {
        println!("  block {}: {s:?}", k + 1);
    }
    println!("  collapse: {:?}  (T, H, W, C)", trace.collapse);
    println!("  pooled:   {:?}  (batch, C)", trace.pooled);
    println!("  output:   {:?}  (batch, cells)", trace.output);
    println!("  first outputs: {:?}", &out.data()[..4]);
    for p in spec.param_manifest().iter().take(6) {
        println!("  {:<22} {:?}", p.name, p.dims);
    }
    Ok(())
}
