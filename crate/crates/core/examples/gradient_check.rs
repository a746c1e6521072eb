//! Check tape gradients of a micro network against central differences,
//! then show that the oracle catches a deliberately broken adjoint.
//!
//!     cargo run --release --example gradient_check

use monsoon_core::network::{forward_on_tape, init_params, NetworkSpec};
use monsoon_core::tensor::{grad_check, GradCheckConfig, Mode, OpKind, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> monsoon_core::Result<()> {
    let spec = NetworkSpec {
        num_blocks: 1,
        bottleneck: 8,
        output_units: 5,
        hidden_units: 16,
        input_shape: [2, 12, 12, 3],
        ..Default::default()
    };
    let state = init_params::<f64>(&spec, 21)?;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = Tensor::from_fn(&[2, 2, 12, 12, 3], |_| rng.gen_range(0.0..1.0));
    let y = Tensor::from_fn(&[2, 5], |_| rng.gen_range(0.0..1.0));

    let loss = |tape: &mut Tape<f64>, v: &[Var]| {
        let mut stats = state.bn_stats.clone();
        let xv = tape.constant(x.clone());
        let out = forward_on_tape(tape, &spec, v, &mut stats, xv, Mode::Train, 99)?;
        let t = tape.constant(y.clone());
        tape.mse_loss(out.output, t, &[])
    };

    let report = grad_check(loss, &state.params, &GradCheckConfig::default())?;
    println!(
        "{} parameters checked, max relative error {:.2e} ({})",
        report.checked,
        report.max_rel_error,
        if report.passed { "pass" } else { "FAIL" }
    );

    for kind in [OpKind::Conv3d, OpKind::BatchNorm, OpKind::Dense] {
        let cfg = GradCheckConfig {
            negate_adjoint: Some(kind),
            ..Default::default()
        };
        let broken = grad_check(loss, &state.params, &cfg)?;
        println!(
            "negated {kind:?} adjoint: max relative error {:.2e} ({})",
            broken.max_rel_error,
            if broken.passed { "missed" } else { "caught" }
        );
    }
    Ok(())
}
