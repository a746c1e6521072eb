//! Central finite-difference oracle for tape gradients (double precision).

use super::{OpKind, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Pass threshold on the maximum relative deviation.
    pub tolerance: f64,
    /// Denominator floor, so that gradients near zero are compared absolutely.
    pub floor: f64,
    /// Oracle self-test hook: negate the adjoint of one op kind.
    pub negate_adjoint: Option<OpKind>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-3,
            floor: 1e-6,
            negate_adjoint: None,
        }
    }
}

impl GradCheckConfig {
    pub fn with_tolerance(tolerance: f64) -> Self {
        GradCheckConfig {
            tolerance,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub passed: bool,
}

fn run<Fwd>(forward: &mut Fwd, params: &[Tensor<f64>]) -> Result<f64>
where
    Fwd: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = forward(&mut tape, &vars)?;
    let v = tape.value(loss);
    if v.len() != 1 {
        return Err(Error::Oracle(format!("forward returned extents {:?}, not a scalar", v.dims())));
    }
    Ok(v.data()[0])
}

/// Compare tape gradients of the scalar returned by `forward` against
/// central differences for every element of every parameter.
///
/// `forward` must be deterministic: dropout in infer mode (or seeded) and a
/// fixed batch-norm mode. Two unperturbed runs are compared bitwise first.
pub fn grad_check<Fwd>(mut forward: Fwd, params: &[Tensor<f64>], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    Fwd: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let first = run(&mut forward, params)?;
    let second = run(&mut forward, params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Oracle(format!(
            "non-deterministic forward: {first:e} vs {second:e}"
        )));
    }

    let mut tape = Tape::new();
    if let Some(kind) = cfg.negate_adjoint {
        tape.inject_negated_adjoint(kind);
    }
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = forward(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: 0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        passed: true,
    };
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .ok_or_else(|| Error::Oracle(format!("parameter {pi} received no gradient")))?
            .data()
            .to_vec();
        for ei in 0..params[pi].len() {
            let orig = params[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + cfg.step;
            let plus = run(&mut forward, &work)?;
            work[pi].data_mut()[ei] = orig - cfg.step;
            let minus = run(&mut forward, &work)?;
            work[pi].data_mut()[ei] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[ei];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst_param = pi;
                report.worst_index = ei;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    report.passed = report.max_rel_error <= cfg.tolerance;
    Ok(report)
}
