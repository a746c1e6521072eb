//! Mini-batch Adam training with early stopping, prediction, evaluation
//! and the climatology baseline.

use std::fmt;
use std::str::FromStr;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::augment::{materialize, AugmentPlan, PlanEntry};
use crate::error::{Error, Result};
use crate::grid::{PredictorCube, SplitRole, Stage, TargetSet};
use crate::metrics::MetricsReport;
use crate::network::{forward_on_tape, init_params, NetworkSpec, NetworkState};
use crate::preprocess::{denormalize_value, NormParams};
use crate::tensor::{AdamConfig, AdamState, Mode, Tape, Tensor, Var};

/// The five forecasting targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    June,
    July,
    August,
    September,
    Jjas,
}

impl Target {
    pub const ALL: [Target; 5] = [Target::June, Target::July, Target::August, Target::September, Target::Jjas];

    pub fn as_str(self) -> &'static str {
        match self {
            Target::June => "june",
            Target::July => "july",
            Target::August => "august",
            Target::September => "september",
            Target::Jjas => "jjas",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Target::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownTarget(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub target: Target,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub patience: usize,
    pub min_delta: f64,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    pub dropout_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            target: Target::June,
            epochs: 100,
            batch_size: 8,
            adam: AdamConfig::default(),
            patience: 10,
            min_delta: 1e-5,
            init_seed: 0,
            shuffle_seed: 0,
            dropout_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(self.adam.lr >= 0.0) {
            return Err(Error::Config(format!("learning rate {} must be >= 0", self.adam.lr)));
        }
        Ok(())
    }
}

/// Training predictors, normalized targets and the (possibly augmented)
/// sample plan.
#[derive(Clone, Debug)]
pub struct TrainSet {
    pub predictors: PredictorCube,
    pub targets: TargetSet,
    pub plan: AugmentPlan,
}

impl TrainSet {
    pub fn new(predictors: PredictorCube, targets: TargetSet, plan: AugmentPlan) -> Result<Self> {
        if predictors.role != SplitRole::Train || targets.role != SplitRole::Train {
            return Err(Error::Protocol("training requires train-role predictors and targets".into()));
        }
        if predictors.stage != Stage::Downsampled {
            return Err(Error::Protocol(format!(
                "training on a {:?} cube; run the full preprocessing first",
                predictors.stage
            )));
        }
        if !targets.normalized {
            return Err(Error::Protocol("training targets must be normalized".into()));
        }
        if plan.is_empty() {
            return Err(Error::Config("empty training set".into()));
        }
        for e in &plan.entries {
            if !predictors.years.contains(&e.year) || !targets.years.contains(&e.year) {
                return Err(Error::Data(format!("plan year {} missing from predictors or targets", e.year)));
            }
        }
        Ok(TrainSet {
            predictors,
            targets,
            plan,
        })
    }

    pub fn len(&self) -> usize {
        self.plan.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plan.is_empty()
    }

    /// Stacked `(B, T, H, W, C)` inputs and `(B, cells)` targets.
    pub fn batch(&self, entries: &[PlanEntry]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let (_, t, h, w, c) = self.predictors.values.dim();
        let cells = self.targets.cells();
        let mut x = Vec::with_capacity(entries.len() * t * h * w * c);
        let mut y = Vec::with_capacity(entries.len() * cells);
        for e in entries {
            let yi = self.predictors.years.iter().position(|v| *v == e.year).expect("checked in new");
            let sample = materialize(self.predictors.values.index_axis(Axis(0), yi), e.variant, &self.plan.spec)?;
            x.extend(sample.iter().copied());
            y.extend(self.targets.vector(e.year)?.values);
        }
        Ok((
            Tensor::new(vec![entries.len(), t, h, w, c], x)?,
            Tensor::new(vec![entries.len(), cells], y)?,
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of MSE + L2 over the epoch's batches.
    pub loss: f64,
    /// MSE component alone.
    pub mse: f64,
    pub improved: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// Loss of the initial parameters over one pass, before any update.
    pub initial_loss: f64,
    pub initial_mse: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl History {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "loss", "mse", "improved"])?;
        w.serialize((0, self.initial_loss, self.initial_mse, false))?;
        for e in &self.epochs {
            w.serialize((e.epoch, e.loss, e.mse, e.improved))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Loss handles of one recorded training step.
struct StepGraph {
    loss: Var,
    params: Vec<Var>,
    mse: f64,
}

/// Stateful training loop; [`train`] drives it to completion.
pub struct Trainer<'a> {
    config: TrainConfig,
    set: &'a TrainSet,
    state: NetworkState<f32>,
    names: Vec<String>,
    l2_mask: Vec<bool>,
    adam: AdamState<f32>,
    best: Option<(f64, NetworkState<f32>)>,
    wait: usize,
    pub history: History,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &TrainConfig, spec: &NetworkSpec, set: &'a TrainSet) -> Result<Self> {
        config.validate()?;
        let (_, t, h, w, c) = set.predictors.values.dim();
        if spec.input_shape != [t, h, w, c] {
            return Err(Error::Shape(format!(
                "network input {:?} does not match training samples {:?}",
                spec.input_shape,
                [t, h, w, c]
            )));
        }
        if spec.output_units != set.targets.cells() {
            return Err(Error::Shape(format!(
                "network has {} outputs, target mask has {} valid cells",
                spec.output_units,
                set.targets.cells()
            )));
        }
        let state = init_params::<f32>(spec, config.init_seed)?;
        let manifest = spec.param_manifest();
        let adam = AdamState::new(config.adam, &state.params);
        let mut trainer = Trainer {
            config: config.clone(),
            set,
            names: manifest.iter().map(|p| p.name.clone()).collect(),
            l2_mask: manifest.iter().map(|p| p.kind.regularized()).collect(),
            state,
            adam,
            best: None,
            wait: 0,
            history: History::default(),
        };
        let (loss, mse) = trainer.initial_loss()?;
        trainer.history.initial_loss = loss;
        trainer.history.initial_mse = mse;
        Ok(trainer)
    }

    pub fn state(&self) -> &NetworkState<f32> {
        &self.state
    }

    /// Best parameters seen so far, or the current ones before any epoch.
    pub fn last_good(&self) -> &NetworkState<f32> {
        self.best.as_ref().map(|(_, s)| s).unwrap_or(&self.state)
    }

    fn record(
        &self,
        tape: &mut Tape<f32>,
        stats: &mut [crate::tensor::BatchNormStats<f32>],
        entries: &[PlanEntry],
        dropout_seed: u64,
    ) -> Result<StepGraph> {
        let (x, y) = self.set.batch(entries)?;
        let params: Vec<Var> = self.state.params.iter().map(|p| tape.param(p.clone())).collect();
        let xv = tape.constant(x);
        let out = forward_on_tape(tape, &self.state.spec, &params, stats, xv, Mode::Train, dropout_seed)?;
        let yv = tape.constant(y);
        let mse = tape.mse_loss(out.output, yv, &[])?;
        let mse = tape.value(mse).data()[0] as f64;
        let coeff = self.state.spec.l2_coeff as f32;
        let l2: Vec<(f32, Var)> = params
            .iter()
            .zip(&self.l2_mask)
            .filter(|(_, r)| **r && coeff > 0.0)
            .map(|(v, _)| (coeff, *v))
            .collect();
        let loss = tape.mse_loss(out.output, yv, &l2)?;
        Ok(StepGraph { loss, params, mse })
    }

    fn batches(&self) -> impl Iterator<Item = &'a [PlanEntry]> {
        self.set.plan.entries.chunks(self.config.batch_size)
    }

    fn initial_loss(&self) -> Result<(f64, f64)> {
        let (mut loss, mut mse) = (0.0, 0.0);
        for (b, entries) in self.batches().enumerate() {
            let mut tape = Tape::new();
            let mut stats = self.state.bn_stats.clone();
            let g = self.record(&mut tape, &mut stats, entries, self.dropout_seed(0, b))?;
            loss += tape.value(g.loss).data()[0] as f64 * entries.len() as f64;
            mse += g.mse * entries.len() as f64;
        }
        let n = self.set.len() as f64;
        Ok((loss / n, mse / n))
    }

    fn dropout_seed(&self, epoch: usize, batch: usize) -> u64 {
        self.config
            .dropout_seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(((epoch as u64) << 32) | batch as u64)
    }

    /// One pass over the plan. Returns `false` once early stopping fires.
    pub fn run_epoch(&mut self) -> Result<bool> {
        let epoch = self.history.epochs.len() + 1;
        let (mut loss_sum, mut mse_sum) = (0.0, 0.0);
        for (b, entries) in self.batches().enumerate() {
            let mut tape = Tape::new();
            let mut stats = self.state.bn_stats.clone();
            let g = self.record(&mut tape, &mut stats, entries, self.dropout_seed(epoch, b))?;
            let loss = tape.value(g.loss).data()[0] as f64;
            if !loss.is_finite() {
                return Err(Error::Training {
                    param: "loss".into(),
                    message: format!("non-finite loss {loss} in epoch {epoch}, batch {b}"),
                });
            }
            let mut grads = tape.backward(g.loss)?;
            let grads: Vec<Tensor<f32>> = g
                .params
                .iter()
                .map(|v| grads.take(*v).expect("every parameter is on the loss path"))
                .collect();
            self.adam.step(&mut self.state.params, &grads, &self.names)?;
            self.state.bn_stats = stats;
            self.state.step += 1;
            loss_sum += loss * entries.len() as f64;
            mse_sum += g.mse * entries.len() as f64;
        }
        let n = self.set.len() as f64;
        let (loss, mse) = (loss_sum / n, mse_sum / n);
        let improved = match &self.best {
            None => true,
            Some((best, _)) => best - loss > self.config.min_delta,
        };
        if improved {
            self.best = Some((loss, self.state.clone()));
            self.history.best_epoch = Some(epoch);
            self.wait = 0;
        } else {
            self.wait += 1;
        }
        self.history.epochs.push(EpochRecord {
            epoch,
            loss,
            mse,
            improved,
        });
        if self.wait >= self.config.patience {
            self.history.stopped_early = true;
            return Ok(false);
        }
        Ok(true)
    }

    /// Restore the best-epoch parameters.
    pub fn finish(self) -> (NetworkState<f32>, History) {
        let state = self.best.map(|(_, s)| s).unwrap_or(self.state);
        (state, self.history)
    }
}

pub fn train(config: &TrainConfig, spec: &NetworkSpec, set: &TrainSet) -> Result<(NetworkState<f32>, History)> {
    let mut trainer = Trainer::new(config, spec, set)?;
    for _ in 0..config.epochs {
        if !trainer.run_epoch()? {
            break;
        }
    }
    Ok(trainer.finish())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub year: i32,
    /// Sigmoid outputs in normalized space, in mask order.
    pub normalized: Vec<f32>,
    pub mm_per_day: Vec<f32>,
}

const EVAL_BATCH: usize = 4;

/// Inference over every year of a preprocessed cube.
pub fn predict(state: &NetworkState<f32>, cube: &PredictorCube, target_norm: &NormParams) -> Result<Vec<Prediction>> {
    let (lo, hi) = match target_norm.channels.as_slice() {
        [c] => (c.min, c.max),
        _ => {
            return Err(Error::Config(
                "prediction needs normalization parameters for exactly one target".into(),
            ))
        }
    };
    if cube.stage != Stage::Downsampled {
        return Err(Error::Protocol(format!("predicting from a {:?} cube", cube.stage)));
    }
    let (_, t, h, w, c) = cube.values.dim();
    let mut out = Vec::with_capacity(cube.years.len());
    for (chunk_i, years) in cube.years.chunks(EVAL_BATCH).enumerate() {
        let start = chunk_i * EVAL_BATCH;
        let slab = cube.values.slice(ndarray::s![start..start + years.len(), .., .., .., ..]);
        let x = Tensor::new(vec![years.len(), t, h, w, c], slab.iter().copied().collect())?;
        let (y, _) = state.predict(&x)?;
        let units = state.spec.output_units;
        for (year, row) in years.iter().zip(y.data().chunks(units)) {
            out.push(Prediction {
                year: *year,
                normalized: row.to_vec(),
                mm_per_day: row.iter().map(|v| denormalize_value(*v as f64, lo, hi) as f32).collect(),
            });
        }
    }
    Ok(out)
}

fn check_test_set(cube: &PredictorCube, targets: &TargetSet) -> Result<()> {
    if cube.role == SplitRole::Train || targets.role == SplitRole::Train {
        return Err(Error::Protocol("evaluation on training data".into()));
    }
    let mut years = cube.years.clone();
    years.sort_unstable();
    if years.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Protocol(
            "test set contains repeated years; augmented samples are not allowed".into(),
        ));
    }
    if !targets.normalized {
        return Err(Error::Protocol("test targets must be normalized with training parameters".into()));
    }
    Ok(())
}

/// Per-year metrics in normalized space plus physical MAE.
pub fn evaluate(
    state: &NetworkState<f32>,
    cube: &PredictorCube,
    targets: &TargetSet,
    target_norm: &NormParams,
) -> Result<MetricsReport> {
    check_test_set(cube, targets)?;
    let preds = predict(state, cube, target_norm)?;
    let truth: Vec<Vec<f32>> = preds
        .iter()
        .map(|p| targets.vector(p.year).map(|v| v.values))
        .collect::<Result<_>>()?;
    MetricsReport::from_samples(
        &targets.name,
        preds.iter().zip(&truth).map(|(p, t)| (p.year, t.as_slice(), p.normalized.as_slice())),
        target_norm,
    )
}

/// Per-cell mean of the training targets.
pub fn climatology_baseline(train: &TargetSet) -> Result<Vec<f32>> {
    if train.years.is_empty() {
        return Err(Error::Config("climatology needs at least one training year".into()));
    }
    let n = train.years.len() as f64;
    Ok(train
        .values
        .axis_iter(Axis(1))
        .map(|col| (col.iter().map(|v| *v as f64).sum::<f64>() / n) as f32)
        .collect())
}

/// Score a constant per-cell forecast against every test year.
pub fn evaluate_baseline(baseline: &[f32], targets: &TargetSet, target_norm: &NormParams) -> Result<MetricsReport> {
    let truth: Vec<Vec<f32>> = targets
        .years
        .iter()
        .map(|y| targets.vector(*y).map(|v| v.values))
        .collect::<Result<_>>()?;
    MetricsReport::from_samples(
        &targets.name,
        targets.years.iter().zip(&truth).map(|(y, t)| (*y, t.as_slice(), baseline)),
        target_norm,
    )
}

/// One cell of the blocks × bottleneck experiment grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub blocks: usize,
    pub bottleneck: usize,
    pub target: String,
    pub mse: f64,
    pub mae: f64,
    pub snmae: f64,
}

/// Rows `(bottleneck, target, metric)`, one column per block count.
/// Missing cells are left empty.
pub fn table_layout(results: &[GridResult], blocks: &[usize], bottlenecks: &[usize], targets: &[&str]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    let mut header = vec!["bottleneck".to_string(), "target".into(), "metric".into()];
    header.extend(blocks.iter().map(|b| format!("blocks_{b}")));
    rows.push(header);
    for &bn in bottlenecks {
        for &target in targets {
            for metric in ["mse", "mae", "snmae"] {
                let mut row = vec![bn.to_string(), target.to_string(), metric.to_string()];
                for &b in blocks {
                    let cell = results
                        .iter()
                        .find(|r| r.blocks == b && r.bottleneck == bn && r.target == target)
                        .map(|r| match metric {
                            "mse" => r.mse,
                            "mae" => r.mae,
                            _ => r.snmae,
                        });
                    row.push(cell.map(|v| format!("{v:.5}")).unwrap_or_default());
                }
                rows.push(row);
            }
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ValidMask;
    use ndarray::array;

    fn target_set(values: ndarray::Array2<f32>) -> TargetSet {
        let cells = values.ncols();
        TargetSet {
            name: "june".into(),
            years: (0..values.nrows() as i32).collect(),
            values,
            mask: ValidMask {
                lat: 1,
                lon: cells,
                indices: (0..cells).collect(),
            },
            role: SplitRole::Train,
            normalized: true,
        }
    }

    #[test]
    fn unknown_target_name() {
        assert_eq!("JJAS".parse::<Target>().unwrap(), Target::Jjas);
        assert!(matches!("monsoon".parse::<Target>(), Err(Error::UnknownTarget(_))));
    }

    #[test]
    fn baseline_of_one_year_is_that_year() {
        let set = target_set(array![[0.1, 0.7, 0.3]]);
        assert_eq!(climatology_baseline(&set).unwrap(), vec![0.1, 0.7, 0.3]);
    }

    #[test]
    fn baseline_of_zero_and_one_is_half() {
        let set = target_set(array![[0.0, 0.0], [1.0, 1.0]]);
        assert_eq!(climatology_baseline(&set).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn zero_patience_is_rejected() {
        let cfg = TrainConfig {
            patience: 0,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn table_has_sixty_metric_rows() {
        let targets: Vec<&str> = Target::ALL.iter().map(|t| t.as_str()).collect();
        let rows = table_layout(&[], &[1, 2, 3, 4], &[64, 128, 256, 512], &targets);
        assert_eq!(rows.len(), 61);
        assert_eq!(rows.iter().skip(1).map(|r| r.len() - 3).sum::<usize>(), 240);
    }
}
