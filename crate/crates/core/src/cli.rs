//! `monsoon` command-line interface.
//!
//! Every command writes into its own run directory: outputs, the resolved
//! configuration, all seeds and SHA-256 checksums of every input file
//! (`run.json`). Options may also come from a JSON file given with
//! `--config`; keys are the long flag names with `_` for `-`, and flags
//! given on the command line win.
//!
//! Failures print one JSON object to stderr
//! (`{"error": kind, "message": ..., "exit_code": n}`) and exit with a
//! code specific to the error kind.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::{Array2, Array3, Axis, Ix2};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::augment::{augment_dataset, plan_originals, AugmentPlan, WindowSpec};
use crate::error::{Error, Result};
use crate::grid::gtf::sidecar_path;
use crate::grid::{read_gtf, reverse_map, write_gtf, PredictorCube, TargetGrid, TargetSet, ValidMask};
use crate::network::{load_checkpoint, save_checkpoint, NetworkSpec, ReluPlacement, TABLE_BLOCKS, TABLE_BOTTLENECKS};
use crate::pipeline::prepare;
use crate::preprocess::{NormParams, SplitSpec};
use crate::render::render_map;
use crate::synth::{gen_synthetic, SyntheticWorldSpec};
use crate::tensor::AdamConfig;
use crate::train::{
    climatology_baseline, evaluate, evaluate_baseline, predict, table_layout, GridResult, Target, TrainConfig,
    TrainSet, Trainer,
};

#[derive(Parser, Debug)]
#[command(name = "monsoon", version, about = "Gridded monsoon rainfall forecasting from pre-monsoon predictor sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic predictor/target world with a planted signal.
    GenSynth(GenSynthArgs),
    /// Split years, fit scalings on training years, normalize, fill SST, downsample.
    Preprocess(PreprocessArgs),
    /// Plan sliding-window inclusive/occlusive augmentation of training samples.
    Augment(AugmentArgs),
    /// Train one (blocks, bottleneck, target) configuration.
    Train(TrainArgs),
    /// Score a trained model (and optionally climatology) on the test years.
    Evaluate(EvaluateArgs),
    /// Forecast rainfall grids from preprocessed predictors.
    Predict(PredictArgs),
    /// Render truth and prediction for one year side by side.
    RenderMap(RenderMapArgs),
    /// Collect evaluation summaries into a blocks × bottleneck table.
    Report(ReportArgs),
}

fn parse_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `A,B`, got `{s}`"))?;
    Ok((
        a.trim().parse().map_err(|e| format!("{e}"))?,
        b.trim().parse().map_err(|e| format!("{e}"))?,
    ))
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// `micro` (32 years, 6 channels) or `full` (85 years, 25 channels).
    #[arg(long)]
    pub scale: Option<String>,
    #[arg(long)]
    pub years: Option<usize>,
    #[arg(long)]
    pub first_year: Option<i32>,
    /// Predictor grid before downsampling, `LAT,LON`.
    #[arg(long, value_parser = parse_pair)]
    pub grid: Option<(usize, usize)>,
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long)]
    #[serde(default)]
    pub noise_free: bool,
    /// Generate daily fields and aggregate them into fortnights.
    #[arg(long)]
    #[serde(default)]
    pub daily: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessArgs {
    /// Directory with `predictors.gtf` and `target_<name>.gtf` files.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub split_start: Option<i32>,
    #[arg(long)]
    pub split_stride: Option<i32>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentArgs {
    /// Output directory of `preprocess`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Window extent `LAT,LON` on the downsampled grid.
    #[arg(long, value_parser = parse_pair)]
    pub window: Option<(usize, usize)>,
    #[arg(long, value_parser = parse_pair)]
    pub stride: Option<(usize, usize)>,
    #[arg(long)]
    pub fill: Option<f32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Shuffle the original samples only.
    #[arg(long)]
    #[serde(default)]
    pub originals_only: bool,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// june, july, august, september or jjas.
    #[arg(long)]
    pub target: Option<String>,
    /// `plan.json` from `augment`; without it the original samples are used.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub bottleneck: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    /// ReLU before the residual addition instead of after it.
    #[arg(long)]
    #[serde(default)]
    pub relu_before_add: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub min_delta: Option<f64>,
    #[arg(long)]
    pub init_seed: Option<u64>,
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
    #[arg(long)]
    pub dropout_seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateArgs {
    /// Run directory of `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Target normalization; defaults to the one stored with the model.
    #[arg(long)]
    pub norm: Option<PathBuf>,
    /// `test` (default) or `train`; the latter is refused.
    #[arg(long)]
    pub split: Option<String>,
    /// Also score the climatology baseline.
    #[arg(long)]
    #[serde(default)]
    pub baseline: bool,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Preprocessed predictor cube (`train.gtf` or `test.gtf`).
    #[arg(long)]
    pub predictors: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub norm: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderMapArgs {
    /// Target grid file (mm/day).
    #[arg(long)]
    pub truth: PathBuf,
    /// `predictions.gtf` from `predict`.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub year: i32,
    /// Output `.ppm` path; the scale goes to `<out>.scale.txt`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub cell_px: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportArgs {
    /// Evaluation run directories, or parents of them.
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

/// Overlay explicitly given flags onto the `--config` JSON object.
fn merge<T: Serialize + DeserializeOwned>(flags: &T, config: Option<&Path>) -> Result<T> {
    let mut base = match config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            match serde_json::from_str::<Value>(&text)? {
                Value::Object(m) => m,
                _ => return Err(Error::Config(format!("{} must hold a JSON object", p.display()))),
            }
        }
        None => Map::new(),
    };
    if let Value::Object(given) = serde_json::to_value(flags)? {
        for (k, v) in given {
            if !(v.is_null() || v == Value::Bool(false)) {
                base.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(base)).map_err(|e| Error::Config(format!("configuration: {e}")))
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Reproducibility record written as `run.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub version: String,
    pub resolved: Value,
    pub seeds: BTreeMap<String, u64>,
    /// Input path → SHA-256 (GTF sidecars included).
    pub inputs: BTreeMap<String, String>,
}

impl RunRecord {
    fn new(command: &str, resolved: Value) -> Self {
        RunRecord {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            resolved,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
        }
    }

    fn seed(mut self, name: &str, v: u64) -> Self {
        self.seeds.insert(name.into(), v);
        self
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        let side = sidecar_path(path);
        if side.exists() {
            self.inputs.insert(side.display().to_string(), sha256_file(&side)?);
        }
        Ok(())
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("run.json");
        fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&path, e))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_mask(path: &Path, mask: &ValidMask) -> Result<()> {
    write_gtf(path, &reverse_map(&vec![1.0; mask.count()], mask)?.into_dyn())
}

fn read_mask(path: &Path) -> Result<ValidMask> {
    let grid = read_gtf(path)?
        .into_dimensionality::<Ix2>()
        .map_err(|_| Error::Shape(format!("{} is not a rank-2 mask", path.display())))?;
    ValidMask::from_grid(grid.view())
}

fn target_files(data: &Path, target: Target) -> (PathBuf, PathBuf, PathBuf, PathBuf) {
    let t = target.as_str();
    (
        data.join(format!("targets_{t}_train.gtf")),
        data.join(format!("targets_{t}_test.gtf")),
        data.join(format!("mask_{t}.gtf")),
        data.join(format!("norm_{t}.json")),
    )
}

fn gen_synth(args: &GenSynthArgs) -> Result<()> {
    let a = merge(args, args.config.as_deref())?;
    let mut spec = match a.scale.as_deref().unwrap_or("micro") {
        "micro" => SyntheticWorldSpec::micro(),
        "full" => SyntheticWorldSpec::full_scale(),
        other => return Err(Error::Config(format!("unknown scale `{other}` (micro|full)"))),
    };
    if let Some(v) = a.years {
        spec.years = v;
    }
    if let Some(v) = a.first_year {
        spec.first_year = v;
    }
    if let Some(g) = a.grid {
        let (h0, w0) = spec.grid;
        let scale = |v: usize, old: usize, new: usize| v * new / old;
        spec.signal_rows = (scale(spec.signal_rows.0, h0, g.0), scale(spec.signal_rows.1, h0, g.0));
        spec.signal_cols = (scale(spec.signal_cols.0, w0, g.1), scale(spec.signal_cols.1, w0, g.1));
        spec.land_from_col = scale(spec.land_from_col, w0, g.1);
        spec.grid = g;
    }
    if let Some(v) = a.snr {
        spec.snr = Some(v);
    }
    if a.noise_free {
        spec.snr = None;
    }
    spec.daily = a.daily;
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    let world = gen_synthetic(&spec)?;
    world.write(&a.out)?;
    RunRecord::new("gen-synth", json!({ "args": &a, "world": &spec }))
        .seed("world", spec.seed)
        .write(&a.out)
}

fn preprocess_cmd(args: &PreprocessArgs) -> Result<()> {
    let a = merge(args, args.config.as_deref())?;
    let split = SplitSpec {
        start: a.split_start.unwrap_or(SplitSpec::default().start),
        stride: a.split_stride.unwrap_or(SplitSpec::default().stride),
    };
    create_dir(&a.out)?;
    let mut record = RunRecord::new("preprocess", json!({ "args": &a, "split": split }));
    let pred_path = a.input.join("predictors.gtf");
    record.input(&pred_path)?;
    let cube = PredictorCube::load(&pred_path)?;
    let mut done = 0;
    for t in Target::ALL {
        let path = a.input.join(format!("target_{}.gtf", t.as_str()));
        if !path.exists() {
            continue;
        }
        record.input(&path)?;
        let grid = TargetGrid::load(&path)?;
        let d = prepare(&cube, &grid, split)?;
        if done == 0 {
            d.train.save(&a.out.join("train.gtf"))?;
            d.test.save(&a.out.join("test.gtf"))?;
            d.predictor_norm.save(&a.out.join("norm_predictors.json"))?;
        }
        let (tr, te, mask, norm) = target_files(&a.out, t);
        d.train_targets.save(&tr, &mask)?;
        d.test_targets.save(&te, &mask)?;
        d.target_norm.save(&norm)?;
        done += 1;
    }
    if done == 0 {
        return Err(Error::Data(format!("no target_<name>.gtf files in {}", a.input.display())));
    }
    record.write(&a.out)
}

fn augment_cmd(args: &AugmentArgs) -> Result<()> {
    let a = merge(args, args.config.as_deref())?;
    let train_path = a.data.join("train.gtf");
    let cube = PredictorCube::load(&train_path)?;
    let d = WindowSpec::default();
    let spec = WindowSpec {
        window: a.window.unwrap_or(d.window),
        stride: a.stride.unwrap_or(d.stride),
        fill: a.fill.unwrap_or(d.fill),
    };
    let seed = a.seed.unwrap_or(0);
    let plan = if a.originals_only {
        plan_originals(&cube.years, cube.grid(), cube.role, seed)?
    } else {
        augment_dataset(&cube, &spec, seed)?
    };
    create_dir(&a.out)?;
    plan.save(&a.out.join("plan.json"))?;
    let mut record = RunRecord::new(
        "augment",
        json!({ "args": &a, "window": spec, "samples": plan.len(), "positions": plan.positions.len() }),
    )
    .seed("shuffle", seed);
    record.input(&train_path)?;
    record.write(&a.out)
}

/// Resolved training setup, stored with the model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelRecord {
    pub target: Target,
    pub spec: NetworkSpec,
    pub train: TrainConfig,
}

fn load_train_set(data: &Path, target: Target, plan: Option<&Path>, shuffle_seed: u64) -> Result<TrainSet> {
    let cube = PredictorCube::load(&data.join("train.gtf"))?;
    let (tr, _, mask, _) = target_files(data, target);
    let targets = TargetSet::load(&tr, &mask)?;
    let plan = match plan {
        Some(p) => AugmentPlan::load(p)?,
        None => plan_originals(&cube.years, cube.grid(), cube.role, shuffle_seed)?,
    };
    TrainSet::new(cube, targets, plan)
}

fn train_cmd(args: &TrainArgs) -> Result<()> {
    let a = merge(args, args.config.as_deref())?;
    let target: Target = a.target.as_deref().unwrap_or("june").parse()?;
    let d = TrainConfig::default();
    let config = TrainConfig {
        target,
        epochs: a.epochs.unwrap_or(d.epochs),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        adam: AdamConfig {
            lr: a.lr.unwrap_or(d.adam.lr),
            ..d.adam
        },
        patience: a.patience.unwrap_or(d.patience),
        min_delta: a.min_delta.unwrap_or(d.min_delta),
        init_seed: a.init_seed.unwrap_or(d.init_seed),
        shuffle_seed: a.shuffle_seed.unwrap_or(d.shuffle_seed),
        dropout_seed: a.dropout_seed.unwrap_or(d.dropout_seed),
    };
    config.validate()?;
    let set = load_train_set(&a.data, target, a.plan.as_deref(), config.shuffle_seed)?;
    let (_, t, h, w, c) = set.predictors.values.dim();
    let ns = NetworkSpec::default();
    let spec = NetworkSpec {
        num_blocks: a.blocks.unwrap_or(ns.num_blocks),
        bottleneck: a.bottleneck.unwrap_or(ns.bottleneck),
        hidden_units: a.hidden.unwrap_or(ns.hidden_units),
        dropout_rate: a.dropout.unwrap_or(ns.dropout_rate),
        l2_coeff: a.l2.unwrap_or(ns.l2_coeff),
        relu_placement: if a.relu_before_add {
            ReluPlacement::BeforeAdd
        } else {
            ReluPlacement::AfterAdd
        },
        output_units: set.targets.cells(),
        input_shape: [t, h, w, c],
        ..ns
    };
    spec.validate()?;

    create_dir(&a.out)?;
    let mut record = RunRecord::new("train", json!({ "args": &a, "model": ModelRecord { target, spec: spec.clone(), train: config.clone() } }))
        .seed("init", config.init_seed)
        .seed("shuffle", config.shuffle_seed)
        .seed("dropout", config.dropout_seed);
    let (_, _, mask_path, norm_path) = target_files(&a.data, target);
    for p in [a.data.join("train.gtf"), target_files(&a.data, target).0, mask_path.clone(), norm_path.clone()] {
        record.input(&p)?;
    }
    if let Some(p) = &a.plan {
        record.input(p)?;
    }
    record.write(&a.out)?;

    let mut trainer = Trainer::new(&config, &spec, &set)?;
    for _ in 0..config.epochs {
        match trainer.run_epoch() {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => {
                save_checkpoint(trainer.last_good(), &a.out.join("last_good"))?;
                trainer.history.write_csv(&a.out.join("history.csv"))?;
                return Err(e);
            }
        }
    }
    let (state, history) = trainer.finish();
    save_checkpoint(&state, &a.out.join("checkpoint"))?;
    history.write_csv(&a.out.join("history.csv"))?;
    write_json(&a.out.join("history.json"), &history)?;
    write_json(&a.out.join("model.json"), &ModelRecord { target, spec, train: config })?;
    write_mask(&a.out.join("mask.gtf"), &set.targets.mask)?;
    NormParams::load(&norm_path)?.save(&a.out.join("target_norm.json"))
}

fn model_norm(model: &Path, norm: Option<&Path>) -> Result<NormParams> {
    let path = norm.map(Path::to_path_buf).unwrap_or_else(|| model.join("target_norm.json"));
    NormParams::load(&path)
}

fn evaluate_cmd(args: &EvaluateArgs) -> Result<()> {
    let a = merge(args, args.config.as_deref())?;
    let model: ModelRecord = read_json(&a.model.join("model.json"))?;
    let norm = model_norm(&a.model, a.norm.as_deref())?;
    let state = load_checkpoint(&a.model.join("checkpoint"))?;
    let split = a.split.as_deref().unwrap_or("test");
    let (tr, te, mask, _) = target_files(&a.data, model.target);
    let (cube_path, target_path) = match split {
        "test" => (a.data.join("test.gtf"), te),
        "train" => (a.data.join("train.gtf"), tr.clone()),
        other => return Err(Error::Config(format!("unknown split `{other}` (test|train)"))),
    };
    let cube = PredictorCube::load(&cube_path)?;
    let targets = TargetSet::load(&target_path, &mask)?;
    let report = evaluate(&state, &cube, &targets, &norm)?;

    create_dir(&a.out)?;
    let mut record = RunRecord::new("evaluate", json!({ "args": &a, "model": &model }));
    for p in [&cube_path, &target_path, &mask, &a.model.join("checkpoint").join("manifest.json")] {
        record.input(p)?;
    }
    report.write_csv(&a.out.join("metrics.csv"))?;
    report.write_json(&a.out.join("metrics.json"))?;
    write_json(
        &a.out.join("summary.json"),
        &GridResult {
            blocks: model.spec.num_blocks,
            bottleneck: model.spec.bottleneck,
            target: model.target.as_str().into(),
            mse: report.mean.mse,
            mae: report.mean.mae,
            snmae: report.mean.snmae,
        },
    )?;
    if a.baseline {
        let train_targets = TargetSet::load(&tr, &mask)?;
        record.input(&tr)?;
        let base = evaluate_baseline(&climatology_baseline(&train_targets)?, &targets, &norm)?;
        base.write_csv(&a.out.join("baseline_metrics.csv"))?;
        base.write_json(&a.out.join("baseline_metrics.json"))?;
    }
    record.write(&a.out)
}

fn predict_cmd(args: &PredictArgs) -> Result<()> {
    let a = merge(args, args.config.as_deref())?;
    let model: ModelRecord = read_json(&a.model.join("model.json"))?;
    let norm = model_norm(&a.model, a.norm.as_deref())?;
    let state = load_checkpoint(&a.model.join("checkpoint"))?;
    let mask = read_mask(&a.model.join("mask.gtf"))?;
    let cube = PredictorCube::load(&a.predictors)?;
    let preds = predict(&state, &cube, &norm)?;

    create_dir(&a.out)?;
    let mut grid = Array3::<f32>::from_elem((preds.len(), mask.lat, mask.lon), f32::NAN);
    let mut w = csv::Writer::from_path(a.out.join("predictions.csv"))?;
    w.write_record(["year", "cell", "normalized", "mm_per_day"])?;
    for (mut slab, p) in grid.axis_iter_mut(Axis(0)).zip(&preds) {
        slab.assign(&reverse_map(&p.mm_per_day, &mask)?);
        for ((cell, n), mm) in mask.indices.iter().zip(&p.normalized).zip(&p.mm_per_day) {
            w.serialize((p.year, cell, n, mm))?;
        }
    }
    w.flush().map_err(|e| Error::io(a.out.join("predictions.csv"), e))?;
    let years = preds.iter().map(|p| p.year).collect();
    let lat = (0..mask.lat).map(|i| i as f64).collect();
    let lon = (0..mask.lon).map(|j| j as f64).collect();
    TargetGrid::new(model.target.as_str(), grid, years, lat, lon)?.save(&a.out.join("predictions.gtf"))?;

    let mut record = RunRecord::new("predict", json!({ "args": &a, "model": &model }));
    record.input(&a.predictors)?;
    record.input(&a.model.join("checkpoint").join("manifest.json"))?;
    record.write(&a.out)
}

fn year_slice(grid: &TargetGrid, year: i32) -> Result<Array2<f32>> {
    let i = grid
        .years
        .iter()
        .position(|y| *y == year)
        .ok_or_else(|| Error::Data(format!("year {year} not in {}", grid.name)))?;
    Ok(grid.values.index_axis(Axis(0), i).to_owned())
}

fn render_cmd(args: &RenderMapArgs) -> Result<()> {
    let a = merge(args, args.config.as_deref())?;
    let truth = TargetGrid::load(&a.truth)?;
    let pred = TargetGrid::load(&a.pred)?;
    let (t, p) = (year_slice(&truth, a.year)?, year_slice(&pred, a.year)?);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    render_map(t.view(), p.view(), &a.out, a.cell_px.unwrap_or(8))?;
    Ok(())
}

fn summaries(paths: &[PathBuf]) -> Result<Vec<GridResult>> {
    let mut out = Vec::new();
    for p in paths {
        let direct = p.join("summary.json");
        if direct.exists() {
            out.push(read_json(&direct)?);
            continue;
        }
        let mut subdirs: Vec<PathBuf> = fs::read_dir(p)
            .map_err(|e| Error::io(p, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|d| d.join("summary.json").exists())
            .collect();
        subdirs.sort();
        for d in subdirs {
            out.push(read_json(&d.join("summary.json"))?);
        }
    }
    if out.is_empty() {
        return Err(Error::Data("no summary.json found under the given runs".into()));
    }
    Ok(out)
}

fn report_cmd(args: &ReportArgs) -> Result<()> {
    let a = merge(args, args.config.as_deref())?;
    let results = summaries(&a.runs)?;
    let targets: Vec<&str> = Target::ALL.iter().map(|t| t.as_str()).collect();
    let rows = table_layout(&results, &TABLE_BLOCKS, &TABLE_BOTTLENECKS, &targets);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let mut w = csv::Writer::from_path(&a.out)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io(&a.out, e))
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenSynth(a) => gen_synth(a),
        Command::Preprocess(a) => preprocess_cmd(a),
        Command::Augment(a) => augment_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::RenderMap(a) => render_cmd(a),
        Command::Report(a) => report_cmd(a),
    }
}

/// The JSON error record printed on failure.
pub fn error_record(e: &Error) -> Value {
    json!({ "error": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() })
}

/// Parse, run, and map the outcome to a process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let err = Error::Usage(e.to_string().trim().to_string());
            eprintln!("{}", error_record(&err));
            return err.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            e.exit_code()
        }
    }
}
