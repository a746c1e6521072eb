//! 3D residual encoder, temporal collapse, global average pooling and the
//! dense regression head.
//!
//! ```text
//! (B, 11, H, W, C)
//!   → residual block × num_blocks   (stride 2 in time, lat, lon)
//!   → conv (T', 3, 3) valid in time  → (B, 1, H', W', bottleneck)
//!   → global average pool            → (B, bottleneck)
//!   → dense(hidden) + ReLU → dropout → dense(output) + sigmoid
//! ```

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::gtf::{read_gtf, write_gtf};
use crate::tensor::{
    BatchNormConfig, BatchNormStats, Conv3dConfig, Mode, Padding, Scalar, Tape, Tensor, Var,
};

/// Where the block's last ReLU sits relative to the shortcut addition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReluPlacement {
    /// `relu(bn(conv(...)) + shortcut)`
    AfterAdd,
    /// `relu(bn(conv(...))) + shortcut`
    BeforeAdd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub num_blocks: usize,
    pub bottleneck: usize,
    pub dropout_rate: f64,
    pub l2_coeff: f64,
    pub output_units: usize,
    pub hidden_units: usize,
    /// Per-sample input `(fortnights, lat, lon, channels)`.
    pub input_shape: [usize; 4],
    /// Filters of the first block; block k uses `min(base · 2^(k-1), bottleneck)`.
    pub base_filters: usize,
    pub relu_placement: ReluPlacement,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            num_blocks: 1,
            bottleneck: 64,
            dropout_rate: 0.3,
            l2_coeff: 1e-4,
            output_units: 357,
            hidden_units: 512,
            input_shape: [11, 87, 180, 25],
            base_filters: 32,
            relu_placement: ReluPlacement::AfterAdd,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
        }
    }
}

pub const TABLE_BLOCKS: [usize; 4] = [1, 2, 3, 4];
pub const TABLE_BOTTLENECKS: [usize; 4] = [64, 128, 256, 512];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    ConvKernel,
    ConvBias,
    BnGamma,
    BnBeta,
    DenseWeight,
    DenseBias,
}

impl ParamKind {
    /// Weights that carry the L2 penalty.
    pub fn regularized(self) -> bool {
        matches!(self, ParamKind::ConvKernel | ParamKind::DenseWeight)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamShape {
    pub name: String,
    pub dims: Vec<usize>,
    pub kind: ParamKind,
}

impl NetworkSpec {
    /// One of the sixteen (blocks, bottleneck) configurations at full input size.
    pub fn table(num_blocks: usize, bottleneck: usize) -> Self {
        NetworkSpec {
            num_blocks,
            bottleneck,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 {
            return Err(Error::Config("network needs at least one residual block".into()));
        }
        if self.bottleneck == 0 || self.base_filters == 0 || self.hidden_units == 0 || self.output_units == 0 {
            return Err(Error::Config("layer widths must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} outside [0,1)", self.dropout_rate)));
        }
        if self.l2_coeff < 0.0 {
            return Err(Error::Config("l2 coefficient must be >= 0".into()));
        }
        if self.input_shape.contains(&0) {
            return Err(Error::Config(format!("input shape {:?} has a zero extent", self.input_shape)));
        }
        if !(self.bn_eps > 0.0) {
            return Err(Error::Config("batch-norm eps must be > 0".into()));
        }
        Ok(())
    }

    pub fn block_filters(&self, block: usize) -> usize {
        let f = self.base_filters.saturating_mul(1usize << (block.min(40)));
        f.min(self.bottleneck)
    }

    /// `(T, H, W, C)` after each residual block (same padding, stride 2).
    pub fn block_output_shapes(&self) -> Vec<[usize; 4]> {
        let [mut t, mut h, mut w, _] = self.input_shape;
        (0..self.num_blocks)
            .map(|k| {
                t = t.div_ceil(2);
                h = h.div_ceil(2);
                w = w.div_ceil(2);
                [t, h, w, self.block_filters(k)]
            })
            .collect()
    }

    /// `(1, H', W', bottleneck)` after the temporal collapse.
    pub fn collapse_output_shape(&self) -> [usize; 4] {
        let last = *self.block_output_shapes().last().expect("validated spec has blocks");
        [1, last[1], last[2], self.bottleneck]
    }

    fn bn(&self) -> BatchNormConfig {
        BatchNormConfig {
            momentum: self.bn_momentum,
            eps: self.bn_eps,
        }
    }

    /// Every learnable tensor, in storage order.
    pub fn param_manifest(&self) -> Vec<ParamShape> {
        let mut out = Vec::new();
        let mut push = |name: String, dims: Vec<usize>, kind| out.push(ParamShape { name, dims, kind });
        let mut cin = self.input_shape[3];
        let shapes = self.block_output_shapes();
        for (k, shape) in shapes.iter().enumerate() {
            let f = shape[3];
            let b = format!("block{}", k + 1);
            push(format!("{b}.conv1.kernel"), vec![3, 3, 3, cin, f], ParamKind::ConvKernel);
            push(format!("{b}.conv1.bias"), vec![f], ParamKind::ConvBias);
            push(format!("{b}.bn1.gamma"), vec![f], ParamKind::BnGamma);
            push(format!("{b}.bn1.beta"), vec![f], ParamKind::BnBeta);
            push(format!("{b}.conv2.kernel"), vec![3, 3, 3, f, f], ParamKind::ConvKernel);
            push(format!("{b}.conv2.bias"), vec![f], ParamKind::ConvBias);
            push(format!("{b}.bn2.gamma"), vec![f], ParamKind::BnGamma);
            push(format!("{b}.bn2.beta"), vec![f], ParamKind::BnBeta);
            // every encoder block downsamples, so the shortcut is always projected
            push(format!("{b}.shortcut.kernel"), vec![1, 1, 1, cin, f], ParamKind::ConvKernel);
            push(format!("{b}.shortcut.bias"), vec![f], ParamKind::ConvBias);
            cin = f;
        }
        let t_last = shapes.last().map(|s| s[0]).unwrap_or(self.input_shape[0]);
        push(
            "collapse.kernel".into(),
            vec![t_last, 3, 3, cin, self.bottleneck],
            ParamKind::ConvKernel,
        );
        push("collapse.bias".into(), vec![self.bottleneck], ParamKind::ConvBias);
        push(
            "dense1.weight".into(),
            vec![self.bottleneck, self.hidden_units],
            ParamKind::DenseWeight,
        );
        push("dense1.bias".into(), vec![self.hidden_units], ParamKind::DenseBias);
        push(
            "dense2.weight".into(),
            vec![self.hidden_units, self.output_units],
            ParamKind::DenseWeight,
        );
        push("dense2.bias".into(), vec![self.output_units], ParamKind::DenseBias);
        out
    }

    /// Names of batch-norm layers, two per block.
    pub fn bn_layers(&self) -> Vec<(String, usize)> {
        self.block_output_shapes()
            .iter()
            .enumerate()
            .flat_map(|(k, s)| {
                [(format!("block{}.bn1", k + 1), s[3]), (format!("block{}.bn2", k + 1), s[3])]
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_manifest().iter().map(|p| p.dims.iter().product::<usize>()).sum()
    }
}

/// All learnable tensors plus batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState<F> {
    pub spec: NetworkSpec,
    pub seed: u64,
    pub params: Vec<Tensor<F>>,
    pub bn_stats: Vec<BatchNormStats<F>>,
    /// Optimizer steps taken.
    pub step: u64,
}

/// Fan-in scaled uniform initialisation: `U(±√(6/fan_in))` ahead of a ReLU,
/// `U(±√(3/fan_in))` for the linear collapse and the sigmoid output layer.
/// Biases and BN shifts start at zero, BN scales at one.
pub fn init_params<F: Scalar>(spec: &NetworkSpec, seed: u64) -> Result<NetworkState<F>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = spec
        .param_manifest()
        .iter()
        .map(|p| match p.kind {
            ParamKind::ConvKernel | ParamKind::DenseWeight => {
                let fan_in: usize = p.dims[..p.dims.len() - 1].iter().product();
                let gain = if p.name.starts_with("collapse") || p.name.starts_with("dense2") {
                    3.0
                } else {
                    6.0
                };
                let limit = (gain / fan_in as f64).sqrt();
                Tensor::from_fn(&p.dims, |_| F::of(rng.gen_range(-limit..limit)))
            }
            ParamKind::BnGamma => Tensor::full(&p.dims, F::one()),
            ParamKind::ConvBias | ParamKind::BnBeta | ParamKind::DenseBias => Tensor::zeros(&p.dims),
        })
        .collect();
    let bn_stats = spec.bn_layers().iter().map(|(_, c)| BatchNormStats::new(*c)).collect();
    Ok(NetworkState {
        spec: spec.clone(),
        seed,
        params,
        bn_stats,
        step: 0,
    })
}

/// Parameter handles of one residual block on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BlockVars {
    pub conv1: (Var, Var),
    pub bn1: (Var, Var),
    pub conv2: (Var, Var),
    pub bn2: (Var, Var),
    /// 1×1×1 projection; `None` means identity shortcut.
    pub shortcut: Option<(Var, Var)>,
}

/// conv(3×3×3, strides) → BN → ReLU → conv(3×3×3) → BN, plus the shortcut,
/// with the final ReLU placed per `placement`.
#[allow(clippy::too_many_arguments)]
pub fn residual_block<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    p: &BlockVars,
    stats: (&mut BatchNormStats<F>, &mut BatchNormStats<F>),
    strides: [usize; 3],
    mode: Mode,
    bn: BatchNormConfig,
    placement: ReluPlacement,
) -> Result<Var> {
    let h = tape.conv3d(x, p.conv1.0, p.conv1.1, Conv3dConfig::same(strides))?;
    let h = tape.batch_norm(h, p.bn1.0, p.bn1.1, stats.0, mode, bn)?;
    let h = tape.relu(h);
    let h = tape.conv3d(h, p.conv2.0, p.conv2.1, Conv3dConfig::same([1; 3]))?;
    let mut h = tape.batch_norm(h, p.bn2.0, p.bn2.1, stats.1, mode, bn)?;
    let shortcut = match p.shortcut {
        Some((k, b)) => tape.conv3d(x, k, b, Conv3dConfig::same(strides))?,
        None => x,
    };
    if placement == ReluPlacement::BeforeAdd {
        h = tape.relu(h);
    }
    let sum = tape.add(h, shortcut).map_err(|e| match e {
        Error::Shape(m) => Error::Shape(format!("residual addition (missing projection?): {m}")),
        other => other,
    })?;
    Ok(match placement {
        ReluPlacement::AfterAdd => tape.relu(sum),
        ReluPlacement::BeforeAdd => sum,
    })
}

/// Convolution whose temporal kernel spans the whole remaining temporal
/// extent: valid in time, same in space, stride 1. Returns `[B, H, W, C]`.
pub fn temporal_collapse<F: Scalar>(tape: &mut Tape<F>, x: Var, kernel: Var, bias: Var) -> Result<Var> {
    let xd = tape.value(x).dims().to_vec();
    let kd = tape.value(kernel).dims().to_vec();
    if xd.len() != 5 || kd.len() != 5 || kd[0] != xd[1] {
        return Err(Error::Shape(format!(
            "temporal collapse kernel {kd:?} must span the temporal extent of {xd:?}"
        )));
    }
    let cfg = Conv3dConfig {
        strides: [1; 3],
        padding: [Padding::Valid, Padding::Same, Padding::Same],
    };
    let y = tape.conv3d(x, kernel, bias, cfg)?;
    let yd = tape.value(y).dims().to_vec();
    tape.reshape(y, &[yd[0], yd[2], yd[3], yd[4]])
}

/// Intermediate extents recorded during a forward pass.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ShapeTrace {
    pub blocks: Vec<Vec<usize>>,
    pub collapse: Vec<usize>,
    pub pooled: Vec<usize>,
    pub output: Vec<usize>,
}

pub struct ForwardOutput {
    pub output: Var,
    pub trace: ShapeTrace,
}

fn check_input(spec: &NetworkSpec, dims: &[usize]) -> Result<usize> {
    let names = ["fortnight", "lat", "lon", "channel"];
    let (batch, sample) = match dims {
        [b, rest @ ..] if rest.len() == 4 => (*b, rest),
        _ => {
            return Err(Error::Shape(format!(
                "network input must be (batch, fortnight, lat, lon, channel), got {dims:?}"
            )))
        }
    };
    for ((name, got), want) in names.iter().zip(sample).zip(spec.input_shape) {
        if *got != want {
            return Err(Error::Shape(format!("input axis `{name}` has extent {got}, expected {want}")));
        }
    }
    Ok(batch)
}

/// Record the full network on `tape`. `params` are handles in
/// [`NetworkSpec::param_manifest`] order; `bn_stats` follow
/// [`NetworkSpec::bn_layers`] and are updated in train mode.
pub fn forward_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    spec: &NetworkSpec,
    params: &[Var],
    bn_stats: &mut [BatchNormStats<F>],
    input: Var,
    mode: Mode,
    dropout_seed: u64,
) -> Result<ForwardOutput> {
    spec.validate()?;
    let expected = spec.param_manifest().len();
    if params.len() != expected || bn_stats.len() != 2 * spec.num_blocks {
        return Err(Error::Shape(format!(
            "network expects {expected} parameters and {} BN layers, got {} and {}",
            2 * spec.num_blocks,
            params.len(),
            bn_stats.len()
        )));
    }
    let batch = check_input(spec, tape.value(input).dims())?;
    let mut trace = ShapeTrace::default();
    let mut x = input;
    let mut it = params.iter().copied();
    let mut next = || it.next().expect("length checked");
    for (k, stats) in bn_stats.chunks_mut(2).enumerate() {
        let vars = BlockVars {
            conv1: (next(), next()),
            bn1: (next(), next()),
            conv2: (next(), next()),
            bn2: (next(), next()),
            shortcut: Some((next(), next())),
        };
        let (s1, s2) = stats.split_at_mut(1);
        x = residual_block(
            tape,
            x,
            &vars,
            (&mut s1[0], &mut s2[0]),
            [2, 2, 2],
            mode,
            spec.bn(),
            spec.relu_placement,
        )
        .map_err(|e| match e {
            Error::Shape(m) => Error::Shape(format!("block {}: {m}", k + 1)),
            other => other,
        })?;
        trace.blocks.push(tape.value(x).dims()[1..].to_vec());
    }
    let (ck, cb) = (next(), next());
    let collapsed = temporal_collapse(tape, x, ck, cb)?;
    let cd = tape.value(collapsed).dims();
    trace.collapse = vec![1, cd[1], cd[2], cd[3]];
    let pooled = tape.global_avg_pool2d(collapsed)?;
    trace.pooled = tape.value(pooled).dims().to_vec();
    let (w1, b1, w2, b2) = (next(), next(), next(), next());
    let h = tape.dense(pooled, w1, b1)?;
    let h = tape.relu(h);
    let h = tape.dropout(h, spec.dropout_rate, mode, dropout_seed)?;
    let y = tape.dense(h, w2, b2)?;
    let y = tape.sigmoid(y);
    trace.output = tape.value(y).dims().to_vec();
    debug_assert_eq!(trace.output, vec![batch, spec.output_units]);
    Ok(ForwardOutput { output: y, trace })
}

impl<F: Scalar> NetworkState<F> {
    pub fn names(&self) -> Vec<String> {
        self.spec.param_manifest().into_iter().map(|p| p.name).collect()
    }

    /// Inference on a `(B, T, H, W, C)` batch (or one `(T, H, W, C)` sample).
    pub fn predict(&self, batch: &Tensor<F>) -> Result<(Tensor<F>, ShapeTrace)> {
        let input = if batch.rank() == 4 {
            let mut d = vec![1];
            d.extend_from_slice(batch.dims());
            batch.clone().reshape(&d)?
        } else {
            batch.clone()
        };
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        let x = tape.constant(input);
        let mut stats = self.bn_stats.clone();
        let out = forward_on_tape(&mut tape, &self.spec, &vars, &mut stats, x, Mode::Infer, 0)?;
        Ok((tape.value(out.output).clone(), out.trace))
    }

    pub fn cast<G: Scalar>(&self) -> NetworkState<G> {
        NetworkState {
            spec: self.spec.clone(),
            seed: self.seed,
            params: self.params.iter().map(Tensor::cast).collect(),
            bn_stats: self
                .bn_stats
                .iter()
                .map(|s| BatchNormStats {
                    mean: s.mean.cast(),
                    var: s.var.cast(),
                })
                .collect(),
            step: self.step,
        }
    }
}

/// Checkpoint manifest written as `manifest.json` next to one GTF file per
/// tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub spec: NetworkSpec,
    pub seed: u64,
    pub step: u64,
    pub params: Vec<ParamShape>,
    pub bn_layers: Vec<String>,
}

fn to_array(t: &Tensor<f32>) -> ArrayD<f32> {
    ArrayD::from_shape_vec(IxDyn(t.dims()), t.data().to_vec()).expect("tensor extents are consistent")
}

fn from_array(a: ArrayD<f32>, dims: &[usize], name: &str) -> Result<Tensor<f32>> {
    if a.shape() != dims {
        return Err(Error::Shape(format!("checkpoint tensor `{name}` has {:?}, expected {dims:?}", a.shape())));
    }
    let data = a.as_standard_layout().iter().copied().collect();
    Tensor::new(dims.to_vec(), data)
}

pub fn save_checkpoint(state: &NetworkState<f32>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = CheckpointManifest {
        spec: state.spec.clone(),
        seed: state.seed,
        step: state.step,
        params: state.spec.param_manifest(),
        bn_layers: state.spec.bn_layers().into_iter().map(|(n, _)| n).collect(),
    };
    for (p, t) in manifest.params.iter().zip(&state.params) {
        write_gtf(&dir.join(format!("{}.gtf", p.name)), &to_array(t))?;
    }
    for (name, s) in manifest.bn_layers.iter().zip(&state.bn_stats) {
        write_gtf(&dir.join(format!("{name}.running_mean.gtf")), &to_array(&s.mean))?;
        write_gtf(&dir.join(format!("{name}.running_var.gtf")), &to_array(&s.var))?;
    }
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<NetworkState<f32>> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    manifest.spec.validate()?;
    if manifest.params != manifest.spec.param_manifest() {
        return Err(Error::Data("checkpoint parameter list does not match its spec".into()));
    }
    let params = manifest
        .params
        .iter()
        .map(|p| from_array(read_gtf(&dir.join(format!("{}.gtf", p.name)))?, &p.dims, &p.name))
        .collect::<Result<Vec<_>>>()?;
    let bn_stats = manifest
        .spec
        .bn_layers()
        .iter()
        .map(|(name, c)| {
            Ok(BatchNormStats {
                mean: from_array(read_gtf(&dir.join(format!("{name}.running_mean.gtf")))?, &[*c], name)?,
                var: from_array(read_gtf(&dir.join(format!("{name}.running_var.gtf")))?, &[*c], name)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NetworkState {
        spec: manifest.spec,
        seed: manifest.seed,
        params,
        bn_stats,
        step: manifest.step,
    })
}
