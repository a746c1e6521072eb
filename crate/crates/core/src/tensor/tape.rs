//! Wengert-style tape: every op appends a node holding its output value and
//! whatever it needs to replay its adjoint; `backward` walks the nodes in
//! reverse and accumulates one gradient per node.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conv::{conv3d_backward, conv3d_forward};
use super::{gemm, Conv3dConfig, ConvGeometry, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormConfig {
    /// Weight of the old running statistic in the moving average.
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            momentum: 0.9,
            eps: 1e-5,
        }
    }
}

/// Running mean/variance of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats<F> {
    pub mean: Tensor<F>,
    pub var: Tensor<F>,
}

impl<F: Scalar> BatchNormStats<F> {
    pub fn new(channels: usize) -> Self {
        BatchNormStats {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::full(&[channels], F::one()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Conv3d,
    BatchNorm,
    Relu,
    Sigmoid,
    Dense,
    Dropout,
    GlobalAvgPool,
    Add,
    Reshape,
    Sum,
    MseLoss,
}

enum Op<F> {
    Leaf,
    Conv3d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<F>,
        inv_std: Vec<F>,
        train: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
        batch: usize,
        features: usize,
        units: usize,
    },
    Dropout {
        input: Var,
        mask: Vec<F>,
    },
    GlobalAvgPool {
        input: Var,
        spatial: usize,
        channels: usize,
    },
    Add(Var, Var),
    Reshape(Var),
    Sum(Var),
    MseLoss {
        pred: Var,
        target: Var,
        l2: Vec<(F, Var)>,
    },
}

impl<F> Op<F> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv3d { .. } => OpKind::Conv3d,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Dense { .. } => OpKind::Dense,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::GlobalAvgPool { .. } => OpKind::GlobalAvgPool,
            Op::Add(..) => OpKind::Add,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Sum(_) => OpKind::Sum,
            Op::MseLoss { .. } => OpKind::MseLoss,
        }
    }
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Gradients from one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    /// `None` only for nodes that do not require a gradient.
    pub fn get(&self, var: Var) -> Option<&Tensor<F>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    /// Node count when `backward` last ran; equal count means nothing new
    /// was recorded since.
    replayed_at: Option<usize>,
    negate_adjoint: Option<OpKind>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            replayed_at: None,
            negate_adjoint: None,
        }
    }

    /// Fault injection for oracle self-tests: negate the adjoint of every
    /// op of this kind during `backward`.
    #[doc(hidden)]
    pub fn inject_negated_adjoint(&mut self, kind: OpKind) {
        self.negate_adjoint = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<F> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    pub fn conv3d(&mut self, input: Var, kernel: Var, bias: Var, cfg: Conv3dConfig) -> Result<Var> {
        let x = self.value(input);
        let k = self.value(kernel);
        let geom = ConvGeometry::new(x.dims(), k.dims(), &cfg)?;
        let b = self.value(bias);
        if b.dims() != [geom.cout] {
            return Err(Error::Shape(format!(
                "conv3d bias must be [{}], got {:?}",
                geom.cout,
                b.dims()
            )));
        }
        let out = conv3d_forward(&geom, x.data(), k.data(), b.data());
        let value = Tensor::new(geom.output_dims(x.rank() == 5), out)?;
        let rg = self.any_grad(&[input, kernel, bias]);
        Ok(self.push(
            value,
            Op::Conv3d {
                input,
                kernel,
                bias,
                geom,
            },
            rg,
        ))
    }

    /// Batch normalization over every axis except the trailing channel axis.
    /// In train mode `stats` is updated in place with the batch moments.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats<F>,
        mode: Mode,
        cfg: BatchNormConfig,
    ) -> Result<Var> {
        if !(cfg.eps > 0.0) {
            return Err(Error::Config(format!("batch-norm eps must be > 0, got {}", cfg.eps)));
        }
        if !(0.0..=1.0).contains(&cfg.momentum) {
            return Err(Error::Config(format!(
                "batch-norm momentum must lie in [0,1], got {}",
                cfg.momentum
            )));
        }
        let x = self.value(input);
        let c = *x.dims().last().expect("tensors have rank >= 1");
        for (name, t) in [
            ("gamma", self.value(gamma)),
            ("beta", self.value(beta)),
            ("running_mean", &stats.mean),
            ("running_var", &stats.var),
        ] {
            if t.dims() != [c] {
                return Err(Error::Shape(format!(
                    "batch-norm {name} must be [{c}], got {:?}",
                    t.dims()
                )));
            }
        }
        let n = x.len() / c;
        let eps = F::of(cfg.eps);
        let (mean, inv_std) = match mode {
            Mode::Train => {
                let mut mean = vec![F::zero(); c];
                for row in x.data().chunks(c) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m = *m + *v;
                    }
                }
                let nf = F::of(n as f64);
                mean.iter_mut().for_each(|m| *m = *m / nf);
                let mut var = vec![F::zero(); c];
                for row in x.data().chunks(c) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        let d = *v - *m;
                        *s = *s + d * d;
                    }
                }
                var.iter_mut().for_each(|s| *s = *s / nf);
                let mom = F::of(cfg.momentum);
                let keep = F::one() - mom;
                for ((rm, rv), (m, v)) in stats
                    .mean
                    .data_mut()
                    .iter_mut()
                    .zip(stats.var.data_mut().iter_mut())
                    .zip(mean.iter().zip(&var))
                {
                    *rm = mom * *rm + keep * *m;
                    *rv = mom * *rv + keep * *v;
                }
                let inv: Vec<F> = var.iter().map(|v| F::one() / (*v + eps).sqrt()).collect();
                (mean, inv)
            }
            Mode::Infer => {
                let inv = stats.var.data().iter().map(|v| F::one() / (*v + eps).sqrt()).collect();
                (stats.mean.data().to_vec(), inv)
            }
        };
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = Vec::with_capacity(x.len());
        let mut out = Vec::with_capacity(x.len());
        for row in x.data().chunks(c) {
            for ch in 0..c {
                let h = (row[ch] - mean[ch]) * inv_std[ch];
                xhat.push(h);
                out.push(g[ch] * h + b[ch]);
            }
        }
        let value = Tensor::new(x.dims().to_vec(), out)?;
        let rg = self.any_grad(&[input, gamma, beta]);
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train: mode == Mode::Train,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|x| x.max(F::zero()));
        let rg = self.any_grad(&[input]);
        self.push(value, Op::Relu(input), rg)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let value = self.value(input).map(stable_sigmoid);
        let rg = self.any_grad(&[input]);
        self.push(value, Op::Sigmoid(input), rg)
    }

    /// `input · weight + bias` for input `[B, F]`, weight `[F, U]`, bias `[U]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        let (batch, features) = match x.dims() {
            [b, f] => (*b, *f),
            d => return Err(Error::Shape(format!("dense input must be [B,F], got {d:?}"))),
        };
        let units = match w.dims() {
            [f, u] if *f == features => *u,
            d => {
                return Err(Error::Shape(format!(
                    "dense weight must be [{features},U], got {d:?}"
                )))
            }
        };
        if b.dims() != [units] {
            return Err(Error::Shape(format!(
                "dense bias must be [{units}], got {:?}",
                b.dims()
            )));
        }
        let mut out: Vec<F> = (0..batch).flat_map(|_| b.data().iter().copied()).collect();
        gemm(batch, features, units, x.data(), false, w.data(), false, &mut out, true);
        let value = Tensor::new(vec![batch, units], out)?;
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(
            value,
            Op::Dense {
                input,
                weight,
                bias,
                batch,
                features,
                units,
            },
            rg,
        ))
    }

    /// Inverted dropout. Identity in infer mode or at rate 0.
    pub fn dropout(&mut self, input: Var, rate: f64, mode: Mode, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must lie in [0,1), got {rate}")));
        }
        if mode == Mode::Infer || rate == 0.0 {
            return Ok(input);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = F::of(1.0 / (1.0 - rate));
        let x = self.value(input);
        let mask: Vec<F> = (0..x.len())
            .map(|_| if rng.gen::<f64>() < rate { F::zero() } else { scale })
            .collect();
        let out = x.data().iter().zip(&mask).map(|(v, m)| *v * *m).collect();
        let value = Tensor::new(x.dims().to_vec(), out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::Dropout { input, mask }, rg))
    }

    /// Mean over the spatial axes: `[H,W,C] -> [C]` or `[B,H,W,C] -> [B,C]`.
    pub fn global_avg_pool2d(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let (batch, spatial, channels, out_dims) = match x.dims() {
            [h, w, c] => (1, h * w, *c, vec![*c]),
            [b, h, w, c] => (*b, h * w, *c, vec![*b, *c]),
            d => {
                return Err(Error::Shape(format!(
                    "global_avg_pool2d expects [H,W,C] or [B,H,W,C], got {d:?}"
                )))
            }
        };
        let mut out = vec![F::zero(); batch * channels];
        for (b, sample) in x.data().chunks(spatial * channels).enumerate() {
            let acc = &mut out[b * channels..(b + 1) * channels];
            for row in sample.chunks(channels) {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a = *a + *v;
                }
            }
        }
        let inv = F::one() / F::of(spatial as f64);
        out.iter_mut().for_each(|v| *v = *v * inv);
        let value = Tensor::new(out_dims, out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(
            value,
            Op::GlobalAvgPool {
                input,
                spatial,
                channels,
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.dims() != y.dims() {
            return Err(Error::Shape(format!(
                "add requires identical extents, got {:?} and {:?}",
                x.dims(),
                y.dims()
            )));
        }
        let out = x.data().iter().zip(y.data()).map(|(p, q)| *p + *q).collect();
        let value = Tensor::new(x.dims().to_vec(), out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn reshape(&mut self, input: Var, dims: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(dims)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::Reshape(input), rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        let rg = self.any_grad(&[input]);
        self.push(value, Op::Sum(input), rg)
    }

    /// Mean squared error over every element plus `Σ coeff · Σ param²`.
    pub fn mse_loss(&mut self, pred: Var, target: Var, l2: &[(F, Var)]) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.dims() != t.dims() {
            return Err(Error::Shape(format!(
                "mse_loss prediction {:?} vs target {:?}",
                p.dims(),
                t.dims()
            )));
        }
        if p.is_empty() {
            return Err(Error::Domain("mse_loss over an empty tensor".into()));
        }
        let n = F::of(p.len() as f64);
        let mut loss = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (*a - *b) * (*a - *b))
            .sum::<F>()
            / n;
        for (coeff, param) in l2 {
            let sq: F = self.value(*param).data().iter().map(|w| *w * *w).sum();
            loss = loss + *coeff * sq;
        }
        let mut deps = vec![pred, target];
        deps.extend(l2.iter().map(|(_, v)| *v));
        let rg = self.any_grad(&deps);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::MseLoss {
                pred,
                target,
                l2: l2.to_vec(),
            },
            rg,
        ))
    }

    /// Replay the tape backwards from a scalar `loss`. Every node that
    /// requires a gradient gets one; leaves off the loss path get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<F>> {
        if self.replayed_at == Some(self.nodes.len()) {
            return Err(Error::Usage(
                "stale tape: backward already ran and no new forward pass was recorded".into(),
            ));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage("loss does not belong to this tape".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got extents {:?}",
                self.value(loss).dims()
            )));
        }
        self.replayed_at = Some(self.nodes.len());

        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let contributions = self.adjoint(i, &g);
            let negate = self.negate_adjoint == Some(self.nodes[i].op.kind());
            for (var, mut d) in contributions {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                if negate {
                    d.iter_mut().for_each(|x| *x = -*x);
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, b)| *a = *a + *b),
                    slot => *slot = Some(d),
                }
            }
            grads[i] = Some(g);
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| {
                node.requires_grad.then(|| {
                    let dims = node.value.dims().to_vec();
                    let data = g.unwrap_or_else(|| vec![F::zero(); node.value.len()]);
                    Tensor::new(dims, data).expect("gradient matches value extents")
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    /// Vector-Jacobian products of node `i` for upstream gradient `g`.
    fn adjoint(&self, i: usize, g: &[F]) -> Vec<(Var, Vec<F>)> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv3d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let (di, dk, db) = conv3d_backward(
                    geom,
                    self.value(*input).data(),
                    self.value(*kernel).data(),
                    g,
                    self.requires_grad(*input),
                    self.requires_grad(*kernel),
                );
                let mut out = vec![(*bias, db)];
                if let Some(di) = di {
                    out.push((*input, di));
                }
                if let Some(dk) = dk {
                    out.push((*kernel, dk));
                }
                out
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let c = inv_std.len();
                let n = g.len() / c;
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![F::zero(); c];
                let mut dbeta = vec![F::zero(); c];
                for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                    for ch in 0..c {
                        dgamma[ch] = dgamma[ch] + grow[ch] * hrow[ch];
                        dbeta[ch] = dbeta[ch] + grow[ch];
                    }
                }
                let mut dx = vec![F::zero(); g.len()];
                if *train {
                    // dx = γ·σ⁻¹/N · (N·dy − Σdy − x̂·Σ(dy·x̂))
                    let nf = F::of(n as f64);
                    for ((drow, grow), hrow) in dx.chunks_mut(c).zip(g.chunks(c)).zip(xhat.chunks(c)) {
                        for ch in 0..c {
                            let scale = gam[ch] * inv_std[ch] / nf;
                            drow[ch] = scale * (nf * grow[ch] - dbeta[ch] - hrow[ch] * dgamma[ch]);
                        }
                    }
                } else {
                    for (drow, grow) in dx.chunks_mut(c).zip(g.chunks(c)) {
                        for ch in 0..c {
                            drow[ch] = grow[ch] * gam[ch] * inv_std[ch];
                        }
                    }
                }
                vec![(*input, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::Relu(input) => {
                let y = node.value.data();
                let d = g
                    .iter()
                    .zip(y)
                    .map(|(g, y)| if *y > F::zero() { *g } else { F::zero() })
                    .collect();
                vec![(*input, d)]
            }
            Op::Sigmoid(input) => {
                let y = node.value.data();
                let d = g.iter().zip(y).map(|(g, s)| *g * *s * (F::one() - *s)).collect();
                vec![(*input, d)]
            }
            Op::Dense {
                input,
                weight,
                bias,
                batch,
                features,
                units,
            } => {
                let (b, f, u) = (*batch, *features, *units);
                let mut out = Vec::with_capacity(3);
                let mut db = vec![F::zero(); u];
                for row in g.chunks(u) {
                    db.iter_mut().zip(row).for_each(|(a, v)| *a = *a + *v);
                }
                out.push((*bias, db));
                if self.requires_grad(*weight) {
                    let mut dw = vec![F::zero(); f * u];
                    gemm(f, b, u, self.value(*input).data(), true, g, false, &mut dw, false);
                    out.push((*weight, dw));
                }
                if self.requires_grad(*input) {
                    let mut dx = vec![F::zero(); b * f];
                    gemm(b, u, f, g, false, self.value(*weight).data(), true, &mut dx, false);
                    out.push((*input, dx));
                }
                out
            }
            Op::Dropout { input, mask } => {
                let d = g.iter().zip(mask).map(|(g, m)| *g * *m).collect();
                vec![(*input, d)]
            }
            Op::GlobalAvgPool {
                input,
                spatial,
                channels,
            } => {
                let inv = F::one() / F::of(*spatial as f64);
                let mut d = Vec::with_capacity(g.len() * spatial);
                for grow in g.chunks(*channels) {
                    for _ in 0..*spatial {
                        d.extend(grow.iter().map(|v| *v * inv));
                    }
                }
                vec![(*input, d)]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Reshape(input) => vec![(*input, g.to_vec())],
            Op::Sum(input) => vec![(*input, vec![g[0]; self.value(*input).len()])],
            Op::MseLoss { pred, target, l2 } => {
                let p = self.value(*pred).data();
                let t = self.value(*target).data();
                let scale = F::of(2.0) * g[0] / F::of(p.len() as f64);
                let dp: Vec<F> = p.iter().zip(t).map(|(a, b)| scale * (*a - *b)).collect();
                let dt = dp.iter().map(|v| -*v).collect();
                let mut out = vec![(*pred, dp), (*target, dt)];
                for (coeff, param) in l2 {
                    let k = F::of(2.0) * *coeff * g[0];
                    out.push((*param, self.value(*param).data().iter().map(|w| k * *w).collect()));
                }
                out
            }
        }
    }
}

#[inline]
fn stable_sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(dims.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn square_loss_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1], &[3.0]));
        let zero = tape.constant(t(&[1], &[0.0]));
        let loss = tape.mse_loss(x, zero, &[]).unwrap();
        assert_eq!(tape.value(loss).data(), &[9.0]);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn second_backward_without_new_forward_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::Usage(_))));
        let s2 = tape.sum(x);
        assert!(tape.backward(s2).is_ok());
    }

    #[test]
    fn parameters_off_the_loss_path_get_exact_zeros() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        let unused = tape.param(t(&[3], &[4.0, 5.0, 6.0]));
        let s = tape.sum(x);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(unused).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[3], &[-3.0, 2.0, 0.0]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 2.0, 0.0]);
        let s = tape.sigmoid(x);
        assert_eq!(tape.value(s).data()[2], 0.5);
        let sum = tape.sum(s);
        let grads = tape.backward(sum).unwrap();
        assert!((grads.get(x).unwrap().data()[2] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_stays_inside_open_interval_for_moderate_inputs() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[4], &[-30.0, -5.0, 5.0, 30.0]));
        let s = tape.sigmoid(x);
        assert!(tape.value(s).data().iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn dense_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let w = tape.param(t(&[2, 1], &[1.0, 1.0]));
        let b = tape.param(t(&[1], &[3.0]));
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[6.0]);

        let id = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let zb = tape.constant(t(&[2], &[0.0, 0.0]));
        let y2 = tape.dense(x, id, zb).unwrap();
        assert_eq!(tape.value(y2).data(), &[1.0, 2.0]);

        let bad = tape.constant(t(&[3, 1], &[1.0, 1.0, 1.0]));
        assert!(matches!(tape.dense(x, bad, b), Err(Error::Shape(_))));
    }

    #[test]
    fn dense_weight_gradient_is_input_transpose_times_upstream() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let w = tape.param(t(&[3, 2], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]));
        let b = tape.param(t(&[2], &[0.0, 0.0]));
        let y = tape.dense(x, w, b).unwrap();
        let s = tape.sum(y);
        let grads = tape.backward(s).unwrap();
        // upstream is all ones, so dW[f,u] = Σ_b x[b,f]
        assert_eq!(grads.get(w).unwrap().data(), &[5.0, 5.0, 7.0, 7.0, 9.0, 9.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn batch_norm_identity_in_infer_mode() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 2], &[1.0, -2.0, 3.5, 0.25]));
        let g = tape.constant(t(&[2], &[1.0, 1.0]));
        let b = tape.constant(t(&[2], &[0.0, 0.0]));
        let mut stats = BatchNormStats::new(2);
        let cfg = BatchNormConfig {
            momentum: 0.9,
            eps: 1e-14,
        };
        let y = tape.batch_norm(x, g, b, &mut stats, Mode::Infer, cfg).unwrap();
        for (a, e) in tape.value(y).data().iter().zip(tape.value(x).data()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_norm_train_closed_form_and_running_update() {
        // values 3 and 7 → mean 5, variance 4
        let mut tape = Tape::new();
        let x = tape.constant(t(&[4, 1], &[3.0, 7.0, 3.0, 7.0]));
        let g = tape.constant(t(&[1], &[2.0]));
        let b = tape.constant(t(&[1], &[1.0]));
        let mut stats = BatchNormStats::new(1);
        let cfg = BatchNormConfig {
            momentum: 0.9,
            eps: 1e-12,
        };
        let y = tape.batch_norm(x, g, b, &mut stats, Mode::Train, cfg).unwrap();
        for (out, xin) in tape.value(y).data().iter().zip([3.0, 7.0, 3.0, 7.0]) {
            assert!((out - (2.0 * (xin - 5.0) / 2.0 + 1.0)).abs() < 1e-9);
        }
        assert!((stats.mean.data()[0] - 0.5).abs() < 1e-12);
        assert!((stats.var.data()[0] - (0.9 + 0.1 * 4.0)).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_rejects_non_positive_eps() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 1], &[1.0, 2.0]));
        let g = tape.constant(t(&[1], &[1.0]));
        let b = tape.constant(t(&[1], &[0.0]));
        let mut stats = BatchNormStats::new(1);
        for eps in [0.0, -1.0] {
            let cfg = BatchNormConfig { momentum: 0.9, eps };
            let r = tape.batch_norm(x, g, b, &mut stats, Mode::Train, cfg);
            assert!(matches!(r, Err(Error::Config(_))));
        }
    }

    #[test]
    fn dropout_modes() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[100], 1.0));
        assert_eq!(tape.dropout(x, 0.0, Mode::Train, 1).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.5, Mode::Infer, 1).unwrap(), x);
        assert!(matches!(tape.dropout(x, 1.0, Mode::Train, 1), Err(Error::Config(_))));
        let a = tape.dropout(x, 0.5, Mode::Train, 7).unwrap();
        let b = tape.dropout(x, 0.5, Mode::Train, 7).unwrap();
        assert_eq!(tape.value(a), tape.value(b));
        assert!(tape.value(a).data().iter().all(|v| *v == 0.0 || *v == 2.0));
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full(&[1_000_000], 1.0));
        let y = tape.dropout(x, 0.5, Mode::Train, 42).unwrap();
        let mean = tape.value(y).data().iter().map(|v| *v as f64).sum::<f64>() / 1e6;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn global_average_pool_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]));
        let y = tape.global_avg_pool2d(x).unwrap();
        assert_eq!(tape.value(y).data(), &[2.5]);
        let c = tape.constant(Tensor::full(&[3, 4, 2], 1.75));
        let yc = tape.global_avg_pool2d(c).unwrap();
        assert_eq!(tape.value(yc).data(), &[1.75, 1.75]);
    }

    #[test]
    fn residual_chain_keeps_identity_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[3], &[0.5, -1.0, 2.0]));
        let mut h = x;
        for _ in 0..10 {
            let branch = tape.relu(h);
            h = tape.add(h, branch).unwrap();
        }
        let s = tape.sum(h);
        let grads = tape.backward(s).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|g| g.abs() >= 1.0));
    }

    #[test]
    fn add_requires_identical_extents() {
        let mut tape = Tape::new();
        let a = tape.param(t(&[2], &[1.0, 2.0]));
        let z = tape.constant(t(&[2], &[0.0, 0.0]));
        let s = tape.add(a, z).unwrap();
        assert_eq!(tape.value(s).data(), &[1.0, 2.0]);
        let sum = tape.sum(s);
        let grads = tape.backward(sum).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[1.0, 1.0]);
        let c = tape.constant(t(&[3], &[0.0, 0.0, 0.0]));
        assert!(matches!(tape.add(a, c), Err(Error::Shape(_))));
    }

    #[test]
    fn mse_loss_examples() {
        let mut tape = Tape::new();
        let p = tape.constant(t(&[2], &[0.0, 0.0]));
        let y = tape.constant(t(&[2], &[0.0, 1.0]));
        let l = tape.mse_loss(p, y, &[]).unwrap();
        assert_eq!(tape.value(l).data(), &[0.5]);
        let same = tape.mse_loss(p, p, &[]).unwrap();
        assert_eq!(tape.value(same).data(), &[0.0]);
        let w = tape.param(t(&[2], &[1.0, 2.0]));
        let reg = tape.mse_loss(p, y, &[(0.1, w)]).unwrap();
        assert!((tape.value(reg).data()[0] - 1.0).abs() < 1e-15);
    }
}
