//! 3D convolution lowered to GEMM.
//!
//! Layout is channels-last: input `[B, T, H, W, Cin]`, kernel
//! `[kt, kh, kw, Cin, Cout]`, output `[B, T', H', W', Cout]`. The kernel
//! buffer is already a `K × Cout` matrix with `K = kt·kh·kw·Cin`, so one
//! im2col row per output position turns the convolution into a single matrix
//! product whose result is the output in its final layout.

use serde::{Deserialize, Serialize};

use super::{gemm, Scalar, Tensor};
use crate::error::{Error, Result};

/// Output positions lowered per GEMM call. Bounds the im2col scratch buffer.
const ROW_CHUNK: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output extent `ceil(n / stride)`, zero padding split with the smaller
    /// half before the data.
    Same,
    /// Output extent `floor((n - k) / stride) + 1`.
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dConfig {
    pub strides: [usize; 3],
    /// Per axis (time, lat, lon).
    pub padding: [Padding; 3],
}

impl Conv3dConfig {
    pub fn same(strides: [usize; 3]) -> Self {
        Conv3dConfig {
            strides,
            padding: [Padding::Same; 3],
        }
    }

    pub fn valid(strides: [usize; 3]) -> Self {
        Conv3dConfig {
            strides,
            padding: [Padding::Valid; 3],
        }
    }
}

/// Resolved extents of one convolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub output: [usize; 3],
    pub strides: [usize; 3],
    pub pad_before: [usize; 3],
    pub cin: usize,
    pub cout: usize,
}

/// Output extent and leading pad for one axis.
pub(crate) fn axis_extent(n: usize, k: usize, s: usize, padding: Padding) -> Option<(usize, usize)> {
    if s == 0 || k == 0 || n == 0 {
        return None;
    }
    match padding {
        Padding::Same => {
            let out = n.div_ceil(s);
            let total = ((out - 1) * s + k).saturating_sub(n);
            Some((out, total / 2))
        }
        Padding::Valid => {
            if k > n {
                None
            } else {
                Some(((n - k) / s + 1, 0))
            }
        }
    }
}

impl ConvGeometry {
    /// `input_dims` is `[T,H,W,C]` (batch 1) or `[B,T,H,W,C]`.
    pub fn new(input_dims: &[usize], kernel_dims: &[usize], cfg: &Conv3dConfig) -> Result<Self> {
        let (batch, spatial, cin) = match input_dims {
            [t, h, w, c] => (1, [*t, *h, *w], *c),
            [b, t, h, w, c] => (*b, [*t, *h, *w], *c),
            _ => {
                return Err(Error::Shape(format!(
                    "conv3d input must be [T,H,W,C] or [B,T,H,W,C], got {input_dims:?}"
                )))
            }
        };
        let [kt, kh, kw, kcin, cout] = match kernel_dims {
            [a, b, c, d, e] => [*a, *b, *c, *d, *e],
            _ => {
                return Err(Error::Shape(format!(
                    "conv3d kernel must be [kt,kh,kw,Cin,Cout], got {kernel_dims:?}"
                )))
            }
        };
        if kcin != cin {
            return Err(Error::Shape(format!(
                "conv3d channel mismatch: input has {cin}, kernel expects {kcin}"
            )));
        }
        let kernel = [kt, kh, kw];
        let mut output = [0; 3];
        let mut pad_before = [0; 3];
        for ax in 0..3 {
            let (o, p) = axis_extent(spatial[ax], kernel[ax], cfg.strides[ax], cfg.padding[ax])
                .ok_or_else(|| {
                    Error::Shape(format!(
                        "conv3d axis {ax}: kernel {} stride {} does not fit extent {} ({:?})",
                        kernel[ax], cfg.strides[ax], spatial[ax], cfg.padding[ax]
                    ))
                })?;
            output[ax] = o;
            pad_before[ax] = p;
        }
        Ok(ConvGeometry {
            batch,
            input: spatial,
            kernel,
            output,
            strides: cfg.strides,
            pad_before,
            cin,
            cout,
        })
    }

    pub fn positions(&self) -> usize {
        self.batch * self.output.iter().product::<usize>()
    }

    /// Rows of the lowered kernel matrix.
    pub fn patch_len(&self) -> usize {
        self.kernel.iter().product::<usize>() * self.cin
    }

    pub fn output_dims(&self, batched: bool) -> Vec<usize> {
        let [t, h, w] = self.output;
        if batched {
            vec![self.batch, t, h, w, self.cout]
        } else {
            vec![t, h, w, self.cout]
        }
    }

    /// Input offset of the first channel at output position `p`, kernel tap
    /// `(dt, dh, dw)`, or `None` when the tap lands in padding.
    #[inline]
    fn source(&self, p: usize, tap: [usize; 3]) -> Option<usize> {
        let [ot, oh, ow] = self.output;
        let ow_i = p % ow;
        let oh_i = (p / ow) % oh;
        let ot_i = (p / (ow * oh)) % ot;
        let b = p / (ow * oh * ot);
        let out = [ot_i, oh_i, ow_i];
        let mut idx = [0usize; 3];
        for ax in 0..3 {
            let pos = (out[ax] * self.strides[ax] + tap[ax]) as isize - self.pad_before[ax] as isize;
            if pos < 0 || pos as usize >= self.input[ax] {
                return None;
            }
            idx[ax] = pos as usize;
        }
        let [t, h, w] = self.input;
        Some((((b * t + idx[0]) * h + idx[1]) * w + idx[2]) * self.cin)
    }

    fn taps(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let [kt, kh, kw] = self.kernel;
        (0..kt).flat_map(move |a| (0..kh).flat_map(move |b| (0..kw).map(move |c| [a, b, c])))
    }

    /// Lower output rows `rows` into `cols` (`rows.len() × patch_len`).
    pub(crate) fn im2col<F: Scalar>(&self, input: &[F], rows: std::ops::Range<usize>, cols: &mut [F]) {
        let k = self.patch_len();
        let cin = self.cin;
        for (r, p) in rows.enumerate() {
            let row = &mut cols[r * k..(r + 1) * k];
            for (ti, tap) in self.taps().enumerate() {
                let dst = &mut row[ti * cin..(ti + 1) * cin];
                match self.source(p, tap) {
                    Some(off) => dst.copy_from_slice(&input[off..off + cin]),
                    None => dst.iter_mut().for_each(|x| *x = F::zero()),
                }
            }
        }
    }

    /// Scatter-add lowered gradients back onto the input gradient.
    pub(crate) fn col2im<F: Scalar>(&self, cols: &[F], rows: std::ops::Range<usize>, dinput: &mut [F]) {
        let k = self.patch_len();
        let cin = self.cin;
        for (r, p) in rows.enumerate() {
            let row = &cols[r * k..(r + 1) * k];
            for (ti, tap) in self.taps().enumerate() {
                if let Some(off) = self.source(p, tap) {
                    let src = &row[ti * cin..(ti + 1) * cin];
                    for (d, s) in dinput[off..off + cin].iter_mut().zip(src) {
                        *d = *d + *s;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv3d_forward<F: Scalar>(
    geom: &ConvGeometry,
    input: &[F],
    kernel: &[F],
    bias: &[F],
) -> Vec<F> {
    let p_total = geom.positions();
    let k = geom.patch_len();
    let cout = geom.cout;
    let mut out = vec![F::zero(); p_total * cout];
    for row in out.chunks_mut(cout) {
        row.copy_from_slice(bias);
    }
    let mut cols = vec![F::zero(); ROW_CHUNK.min(p_total) * k];
    let mut start = 0;
    while start < p_total {
        let end = (start + ROW_CHUNK).min(p_total);
        let m = end - start;
        geom.im2col(input, start..end, &mut cols[..m * k]);
        gemm(m, k, cout, &cols[..m * k], false, kernel, false, &mut out[start * cout..end * cout], true);
        start = end;
    }
    out
}

/// Gradients of a convolution with respect to (input, kernel, bias).
pub(crate) fn conv3d_backward<F: Scalar>(
    geom: &ConvGeometry,
    input: &[F],
    kernel: &[F],
    dout: &[F],
    need_input: bool,
    need_kernel: bool,
) -> (Option<Vec<F>>, Option<Vec<F>>, Vec<F>) {
    let p_total = geom.positions();
    let k = geom.patch_len();
    let cout = geom.cout;
    let mut dbias = vec![F::zero(); cout];
    for row in dout.chunks(cout) {
        for (d, g) in dbias.iter_mut().zip(row) {
            *d = *d + *g;
        }
    }
    let mut dinput = need_input.then(|| vec![F::zero(); input.len()]);
    let mut dkernel = need_kernel.then(|| vec![F::zero(); kernel.len()]);
    let chunk = ROW_CHUNK.min(p_total);
    let mut cols = vec![F::zero(); chunk * k];
    let mut dcols = if need_input { vec![F::zero(); chunk * k] } else { Vec::new() };
    let mut start = 0;
    while start < p_total {
        let end = (start + ROW_CHUNK).min(p_total);
        let m = end - start;
        let g = &dout[start * cout..end * cout];
        if let Some(dk) = dkernel.as_mut() {
            geom.im2col(input, start..end, &mut cols[..m * k]);
            // dK (k × cout) += colsᵀ (k × m) · g (m × cout)
            gemm(k, m, cout, &cols[..m * k], true, g, false, dk, true);
        }
        if let Some(di) = dinput.as_mut() {
            // dcols (m × k) = g (m × cout) · Kᵀ (cout × k)
            gemm(m, cout, k, g, false, kernel, true, &mut dcols[..m * k], false);
            geom.col2im(&dcols[..m * k], start..end, di);
        }
        start = end;
    }
    (dinput, dkernel, dbias)
}

/// Direct nested-loop convolution. Slow; kept as an independent reference
/// for the GEMM path.
pub fn conv3d_reference<F: Scalar>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    bias: &Tensor<F>,
    cfg: &Conv3dConfig,
) -> Result<Tensor<F>> {
    let geom = ConvGeometry::new(input.dims(), kernel.dims(), cfg)?;
    if bias.len() != geom.cout {
        return Err(Error::Shape(format!(
            "bias has {} entries, kernel has {} output channels",
            bias.len(),
            geom.cout
        )));
    }
    let [t, h, w] = geom.input;
    let [kt, kh, kw] = geom.kernel;
    let [ot, oh, ow] = geom.output;
    let (cin, cout) = (geom.cin, geom.cout);
    let x = input.data();
    let kr = kernel.data();
    let mut out = Vec::with_capacity(geom.positions() * cout);
    for b in 0..geom.batch {
        for i in 0..ot {
            for j in 0..oh {
                for l in 0..ow {
                    for co in 0..cout {
                        let mut acc = bias.data()[co];
                        for dt in 0..kt {
                            let st = (i * geom.strides[0] + dt) as isize - geom.pad_before[0] as isize;
                            if st < 0 || st as usize >= t {
                                continue;
                            }
                            for dh in 0..kh {
                                let sh = (j * geom.strides[1] + dh) as isize - geom.pad_before[1] as isize;
                                if sh < 0 || sh as usize >= h {
                                    continue;
                                }
                                for dw in 0..kw {
                                    let sw = (l * geom.strides[2] + dw) as isize - geom.pad_before[2] as isize;
                                    if sw < 0 || sw as usize >= w {
                                        continue;
                                    }
                                    for ci in 0..cin {
                                        let xi = (((b * t + st as usize) * h + sh as usize) * w + sw as usize) * cin + ci;
                                        let ki = (((dt * kh + dh) * kw + dw) * cin + ci) * cout + co;
                                        acc = acc + x[xi] * kr[ki];
                                    }
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
    }
    Tensor::new(geom.output_dims(input.rank() == 5), out)
}
