//! Raw fields to model-ready tensors.
//!
//! Order for predictors is fixed: split → fit on train → normalize (clip) →
//! SST land fill → 3×3 average pooling. Each step checks the cube's
//! [`Stage`] so the order cannot be violated, and normalization refuses
//! parameters that were not fitted on training years.

use std::ops::Range;
use std::path::Path;

use ndarray::{s, Array4, ArrayD, ArrayView4, ArrayViewD, Axis, IxDyn};
use serde::{Deserialize, Serialize};

use crate::grid::{PredictorCube, SplitRole, Stage, TargetSet, FORTNIGHTS, SST_CHANNEL};
use crate::error::{Error, Result};

pub const FORTNIGHT_DAYS: usize = 14;
pub const SST_FILL: f32 = -1.0;
pub const POOL: usize = 3;

pub fn is_leap_year(year: i32) -> bool {
    (year % 4 == 0 && year % 100 != 0) || year % 400 == 0
}

/// Day ranges of the 11 frames covering Jan 1 – May 31.
pub fn fortnight_ranges(days: usize) -> Vec<Range<usize>> {
    (0..FORTNIGHTS)
        .map(|f| {
            let start = f * FORTNIGHT_DAYS;
            let end = if f + 1 == FORTNIGHTS { days } else { start + FORTNIGHT_DAYS };
            start..end
        })
        .collect()
}

/// Mean of consecutive 14-day blocks; the last frame takes the remaining
/// 11 (non-leap) or 12 (leap) days. Input is `(days, lat, lon, channels)`.
pub fn fortnight_means(daily: ArrayView4<f32>, year_is_leap: bool) -> Result<Array4<f32>> {
    let days = daily.dim().0;
    let expected = if year_is_leap { 152 } else { 151 };
    if days != expected {
        return Err(Error::Data(format!(
            "expected {expected} days for a {} year, got {days}",
            if year_is_leap { "leap" } else { "non-leap" }
        )));
    }
    let (_, h, w, c) = daily.dim();
    let mut out = Array4::zeros((FORTNIGHTS, h, w, c));
    for (f, range) in fortnight_ranges(days).into_iter().enumerate() {
        let n = range.len() as f64;
        let block = daily.slice(s![range, .., .., ..]);
        let mut frame = out.index_axis_mut(Axis(0), f);
        let sums = block.map_axis(Axis(0), |lane| lane.iter().map(|&v| v as f64).sum::<f64>());
        frame.zip_mut_with(&sums, |o, s| *o = (s / n) as f32);
    }
    Ok(out)
}

/// Per-channel min/max scaling parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub channels: Vec<ChannelRange>,
    /// `"fitted-on-train"` when fitted on training years only.
    pub provenance: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

pub const FITTED_ON_TRAIN: &str = "fitted-on-train";

/// Training-set rainfall ranges (mm/day) published for the five targets.
pub const PUBLISHED_TARGET_RANGES: [(&str, f64, f64); 5] = [
    ("june", 0.0, 58.0408),
    ("july", 0.0, 71.1862),
    ("august", 0.0, 91.0669),
    ("september", 0.0, 43.9216),
    ("jjas", 0.0, 49.5925),
];

impl NormParams {
    pub fn fitted_on_train(&self) -> bool {
        self.provenance == FITTED_ON_TRAIN
    }

    pub fn range(&self, channel: usize) -> (f64, f64) {
        let c = &self.channels[channel];
        (c.min, c.max)
    }

    pub fn by_name(&self, name: &str) -> Option<&ChannelRange> {
        self.channels.iter().find(|c| c.name == name)
    }

    /// Published training-set range for one of the five rainfall targets.
    pub fn published_target(target: &str) -> Option<Self> {
        PUBLISHED_TARGET_RANGES
            .iter()
            .find(|(n, _, _)| *n == target)
            .map(|(n, lo, hi)| NormParams {
                channels: vec![ChannelRange {
                    name: n.to_string(),
                    min: *lo,
                    max: *hi,
                }],
                provenance: FITTED_ON_TRAIN.into(),
            })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| Error::MissingNormParams(path.display().to_string()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[inline]
pub fn normalize_value(x: f64, min: f64, max: f64) -> f64 {
    (x - min) / (max - min)
}

/// Map a normalized value back to physical units.
#[inline]
pub fn denormalize_value(x: f64, min: f64, max: f64) -> f64 {
    x * (max - min) + min
}

/// Global min/max per channel (trailing axis), ignoring NaN.
pub fn fit_minmax(data: ArrayViewD<f32>, channels: &[String], role: SplitRole) -> Result<NormParams> {
    let c = *data.shape().last().ok_or_else(|| Error::Data("cannot fit on a rank-0 array".into()))?;
    if c != channels.len() {
        return Err(Error::Shape(format!("data has {c} channels, {} names given", channels.len())));
    }
    if data.is_empty() {
        return Err(Error::Data("cannot fit normalization on an empty set".into()));
    }
    let mut lo = vec![f64::INFINITY; c];
    let mut hi = vec![f64::NEG_INFINITY; c];
    let flat = data.as_standard_layout();
    for row in flat.as_slice().expect("standard layout").chunks(c) {
        for (ch, &v) in row.iter().enumerate() {
            if !v.is_nan() {
                lo[ch] = lo[ch].min(v as f64);
                hi[ch] = hi[ch].max(v as f64);
            }
        }
    }
    let mut out = Vec::with_capacity(c);
    for (ch, name) in channels.iter().enumerate() {
        if !lo[ch].is_finite() {
            return Err(Error::Data(format!("channel `{name}` is entirely NaN")));
        }
        out.push(ChannelRange {
            name: name.clone(),
            min: lo[ch],
            max: hi[ch],
        });
    }
    Ok(NormParams {
        channels: out,
        provenance: if role == SplitRole::Train {
            FITTED_ON_TRAIN.into()
        } else {
            format!("fitted-on-{}", serde_json::to_value(role)?.as_str().unwrap_or("unknown"))
        },
    })
}

/// `(x − min)/(max − min)` per trailing-axis channel, optionally clipped to
/// `[0, 1]`. NaN passes through.
pub fn apply_minmax(data: ArrayViewD<f32>, params: &NormParams, clip: bool) -> Result<ArrayD<f32>> {
    if !params.fitted_on_train() {
        return Err(Error::Leakage(format!(
            "normalization parameters are `{}`, not fitted on training years",
            params.provenance
        )));
    }
    let c = *data.shape().last().ok_or_else(|| Error::Data("rank-0 array".into()))?;
    if c != params.channels.len() {
        return Err(Error::Shape(format!(
            "data has {c} channels, parameters cover {}",
            params.channels.len()
        )));
    }
    for ch in &params.channels {
        if ch.max <= ch.min {
            return Err(Error::Data(format!(
                "degenerate channel `{}`: max {} <= min {}",
                ch.name, ch.max, ch.min
            )));
        }
    }
    let mut out = data.to_owned();
    let slice = out.as_slice_mut().expect("owned arrays are standard layout");
    for row in slice.chunks_mut(c) {
        for (v, r) in row.iter_mut().zip(&params.channels) {
            if v.is_nan() {
                continue;
            }
            let mut z = normalize_value(*v as f64, r.min, r.max);
            if clip {
                z = z.clamp(0.0, 1.0);
            }
            *v = z as f32;
        }
    }
    Ok(out)
}

/// Inverse of [`apply_minmax`] (no clipping).
pub fn invert_minmax(data: ArrayViewD<f32>, params: &NormParams) -> Result<ArrayD<f32>> {
    let c = *data.shape().last().ok_or_else(|| Error::Data("rank-0 array".into()))?;
    if c != params.channels.len() {
        return Err(Error::Shape(format!(
            "data has {c} channels, parameters cover {}",
            params.channels.len()
        )));
    }
    let mut out = data.to_owned();
    for row in out.as_slice_mut().expect("owned").chunks_mut(c) {
        for (v, r) in row.iter_mut().zip(&params.channels) {
            *v = denormalize_value(*v as f64, r.min, r.max) as f32;
        }
    }
    Ok(out)
}

/// Replace NaN in the SST channel with `fill`; NaN anywhere else is an error.
pub fn impute_sst(data: &mut ArrayD<f32>, sst_channel: usize, fill: f32, channels: &[String]) -> Result<()> {
    let c = *data.shape().last().ok_or_else(|| Error::Data("rank-0 array".into()))?;
    if sst_channel >= c {
        return Err(Error::Config(format!("SST channel index {sst_channel} out of {c}")));
    }
    let slice = data.as_slice_mut().ok_or_else(|| Error::Data("array is not contiguous".into()))?;
    let mut bad: Option<usize> = None;
    for row in slice.chunks(c) {
        if let Some(ch) = row.iter().enumerate().find(|(i, v)| *i != sst_channel && v.is_nan()) {
            bad = Some(ch.0);
            break;
        }
    }
    if let Some(ch) = bad {
        let name = channels.get(ch).cloned().unwrap_or_else(|| format!("#{ch}"));
        return Err(Error::Data(format!("NaN found in non-SST channel `{name}`")));
    }
    for row in slice.chunks_mut(c) {
        if row[sst_channel].is_nan() {
            row[sst_channel] = fill;
        }
    }
    Ok(())
}

/// 3×3 average pooling with stride 3 over the `(lat, lon)` axes of
/// `(..., lat, lon, C)`. Trailing longitude columns are dropped until the
/// width divides by 3; latitude must already divide.
pub fn avgpool3(data: ArrayViewD<f32>) -> Result<ArrayD<f32>> {
    let shape = data.shape().to_vec();
    let r = shape.len();
    if r < 3 {
        return Err(Error::Shape(format!("pooling needs (..., lat, lon, C), got {shape:?}")));
    }
    let (h, w, c) = (shape[r - 3], shape[r - 2], shape[r - 1]);
    if h % POOL != 0 || h == 0 {
        return Err(Error::Data(format!("latitude extent {h} is not divisible by {POOL}")));
    }
    let wt = w - w % POOL;
    if wt == 0 {
        return Err(Error::Data(format!("longitude extent {w} is smaller than {POOL}")));
    }
    let (oh, ow) = (h / POOL, wt / POOL);
    let lead: usize = shape[..r - 3].iter().product();
    let src = data.as_standard_layout();
    let src = src.as_slice().expect("standard layout");
    let mut out = vec![0f32; lead * oh * ow * c];
    let inv = 1.0 / (POOL * POOL) as f64;
    let mut acc = vec![0f64; c];
    for l in 0..lead {
        let base = l * h * w * c;
        for i in 0..oh {
            for j in 0..ow {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for di in 0..POOL {
                    for dj in 0..POOL {
                        let off = base + ((i * POOL + di) * w + j * POOL + dj) * c;
                        for (a, v) in acc.iter_mut().zip(&src[off..off + c]) {
                            *a += *v as f64;
                        }
                    }
                }
                let o = ((l * oh + i) * ow + j) * c;
                for (dst, a) in out[o..o + c].iter_mut().zip(&acc) {
                    *dst = (a * inv) as f32;
                }
            }
        }
    }
    let mut new_shape = shape[..r - 3].to_vec();
    new_shape.extend([oh, ow, c]);
    Ok(ArrayD::from_shape_vec(IxDyn(&new_shape), out).expect("extent arithmetic"))
}

/// Held-out years: every `stride`-th year from `start`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub start: i32,
    pub stride: i32,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { start: 1944, stride: 4 }
    }
}

impl SplitSpec {
    pub fn is_test(&self, year: i32) -> bool {
        year >= self.start && (year - self.start) % self.stride == 0
    }
}

/// Returns `(train, test)` with input order preserved.
pub fn split_years(years: &[i32], spec: SplitSpec) -> Result<(Vec<i32>, Vec<i32>)> {
    if spec.stride < 1 {
        return Err(Error::Config(format!("split stride must be >= 1, got {}", spec.stride)));
    }
    if years.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("year labels must be strictly ascending".into()));
    }
    let (test, train): (Vec<i32>, Vec<i32>) = years.iter().partition(|&&y| spec.is_test(y));
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config(format!(
            "split leaves {} train and {} test years",
            train.len(),
            test.len()
        )));
    }
    Ok((train, test))
}

/// Index range of coordinates inside `[lo, hi]` (inclusive, either axis
/// direction).
pub fn roi_indices(coords: &[f64], lo: f64, hi: f64) -> Result<Range<usize>> {
    let tol = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
    let (cmin, cmax) = coords
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &c| (a.min(c), b.max(c)));
    if lo > hi || lo < cmin - tol || hi > cmax + tol {
        return Err(Error::Domain(format!(
            "requested range [{lo}, {hi}] lies outside coordinates [{cmin}, {cmax}]"
        )));
    }
    let inside: Vec<usize> = coords
        .iter()
        .enumerate()
        .filter(|(_, &c)| c >= lo - tol && c <= hi + tol)
        .map(|(i, _)| i)
        .collect();
    match (inside.first(), inside.last()) {
        (Some(&a), Some(&b)) if b - a + 1 == inside.len() => Ok(a..b + 1),
        _ => Err(Error::Domain(format!("range [{lo}, {hi}] selects no contiguous cells"))),
    }
}

/// Cut a `(..., lat, lon, C)` field to a latitude/longitude box.
pub fn roi_trim(
    field: ArrayViewD<f32>,
    lat: &[f64],
    lon: &[f64],
    lat_range: (f64, f64),
    lon_range: (f64, f64),
) -> Result<(ArrayD<f32>, Vec<f64>, Vec<f64>)> {
    let r = field.ndim();
    if r < 3 || field.shape()[r - 3] != lat.len() || field.shape()[r - 2] != lon.len() {
        return Err(Error::Shape(format!(
            "field {:?} does not match {} lat / {} lon coordinates",
            field.shape(),
            lat.len(),
            lon.len()
        )));
    }
    let li = roi_indices(lat, lat_range.0, lat_range.1)?;
    let lj = roi_indices(lon, lon_range.0, lon_range.1)?;
    let mut view = field.view();
    view.slice_axis_inplace(Axis(r - 3), (li.start..li.end).into());
    view.slice_axis_inplace(Axis(r - 2), (lj.start..lj.end).into());
    Ok((view.to_owned(), lat[li].to_vec(), lon[lj].to_vec()))
}

// ---------------------------------------------------------------------------
// Cube-level pipeline

/// Split a cube into (train, test) cubes with roles set.
pub fn split_cube(cube: &PredictorCube, spec: SplitSpec) -> Result<(PredictorCube, PredictorCube)> {
    let (train, test) = split_years(&cube.years, spec)?;
    let mut tr = cube.select_years(&train)?;
    let mut te = cube.select_years(&test)?;
    tr.role = SplitRole::Train;
    te.role = SplitRole::Test;
    Ok((tr, te))
}

pub fn fit_cube(cube: &PredictorCube) -> Result<NormParams> {
    if cube.stage != Stage::Raw {
        return Err(Error::Protocol(format!("fit on a {:?} cube; expected raw values", cube.stage)));
    }
    fit_minmax(cube.values.view().into_dyn(), &cube.channels, cube.role)
}

fn restage(cube: &PredictorCube, values: ArrayD<f32>, stage: Stage) -> Result<PredictorCube> {
    let values = values
        .into_dimensionality()
        .map_err(|_| Error::Shape("predictor values lost rank 5".into()))?;
    Ok(PredictorCube {
        values,
        years: cube.years.clone(),
        lat: cube.lat.clone(),
        lon: cube.lon.clone(),
        channels: cube.channels.clone(),
        role: cube.role,
        stage,
    })
}

pub fn normalize_cube(cube: &PredictorCube, params: &NormParams) -> Result<PredictorCube> {
    if cube.stage != Stage::Raw {
        return Err(Error::Protocol(format!("normalize on a {:?} cube", cube.stage)));
    }
    let names: Vec<&str> = params.channels.iter().map(|c| c.name.as_str()).collect();
    if names != cube.channels.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Data("normalization parameters cover different channels".into()));
    }
    let out = apply_minmax(cube.values.view().into_dyn(), params, true)?;
    restage(cube, out, Stage::Normalized)
}

pub fn impute_cube(cube: &PredictorCube) -> Result<PredictorCube> {
    if cube.stage != Stage::Normalized {
        return Err(Error::Protocol(format!("SST fill on a {:?} cube; normalize first", cube.stage)));
    }
    let mut values = cube.values.clone().into_dyn();
    match cube.channel_index(SST_CHANNEL) {
        Some(i) => impute_sst(&mut values, i, SST_FILL, &cube.channels)?,
        None => {
            if let Some(ch) = first_nan_channel(&values) {
                return Err(Error::Data(format!("NaN found in channel `{}`", cube.channels[ch])));
            }
        }
    }
    restage(cube, values, Stage::Imputed)
}

fn first_nan_channel(values: &ArrayD<f32>) -> Option<usize> {
    let c = *values.shape().last()?;
    values
        .as_slice()?
        .chunks(c)
        .find_map(|row| row.iter().position(|v| v.is_nan()))
}

pub fn downsample_cube(cube: &PredictorCube) -> Result<PredictorCube> {
    if cube.stage != Stage::Imputed {
        return Err(Error::Protocol(format!("downsample on a {:?} cube; fill SST first", cube.stage)));
    }
    let out = avgpool3(cube.values.view().into_dyn())?;
    let mut next = restage(cube, out, Stage::Downsampled)?;
    let block_mean = |c: &[f64]| -> Vec<f64> {
        c.chunks_exact(POOL).map(|b| b.iter().sum::<f64>() / POOL as f64).collect()
    };
    next.lat = block_mean(&cube.lat);
    next.lon = block_mean(&cube.lon);
    next.validate()?;
    Ok(next)
}

/// normalize → impute → downsample with training-fitted parameters.
pub fn prepare_predictors(cube: &PredictorCube, params: &NormParams) -> Result<PredictorCube> {
    let n = normalize_cube(cube, params)?;
    let i = impute_cube(&n)?;
    downsample_cube(&i)
}

/// Fit target scaling on a training target set.
pub fn fit_targets(train: &TargetSet) -> Result<NormParams> {
    if train.normalized {
        return Err(Error::Protocol("targets are already normalized".into()));
    }
    let col = train.values.view().into_shape_with_order((train.values.len(), 1)).expect("contiguous");
    fit_minmax(col.into_dyn(), std::slice::from_ref(&train.name), train.role)
}

pub fn normalize_targets(set: &TargetSet, params: &NormParams) -> Result<TargetSet> {
    if set.normalized {
        return Err(Error::Protocol("targets are already normalized".into()));
    }
    let n = set.values.len();
    let col = set.values.view().into_shape_with_order((n, 1)).expect("contiguous");
    let scaled = apply_minmax(col.into_dyn(), params, true)?;
    let values = scaled
        .into_shape_with_order(set.values.dim())
        .expect("same element count")
        .into_dimensionality()
        .expect("rank 2");
    Ok(TargetSet {
        values,
        normalized: true,
        ..set.clone()
    })
}
