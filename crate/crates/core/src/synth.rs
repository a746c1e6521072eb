//! Synthetic predictor/target worlds with a planted linear teleconnection.
//!
//! Predictors are smooth random fields per (year, fortnight, channel). A
//! per-year anomaly is added to a box of one channel over a span of
//! fortnights; the box mean `s_y` then drives every valid target cell:
//!
//! ```text
//! target[y, j] = slope[j] · s_y + intercept[j] + noise_std[j] · ε
//! ```
//!
//! with `noise_std[j] = |slope[j]| · std(s) / snr`.

use std::f64::consts::TAU;
use std::path::Path;

use ndarray::{s, Array3, Array4, Array5, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{channel_list, validate_channels, PredictorCube, TargetGrid, FORTNIGHTS, MICRO_CHANNELS, PREDICTOR_CHANNELS, SST_CHANNEL};
use crate::preprocess::{fortnight_means, is_leap_year};
use crate::train::Target;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorldSpec {
    pub first_year: i32,
    pub years: usize,
    /// Predictor grid before the 3× downsampling.
    pub grid: (usize, usize),
    pub channels: Vec<String>,
    pub target_grid: (usize, usize),
    /// Fraction of target cells that are valid.
    pub mask_density: f64,
    pub signal_channel: String,
    /// Half-open row and column ranges of the signal box.
    pub signal_rows: (usize, usize),
    pub signal_cols: (usize, usize),
    pub signal_fortnights: (usize, usize),
    /// Anomaly standard deviation in units of the channel's field scale.
    pub signal_amplitude: f64,
    /// Signal-to-noise ratio of the targets; `None` means noise-free.
    pub snr: Option<f64>,
    /// First column of the SST land strip (NaN); columns beyond are land.
    pub land_from_col: usize,
    /// Generate daily fields and aggregate them with the fortnight means.
    pub daily: bool,
    pub seed: u64,
}

impl SyntheticWorldSpec {
    /// 32 years on a (90, 136) grid, downsampling to (30, 45), six channels.
    pub fn micro() -> Self {
        SyntheticWorldSpec {
            first_year: 1990,
            years: 32,
            grid: (90, 136),
            channels: channel_list(&MICRO_CHANNELS),
            target_grid: (12, 14),
            mask_density: 0.31,
            signal_channel: SST_CHANNEL.into(),
            signal_rows: (15, 75),
            signal_cols: (15, 105),
            signal_fortnights: (6, 11),
            signal_amplitude: 3.0,
            snr: Some(5.0),
            land_from_col: 112,
            daily: false,
            seed: 0,
        }
    }

    /// 85 years on the (261, 541) grid, 25 channels, 33 × 35 targets.
    /// The raw cube alone is about 13 GB in single precision.
    pub fn full_scale() -> Self {
        SyntheticWorldSpec {
            first_year: 1940,
            years: 85,
            grid: (261, 541),
            channels: channel_list(&PREDICTOR_CHANNELS),
            target_grid: (33, 35),
            signal_rows: (45, 216),
            signal_cols: (60, 420),
            land_from_col: 450,
            ..Self::micro()
        }
    }

    pub fn year_list(&self) -> Vec<i32> {
        (0..self.years as i32).map(|i| self.first_year + i).collect()
    }

    pub fn mask_cells(&self) -> usize {
        let n = self.target_grid.0 * self.target_grid.1;
        ((self.mask_density * n as f64).round() as usize).clamp(1, n)
    }

    pub fn validate(&self) -> Result<()> {
        validate_channels(&self.channels)?;
        let (h, w) = self.grid;
        if self.years == 0 || h == 0 || w == 0 || self.target_grid.0 == 0 || self.target_grid.1 == 0 {
            return Err(Error::Config("synthetic world needs years and non-empty grids".into()));
        }
        if !(self.mask_density > 0.0 && self.mask_density <= 1.0) {
            return Err(Error::Config(format!("mask density {} outside (0, 1]", self.mask_density)));
        }
        if !self.channels.contains(&self.signal_channel) {
            return Err(Error::Config(format!("signal channel `{}` is not generated", self.signal_channel)));
        }
        let (r0, r1) = self.signal_rows;
        let (c0, c1) = self.signal_cols;
        let (f0, f1) = self.signal_fortnights;
        if r0 >= r1 || r1 > h || c0 >= c1 || c1 > w || f0 >= f1 || f1 > FORTNIGHTS {
            return Err(Error::Config(format!(
                "signal region rows {:?} cols {:?} fortnights {:?} outside grid ({h}, {w}, {FORTNIGHTS})",
                self.signal_rows, self.signal_cols, self.signal_fortnights
            )));
        }
        if self.signal_channel == SST_CHANNEL && c1 > self.land_from_col {
            return Err(Error::Config("SST signal box overlaps the land strip".into()));
        }
        if matches!(self.snr, Some(s) if !(s > 0.0)) {
            return Err(Error::Config("snr must be > 0".into()));
        }
        Ok(())
    }
}

/// Typical (offset, scale) of a channel in physical units.
fn channel_scale(name: &str) -> (f64, f64) {
    match name.chars().next() {
        Some('z') => (5000.0, 60.0),
        Some('q') => (0.008, 0.002),
        Some('t') if name == "tp" => (4.0, 2.0),
        Some('t') if name == "tcwv" => (30.0, 8.0),
        Some('t') => (270.0, 5.0),
        Some('u') | Some('v') => (3.0, 6.0),
        Some('s') => (295.0, 2.0),
        Some('m') => (101_000.0, 400.0),
        _ => (0.0, 1.0),
    }
}

/// Sum of separable low-frequency waves on an `h × w` grid, unit-order.
fn smooth_field(rng: &mut ChaCha8Rng, h: usize, w: usize, out: &mut [f64]) {
    const WAVES: usize = 4;
    out.fill(0.0);
    for _ in 0..WAVES {
        let amp: f64 = rng.gen_range(0.2..0.6);
        let (fx, fy): (f64, f64) = (rng.gen_range(0.3..2.5), rng.gen_range(0.3..2.5));
        let (px, py): (f64, f64) = (rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU));
        let rows: Vec<f64> = (0..h).map(|i| (TAU * fx * i as f64 / h as f64 + px).sin()).collect();
        let cols: Vec<f64> = (0..w).map(|j| (TAU * fy * j as f64 / w as f64 + py).cos()).collect();
        for (i, r) in rows.iter().enumerate() {
            for (j, c) in cols.iter().enumerate() {
                out[i * w + j] += amp * r * c;
            }
        }
    }
}

/// A compact landmass: cells ranked by distance from the centre plus a
/// smooth perturbation, the closest `cells` kept.
pub fn synthetic_landmask(grid: (usize, usize), cells: usize, seed: u64) -> Vec<bool> {
    let (h, w) = grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1A4D);
    let mut wobble = vec![0.0; h * w];
    smooth_field(&mut rng, h, w, &mut wobble);
    let (ch, cw) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut order: Vec<(f64, usize)> = (0..h * w)
        .map(|k| {
            let (i, j) = ((k / w) as f64, (k % w) as f64);
            let d = ((i - ch) / h as f64).powi(2) + ((j - cw) / w as f64).powi(2);
            (d.sqrt() + 0.1 * wobble[k], k)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut mask = vec![false; h * w];
    for &(_, k) in order.iter().take(cells) {
        mask[k] = true;
    }
    mask
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetTruth {
    pub name: String,
    /// Per valid cell, row-major mask order.
    pub slope: Vec<f64>,
    pub intercept: Vec<f64>,
    pub noise_std: Vec<f64>,
}

/// Everything needed to check what a model should have learned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SyntheticWorldSpec,
    pub years: Vec<i32>,
    /// Box mean of the signal channel per year, from the stored predictors.
    pub signal_index: Vec<f64>,
    pub valid_cells: Vec<usize>,
    pub targets: Vec<TargetTruth>,
}

pub struct SyntheticWorld {
    pub predictors: PredictorCube,
    pub targets: Vec<TargetGrid>,
    pub truth: GroundTruth,
}

impl SyntheticWorld {
    pub fn target(&self, name: &str) -> Option<&TargetGrid> {
        self.targets.iter().find(|t| t.name == name)
    }

    /// `predictors.gtf`, `target_<name>.gtf` and `truth.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.predictors.save(&dir.join("predictors.gtf"))?;
        for t in &self.targets {
            t.save(&dir.join(format!("target_{}.gtf", t.name)))?;
        }
        let path = dir.join("truth.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self.truth)?).map_err(|e| Error::io(&path, e))
    }
}

fn fortnight_fields(spec: &SyntheticWorldSpec, rng: &mut ChaCha8Rng, anomaly: f64) -> Array4<f32> {
    let (h, w) = spec.grid;
    let c = spec.channels.len();
    let mut out = Array4::<f32>::zeros((FORTNIGHTS, h, w, c));
    let mut buf = vec![0.0; h * w];
    let sig = spec.channels.iter().position(|n| *n == spec.signal_channel).expect("validated");
    for f in 0..FORTNIGHTS {
        for (ci, name) in spec.channels.iter().enumerate() {
            let (offset, scale) = channel_scale(name);
            smooth_field(rng, h, w, &mut buf);
            let in_time = (spec.signal_fortnights.0..spec.signal_fortnights.1).contains(&f);
            for i in 0..h {
                for j in 0..w {
                    let mut v = buf[i * w + j];
                    if ci == sig
                        && in_time
                        && (spec.signal_rows.0..spec.signal_rows.1).contains(&i)
                        && (spec.signal_cols.0..spec.signal_cols.1).contains(&j)
                    {
                        v += spec.signal_amplitude * anomaly;
                    }
                    out[[f, i, j, ci]] = (offset + scale * v) as f32;
                }
            }
        }
    }
    out
}

/// Spread each fortnight field over its days with day-to-day jitter, then
/// aggregate back with [`fortnight_means`].
fn via_daily(spec: &SyntheticWorldSpec, rng: &mut ChaCha8Rng, year: i32, fields: &Array4<f32>) -> Result<Array4<f32>> {
    let days = if is_leap_year(year) { 152 } else { 151 };
    let (_, h, w, c) = fields.dim();
    let mut daily = Array4::<f32>::zeros((days, h, w, c));
    for (d, mut day) in daily.outer_iter_mut().enumerate() {
        let f = (d / crate::preprocess::FORTNIGHT_DAYS).min(FORTNIGHTS - 1);
        day.assign(&fields.index_axis(Axis(0), f));
        for (ci, name) in spec.channels.iter().enumerate() {
            let jitter = 0.2 * channel_scale(name).1 * rng.sample::<f64, _>(StandardNormal);
            day.slice_mut(s![.., .., ci]).mapv_inplace(|v| v + jitter as f32);
        }
    }
    fortnight_means(daily.view(), is_leap_year(year))
}

pub fn gen_synthetic(spec: &SyntheticWorldSpec) -> Result<SyntheticWorld> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let years = spec.year_list();
    let (h, w) = spec.grid;
    let c = spec.channels.len();
    let mut values = Array5::<f32>::zeros((years.len(), FORTNIGHTS, h, w, c));
    for (yi, &year) in years.iter().enumerate() {
        let anomaly: f64 = rng.sample(StandardNormal);
        let mut fields = fortnight_fields(spec, &mut rng, anomaly);
        if spec.daily {
            fields = via_daily(spec, &mut rng, year, &fields)?;
        }
        values.index_axis_mut(Axis(0), yi).assign(&fields);
    }
    if let Some(sst) = spec.channels.iter().position(|n| n == SST_CHANNEL) {
        values
            .slice_mut(s![.., .., .., spec.land_from_col.min(w).., sst])
            .fill(f32::NAN);
    }

    let sig = spec.channels.iter().position(|n| *n == spec.signal_channel).expect("validated");
    let signal_index: Vec<f64> = values
        .outer_iter()
        .map(|year| {
            let region = year.slice(s![
                spec.signal_fortnights.0..spec.signal_fortnights.1,
                spec.signal_rows.0..spec.signal_rows.1,
                spec.signal_cols.0..spec.signal_cols.1,
                sig
            ]);
            region.iter().map(|v| *v as f64).sum::<f64>() / region.len() as f64
        })
        .collect();
    let n = signal_index.len() as f64;
    let mean = signal_index.iter().sum::<f64>() / n;
    let std = (signal_index.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
    let std = if std > 0.0 { std } else { 1.0 };

    let (th, tw) = spec.target_grid;
    let land = synthetic_landmask(spec.target_grid, spec.mask_cells(), spec.seed);
    let valid_cells: Vec<usize> = land.iter().enumerate().filter(|(_, v)| **v).map(|(k, _)| k).collect();
    let lat: Vec<f64> = (0..th).map(|i| 6.5 + i as f64).collect();
    let lon: Vec<f64> = (0..tw).map(|j| 66.5 + j as f64).collect();

    let mut targets = Vec::new();
    let mut truths = Vec::new();
    for t in Target::ALL {
        let mut grid = Array3::<f32>::from_elem((years.len(), th, tw), f32::NAN);
        let mut truth = TargetTruth {
            name: t.as_str().into(),
            slope: Vec::new(),
            intercept: Vec::new(),
            noise_std: Vec::new(),
        };
        for &k in &valid_cells {
            let gain: f64 = rng.gen_range(0.5..3.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let base: f64 = rng.gen_range(15.0..30.0);
            let slope = gain / std;
            let noise = spec.snr.map_or(0.0, |snr| gain.abs() / snr);
            for (yi, s) in signal_index.iter().enumerate() {
                let eps: f64 = if noise > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
                grid[[yi, k / tw, k % tw]] = (base + slope * (s - mean) + noise * eps) as f32;
            }
            truth.slope.push(slope);
            truth.intercept.push(base - slope * mean);
            truth.noise_std.push(noise);
        }
        targets.push(TargetGrid::new(t.as_str(), grid, years.clone(), lat.clone(), lon.clone())?);
        truths.push(truth);
    }

    let lat_p: Vec<f64> = (0..h).map(|i| -30.0 + 0.25 * i as f64).collect();
    let lon_p: Vec<f64> = (0..w).map(|j| 30.0 + 0.25 * j as f64).collect();
    let predictors = PredictorCube::new(values, years.clone(), lat_p, lon_p, spec.channels.clone())?;
    Ok(SyntheticWorld {
        predictors,
        targets,
        truth: GroundTruth {
            spec: spec.clone(),
            years,
            signal_index,
            valid_cells,
            targets: truths,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_target_grid_has_about_357_cells() {
        let spec = SyntheticWorldSpec::full_scale();
        assert!((spec.mask_cells() as i64 - 357).abs() <= 1);
        let mask = synthetic_landmask(spec.target_grid, spec.mask_cells(), 0);
        assert_eq!(mask.iter().filter(|v| **v).count(), spec.mask_cells());
    }

    #[test]
    fn signal_box_outside_grid_is_rejected() {
        let spec = SyntheticWorldSpec {
            signal_rows: (80, 95),
            ..SyntheticWorldSpec::micro()
        };
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }
}
