//! Sliding-window inclusive/occlusive augmentation of training predictors.
//!
//! For every window position two variants are derived from a year's
//! predictors: *inclusive* keeps only the window and fills the rest with
//! `fill`, *occlusive* fills the window and keeps the rest. Variants share
//! the source year's target. The plan is lazy: it stores (year, variant)
//! pairs, and tensors are materialized on demand.

use std::path::Path;

use ndarray::{s, Array4, ArrayView4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{PredictorCube, SplitRole};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    /// (lat, lon) extent of the window.
    pub window: (usize, usize),
    pub stride: (usize, usize),
    pub fill: f32,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            window: (40, 60),
            stride: (26, 40),
            fill: -1.0,
        }
    }
}

/// Top-left corners, row-major.
pub fn window_positions(grid: (usize, usize), spec: &WindowSpec) -> Result<Vec<(usize, usize)>> {
    let (h, w) = grid;
    let (wh, ww) = spec.window;
    let (sh, sw) = spec.stride;
    if sh == 0 || sw == 0 {
        return Err(Error::Config("window strides must be >= 1".into()));
    }
    if wh == 0 || ww == 0 || wh > h || ww > w {
        return Err(Error::Config(format!(
            "window {:?} does not fit grid ({h}, {w})",
            spec.window
        )));
    }
    let rows: Vec<usize> = (0..).map(|i| i * sh).take_while(|r| r + wh <= h).collect();
    let cols: Vec<usize> = (0..).map(|j| j * sw).take_while(|c| c + ww <= w).collect();
    Ok(rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Variant {
    Original,
    Inclusive { row: usize, col: usize },
    Occlusive { row: usize, col: usize },
}

impl Variant {
    pub fn is_original(&self) -> bool {
        matches!(self, Variant::Original)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::Original => write!(f, "original"),
            Variant::Inclusive { row, col } => write!(f, "inclusive@({row},{col})"),
            Variant::Occlusive { row, col } => write!(f, "occlusive@({row},{col})"),
        }
    }
}

fn check_window(sample: &ArrayView4<f32>, pos: (usize, usize), spec: &WindowSpec) -> Result<()> {
    let (_, h, w, _) = sample.dim();
    if pos.0 + spec.window.0 > h || pos.1 + spec.window.1 > w {
        return Err(Error::Config(format!(
            "window at {pos:?} with extent {:?} exceeds grid ({h}, {w})",
            spec.window
        )));
    }
    Ok(())
}

/// Keep the window, fill everything outside it. Sample is `(T, H, W, C)`.
pub fn make_inclusive(sample: ArrayView4<f32>, pos: (usize, usize), spec: &WindowSpec) -> Result<Array4<f32>> {
    check_window(&sample, pos, spec)?;
    let mut out = Array4::from_elem(sample.dim(), spec.fill);
    let (r, c) = pos;
    let (h, w) = spec.window;
    out.slice_mut(s![.., r..r + h, c..c + w, ..])
        .assign(&sample.slice(s![.., r..r + h, c..c + w, ..]));
    Ok(out)
}

/// Fill the window, keep everything outside it.
pub fn make_occlusive(sample: ArrayView4<f32>, pos: (usize, usize), spec: &WindowSpec) -> Result<Array4<f32>> {
    check_window(&sample, pos, spec)?;
    let mut out = sample.to_owned();
    let (r, c) = pos;
    let (h, w) = spec.window;
    out.slice_mut(s![.., r..r + h, c..c + w, ..]).fill(spec.fill);
    Ok(out)
}

pub fn materialize(sample: ArrayView4<f32>, variant: Variant, spec: &WindowSpec) -> Result<Array4<f32>> {
    match variant {
        Variant::Original => Ok(sample.to_owned()),
        Variant::Inclusive { row, col } => make_inclusive(sample, (row, col), spec),
        Variant::Occlusive { row, col } => make_occlusive(sample, (row, col), spec),
    }
}

/// SplitMix64 (Steele, Lea & Flood 2014). Chosen for the shuffle because
/// it is a few lines in any language, so the permutation is portable.
#[derive(Clone, Debug)]
pub struct SplitMix64(u64);

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// Durstenfeld shuffle of `0..n`: for `i = n-1 ..= 1`, swap `i` with
/// `next_u64() % (i + 1)`.
pub fn seeded_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = SplitMix64::new(seed);
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        p.swap(i, j);
    }
    p
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub year: i32,
    pub variant: Variant,
}

/// Shuffled list of training samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub seed: u64,
    pub spec: WindowSpec,
    pub grid: (usize, usize),
    pub positions: Vec<(usize, usize)>,
    /// `entries[k]` is canonical sample `permutation[k]`; the canonical
    /// order is, per year, original then all inclusive then all occlusive.
    pub permutation: Vec<usize>,
    pub entries: Vec<PlanEntry>,
}

impl AugmentPlan {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Materialize entry `k` from the (downsampled, training) cube.
    pub fn sample(&self, k: usize, cube: &PredictorCube) -> Result<Array4<f32>> {
        let e = &self.entries[k];
        let yi = cube
            .years
            .iter()
            .position(|y| *y == e.year)
            .ok_or_else(|| Error::Data(format!("year {} missing from cube", e.year)))?;
        if cube.grid() != self.grid {
            return Err(Error::Config(format!(
                "plan grid {:?} vs cube grid {:?}",
                self.grid,
                cube.grid()
            )));
        }
        materialize(cube.values.index_axis(ndarray::Axis(0), yi), e.variant, &self.spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Plan augmentation for the given training years without touching data.
pub fn plan_augmentation(
    years: &[i32],
    grid: (usize, usize),
    role: SplitRole,
    spec: &WindowSpec,
    seed: u64,
) -> Result<AugmentPlan> {
    if role != SplitRole::Train {
        return Err(Error::Protocol(format!(
            "augmentation applies to training data only, got a {role:?} set"
        )));
    }
    if years.is_empty() {
        return Err(Error::Config("no training years to augment".into()));
    }
    let positions = window_positions(grid, spec)?;
    let mut canonical = Vec::with_capacity(years.len() * (1 + 2 * positions.len()));
    for &year in years {
        canonical.push(PlanEntry {
            year,
            variant: Variant::Original,
        });
        for &(row, col) in &positions {
            canonical.push(PlanEntry {
                year,
                variant: Variant::Inclusive { row, col },
            });
        }
        for &(row, col) in &positions {
            canonical.push(PlanEntry {
                year,
                variant: Variant::Occlusive { row, col },
            });
        }
    }
    let permutation = seeded_permutation(canonical.len(), seed);
    let entries = permutation.iter().map(|&i| canonical[i].clone()).collect();
    Ok(AugmentPlan {
        seed,
        spec: *spec,
        grid,
        positions,
        permutation,
        entries,
    })
}

/// Shuffled plan over original samples only (no windows).
pub fn plan_originals(years: &[i32], grid: (usize, usize), role: SplitRole, seed: u64) -> Result<AugmentPlan> {
    if role != SplitRole::Train {
        return Err(Error::Protocol(format!("training plan over a {role:?} set")));
    }
    if years.is_empty() {
        return Err(Error::Config("no training years".into()));
    }
    let permutation = seeded_permutation(years.len(), seed);
    let entries = permutation
        .iter()
        .map(|&i| PlanEntry {
            year: years[i],
            variant: Variant::Original,
        })
        .collect();
    Ok(AugmentPlan {
        seed,
        spec: WindowSpec::default(),
        grid,
        positions: Vec::new(),
        permutation,
        entries,
    })
}

pub fn augment_dataset(train: &PredictorCube, spec: &WindowSpec, seed: u64) -> Result<AugmentPlan> {
    plan_augmentation(&train.years, train.grid(), train.role, spec, seed)
}
