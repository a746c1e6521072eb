use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::cube::TargetGrid;
use crate::error::{Error, Result};

/// Static set of valid (non-NaN) target cells, enumerated row-major
/// (latitude-major).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidMask {
    pub lat: usize,
    pub lon: usize,
    /// Flat row-major indices of valid cells, ascending.
    pub indices: Vec<usize>,
}

impl ValidMask {
    pub fn from_grid(grid: ArrayView2<f32>) -> Result<Self> {
        let (lat, lon) = grid.dim();
        let indices: Vec<usize> = grid
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_nan())
            .map(|(i, _)| i)
            .collect();
        if indices.is_empty() {
            return Err(Error::Data("target grid has no valid cells".into()));
        }
        Ok(ValidMask { lat, lon, indices })
    }

    pub fn count(&self) -> usize {
        self.indices.len()
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.indices.binary_search(&(row * self.lon + col)).is_ok()
    }

    pub fn to_bool_grid(&self) -> Array2<bool> {
        let mut g = Array2::from_elem((self.lat, self.lon), false);
        let flat = g.as_slice_mut().expect("standard layout");
        for &i in &self.indices {
            flat[i] = true;
        }
        g
    }
}

/// Mask from year 0; every other year must share the same NaN pattern.
pub fn build_valid_mask(target: &TargetGrid) -> Result<ValidMask> {
    let mask = ValidMask::from_grid(target.values.index_axis(ndarray::Axis(0), 0))?;
    let valid = mask.to_bool_grid();
    let mut offending = Vec::new();
    for (yi, year) in target.values.outer_iter().enumerate().skip(1) {
        for (cell, (v, ok)) in year.iter().zip(valid.iter()).enumerate() {
            if v.is_nan() == *ok {
                offending.push((target.years[yi], cell));
            }
        }
    }
    if !offending.is_empty() {
        let shown: Vec<String> = offending
            .iter()
            .take(10)
            .map(|(y, c)| format!("({y}, {c})"))
            .collect();
        return Err(Error::Data(format!(
            "NaN pattern differs from year {} at {} (year, cell) pairs: {}{}",
            target.years[0],
            offending.len(),
            shown.join(", "),
            if offending.len() > 10 { ", ..." } else { "" }
        )));
    }
    Ok(mask)
}

/// One year's rainfall at the valid cells, in mask order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetVector {
    pub year: i32,
    pub values: Vec<f32>,
}

pub fn flatten_target(grid: ArrayView2<f32>, mask: &ValidMask) -> Result<Vec<f32>> {
    if grid.dim() != (mask.lat, mask.lon) {
        return Err(Error::Shape(format!(
            "grid {:?} does not match mask ({}, {})",
            grid.dim(),
            mask.lat,
            mask.lon
        )));
    }
    let flat: Vec<f32> = grid.iter().copied().collect();
    mask.indices
        .iter()
        .map(|&i| {
            let v = flat[i];
            if v.is_nan() {
                Err(Error::Data(format!("NaN at valid cell {i}")))
            } else {
                Ok(v)
            }
        })
        .collect()
}

pub fn reverse_map(values: &[f32], mask: &ValidMask) -> Result<Array2<f32>> {
    if values.len() != mask.count() {
        return Err(Error::Shape(format!(
            "vector has {} entries, mask has {} valid cells",
            values.len(),
            mask.count()
        )));
    }
    let mut grid = Array2::from_elem((mask.lat, mask.lon), f32::NAN);
    let flat = grid.as_slice_mut().expect("standard layout");
    for (&i, &v) in mask.indices.iter().zip(values) {
        flat[i] = v;
    }
    Ok(grid)
}
