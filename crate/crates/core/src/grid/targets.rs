use std::path::Path;

use ndarray::{Array2, ArrayD, Axis, Ix2};

use super::cube::{year_indices, SplitRole, TargetGrid};
use super::gtf::{read_gtf_with_manifest, write_gtf_with_manifest, AxisMeta, GtfManifest};
use super::mask::{build_valid_mask, flatten_target, reverse_map, TargetVector, ValidMask};
use crate::error::{Error, Result};

/// Flattened targets of one forecasting task: `(years, valid cells)`.
#[derive(Clone, Debug)]
pub struct TargetSet {
    pub name: String,
    pub years: Vec<i32>,
    pub values: Array2<f32>,
    pub mask: ValidMask,
    pub role: SplitRole,
    /// Values are min-max scaled with training-set parameters.
    pub normalized: bool,
}

impl TargetSet {
    pub fn from_grid(grid: &TargetGrid) -> Result<Self> {
        let mask = build_valid_mask(grid)?;
        Self::from_grid_with_mask(grid, mask)
    }

    pub fn from_grid_with_mask(grid: &TargetGrid, mask: ValidMask) -> Result<Self> {
        let mut values = Array2::zeros((grid.years.len(), mask.count()));
        for (mut row, year) in values.outer_iter_mut().zip(grid.values.outer_iter()) {
            let v = flatten_target(year, &mask)?;
            row.assign(&ndarray::ArrayView1::from(&v));
        }
        Ok(TargetSet {
            name: grid.name.clone(),
            years: grid.years.clone(),
            values,
            mask,
            role: SplitRole::All,
            normalized: false,
        })
    }

    pub fn cells(&self) -> usize {
        self.mask.count()
    }

    pub fn vector(&self, year: i32) -> Result<TargetVector> {
        let i = year_indices(&self.years, &[year])?[0];
        Ok(TargetVector {
            year,
            values: self.values.row(i).to_vec(),
        })
    }

    pub fn grid(&self, year: i32) -> Result<Array2<f32>> {
        reverse_map(&self.vector(year)?.values, &self.mask)
    }

    pub fn select_years(&self, keep: &[i32]) -> Result<Self> {
        let idx = year_indices(&self.years, keep)?;
        Ok(TargetSet {
            name: self.name.clone(),
            years: keep.to_vec(),
            values: self.values.select(Axis(0), &idx),
            mask: self.mask.clone(),
            role: self.role,
            normalized: self.normalized,
        })
    }

    /// Values to `path`, the mask (1.0 valid, NaN elsewhere) to `mask_path`.
    pub fn save(&self, path: &Path, mask_path: &Path) -> Result<()> {
        let mut attrs = serde_json::Map::new();
        attrs.insert("target".into(), self.name.clone().into());
        attrs.insert("role".into(), serde_json::to_value(self.role)?);
        attrs.insert("normalized".into(), self.normalized.into());
        let manifest = GtfManifest {
            axes: vec![
                AxisMeta {
                    labels: Some(self.years.iter().map(|y| y.to_string()).collect()),
                    ..AxisMeta::plain("year", 0)
                },
                AxisMeta::plain("cell", 0),
            ],
            attrs,
            ..Default::default()
        };
        write_gtf_with_manifest(path, &self.values.clone().into_dyn(), manifest)?;
        let mask_grid = reverse_map(&vec![1.0; self.cells()], &self.mask)?;
        let mask_manifest = GtfManifest {
            axes: vec![AxisMeta::plain("lat", 0), AxisMeta::plain("lon", 0)],
            ..Default::default()
        };
        write_gtf_with_manifest(mask_path, &mask_grid.into_dyn(), mask_manifest)
    }

    pub fn load(path: &Path, mask_path: &Path) -> Result<Self> {
        let (array, manifest) = read_gtf_with_manifest(path)?;
        let values = array
            .into_dimensionality::<Ix2>()
            .map_err(|_| Error::Shape(format!("{} is not a (years, cells) table", path.display())))?;
        let (mask_arr, _): (ArrayD<f32>, _) = read_gtf_with_manifest(mask_path)?;
        let mask_grid = mask_arr
            .into_dimensionality::<Ix2>()
            .map_err(|_| Error::Shape("mask must be rank 2".into()))?;
        let mask = ValidMask::from_grid(mask_grid.view())?;
        if mask.count() != values.ncols() {
            return Err(Error::Shape(format!(
                "mask has {} cells but target table has {} columns",
                mask.count(),
                values.ncols()
            )));
        }
        let years = manifest.axes[0]
            .labels
            .as_ref()
            .ok_or_else(|| Error::Data("target table has no year labels".into()))?
            .iter()
            .map(|s| s.parse().map_err(|_| Error::Data(format!("bad year label `{s}`"))))
            .collect::<Result<Vec<i32>>>()?;
        let get = |k: &str| manifest.attrs.get(k).cloned();
        Ok(TargetSet {
            name: get("target").and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            years,
            values,
            mask,
            role: get("role").and_then(|v| serde_json::from_value(v).ok()).unwrap_or(SplitRole::All),
            normalized: get("normalized").and_then(|v| v.as_bool()).unwrap_or(false),
        })
    }
}
