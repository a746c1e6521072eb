use std::path::Path;

use ndarray::{Array3, Array5, ArrayD, Axis, Ix3, Ix4, Ix5};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::gtf::{read_gtf_with_manifest, write_gtf_with_manifest, AxisMeta, GtfManifest};
use crate::error::{Error, Result};

pub const FORTNIGHTS: usize = 11;

/// Predictor channel inventory, in storage order: five pressure-level
/// variables at 850/700/500/200 hPa, then five single-level fields.
pub const PREDICTOR_CHANNELS: [&str; 25] = [
    "z850", "z700", "z500", "z200", //
    "q850", "q700", "q500", "q200", //
    "t850", "t700", "t500", "t200", //
    "u850", "u700", "u500", "u200", //
    "v850", "v700", "v500", "v200", //
    "sst", "msl", "t2m", "tcwv", "tp",
];

/// Six-channel subset used by desk-scale runs.
pub const MICRO_CHANNELS: [&str; 6] = ["z500", "q850", "t850", "u850", "sst", "msl"];

pub const SST_CHANNEL: &str = "sst";

/// SHA-256 over newline-joined channel names. Any reordering changes it.
pub fn channel_manifest_hash(channels: &[String]) -> String {
    let mut h = Sha256::new();
    h.update(channels.join("\n").as_bytes());
    hex::encode(h.finalize())
}

/// Channels must be an ordered subsequence of [`PREDICTOR_CHANNELS`].
pub fn validate_channels(channels: &[String]) -> Result<()> {
    if channels.is_empty() {
        return Err(Error::Data("predictor cube has no channels".into()));
    }
    let mut cursor = 0;
    for name in channels {
        match PREDICTOR_CHANNELS[cursor..].iter().position(|c| c == name) {
            Some(p) => cursor += p + 1,
            None => {
                return Err(Error::Data(format!(
                    "channel `{name}` is unknown or out of inventory order"
                )))
            }
        }
    }
    Ok(())
}

pub fn channel_list(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Which side of the year split a dataset belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    All,
    Train,
    Test,
}

/// Pipeline stage of a predictor cube. Stages only move forward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Raw,
    Normalized,
    Imputed,
    Downsampled,
}

/// Predictors for a set of years: `(years, 11, lat, lon, channels)`.
#[derive(Clone, Debug)]
pub struct PredictorCube {
    pub values: Array5<f32>,
    pub years: Vec<i32>,
    pub lat: Vec<f64>,
    pub lon: Vec<f64>,
    pub channels: Vec<String>,
    pub role: SplitRole,
    pub stage: Stage,
}

impl PredictorCube {
    pub fn new(
        values: Array5<f32>,
        years: Vec<i32>,
        lat: Vec<f64>,
        lon: Vec<f64>,
        channels: Vec<String>,
    ) -> Result<Self> {
        let cube = PredictorCube {
            values,
            years,
            lat,
            lon,
            channels,
            role: SplitRole::All,
            stage: Stage::Raw,
        };
        cube.validate()?;
        Ok(cube)
    }

    pub fn validate(&self) -> Result<()> {
        let (y, f, h, w, c) = self.values.dim();
        if f != FORTNIGHTS {
            return Err(Error::Shape(format!("predictor cube has {f} fortnights, expected {FORTNIGHTS}")));
        }
        if y != self.years.len() || h != self.lat.len() || w != self.lon.len() || c != self.channels.len() {
            return Err(Error::Shape(format!(
                "predictor values {:?} disagree with metadata (years {}, lat {}, lon {}, channels {})",
                self.values.dim(),
                self.years.len(),
                self.lat.len(),
                self.lon.len(),
                self.channels.len()
            )));
        }
        validate_channels(&self.channels)
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.lat.len(), self.lon.len())
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    /// Years at the given positions, keeping order.
    pub fn select_years(&self, keep: &[i32]) -> Result<Self> {
        let idx = year_indices(&self.years, keep)?;
        Ok(PredictorCube {
            values: self.values.select(Axis(0), &idx),
            years: keep.to_vec(),
            lat: self.lat.clone(),
            lon: self.lon.clone(),
            channels: self.channels.clone(),
            role: self.role,
            stage: self.stage,
        })
    }

    fn manifest(&self) -> GtfManifest {
        let mut attrs = serde_json::Map::new();
        attrs.insert("role".into(), serde_json::to_value(self.role).expect("enum serializes"));
        attrs.insert("stage".into(), serde_json::to_value(self.stage).expect("enum serializes"));
        GtfManifest {
            axes: vec![
                AxisMeta {
                    labels: Some(self.years.iter().map(|y| y.to_string()).collect()),
                    ..AxisMeta::plain("year", 0)
                },
                AxisMeta::plain("fortnight", 0),
                AxisMeta {
                    coords: Some(self.lat.clone()),
                    ..AxisMeta::plain("lat", 0)
                },
                AxisMeta {
                    coords: Some(self.lon.clone()),
                    ..AxisMeta::plain("lon", 0)
                },
                AxisMeta {
                    labels: Some(self.channels.clone()),
                    ..AxisMeta::plain("channel", 0)
                },
            ],
            channels: Some(self.channels.clone()),
            channel_manifest_hash: Some(channel_manifest_hash(&self.channels)),
            payload_sha256: String::new(),
            attrs,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_gtf_with_manifest(path, &self.values.clone().into_dyn(), self.manifest())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (array, manifest) = read_gtf_with_manifest(path)?;
        let values = array
            .into_dimensionality::<Ix5>()
            .map_err(|_| Error::Shape(format!("{} is not a rank-5 predictor cube", path.display())))?;
        let channels = manifest
            .channels
            .clone()
            .ok_or_else(|| Error::Data("predictor sidecar lacks channel names".into()))?;
        if let Some(hash) = &manifest.channel_manifest_hash {
            if *hash != channel_manifest_hash(&channels) {
                return Err(Error::Data("channel manifest hash mismatch".into()));
            }
        }
        let years = parse_year_labels(&manifest.axes[0])?;
        let lat = manifest.axes[2].coords.clone().unwrap_or_default();
        let lon = manifest.axes[3].coords.clone().unwrap_or_default();
        let mut cube = PredictorCube::new(values, years, lat, lon, channels)?;
        cube.role = attr(&manifest, "role").unwrap_or(SplitRole::All);
        cube.stage = attr(&manifest, "stage").unwrap_or(Stage::Raw);
        Ok(cube)
    }
}

fn attr<T: serde::de::DeserializeOwned>(m: &GtfManifest, key: &str) -> Option<T> {
    m.attrs.get(key).and_then(|v| serde_json::from_value(v.clone()).ok())
}

fn parse_year_labels(axis: &AxisMeta) -> Result<Vec<i32>> {
    axis.labels
        .as_ref()
        .ok_or_else(|| Error::Data("year axis has no labels".into()))?
        .iter()
        .map(|s| s.parse().map_err(|_| Error::Data(format!("bad year label `{s}`"))))
        .collect()
}

pub(crate) fn year_indices(years: &[i32], keep: &[i32]) -> Result<Vec<usize>> {
    keep.iter()
        .map(|y| {
            years
                .iter()
                .position(|v| v == y)
                .ok_or_else(|| Error::Data(format!("year {y} not present")))
        })
        .collect()
}

/// Rainfall grids `(years, lat, lon)` with NaN outside the landmass.
#[derive(Clone, Debug)]
pub struct TargetGrid {
    pub name: String,
    pub values: Array3<f32>,
    pub years: Vec<i32>,
    pub lat: Vec<f64>,
    pub lon: Vec<f64>,
}

impl TargetGrid {
    pub fn new(name: &str, values: Array3<f32>, years: Vec<i32>, lat: Vec<f64>, lon: Vec<f64>) -> Result<Self> {
        let (y, h, w) = values.dim();
        if y == 0 || y != years.len() || h != lat.len() || w != lon.len() {
            return Err(Error::Shape(format!(
                "target values {:?} disagree with metadata (years {}, lat {}, lon {})",
                values.dim(),
                years.len(),
                lat.len(),
                lon.len()
            )));
        }
        Ok(TargetGrid {
            name: name.into(),
            values,
            years,
            lat,
            lon,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (y, h, w) = self.values.dim();
        let values: ArrayD<f32> = self
            .values
            .clone()
            .into_shape_with_order((y, h, w, 1))
            .expect("adding a unit axis")
            .into_dyn();
        let mut attrs = serde_json::Map::new();
        attrs.insert("target".into(), self.name.clone().into());
        let manifest = GtfManifest {
            axes: vec![
                AxisMeta {
                    labels: Some(self.years.iter().map(|y| y.to_string()).collect()),
                    ..AxisMeta::plain("year", 0)
                },
                AxisMeta {
                    coords: Some(self.lat.clone()),
                    ..AxisMeta::plain("lat", 0)
                },
                AxisMeta {
                    coords: Some(self.lon.clone()),
                    ..AxisMeta::plain("lon", 0)
                },
                AxisMeta::plain("channel", 0),
            ],
            attrs,
            ..Default::default()
        };
        write_gtf_with_manifest(path, &values, manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (array, manifest) = read_gtf_with_manifest(path)?;
        let values = match array.ndim() {
            4 => array
                .into_dimensionality::<Ix4>()
                .expect("rank checked")
                .index_axis_move(Axis(3), 0),
            3 => array.into_dimensionality::<Ix3>().expect("rank checked"),
            r => return Err(Error::Shape(format!("target grid must have rank 3 or 4, got {r}"))),
        };
        let name = attr::<String>(&manifest, "target").unwrap_or_default();
        let years = parse_year_labels(&manifest.axes[0])?;
        let lat = manifest.axes[1].coords.clone().unwrap_or_else(|| (0..values.dim().1).map(|i| i as f64).collect());
        let lon = manifest.axes[2].coords.clone().unwrap_or_else(|| (0..values.dim().2).map(|i| i as f64).collect());
        TargetGrid::new(&name, values, years, lat, lon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inventory_has_twenty_five_unique_channels() {
        let mut names = PREDICTOR_CHANNELS.to_vec();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), 25);
        validate_channels(&channel_list(&PREDICTOR_CHANNELS)).unwrap();
        validate_channels(&channel_list(&MICRO_CHANNELS)).unwrap();
    }

    #[test]
    fn reordered_channels_are_rejected_and_change_the_hash() {
        let mut names = channel_list(&PREDICTOR_CHANNELS);
        let h = channel_manifest_hash(&names);
        names.swap(0, 1);
        assert!(validate_channels(&names).is_err());
        assert_ne!(h, channel_manifest_hash(&names));
    }

    #[test]
    fn cube_requires_eleven_fortnights() {
        let r = PredictorCube::new(
            Array5::zeros((1, 10, 2, 2, 1)),
            vec![2000],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
            channel_list(&["sst"]),
        );
        assert!(matches!(r, Err(Error::Shape(_))));
    }
}
