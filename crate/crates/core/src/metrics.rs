//! Per-sample regression metrics over valid target cells, averaged across
//! samples.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::NormParams;

pub const SNMAE_EPS: f64 = 1e-8;

fn check_pair(y: &[impl Copy], yhat: &[impl Copy]) -> Result<usize> {
    if y.len() != yhat.len() {
        return Err(Error::Shape(format!("target has {} cells, prediction {}", y.len(), yhat.len())));
    }
    if y.is_empty() {
        return Err(Error::Domain("metric over zero cells".into()));
    }
    Ok(y.len())
}

pub fn metric_mse<T: Copy + Into<f64>>(y: &[T], yhat: &[T]) -> Result<f64> {
    let n = check_pair(y, yhat)?;
    let s: f64 = y
        .iter()
        .zip(yhat)
        .map(|(a, b)| {
            let d = (*a).into() - (*b).into();
            d * d
        })
        .sum();
    Ok(s / n as f64)
}

pub fn metric_mae<T: Copy + Into<f64>>(y: &[T], yhat: &[T]) -> Result<f64> {
    let n = check_pair(y, yhat)?;
    let s: f64 = y.iter().zip(yhat).map(|(a, b)| ((*a).into() - (*b).into()).abs()).sum();
    Ok(s / n as f64)
}

/// MAE divided by the sample's mean target plus `eps`.
pub fn metric_snmae<T: Copy + Into<f64>>(y: &[T], yhat: &[T], eps: f64) -> Result<f64> {
    let mae = metric_mae(y, yhat)?;
    let mean = y.iter().map(|v| (*v).into()).sum::<f64>() / y.len() as f64;
    Ok(mae / (mean + eps))
}

/// `mae_norm × (max − min)` for a single-target parameter set.
pub fn mae_to_physical(mae_norm: f64, params: &NormParams) -> Result<f64> {
    match params.channels.as_slice() {
        [c] => Ok(mae_norm * (c.max - c.min)),
        other => Err(Error::Config(format!(
            "target normalization must cover exactly one field, got {}",
            other.len()
        ))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub year: i32,
    pub mse: f64,
    pub mae: f64,
    pub snmae: f64,
    pub mae_mm_per_day: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mse: f64,
    pub mae: f64,
    pub snmae: f64,
    pub mae_mm_per_day: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub target: String,
    pub samples: Vec<SampleMetrics>,
    pub mean: Aggregate,
}

impl MetricsReport {
    /// Metrics for each `(year, truth, prediction)` in normalized space,
    /// with the physical MAE derived from `norm`.
    pub fn from_samples<'a, I>(target: &str, samples: I, norm: &NormParams) -> Result<Self>
    where
        I: IntoIterator<Item = (i32, &'a [f32], &'a [f32])>,
    {
        let mut out = Vec::new();
        for (year, y, yhat) in samples {
            let mse = metric_mse(y, yhat)?;
            let mae = metric_mae(y, yhat)?;
            if mae * mae > mse * (1.0 + 1e-12) + f64::MIN_POSITIVE {
                return Err(Error::Oracle(format!("year {year}: MAE² {} exceeds MSE {mse}", mae * mae)));
            }
            out.push(SampleMetrics {
                year,
                mse,
                mae,
                snmae: metric_snmae(y, yhat, SNMAE_EPS)?,
                mae_mm_per_day: mae_to_physical(mae, norm)?,
            });
        }
        if out.is_empty() {
            return Err(Error::Domain("metrics report over zero samples".into()));
        }
        let n = out.len() as f64;
        let avg = |f: fn(&SampleMetrics) -> f64| out.iter().map(f).sum::<f64>() / n;
        let mean = Aggregate {
            mse: avg(|s| s.mse),
            mae: avg(|s| s.mae),
            snmae: avg(|s| s.snmae),
            mae_mm_per_day: avg(|s| s.mae_mm_per_day),
        };
        Ok(MetricsReport {
            target: target.into(),
            samples: out,
            mean,
        })
    }

    /// One row per year followed by a `mean` row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["year", "mse", "mae", "snmae", "mae_mm_per_day"])?;
        for s in &self.samples {
            w.serialize((s.year, s.mse, s.mae, s.snmae, s.mae_mm_per_day))?;
        }
        let m = &self.mean;
        w.serialize(("mean", m.mse, m.mae, m.snmae, m.mae_mm_per_day))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_values() {
        assert_eq!(metric_mse(&[0.0, 1.0], &[0.0, 0.0]).unwrap(), 0.5);
        assert_eq!(metric_mae(&[0.0, 1.0], &[0.0, 0.0]).unwrap(), 0.5);
        let s = metric_snmae(&[2.0, 2.0], &[1.0, 3.0], SNMAE_EPS).unwrap();
        assert!((s - 0.4999999975).abs() < 1e-10);
        assert_eq!(s, 1.0 / (2.0 + SNMAE_EPS));
    }

    #[test]
    fn zero_target_is_large_but_finite() {
        let s = metric_snmae(&[0.0f64; 3], &[0.1; 3], SNMAE_EPS).unwrap();
        assert!(s.is_finite() && s > 1e6);
    }

    #[test]
    fn empty_vectors_are_a_domain_error() {
        assert!(matches!(metric_mse::<f64>(&[], &[]), Err(Error::Domain(_))));
    }

    #[test]
    fn physical_mae_for_june() {
        let p = NormParams::published_target("june").unwrap();
        let mm = mae_to_physical(0.04563, &p).unwrap();
        assert!((mm - 2.648).abs() < 0.005);
    }
}
