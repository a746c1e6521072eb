//! Side-by-side truth/prediction rasters as binary PPM (P6).
//!
//! Both panels share one color scale anchored to the truth's finite range;
//! predictions outside it are clamped. NaN cells are drawn in gray and the
//! two panels are separated by a white gutter. Grid row 0 is the top image
//! row.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::ArrayView2;

use crate::error::{Error, Result};

pub type Rgb = [u8; 3];

pub const NAN_COLOR: Rgb = [128, 128, 128];
pub const GUTTER_COLOR: Rgb = [255, 255, 255];

/// Light yellow → green → blue → dark purple.
const PALETTE: [Rgb; 5] = [[255, 255, 204], [161, 218, 180], [65, 182, 196], [34, 94, 168], [37, 52, 148]];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorScale {
    pub min: f64,
    pub max: f64,
}

impl ColorScale {
    /// Position of `v` in `[0, 1]`; a degenerate range maps to 0.
    pub fn position(&self, v: f64) -> f64 {
        if self.max > self.min {
            ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    pub fn color(&self, v: f32) -> Rgb {
        if v.is_nan() {
            NAN_COLOR
        } else {
            colormap(self.position(v as f64))
        }
    }
}

/// Piecewise-linear interpolation through the palette.
pub fn colormap(t: f64) -> Rgb {
    let t = t.clamp(0.0, 1.0) * (PALETTE.len() - 1) as f64;
    let i = (t.floor() as usize).min(PALETTE.len() - 2);
    let f = t - i as f64;
    let (a, b) = (PALETTE[i], PALETTE[i + 1]);
    std::array::from_fn(|k| (a[k] as f64 + f * (b[k] as f64 - a[k] as f64)).round() as u8)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb>,
}

impl Raster {
    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().flatten());
        out
    }
}

/// One panel, each grid cell drawn as a `cell_px × cell_px` square.
pub fn panel(field: ArrayView2<f32>, scale: &ColorScale, cell_px: usize) -> Raster {
    let (h, w) = field.dim();
    let (width, height) = (w * cell_px, h * cell_px);
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            pixels.push(scale.color(field[[y / cell_px, x / cell_px]]));
        }
    }
    Raster { width, height, pixels }
}

fn truth_scale(truth: ArrayView2<f32>) -> Result<ColorScale> {
    let (min, max) = truth
        .iter()
        .filter(|v| !v.is_nan())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v as f64), hi.max(*v as f64)));
    if min > max {
        return Err(Error::Data("truth field has no finite cells".into()));
    }
    Ok(ColorScale { min, max })
}

/// Truth panel, a gutter of `cell_px` columns, prediction panel.
pub fn render_pair(truth: ArrayView2<f32>, pred: ArrayView2<f32>, cell_px: usize) -> Result<(Raster, ColorScale)> {
    if cell_px == 0 {
        return Err(Error::Config("cell size must be >= 1 pixel".into()));
    }
    if truth.dim() != pred.dim() {
        return Err(Error::Shape(format!("truth {:?} vs prediction {:?}", truth.dim(), pred.dim())));
    }
    if let Some(((r, c), _)) = truth
        .indexed_iter()
        .find(|((r, c), t)| t.is_nan() != pred[[*r, *c]].is_nan())
    {
        return Err(Error::Data(format!("NaN pattern of prediction differs from truth at ({r}, {c})")));
    }
    let scale = truth_scale(truth)?;
    let (a, b) = (panel(truth, &scale, cell_px), panel(pred, &scale, cell_px));
    let width = a.width + cell_px + b.width;
    let mut pixels = Vec::with_capacity(width * a.height);
    for y in 0..a.height {
        pixels.extend_from_slice(&a.pixels[y * a.width..(y + 1) * a.width]);
        pixels.extend(std::iter::repeat_n(GUTTER_COLOR, cell_px));
        pixels.extend_from_slice(&b.pixels[y * b.width..(y + 1) * b.width]);
    }
    Ok((
        Raster {
            width,
            height: a.height,
            pixels,
        },
        scale,
    ))
}

pub fn scale_sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".scale.txt");
    PathBuf::from(s)
}

/// Write the PPM to `path` and the color scale to `<path>.scale.txt`.
pub fn render_map(truth: ArrayView2<f32>, pred: ArrayView2<f32>, path: &Path, cell_px: usize) -> Result<ColorScale> {
    let (raster, scale) = render_pair(truth, pred, cell_px)?;
    std::fs::write(path, raster.to_ppm()).map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    let _ = writeln!(text, "left: truth, right: prediction");
    let _ = writeln!(text, "min {}", scale.min);
    let _ = writeln!(text, "max {}", scale.max);
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let [r, g, b] = colormap(t);
        let _ = writeln!(text, "{:.4} #{r:02x}{g:02x}{b:02x}", scale.min + t * (scale.max - scale.min));
    }
    let [r, g, b] = NAN_COLOR;
    let _ = writeln!(text, "nan #{r:02x}{g:02x}{b:02x}");
    let side = scale_sidecar_path(path);
    std::fs::write(&side, text).map_err(|e| Error::io(&side, e))?;
    Ok(scale)
}
