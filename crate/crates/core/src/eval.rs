//! Region losses, method comparison, ground-truth errors and line profiles.

use std::f64::consts::PI;
use std::fmt::{self, Write as _};
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{read_grid_csv, read_pgm, write_atomic, Grid, ParamMap, THzVolume};
use crate::error::{Error, Result};
use crate::model::{self, power_at};

/// A named boolean region of the scan.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub name: String,
    pub nx: usize,
    pub ny: usize,
    mask: Vec<bool>,
}

impl RegionMask {
    pub fn new(name: impl Into<String>, nx: usize, ny: usize, mask: Vec<bool>) -> Result<Self> {
        let name = name.into();
        if mask.len() != nx * ny {
            return Err(Error::DimensionMismatch(format!(
                "mask {name} has {} entries, expected {nx}x{ny}",
                mask.len()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::EmptyMask(name));
        }
        Ok(Self { name, nx, ny, mask })
    }

    pub fn all(nx: usize, ny: usize) -> Self {
        Self {
            name: "all".into(),
            nx,
            ny,
            mask: vec![true; nx * ny],
        }
    }

    /// Nonzero grid entries are inside the region.
    pub fn from_grid(name: impl Into<String>, grid: &Grid) -> Result<Self> {
        Self::new(
            name,
            grid.nx,
            grid.ny,
            grid.values.iter().map(|&v| v != 0.0).collect(),
        )
    }

    /// Reads a `.pgm` or `.csv` mask; the region is named after the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let grid = match path.extension().and_then(|e| e.to_str()) {
            Some("pgm") => read_pgm(path)?,
            _ => read_grid_csv(path)?,
        };
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::from_grid(name, &grid)
    }

    /// Pixels with `x < x_split` and the rest.
    pub fn split_x(nx: usize, ny: usize, x_split: usize) -> Result<(Self, Self)> {
        let left: Vec<bool> = (0..nx * ny).map(|i| i / ny < x_split).collect();
        let right = left.iter().map(|&m| !m).collect();
        Ok((
            Self::new("left", nx, ny, left)?,
            Self::new("right", nx, ny, right)?,
        ))
    }

    pub fn contains(&self, i: usize) -> bool {
        self.mask[i]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn as_grid(&self) -> Grid {
        Grid {
            nx: self.nx,
            ny: self.ny,
            values: self
                .mask
                .iter()
                .map(|&m| if m { 1.0 } else { 0.0 })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "tra")]
    Tra,
    #[serde(rename = "ae")]
    Ae,
    #[serde(rename = "ae+tra")]
    AeTra,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Tra => "TRA",
            Method::Ae => "AE",
            Method::AeTra => "AE+TRA",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tra" => Ok(Method::Tra),
            "ae" => Ok(Method::Ae),
            "ae+tra" | "aetra" | "hybrid" => Ok(Method::AeTra),
            other => Err(Error::InvalidConfig(format!("unknown method {other:?}"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One method's parameter map on a volume with its compute time.
#[derive(Debug, Clone)]
pub struct MethodResult {
    pub method: Method,
    pub param_map: ParamMap,
    pub wall_time: f64,
    pub per_pixel_loss: Grid,
}

impl MethodResult {
    pub fn new(method: Method, param_map: ParamMap, wall_time: f64, v: &THzVolume) -> Result<Self> {
        let per_pixel_loss = per_pixel_losses(&param_map, v)?;
        Ok(Self {
            method,
            param_map,
            wall_time,
            per_pixel_loss,
        })
    }
}

fn check_dims(what: &str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!(
            "{what}: {}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}

pub fn per_pixel_losses(pm: &ParamMap, v: &THzVolume) -> Result<Grid> {
    check_dims(
        "parameter map vs volume",
        (pm.nx(), pm.ny()),
        (v.nx(), v.ny()),
    )?;
    let values = (0..v.n_pixels())
        .into_par_iter()
        .map(|i| model::pixel_loss(&pm.get(i), v.pixel(i), v.cfg()))
        .collect();
    Grid::new(v.nx(), v.ny(), values)
}

/// Arithmetic mean of the per-pixel losses inside the mask.
pub fn region_average_loss(losses: &Grid, mask: &RegionMask) -> Result<f64> {
    check_dims(
        "loss grid vs mask",
        (losses.nx, losses.ny),
        (mask.nx, mask.ny),
    )?;
    let (sum, n) = losses
        .values
        .iter()
        .zip(&mask.mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (&l, _)| (s + l, n + 1));
    if n == 0 {
        return Err(Error::EmptyMask(mask.name.clone()));
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: Method,
    /// Average loss per region, in [`Report::regions`] order.
    pub losses: Vec<f64>,
    pub wall_time: f64,
    /// `time(TRA) / time(method)`, when a TRA result is present.
    pub speedup_vs_tra: Option<f64>,
}

/// Region-by-method loss table with timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub loss_definition: String,
    pub regions: Vec<String>,
    pub region_pixels: Vec<usize>,
    pub rows: Vec<MethodRow>,
}

const LOSS_DEFINITION: &str =
    "average loss = arithmetic mean of per-pixel squared residual over the region";

pub fn compare_methods(results: &[MethodResult], masks: &[RegionMask]) -> Result<Report> {
    let tra_time = results
        .iter()
        .find(|r| r.method == Method::Tra)
        .map(|r| r.wall_time);
    let rows = results
        .iter()
        .map(|r| {
            let losses = masks
                .iter()
                .map(|m| region_average_loss(&r.per_pixel_loss, m))
                .collect::<Result<Vec<_>>>()?;
            Ok(MethodRow {
                method: r.method,
                losses,
                wall_time: r.wall_time,
                speedup_vs_tra: tra_time.map(|t| t / r.wall_time),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Report {
        loss_definition: LOSS_DEFINITION.into(),
        regions: masks.iter().map(|m| m.name.clone()).collect(),
        region_pixels: masks.iter().map(RegionMask::count).collect(),
        rows,
    })
}

impl Report {
    pub fn loss(&self, method: Method, region: &str) -> Option<f64> {
        let k = self.regions.iter().position(|r| r == region)?;
        self.rows
            .iter()
            .find(|r| r.method == method)
            .map(|r| r.losses[k])
    }

    /// Aligned table: one column per method, one row per region, then run time.
    pub fn to_text(&self) -> String {
        let mut s = format!("# {}\n", self.loss_definition);
        let label_w = self
            .regions
            .iter()
            .map(|r| r.len())
            .chain(["Run time (sec.)".len(), "Speedup vs TRA".len()])
            .max()
            .unwrap_or(0);
        let col_w = 12;
        write!(s, "{:<label_w$}", "Average Loss").unwrap();
        for row in &self.rows {
            write!(s, " {:>col_w$}", row.method.label()).unwrap();
        }
        s.push('\n');
        for (k, region) in self.regions.iter().enumerate() {
            write!(s, "{region:<label_w$}").unwrap();
            for row in &self.rows {
                write!(s, " {:>col_w$.4}", row.losses[k]).unwrap();
            }
            s.push('\n');
        }
        write!(s, "{:<label_w$}", "Run time (sec.)").unwrap();
        for row in &self.rows {
            write!(s, " {:>col_w$.4}", row.wall_time).unwrap();
        }
        s.push('\n');
        if self.rows.iter().any(|r| r.speedup_vs_tra.is_some()) {
            write!(s, "{:<label_w$}", "Speedup vs TRA").unwrap();
            for row in &self.rows {
                match row.speedup_vs_tra {
                    Some(x) => write!(s, " {:>col_w$.2}", x).unwrap(),
                    None => write!(s, " {:>col_w$}", "-").unwrap(),
                }
            }
            s.push('\n');
        }
        s
    }

    /// `method,region,pixels,average_loss,wall_time,speedup_vs_tra`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,region,pixels,average_loss,wall_time,speedup_vs_tra\n");
        for row in &self.rows {
            for (k, region) in self.regions.iter().enumerate() {
                let speedup = row
                    .speedup_vs_tra
                    .map(|x| x.to_string())
                    .unwrap_or_default();
                writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    row.method.label(),
                    region,
                    self.region_pixels[k],
                    row.losses[k],
                    row.wall_time,
                    speedup
                )
                .unwrap();
            }
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Difference `a − b` reduced to `(−π, π]`.
pub fn wrapped_phase_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    if d > PI {
        d - 2.0 * PI
    } else {
        d
    }
}

/// Mean absolute error and RMSE per parameter, in `[ê, σ, μ, φ]` order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamErrors {
    pub mae: [f64; 4],
    pub rmse: [f64; 4],
}

pub fn param_errors(pm: &ParamMap, truth: &ParamMap) -> Result<ParamErrors> {
    check_dims(
        "parameter map vs truth",
        (pm.nx(), pm.ny()),
        (truth.nx(), truth.ny()),
    )?;
    let mut abs = [0.0; 4];
    let mut sq = [0.0; 4];
    for (a, b) in pm.pixels().zip(truth.pixels()) {
        let (a, b) = (a.to_array(), b.to_array());
        for k in 0..4 {
            let d = if k == 3 {
                wrapped_phase_diff(a[k], b[k])
            } else {
                a[k] - b[k]
            };
            abs[k] += d.abs();
            sq[k] += d * d;
        }
    }
    let n = pm.n_pixels() as f64;
    Ok(ParamErrors {
        mae: abs.map(|v| v / n),
        rmse: sq.map(|v| (v / n).sqrt()),
    })
}

/// Values `grid(x, row)` for `x` in `cols`.
pub fn line_profile(grid: &Grid, row: usize, cols: Range<usize>) -> Result<Vec<f64>> {
    if row >= grid.ny || cols.start > cols.end || cols.end > grid.nx {
        return Err(Error::OutOfRange(format!(
            "row {row}, columns {}..{} in a {}x{} grid",
            cols.start, cols.end, grid.nx, grid.ny
        )));
    }
    Ok(cols.map(|x| grid.at(x, row)).collect())
}

/// `position,value`, positions counted from `start`.
pub fn write_profile_csv(path: impl AsRef<Path>, start: usize, profile: &[f64]) -> Result<()> {
    let mut s = String::from("position,value\n");
    for (i, v) in profile.iter().enumerate() {
        writeln!(s, "{},{}", start + i, v).unwrap();
    }
    write_atomic(path.as_ref(), s.as_bytes())
}

/// Largest `|g(z)|²` of each pixel, the intensity read directly off the data.
pub fn raw_peak_intensity(v: &THzVolume) -> Grid {
    let values = (0..v.n_pixels())
        .map(|i| {
            let g = v.pixel(i);
            (0..g.len() / 2).map(|k| power_at(g, k)).fold(0.0, f64::max)
        })
        .collect();
    Grid {
        nx: v.nx(),
        ny: v.ny(),
        values,
    }
}

/// Population variance.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}
