//! CSV grids and 8-bit PGM images.
//!
//! A grid is written with one line per x index and one column per y index, so
//! the PGM image has height `n_x` and width `n_y`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::{write_atomic, Grid, ParamMap};

/// File stems written by [`export_param_maps`].
pub const EXPORTED_LAYERS: [&str; 5] = ["amplitude", "width", "depth", "phase", "intensity"];

pub fn write_grid_csv(path: impl AsRef<Path>, grid: &Grid) -> Result<()> {
    let mut s = String::with_capacity(grid.values.len() * 20);
    for x in 0..grid.nx {
        for y in 0..grid.ny {
            if y > 0 {
                s.push(',');
            }
            // `{}` on f64 is the shortest round-trip representation
            write!(s, "{}", grid.at(x, y)).unwrap();
        }
        s.push('\n');
    }
    write_atomic(path.as_ref(), s.as_bytes())
}

pub fn read_grid_csv(path: impl AsRef<Path>) -> Result<Grid> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    let mut ny = None;
    let mut nx = 0;
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_owned(),
                line: line_no + 1,
                msg: e.to_string(),
            })?;
        match ny {
            None => ny = Some(row.len()),
            Some(n) if n != row.len() => {
                return Err(Error::Parse {
                    path: path.to_owned(),
                    line: line_no + 1,
                    msg: format!("expected {n} columns, found {}", row.len()),
                })
            }
            _ => {}
        }
        values.extend(row);
        nx += 1;
    }
    Grid::new(nx, ny.unwrap_or(0), values)
}

/// Writes a binary P5 image, min/max normalized; constant grids become mid gray.
pub fn write_pgm(path: impl AsRef<Path>, grid: &Grid) -> Result<()> {
    let (lo, hi) = grid
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let mut out = format!("P5\n{} {}\n255\n", grid.ny, grid.nx).into_bytes();
    out.extend(grid.values.iter().map(|&v| {
        if hi > lo {
            ((v - lo) / (hi - lo) * 255.0).round() as u8
        } else {
            128
        }
    }));
    write_atomic(path.as_ref(), &out)
}

/// Reads a binary P5 image with `maxval ≤ 255` into a grid of raw pixel values.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Grid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Parse {
        path: path.to_owned(),
        line: 1,
        msg: msg.to_owned(),
    };
    // header: magic, width, height, maxval separated by whitespace, comments allowed
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields
            .push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit PGM is supported"));
    }
    pos += 1;
    let pixels = bytes
        .get(pos..pos + width * height)
        .ok_or_else(|| bad("truncated pixel data"))?;
    Grid::new(height, width, pixels.iter().map(|&b| b as f64).collect())
}

/// Writes CSV and PGM files for ê, σ, μ, φ and intensity ê² into `dir`.
pub fn export_param_maps(pm: &ParamMap, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let grids = [
        pm.layer(0),
        pm.layer(1),
        pm.layer(2),
        pm.layer(3),
        pm.intensity(),
    ];
    let mut written = Vec::with_capacity(10);
    for (name, grid) in EXPORTED_LAYERS.iter().zip(&grids) {
        let csv = dir.join(format!("{name}.csv"));
        let pgm = dir.join(format!("{name}.pgm"));
        write_grid_csv(&csv, grid)?;
        write_pgm(&pgm, grid)?;
        written.push(csv);
        written.push(pgm);
    }
    Ok(written)
}
