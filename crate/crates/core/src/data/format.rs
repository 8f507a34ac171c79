//! Binary volume and parameter-map files.
//!
//! Volume layout, all little-endian:
//!
//! ```text
//! [8]  magic "THZVOL\r\n"
//! u32  version (1)
//! u32  sample type (1 = f32, 2 = f64)
//! u64  n_x, u64 n_y, u64 n_z
//! f64  omega
//! f64  z_grid[n_z]
//! u64  provenance length, then that many UTF-8 bytes
//! ...  n_x·n_y·n_z·2 samples, x-major, then y, then z, then channel (re, im)
//! ```
//!
//! Parameter maps use magic `"THZPMAP\n"`, version u32, `n_x`, `n_y` as u64,
//! then `n_x·n_y·4` f64 values in `[ê, σ, μ, φ]` order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::AcquisitionConfig;

use super::{ParamMap, THzVolume};

pub const VOLUME_MAGIC: &[u8; 8] = b"THZVOL\r\n";
pub const PARAM_MAP_MAGIC: &[u8; 8] = b"THZPMAP\n";
pub const VOLUME_VERSION: u32 = 1;
const PARAM_MAP_VERSION: u32 = 1;

/// On-disk sample precision of a volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleType {
    F32,
    #[default]
    F64,
}

impl SampleType {
    fn code(self) -> u32 {
        match self {
            SampleType::F32 => 1,
            SampleType::F64 => 2,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            1 => Ok(SampleType::F32),
            2 => Ok(SampleType::F64),
            other => Err(Error::InvalidHeader(format!("unknown sample type {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            SampleType::F32 => 4,
            SampleType::F64 => 8,
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(Error::Truncated {
                expected: self.pos.saturating_add(n),
                found: self.buf.len(),
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::InvalidHeader(format!("{what} overflows")))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn rest(&self) -> &'a [u8] {
        &self.buf[self.pos..]
    }
}

/// Serializes a volume into bytes.
pub fn write_volume(v: &THzVolume, sample_type: SampleType) -> Vec<u8> {
    let cfg = v.cfg();
    let mut out = Vec::with_capacity(64 + 8 * cfg.n_z() + v.data().len() * sample_type.width());
    out.extend_from_slice(VOLUME_MAGIC);
    out.extend_from_slice(&VOLUME_VERSION.to_le_bytes());
    out.extend_from_slice(&sample_type.code().to_le_bytes());
    for d in [v.nx(), v.ny(), cfg.n_z()] {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&cfg.omega().to_le_bytes());
    for z in cfg.z_grid() {
        out.extend_from_slice(&z.to_le_bytes());
    }
    out.extend_from_slice(&(v.provenance().len() as u64).to_le_bytes());
    out.extend_from_slice(v.provenance().as_bytes());
    match sample_type {
        SampleType::F32 => v
            .data()
            .iter()
            .for_each(|&x| out.extend_from_slice(&(x as f32).to_le_bytes())),
        SampleType::F64 => v
            .data()
            .iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

/// Parses a volume from bytes.
pub fn read_volume(bytes: &[u8]) -> Result<THzVolume> {
    let mut r = Reader::new(bytes);
    if r.take(8).map_err(|_| Error::BadMagic)? != VOLUME_MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u32()?;
    if version != VOLUME_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let sample_type = SampleType::from_code(r.u32()?)?;
    let nx = r.usize("n_x")?;
    let ny = r.usize("n_y")?;
    let nz = r.usize("n_z")?;
    if nz == 0 {
        return Err(Error::InvalidHeader("n_z is zero".into()));
    }
    let omega = r.f64()?;
    let grid_bytes = nz
        .checked_mul(8)
        .ok_or_else(|| Error::InvalidHeader("n_z overflows".into()))?;
    if grid_bytes > r.remaining() {
        return Err(Error::Truncated {
            expected: r.pos + grid_bytes,
            found: bytes.len(),
        });
    }
    let z_grid = (0..nz).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let cfg =
        AcquisitionConfig::new(z_grid, omega).map_err(|e| Error::InvalidHeader(e.to_string()))?;
    let prov_len = r.usize("provenance length")?;
    let provenance = std::str::from_utf8(r.take(prov_len)?)
        .map_err(|_| Error::InvalidHeader("provenance is not UTF-8".into()))?
        .to_owned();

    let n_samples = nx
        .checked_mul(ny)
        .and_then(|n| n.checked_mul(nz))
        .and_then(|n| n.checked_mul(2))
        .ok_or_else(|| Error::InvalidHeader("dimensions overflow".into()))?;
    let payload = n_samples
        .checked_mul(sample_type.width())
        .ok_or_else(|| Error::InvalidHeader("dimensions overflow".into()))?;
    let found = r.remaining();
    if found < payload {
        return Err(Error::Truncated {
            expected: payload,
            found,
        });
    }
    if found > payload {
        return Err(Error::ShapeMismatch(format!(
            "header declares {nx}x{ny}x{nz}x2 samples ({payload} bytes) but payload has {found} bytes"
        )));
    }
    let rest = r.rest();
    let data: Vec<f64> = match sample_type {
        SampleType::F32 => rest
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        SampleType::F64 => rest
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    THzVolume::new(nx, ny, cfg, data, provenance)
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let res = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn save_volume(path: impl AsRef<Path>, v: &THzVolume, sample_type: SampleType) -> Result<()> {
    write_atomic(path.as_ref(), &write_volume(v, sample_type))
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<THzVolume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_volume(&bytes)
}

pub fn write_param_map(pm: &ParamMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(28 + pm.values().len() * 8);
    out.extend_from_slice(PARAM_MAP_MAGIC);
    out.extend_from_slice(&PARAM_MAP_VERSION.to_le_bytes());
    out.extend_from_slice(&(pm.nx() as u64).to_le_bytes());
    out.extend_from_slice(&(pm.ny() as u64).to_le_bytes());
    pm.values()
        .iter()
        .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    out
}

pub fn read_param_map(bytes: &[u8]) -> Result<ParamMap> {
    let mut r = Reader::new(bytes);
    if r.take(8).map_err(|_| Error::BadMagic)? != PARAM_MAP_MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u32()?;
    if version != PARAM_MAP_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let nx = r.usize("n_x")?;
    let ny = r.usize("n_y")?;
    let payload = nx
        .checked_mul(ny)
        .and_then(|n| n.checked_mul(32))
        .ok_or_else(|| Error::InvalidHeader("dimensions overflow".into()))?;
    let found = r.remaining();
    if found < payload {
        return Err(Error::Truncated {
            expected: payload,
            found,
        });
    }
    if found > payload {
        return Err(Error::ShapeMismatch(format!(
            "header declares {nx}x{ny}x4 values but payload has {found} bytes"
        )));
    }
    let values = r
        .rest()
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ParamMap::new(nx, ny, values)
}

pub fn save_param_map(path: impl AsRef<Path>, pm: &ParamMap) -> Result<()> {
    write_atomic(path.as_ref(), &write_param_map(pm))
}

pub fn load_param_map(path: impl AsRef<Path>) -> Result<ParamMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_param_map(&bytes)
}
