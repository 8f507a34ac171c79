//! Encoder weight files and training-history CSV.
//!
//! Weight layout, all little-endian:
//!
//! ```text
//! [8]  magic "THZENCW\n"
//! u32  version (1)
//! u64  architecture hash
//! u64  n_z, u64 branch width, u64 trunk depth, u64 trunk widths[depth]
//! f64  leaky slope, f64 bn momentum, f64 bn eps
//! u32  peak alignment flag (0 or 1)
//! f32  learnable tensors in `EncoderWeights::learnable` order
//! f32  running statistics and output affine in `EncoderWeights::buffers` order
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Architecture, EncoderWeights, TrainHistory};
use crate::data::write_atomic;
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 8] = b"THZENCW\n";
const WEIGHTS_VERSION: u32 = 1;

pub fn write_weights(w: &EncoderWeights<f32>) -> Vec<u8> {
    let a = &w.arch;
    let mut out = Vec::with_capacity(128 + 4 * a.n_learnable());
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&a.hash().to_le_bytes());
    for d in [a.n_z, a.branch_width, a.trunk_widths.len()]
        .into_iter()
        .chain(a.trunk_widths.iter().copied())
    {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for c in [a.leaky_slope, a.bn_momentum, a.bn_eps] {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out.extend_from_slice(&(a.align as u32).to_le_bytes());
    for t in w.learnable().into_iter().chain(w.buffers()) {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let s = self.buf.get(self.pos..end).ok_or(Error::Truncated {
            expected: end,
            found: self.buf.len(),
        })?;
        self.pos = end;
        Ok(s.try_into().unwrap())
    }

    fn u64(&mut self) -> Result<usize> {
        usize::try_from(u64::from_le_bytes(self.take()?))
            .map_err(|_| Error::InvalidHeader("size overflows".into()))
    }
}

pub fn read_weights(bytes: &[u8]) -> Result<EncoderWeights<f32>> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if &c.take::<8>().map_err(|_| Error::BadMagic)? != WEIGHTS_MAGIC {
        return Err(Error::BadMagic);
    }
    let version = u32::from_le_bytes(c.take()?);
    if version != WEIGHTS_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let stored_hash = u64::from_le_bytes(c.take()?);
    let n_z = c.u64()?;
    let branch_width = c.u64()?;
    let depth = c.u64()?;
    if depth > 64 {
        return Err(Error::InvalidHeader(format!("trunk depth {depth}")));
    }
    let trunk_widths = (0..depth).map(|_| c.u64()).collect::<Result<Vec<_>>>()?;
    let [leaky_slope, bn_momentum, bn_eps] = [(); 3].map(|_| c.take::<8>().map(f64::from_le_bytes));
    let align = match u32::from_le_bytes(c.take()?) {
        0 => false,
        1 => true,
        other => return Err(Error::InvalidHeader(format!("alignment flag {other}"))),
    };
    let arch = Architecture {
        n_z,
        branch_width,
        trunk_widths,
        leaky_slope: leaky_slope?,
        bn_momentum: bn_momentum?,
        bn_eps: bn_eps?,
        align,
    };
    if arch.hash() != stored_hash {
        return Err(Error::ArchitectureMismatch);
    }
    arch.validate()?;
    let total: usize = arch.n_learnable()
        + 2 * (2 * arch.branch_width + arch.trunk_widths.iter().sum::<usize>())
        + 8;
    let needed = c.pos + 4 * total;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            expected: needed,
            found: bytes.len(),
        });
    }
    // the rng only fills tensors that are overwritten below
    let mut w = EncoderWeights::<f32>::init(arch, &mut ChaCha8Rng::seed_from_u64(0))?;
    for t in w.learnable_mut() {
        for v in t.iter_mut() {
            *v = f32::from_le_bytes(c.take()?);
        }
    }
    for t in w.buffers_mut() {
        for v in t.iter_mut() {
            *v = f32::from_le_bytes(c.take()?);
        }
    }
    if c.pos != bytes.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} trailing bytes after weights",
            bytes.len() - c.pos
        )));
    }
    Ok(w)
}

pub fn save_weights(path: impl AsRef<Path>, w: &EncoderWeights<f32>) -> Result<()> {
    write_atomic(path.as_ref(), &write_weights(w))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<EncoderWeights<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_weights(&bytes)
}

/// `epoch,train_loss,val_loss,lr`, one row per epoch.
pub fn write_history_csv(path: impl AsRef<Path>, h: &TrainHistory) -> Result<()> {
    let mut s = String::from("epoch,train_loss,val_loss,lr\n");
    for (e, ((t, v), lr)) in h.train_loss.iter().zip(&h.val_loss).zip(&h.lr).enumerate() {
        writeln!(s, "{e},{t},{v},{lr}").unwrap();
    }
    write_atomic(path.as_ref(), s.as_bytes())
}
