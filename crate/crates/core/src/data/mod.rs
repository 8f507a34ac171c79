//! Volumes, parameter maps, preprocessing and synthetic ground truth.

mod export;
mod format;

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, AcquisitionConfig, PixelParams, Signal};

pub use export::{
    export_param_maps, read_grid_csv, read_pgm, write_grid_csv, write_pgm, EXPORTED_LAYERS,
};
pub use format::{
    load_param_map, load_volume, read_param_map, read_volume, save_param_map, save_volume,
    write_atomic, write_param_map, write_volume, SampleType, PARAM_MAP_MAGIC, VOLUME_MAGIC,
    VOLUME_VERSION,
};

/// Default crop length around the main lobe.
pub const DEFAULT_WINDOW: usize = 91;

/// Complex depth profiles for an `n_x × n_y` scan.
///
/// Samples are stored x-major, then y, then z, then channel (re, im).
#[derive(Debug, Clone, PartialEq)]
pub struct THzVolume {
    nx: usize,
    ny: usize,
    cfg: AcquisitionConfig,
    data: Vec<f64>,
    provenance: String,
}

impl THzVolume {
    pub fn new(
        nx: usize,
        ny: usize,
        cfg: AcquisitionConfig,
        data: Vec<f64>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let expected = nx * ny * cfg.n_z() * 2;
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{nx}x{ny}x{}x2 volume needs {expected} samples, got {}",
                cfg.n_z(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "non-finite sample at flat index {i}"
            )));
        }
        Ok(Self {
            nx,
            ny,
            cfg,
            data,
            provenance: provenance.into(),
        })
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn n_pixels(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn cfg(&self) -> &AcquisitionConfig {
        &self.cfg
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Flat sample buffer in file order.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Interleaved samples of pixel `i = x·n_y + y`.
    #[inline]
    pub fn pixel(&self, i: usize) -> &[f64] {
        let len = 2 * self.cfg.n_z();
        &self.data[i * len..(i + 1) * len]
    }

    #[inline]
    pub fn pixel_xy(&self, x: usize, y: usize) -> &[f64] {
        self.pixel(x * self.ny + y)
    }

    /// Copy with every sample rounded to 32-bit precision.
    pub fn quantized_f32(&self) -> Self {
        Self {
            data: self.data.iter().map(|&v| v as f32 as f64).collect(),
            ..self.clone()
        }
    }
}

/// Fitted or ground-truth parameters for every pixel, layout `[ê, σ, μ, φ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMap {
    nx: usize,
    ny: usize,
    params: Vec<f64>,
}

impl ParamMap {
    pub fn new(nx: usize, ny: usize, params: Vec<f64>) -> Result<Self> {
        if params.len() != nx * ny * 4 {
            return Err(Error::ShapeMismatch(format!(
                "{nx}x{ny}x4 map needs {} values, got {}",
                nx * ny * 4,
                params.len()
            )));
        }
        let map = Self { nx, ny, params };
        for i in 0..map.n_pixels() {
            let p = map.get(i);
            PixelParams::new(p.amplitude, p.width, p.depth, p.phase)?;
        }
        Ok(map)
    }

    pub fn from_pixels(nx: usize, ny: usize, pixels: &[PixelParams]) -> Result<Self> {
        if pixels.len() != nx * ny {
            return Err(Error::ShapeMismatch(format!(
                "{nx}x{ny} map needs {} pixels, got {}",
                nx * ny,
                pixels.len()
            )));
        }
        let params = pixels.iter().flat_map(|p| p.to_array()).collect();
        Ok(Self { nx, ny, params })
    }

    pub fn constant(nx: usize, ny: usize, p: PixelParams) -> Self {
        Self {
            nx,
            ny,
            params: std::iter::repeat_n(p.to_array(), nx * ny)
                .flatten()
                .collect(),
        }
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn n_pixels(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn get(&self, i: usize) -> PixelParams {
        let s = &self.params[4 * i..4 * i + 4];
        PixelParams::from_array([s[0], s[1], s[2], s[3]])
    }

    #[inline]
    pub fn get_xy(&self, x: usize, y: usize) -> PixelParams {
        self.get(x * self.ny + y)
    }

    pub fn set(&mut self, i: usize, p: PixelParams) {
        self.params[4 * i..4 * i + 4].copy_from_slice(&p.to_array());
    }

    pub fn values(&self) -> &[f64] {
        &self.params
    }

    pub fn pixels(&self) -> impl Iterator<Item = PixelParams> + '_ {
        (0..self.n_pixels()).map(|i| self.get(i))
    }

    /// One parameter (0 = ê, 1 = σ, 2 = μ, 3 = φ) as a grid.
    pub fn layer(&self, k: usize) -> Grid {
        Grid {
            nx: self.nx,
            ny: self.ny,
            values: self.params.iter().skip(k).step_by(4).copied().collect(),
        }
    }

    /// Intensity `ê²` per pixel.
    pub fn intensity(&self) -> Grid {
        Grid {
            nx: self.nx,
            ny: self.ny,
            values: self.pixels().map(|p| model::intensity(&p)).collect(),
        }
    }
}

/// A real-valued `n_x × n_y` image, x-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != nx * ny {
            return Err(Error::ShapeMismatch(format!(
                "{nx}x{ny} grid needs {} values, got {}",
                nx * ny,
                values.len()
            )));
        }
        Ok(Self { nx, ny, values })
    }

    pub fn filled(nx: usize, ny: usize, v: f64) -> Self {
        Self {
            nx,
            ny,
            values: vec![v; nx * ny],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[x * self.ny + y]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Closed intervals for each parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub amplitude: (f64, f64),
    pub width: (f64, f64),
    pub depth: (f64, f64),
    pub phase: (f64, f64),
}

impl ParamRanges {
    /// Ranges used for synthetic ground truth on the default 91-sample grid.
    pub fn synthetic_default() -> Self {
        Self {
            amplitude: (0.1, 5.0),
            width: (0.05, 1.0),
            depth: (10.0, 80.0),
            phase: (-PI, PI),
        }
    }

    /// Physically admissible box for fitting: `ê ∈ [0, 1e3]`, `σ ∈ [1e-3, 10]`,
    /// `μ` over the grid extent, full phase circle.
    pub fn physical(cfg: &AcquisitionConfig) -> Self {
        Self {
            amplitude: (0.0, 1e3),
            width: (1e-3, 10.0),
            depth: cfg.extent(),
            phase: (-PI, PI),
        }
    }

    pub fn as_array(&self) -> [(f64, f64); 4] {
        [self.amplitude, self.width, self.depth, self.phase]
    }

    pub fn validate(&self, cfg: &AcquisitionConfig) -> Result<()> {
        let names = ["amplitude", "width", "depth", "phase"];
        for (name, (lo, hi)) in names.iter().zip(self.as_array()) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidConfig(format!(
                    "{name} range [{lo}, {hi}] is invalid"
                )));
            }
        }
        if self.amplitude.0 < 0.0 {
            return Err(Error::InvalidConfig(
                "amplitude lower bound must be >= 0".into(),
            ));
        }
        if self.width.0 <= 0.0 {
            return Err(Error::InvalidConfig("width lower bound must be > 0".into()));
        }
        let (zlo, zhi) = cfg.extent();
        if self.depth.0 < zlo || self.depth.1 > zhi {
            return Err(Error::InvalidConfig(format!(
                "depth range [{}, {}] leaves the grid extent [{zlo}, {zhi}]",
                self.depth.0, self.depth.1
            )));
        }
        Ok(())
    }

    /// True when the phase interval spans the full circle.
    pub fn phase_is_periodic(&self) -> bool {
        self.phase.1 - self.phase.0 >= 2.0 * PI - 1e-9
    }

    pub fn contains(&self, p: &PixelParams) -> bool {
        p.to_array()
            .iter()
            .zip(self.as_array())
            .all(|(v, (lo, hi))| (lo..=hi).contains(v))
    }

    /// Parses `"a_lo:a_hi,s_lo:s_hi,m_lo:m_hi,p_lo:p_hi"`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<(f64, f64)> = s
            .split(',')
            .map(|part| {
                let (lo, hi) = part
                    .split_once(':')
                    .ok_or_else(|| Error::InvalidConfig(format!("range '{part}' is not lo:hi")))?;
                let parse = |t: &str| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::InvalidConfig(format!("range '{part}': {e}")))
                };
                Ok((parse(lo)?, parse(hi)?))
            })
            .collect::<Result<_>>()?;
        if parts.len() != 4 {
            return Err(Error::InvalidConfig(format!(
                "expected 4 ranges, got {}",
                parts.len()
            )));
        }
        Ok(Self {
            amplitude: parts[0],
            width: parts[1],
            depth: parts[2],
            phase: parts[3],
        })
    }
}

/// Additive Gaussian noise, i.i.d. per real channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

/// A window cut from a long trace.
#[derive(Debug, Clone, PartialEq)]
pub struct CroppedSignal {
    pub signal: Signal,
    /// Index of the first kept sample in the source trace.
    pub offset: usize,
    /// Index of the strongest sample in the source trace.
    pub peak: usize,
}

/// Cuts `window` samples centered on the strongest complex sample.
///
/// Ties go to the smallest index; windows that would leave the trace are
/// shifted inside it, so the peak is not centered in that case.
pub fn crop_window(re: &[f64], im: &[f64], window: usize) -> Result<CroppedSignal> {
    if re.len() != im.len() {
        return Err(Error::ChannelMismatch {
            re: re.len(),
            im: im.len(),
        });
    }
    if re.is_empty() {
        return Err(Error::EmptyTrace);
    }
    if window > re.len() {
        return Err(Error::WindowTooLarge {
            window,
            len: re.len(),
        });
    }
    if window.is_multiple_of(2) {
        return Err(Error::EvenWindow(window));
    }
    let mut peak = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, (r, m)) in re.iter().zip(im).enumerate() {
        let p = r * r + m * m;
        if p > best {
            best = p;
            peak = i;
        }
    }
    let offset = peak.saturating_sub(window / 2).min(re.len() - window);
    let signal = Signal::from_channels(&re[offset..offset + window], &im[offset..offset + window])?;
    Ok(CroppedSignal {
        signal,
        offset,
        peak,
    })
}

/// Uniform i.i.d. draw of every parameter of every pixel.
pub fn sample_truth(seed: u64, ranges: &ParamRanges, nx: usize, ny: usize) -> ParamMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = ranges.as_array();
    let mut params = Vec::with_capacity(nx * ny * 4);
    for _ in 0..nx * ny {
        for (k, (lo, hi)) in bounds.iter().enumerate() {
            let u: f64 = rng.random();
            let v = lo + (hi - lo) * u;
            params.push(if k == 3 { model::wrap_phase(v) } else { v });
        }
    }
    ParamMap { nx, ny, params }
}

/// Simulates a volume from a parameter map plus Gaussian noise.
pub fn synthesize_volume(
    truth: &ParamMap,
    cfg: &AcquisitionConfig,
    noise: &NoiseSpec,
) -> Result<THzVolume> {
    if !(noise.sigma >= 0.0 && noise.sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "noise sigma {} must be >= 0",
            noise.sigma
        )));
    }
    let len = 2 * cfg.n_z();
    let mut data = vec![0.0; truth.n_pixels() * len];
    for (i, chunk) in data.chunks_exact_mut(len).enumerate() {
        model::forward_into(&truth.get(i).to_array(), cfg, chunk);
    }
    if noise.sigma > 0.0 {
        // separate stream so one seed can drive both truth and noise
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        rng.set_stream(1);
        let normal = Normal::new(0.0, noise.sigma).expect("sigma checked above");
        data.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    let provenance = format!(
        "synthetic seed={} noise=gaussian sigma={}",
        noise.seed, noise.sigma
    );
    THzVolume::new(truth.nx(), truth.ny(), cfg.clone(), data, provenance)
}

/// Deterministic shuffled split into train and validation indices.
///
/// The train set has `round(fraction · n)` elements, rounding half up.
pub fn split_pixels(
    n_pixels: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train fraction {train_fraction} must lie in (0, 1)"
        )));
    }
    let n_train = ((train_fraction * n_pixels as f64) + 0.5).floor() as usize;
    let mut idx: Vec<usize> = (0..n_pixels).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let val = idx.split_off(n_train.min(n_pixels));
    Ok((idx, val))
}
