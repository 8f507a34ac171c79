//! Per-command settings: defaults, overridden by a TOML config section,
//! overridden by flags.

use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thz_core::data::SampleType;
use thz_core::{AcquisitionConfig, FitOptions, ParamRanges, TrainConfig};

/// Parsed config file; each command reads its own table.
#[derive(Debug, Default)]
pub struct ConfigFile {
    table: toml::Table,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let table = text
            .parse::<toml::Table>()
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(Self { table })
    }

    /// The `[name]` table deserialized over the defaults of `T`.
    pub fn section<T: DeserializeOwned + Default>(&self, name: &str) -> Result<T> {
        match self.table.get(name) {
            None => Ok(T::default()),
            Some(v) => v
                .clone()
                .try_into()
                .with_context(|| format!("invalid [{name}] section in config")),
        }
    }

    pub fn threads(&self) -> Result<Option<usize>> {
        match self.table.get("threads") {
            None => Ok(None),
            Some(v) => {
                Ok(Some(v.clone().try_into().context(
                    "config key `threads` must be a non-negative integer",
                )?))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub omega: f64,
    pub seed: u64,
    pub noise_sigma: f64,
    /// `"a_lo:a_hi,s_lo:s_hi,m_lo:m_hi,p_lo:p_hi"`; empty for the defaults.
    pub ranges: String,
    /// `f64` or `f32` samples on disk.
    pub sample_type: String,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            nx: 64,
            ny: 64,
            nz: thz_core::model::DEFAULT_NZ,
            omega: thz_core::model::DEFAULT_OMEGA,
            seed: 0,
            noise_sigma: 0.05,
            ranges: String::new(),
            sample_type: "f64".into(),
        }
    }
}

impl SynthSettings {
    pub fn ranges(&self) -> Result<ParamRanges> {
        if self.ranges.trim().is_empty() {
            Ok(ParamRanges::synthetic_default())
        } else {
            Ok(ParamRanges::parse(&self.ranges)?)
        }
    }

    pub fn sample_type(&self) -> Result<SampleType> {
        parse_sample_type(&self.sample_type)
    }
}

pub fn parse_sample_type(s: &str) -> Result<SampleType> {
    match s {
        "f64" => Ok(SampleType::F64),
        "f32" => Ok(SampleType::F32),
        other => anyhow::bail!("sample type must be f32 or f64, got {other:?}"),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    pub max_iters: usize,
    pub gradient_tol: f64,
    pub step_tol: f64,
    pub initial_radius: f64,
    /// Box constraints in the `ranges` syntax; empty for physical bounds.
    pub bounds: String,
}

impl Default for FitSettings {
    fn default() -> Self {
        let d = FitOptions::new(&AcquisitionConfig::default());
        Self {
            max_iters: d.max_iters,
            gradient_tol: d.gradient_tol,
            step_tol: d.step_tol,
            initial_radius: d.initial_radius,
            bounds: String::new(),
        }
    }
}

impl FitSettings {
    pub fn options(&self, cfg: &AcquisitionConfig) -> Result<FitOptions> {
        let bounds = if self.bounds.trim().is_empty() {
            ParamRanges::physical(cfg)
        } else {
            ParamRanges::parse(&self.bounds)?
        };
        let opts = FitOptions {
            bounds,
            max_iters: self.max_iters,
            gradient_tol: self.gradient_tol,
            step_tol: self.step_tol,
            initial_radius: self.initial_radius,
        };
        opts.validate(cfg)?;
        Ok(opts)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    #[serde(flatten)]
    pub train: TrainConfig,
    /// Write weights and history every this many epochs; 0 writes only at the end.
    pub checkpoint_every: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            checkpoint_every: 10,
        }
    }
}

/// Assigns each `Some` flag value over the resolved setting.
macro_rules! override_with {
    ($target:expr, $($field:ident <- $flag:expr),+ $(,)?) => {
        $(if let Some(v) = $flag { $target.$field = v; })+
    };
}
pub(crate) use override_with;
