//! Per-pixel parameter recovery for FMCW THz depth profiles.

pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod tra;

pub use data::{Grid, ParamMap, ParamRanges, THzVolume};
pub use encoder::{EncoderWeights, TrainConfig};
pub use error::{Error, Result};
pub use eval::{Method, MethodResult, RegionMask, Report};
pub use model::{AcquisitionConfig, PixelParams, Signal};
pub use tra::{FitOptions, FitReport, FitStatus};
