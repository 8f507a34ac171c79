//! Criterion benches for the forward model, the per-pixel fit and encoder inference.
//! Run with `cargo bench -p thz-bench`.

use thz_core::data::{sample_truth, synthesize_volume, NoiseSpec};
use thz_core::{AcquisitionConfig, ParamRanges, THzVolume};

/// Noisy synthetic volume shared by the benches.
pub fn fixture(nx: usize, ny: usize, seed: u64) -> THzVolume {
    let cfg = AcquisitionConfig::default();
    let truth = sample_truth(seed, &ParamRanges::synthetic_default(), nx, ny);
    synthesize_volume(&truth, &cfg, &NoiseSpec { sigma: 0.05, seed }).expect("fixture volume")
}
