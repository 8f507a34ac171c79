//! `thz`: synthesize, fit, train, infer, hybrid, eval and export THz parameter maps.

mod commands;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "thz",
    version,
    about = "Per-pixel parameter recovery for FMCW THz volumes"
)]
struct Cli {
    /// TOML file with per-command sections; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample ground truth and write a synthetic volume.
    Synth(SynthArgs),
    /// Fit every pixel with the trust-region solver.
    Fit(FitArgs),
    /// Train the encoder on a volume.
    Train(TrainArgs),
    /// Predict a parameter map with trained weights.
    Infer(InferArgs),
    /// Encoder prediction refined by the trust-region solver.
    Hybrid(HybridArgs),
    /// Region losses, timings and (optionally) ground-truth errors of several maps.
    Eval(EvalArgs),
    /// Write CSV and PGM images of a parameter map.
    Export(ExportArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    #[arg(long)]
    nz: Option<usize>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// `a_lo:a_hi,s_lo:s_hi,m_lo:m_hi,p_lo:p_hi`
    #[arg(long, allow_hyphen_values = true)]
    ranges: Option<String>,
    /// On-disk sample precision, f64 or f32.
    #[arg(long)]
    sample_type: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitOpts {
    #[arg(long)]
    max_iters: Option<usize>,
    /// Projected-gradient tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    step_tol: Option<f64>,
    #[arg(long)]
    initial_radius: Option<f64>,
    /// Box constraints, same syntax as `synth --ranges`.
    #[arg(long, allow_hyphen_values = true)]
    bounds: Option<String>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Volume file, or a directory holding `volume.thz`.
    #[arg(long)]
    volume: PathBuf,
    #[command(flatten)]
    fit: FitOpts,
    /// Starting point: `heuristic` or `map`.
    #[arg(long, default_value = "heuristic")]
    init: String,
    /// Parameter map used with `--init map`.
    #[arg(long)]
    init_map: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Learning-rate factor applied every `--decay-every` epochs.
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    decay_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Feed the network raw windows instead of peak-aligned ones.
    #[arg(long)]
    no_align: bool,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Suppress the per-epoch loss lines.
    #[arg(long)]
    quiet: bool,
    /// Output directory for weights, history and manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    volume: PathBuf,
    /// Weight file, or a directory holding `weights.thzw`.
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct HybridArgs {
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[command(flatten)]
    fit: FitOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    volume: PathBuf,
    /// `method=path` pairs with method tra, ae or ae+tra; the path is a map
    /// file or a command output directory.
    #[arg(long, num_args = 1.., required = true)]
    maps: Vec<String>,
    /// Region masks (PGM or CSV, nonzero = inside); "all" is always added.
    #[arg(long, num_args = 0..)]
    masks: Vec<PathBuf>,
    /// Also evaluate `left`/`right` regions split at this x index.
    #[arg(long)]
    split_x: Option<usize>,
    /// Ground-truth map for parameter errors.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// Parameter map file, or a directory holding `params.pmap`.
    #[arg(long)]
    map: PathBuf,
    /// Also write the intensity profile along this y index.
    #[arg(long)]
    profile_row: Option<usize>,
    #[arg(long)]
    dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
