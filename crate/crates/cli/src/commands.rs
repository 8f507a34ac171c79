use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;
use thz_core::data::{
    export_param_maps, load_param_map, load_volume, sample_truth, save_param_map, save_volume,
    synthesize_volume, write_grid_csv, NoiseSpec,
};
use thz_core::encoder::{
    infer_volume, load_weights, save_weights, train_with_callback, write_history_csv,
};
use thz_core::eval::{
    compare_methods, line_profile, param_errors, per_pixel_losses, write_profile_csv, Method,
    MethodResult, RegionMask,
};
use thz_core::tra::{fit_volume, InitSource, VolumeFit};
use thz_core::{AcquisitionConfig, Grid, ParamMap, THzVolume};

use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::settings::{override_with, ConfigFile, FitSettings, SynthSettings, TrainSettings};
use crate::{
    Cli, Command, EvalArgs, ExportArgs, FitArgs, FitOpts, HybridArgs, InferArgs, SynthArgs,
    TrainArgs,
};

pub const VOLUME_FILE: &str = "volume.thz";
pub const TRUTH_FILE: &str = "truth.pmap";
pub const PARAMS_FILE: &str = "params.pmap";
pub const AE_PARAMS_FILE: &str = "ae_params.pmap";
pub const LOSS_FILE: &str = "loss.csv";
pub const FIT_REPORT_FILE: &str = "fit_report.json";
pub const WEIGHTS_FILE: &str = "weights.thzw";
pub const HISTORY_FILE: &str = "history.csv";

pub fn run(cli: Cli) -> Result<()> {
    let config = ConfigFile::load(cli.config.as_deref())?;
    let threads = match cli.threads {
        Some(n) => n,
        None => config.threads()?.unwrap_or(0),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the thread pool")?;
    match cli.command {
        Command::Synth(a) => synth(&config, a),
        Command::Fit(a) => fit(&config, a),
        Command::Train(a) => train(&config, a),
        Command::Infer(a) => infer(a),
        Command::Hybrid(a) => hybrid(&config, a),
        Command::Eval(a) => eval(a),
        Command::Export(a) => export(a),
    }
}

/// `path` itself, or `path/default_name` when `path` is a directory.
fn resolve(path: &Path, default_name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(default_name)
    } else {
        path.to_owned()
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))
}

fn read_volume(path: &Path) -> Result<(PathBuf, THzVolume)> {
    let path = resolve(path, VOLUME_FILE);
    let v = load_volume(&path).with_context(|| format!("loading volume {}", path.display()))?;
    Ok((path, v))
}

fn read_map(path: &Path) -> Result<(PathBuf, ParamMap)> {
    let path = resolve(path, PARAMS_FILE);
    let pm = load_param_map(&path)
        .with_context(|| format!("loading parameter map {}", path.display()))?;
    Ok((path, pm))
}

fn write_map_and_losses(
    dir: &Path,
    name: &str,
    pm: &ParamMap,
    v: &THzVolume,
    m: &mut RunManifest,
) -> Result<Grid> {
    let map_path = dir.join(name);
    save_param_map(&map_path, pm)?;
    let losses = per_pixel_losses(pm, v)?;
    let loss_path = dir.join(LOSS_FILE);
    write_grid_csv(&loss_path, &losses)?;
    m.output("params", &map_path).output("loss", &loss_path);
    Ok(losses)
}

fn fit_settings(config: &ConfigFile, flags: &FitOpts) -> Result<FitSettings> {
    let mut s: FitSettings = config.section("fit")?;
    override_with!(s,
        max_iters <- flags.max_iters,
        gradient_tol <- flags.tol,
        step_tol <- flags.step_tol,
        initial_radius <- flags.initial_radius,
        bounds <- flags.bounds.clone(),
    );
    Ok(s)
}

fn fit_summary(fit: &VolumeFit) -> serde_json::Value {
    let mut status = BTreeMap::new();
    for r in &fit.reports {
        let key = serde_json::to_value(r.status)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        *status.entry(key).or_insert(0usize) += 1;
    }
    let n = fit.reports.len() as f64;
    json!({
        "pixels": fit.reports.len(),
        "mean_initial_loss": fit.reports.iter().map(|r| r.initial_loss).sum::<f64>() / n,
        "mean_final_loss": fit.mean_final_loss(),
        "mean_iterations": fit.mean_iterations(),
        "status_counts": status,
        "wall_time": fit.wall_time,
    })
}

fn write_fit_report(dir: &Path, summary: &serde_json::Value, m: &mut RunManifest) -> Result<()> {
    let path = dir.join(FIT_REPORT_FILE);
    thz_core::data::write_atomic(&path, serde_json::to_string_pretty(summary)?.as_bytes())?;
    m.output("fit_report", &path);
    Ok(())
}

fn synth(config: &ConfigFile, a: SynthArgs) -> Result<()> {
    let mut s: SynthSettings = config.section("synth")?;
    override_with!(s,
        nx <- a.nx,
        ny <- a.ny,
        nz <- a.nz,
        omega <- a.omega,
        seed <- a.seed,
        noise_sigma <- a.noise_sigma,
        ranges <- a.ranges,
        sample_type <- a.sample_type,
    );
    if s.nx == 0 || s.ny == 0 {
        bail!("--nx and --ny must be positive");
    }
    let cfg = AcquisitionConfig::uniform(s.nz, s.omega)?;
    let ranges = s.ranges()?;
    ranges.validate(&cfg)?;
    let sample_type = s.sample_type()?;

    let truth = sample_truth(s.seed, &ranges, s.nx, s.ny);
    let v = synthesize_volume(
        &truth,
        &cfg,
        &NoiseSpec {
            sigma: s.noise_sigma,
            seed: s.seed,
        },
    )?;
    create_dir(&a.out)?;
    let vol_path = a.out.join(VOLUME_FILE);
    let truth_path = a.out.join(TRUTH_FILE);
    save_volume(&vol_path, &v, sample_type)?;
    save_param_map(&truth_path, &truth)?;

    let mut m = RunManifest::new("synth", &s);
    m.seeds.insert("truth".into(), s.seed);
    m.seeds.insert("noise".into(), s.seed);
    m.output("volume", &vol_path).output("truth", &truth_path);
    m.summary = json!({ "provenance": v.provenance() });
    m.write(&a.out)?;
    println!("wrote {} ({}x{}x{})", vol_path.display(), s.nx, s.ny, s.nz);
    Ok(())
}

fn fit(config: &ConfigFile, a: FitArgs) -> Result<()> {
    let s = fit_settings(config, &a.fit)?;
    let (vol_path, v) = read_volume(&a.volume)?;
    let opts = s.options(v.cfg())?;
    let init_map = match a.init.as_str() {
        "heuristic" => None,
        "map" => {
            let p = a
                .init_map
                .as_deref()
                .context("--init map needs --init-map PATH")?;
            Some(read_map(p)?)
        }
        other => bail!("--init must be heuristic or map, got {other:?}"),
    };
    let init = match &init_map {
        None => InitSource::Heuristic,
        Some((_, pm)) => InitSource::Map(pm),
    };
    let result = fit_volume(&v, &opts, init).context("fitting volume")?;

    create_dir(&a.out)?;
    let mut m = RunManifest::new("fit", &json!({ "fit": s, "init": a.init }));
    m.input("volume", &vol_path);
    if let Some((p, _)) = &init_map {
        m.input("init_map", p);
    }
    write_map_and_losses(&a.out, PARAMS_FILE, &result.map, &v, &mut m)?;
    let summary = fit_summary(&result);
    write_fit_report(&a.out, &summary, &mut m)?;
    m.wall_times.insert("compute".into(), result.wall_time);
    m.summary = summary;
    m.write(&a.out)?;
    println!(
        "fit {} pixels: mean loss {:.6}, {:.1} iterations, {:.3} s",
        result.reports.len(),
        result.mean_final_loss(),
        result.mean_iterations(),
        result.wall_time
    );
    Ok(())
}

fn train(config: &ConfigFile, a: TrainArgs) -> Result<()> {
    let mut s: TrainSettings = config.section("train")?;
    override_with!(s.train,
        epochs <- a.epochs,
        batch_size <- a.batch_size,
        lr <- a.lr,
        lr_decay_factor <- a.decay,
        lr_decay_every <- a.decay_every,
        seed <- a.seed,
        train_fraction <- a.train_fraction,
    );
    override_with!(s, checkpoint_every <- a.checkpoint_every);
    if a.no_align {
        s.train.align = false;
    }
    let (vol_path, v) = read_volume(&a.volume)?;
    create_dir(&a.out)?;
    let weights_path = a.out.join(WEIGHTS_FILE);
    let history_path = a.out.join(HISTORY_FILE);

    let start = std::time::Instant::now();
    let every = s.checkpoint_every;
    let quiet = a.quiet;
    let (w, history) = train_with_callback(&v, &s.train, |epoch, w, h| {
        if !quiet {
            println!(
                "epoch {epoch:>5}  train {:.6}  val {:.6}  lr {:.6}",
                h.train_loss[epoch], h.val_loss[epoch], h.lr[epoch]
            );
        }
        if every > 0 && (epoch + 1) % every == 0 {
            // each file is swapped in atomically, so an interrupted run keeps the last checkpoint
            save_weights(&weights_path, w)?;
            write_history_csv(&history_path, h)?;
        }
        Ok(())
    })
    .context("training encoder")?;
    let compute = start.elapsed().as_secs_f64();
    save_weights(&weights_path, &w)?;
    write_history_csv(&history_path, &history)?;

    let mut m = RunManifest::new("train", &s);
    m.seeds.insert("train".into(), s.train.seed);
    m.input("volume", &vol_path);
    m.output("weights", &weights_path)
        .output("history", &history_path);
    m.wall_times.insert("compute".into(), compute);
    m.summary = json!({
        "epochs": history.train_loss.len(),
        "final_train_loss": history.train_loss.last(),
        "final_val_loss": history.val_loss.last(),
        "architecture_hash": format!("{:016x}", w.arch.hash()),
    });
    m.write(&a.out)?;
    println!("wrote {} after {:.1} s", weights_path.display(), compute);
    Ok(())
}

fn infer(a: InferArgs) -> Result<()> {
    let (vol_path, v) = read_volume(&a.volume)?;
    let weights_path = resolve(&a.weights, WEIGHTS_FILE);
    let w = load_weights(&weights_path)
        .with_context(|| format!("loading weights {}", weights_path.display()))?;
    let inf = infer_volume(&w, &v).context("running encoder")?;

    create_dir(&a.out)?;
    let mut m = RunManifest::new("infer", &json!({}));
    m.input("volume", &vol_path).input("weights", &weights_path);
    let losses = write_map_and_losses(&a.out, PARAMS_FILE, &inf.map, &v, &mut m)?;
    m.wall_times.insert("compute".into(), inf.wall_time);
    m.summary = json!({ "mean_loss": losses.mean() });
    m.write(&a.out)?;
    println!(
        "inferred {} pixels: mean loss {:.6}, {:.4} s",
        v.n_pixels(),
        losses.mean(),
        inf.wall_time
    );
    Ok(())
}

fn hybrid(config: &ConfigFile, a: HybridArgs) -> Result<()> {
    let s = fit_settings(config, &a.fit)?;
    let (vol_path, v) = read_volume(&a.volume)?;
    let opts = s.options(v.cfg())?;
    let weights_path = resolve(&a.weights, WEIGHTS_FILE);
    let w = load_weights(&weights_path)
        .with_context(|| format!("loading weights {}", weights_path.display()))?;
    let inf = infer_volume(&w, &v).context("running encoder")?;
    let result =
        fit_volume(&v, &opts, InitSource::Map(&inf.map)).context("refining encoder output")?;

    create_dir(&a.out)?;
    let mut m = RunManifest::new("hybrid", &json!({ "fit": s }));
    m.input("volume", &vol_path).input("weights", &weights_path);
    let ae_path = a.out.join(AE_PARAMS_FILE);
    save_param_map(&ae_path, &inf.map)?;
    m.output("ae_params", &ae_path);
    write_map_and_losses(&a.out, PARAMS_FILE, &result.map, &v, &mut m)?;
    let summary = fit_summary(&result);
    write_fit_report(&a.out, &summary, &mut m)?;
    m.wall_times.insert("encoder".into(), inf.wall_time);
    m.wall_times.insert("fit".into(), result.wall_time);
    m.wall_times
        .insert("compute".into(), inf.wall_time + result.wall_time);
    m.summary = summary;
    m.write(&a.out)?;
    println!(
        "hybrid {} pixels: mean loss {:.6}, {:.1} iterations, {:.3} s",
        result.reports.len(),
        result.mean_final_loss(),
        result.mean_iterations(),
        inf.wall_time + result.wall_time
    );
    Ok(())
}

/// Compute time recorded by the command that wrote `map_path`, if its manifest is present.
fn recorded_compute_time(map_path: &Path) -> Option<f64> {
    let manifest = map_path.parent()?.join(MANIFEST_FILE);
    RunManifest::read(&manifest)
        .ok()?
        .wall_times
        .get("compute")
        .copied()
}

fn eval(a: EvalArgs) -> Result<()> {
    let (vol_path, v) = read_volume(&a.volume)?;
    let mut m = RunManifest::new(
        "eval",
        &json!({ "maps": a.maps, "masks": a.masks, "split_x": a.split_x }),
    );
    m.input("volume", &vol_path);

    let mut results = Vec::new();
    for spec in &a.maps {
        let (method, path) = spec
            .split_once('=')
            .with_context(|| format!("--maps entry {spec:?} is not method=path"))?;
        let method = Method::parse(method)?;
        let (path, pm) = read_map(Path::new(path))?;
        let time = recorded_compute_time(&path).unwrap_or(f64::NAN);
        m.input(&format!("map:{method}"), &path);
        results.push(
            MethodResult::new(method, pm, time, &v)
                .with_context(|| format!("evaluating {}", path.display()))?,
        );
    }
    let mut masks = Vec::new();
    for p in &a.masks {
        let mask = RegionMask::load(p).with_context(|| format!("loading mask {}", p.display()))?;
        m.input(&format!("mask:{}", mask.name), p);
        masks.push(mask);
    }
    if let Some(x) = a.split_x {
        let (l, r) = RegionMask::split_x(v.nx(), v.ny(), x)?;
        masks.push(l);
        masks.push(r);
    }
    masks.push(RegionMask::all(v.nx(), v.ny()));
    let report = compare_methods(&results, &masks)?;

    create_dir(&a.out)?;
    let text = report.to_text();
    for (name, body) in [
        ("report.txt", text.clone()),
        ("report.csv", report.to_csv()),
        ("report.json", report.to_json()),
    ] {
        let p = a.out.join(name);
        thz_core::data::write_atomic(&p, body.as_bytes())?;
        m.output(name, &p);
    }
    let mut summary = serde_json::to_value(&report)?;
    if let Some(t) = &a.truth {
        let (tp, truth) = read_map(t)?;
        m.input("truth", &tp);
        let errors: BTreeMap<String, _> = results
            .iter()
            .map(|r| {
                Ok((
                    r.method.label().to_owned(),
                    param_errors(&r.param_map, &truth)?,
                ))
            })
            .collect::<Result<_>>()?;
        summary["param_errors"] = serde_json::to_value(&errors)?;
        let p = a.out.join("param_errors.json");
        thz_core::data::write_atomic(&p, serde_json::to_string_pretty(&errors)?.as_bytes())?;
        m.output("param_errors", &p);
    }
    m.summary = summary;
    m.write(&a.out)?;
    print!("{text}");
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let (map_path, pm) = read_map(&a.map)?;
    let files = export_param_maps(&pm, &a.dir)
        .with_context(|| format!("exporting to {}", a.dir.display()))?;
    let mut m = RunManifest::new("export", &json!({ "profile_row": a.profile_row }));
    m.input("map", &map_path);
    for f in &files {
        let name = f.file_name().unwrap().to_string_lossy().into_owned();
        m.output(&name, f);
    }
    if let Some(row) = a.profile_row {
        let profile = line_profile(&pm.intensity(), row, 0..pm.nx())?;
        let p = a.dir.join("intensity_profile.csv");
        write_profile_csv(&p, 0, &profile)?;
        m.output("intensity_profile", &p);
    }
    m.write(&a.dir)?;
    println!("exported {} files to {}", m.outputs.len(), a.dir.display());
    Ok(())
}
