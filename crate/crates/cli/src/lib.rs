//! `vlcsim` command-line driver. [`run_command`] is the whole program; the
//! binary only forwards `std::env::args`.
//!
//! Exit codes: 0 on success, 1 for usage or validation errors, 2 when the
//! simulation itself fails.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use vlcsim::chanmetrics::{condition_number, diagonal_dominance, spot_stats, square_condition_number};
use vlcsim::config::{parse_config, SimConfig};
use vlcsim::export::{self, Provenance};
use vlcsim::lensopt::{self, LensParams};
use vlcsim::raytracer::{estimate_channel, estimate_gains};
use vlcsim::scene::Unit;
use vlcsim::sigproc::{self, calibrate_noise, Mode, CALIBRATION_TARGET};
use vlcsim::sweeps::{self, run_sweep, Motion, Offset};

/// Environment variable capping the worker thread count; 0 means automatic.
pub const THREADS_ENV: &str = "VLC_SIM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "vlcsim", version, about = "LED-array to photodiode-array optical MIMO link simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Trace the channel matrix: H.csv, spots.csv, metrics.json
    Trace(Flags),
    /// Tune the four lens coefficients for minimum condition number: params.json, trace.csv
    Optimize(Flags),
    /// Run the configured misalignment sweeps: sweep.csv, sweep_summary.json
    Sweep(Flags),
    /// Per-channel capacity for each offset and mode: capacity.csv
    Capacity(Flags),
    /// OOK symbol simulation with decision-directed cancellation: ber.csv
    Symbols(Flags),
}

#[derive(Debug, Args)]
struct Flags {
    /// JSON configuration; built-in defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Rays per LED
    #[arg(long)]
    rays: Option<usize>,
    /// Output directory (overrides output_dir)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated processing modes, or `all`
    #[arg(long)]
    modes: Option<String>,
    /// Misalignment as <motion>-<rx|tx>:<value>, repeatable
    #[arg(long)]
    offset: Vec<String>,
    /// Condition-number threshold for movable ranges
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

fn invalid(e: impl Display) -> Failure {
    Failure { code: 1, message: e.to_string() }
}

fn runtime(e: impl Display) -> Failure {
    Failure { code: 2, message: e.to_string() }
}

type Outcome<T> = std::result::Result<T, Failure>;

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code. Diagnostics go to stderr, summaries to stdout.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let pool = match thread_pool() {
        Ok(p) => p,
        Err(f) => {
            eprintln!("error: {}", f.message);
            return f.code;
        }
    };
    let result = match &pool {
        Some(p) => p.install(|| dispatch(&cli.command)),
        None => dispatch(&cli.command),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn thread_pool() -> Outcome<Option<rayon::ThreadPool>> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| invalid(format!("{THREADS_ENV} must be a nonnegative integer, got `{raw}`")))?;
    if n == 0 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build().map(Some).map_err(runtime)
}

fn dispatch(cmd: &Command) -> Outcome<()> {
    match cmd {
        Command::Trace(f) => trace(f),
        Command::Optimize(f) => optimize(f),
        Command::Sweep(f) => sweep(f),
        Command::Capacity(f) => capacity(f),
        Command::Symbols(f) => symbols(f),
    }
}

fn load(flags: &Flags) -> Outcome<SimConfig> {
    let mut cfg = match &flags.config {
        Some(p) => parse_config(p).map_err(invalid)?,
        None => SimConfig::default(),
    };
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if let Some(r) = flags.rays {
        cfg.rays_per_led = r;
    }
    if let Some(t) = flags.threshold {
        cfg.kappa_threshold = t;
    }
    if let Some(m) = &flags.modes {
        cfg.modes = Mode::parse_list(m).map_err(invalid)?;
    }
    if !flags.offset.is_empty() {
        cfg.offsets = parse_offsets(&flags.offset)?;
    }
    if let Some(o) = &flags.out {
        cfg.output_dir = o.to_string_lossy().into_owned();
    }
    cfg.validate().map_err(invalid)?;
    let leds = &cfg.scene.leds;
    eprintln!(
        "scene: {}x{} LEDs (C_n = {}, half-power angle {:.1} deg), {}x{} PDs, {} lenses; {} rays/LED, seed {}",
        leds.grid_n,
        leds.grid_n,
        leds.lambertian_exponent,
        leds.half_power_angle_deg(),
        cfg.scene.pds.grid_n,
        cfg.scene.pds.grid_n,
        cfg.scene.lenses.len(),
        cfg.rays_per_led,
        cfg.seed
    );
    Ok(cfg)
}

fn parse_offsets(raw: &[String]) -> Outcome<Vec<Offset>> {
    raw.iter()
        .flat_map(|s| s.split(','))
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<Offset>().map_err(invalid))
        .collect()
}

fn out_dir(cfg: &SimConfig) -> Outcome<PathBuf> {
    let dir = PathBuf::from(&cfg.output_dir);
    fs::create_dir_all(&dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn write(dir: &Path, name: &str, text: &str) -> Outcome<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn provenance(cfg: &SimConfig) -> Provenance {
    Provenance { seed: cfg.seed, rays_per_led: cfg.rays_per_led, scene_digest: cfg.scene.digest() }
}

fn noise_for(cfg: &SimConfig) -> Outcome<f64> {
    match cfg.noise_variance {
        Some(v) => Ok(v),
        None => {
            let h = estimate_gains(&cfg.scene, cfg.rays_per_led, cfg.seed).map_err(runtime)?;
            let v = calibrate_noise(&h, CALIBRATION_TARGET).map_err(runtime)?;
            eprintln!("noise variance calibrated on the aligned channel: {v:e}");
            Ok(v)
        }
    }
}

fn trace(flags: &Flags) -> Outcome<()> {
    let cfg = load(flags)?;
    let dir = out_dir(&cfg)?;
    let (h, spots) = estimate_channel(&cfg.scene, cfg.rays_per_led, cfg.seed).map_err(runtime)?;
    let meta = Provenance::of(&h);
    write(&dir, "H.csv", &export::matrix_csv(&h).map_err(runtime)?)?;
    write(&dir, "spots.csv", &export::spots_csv(&spots, &meta, cfg.spot_export_limit).map_err(runtime)?)?;
    let kappa = condition_number(&h).ok();
    let dominance = diagonal_dominance(&h).ok();
    let mass: f64 = h.cone_mass.iter().sum();
    let metrics = json!({
        "condition_number": kappa,
        "square_condition_number": square_condition_number(&h).ok(),
        "diagonal_dominance": dominance,
        "n_rx": h.n_rx,
        "n_tx": h.n_tx,
        "lambertian_exponent": cfg.scene.leds.lambertian_exponent,
        "half_power_angle_deg": cfg.scene.leds.half_power_angle_deg(),
        "loss_fraction": if mass > 0.0 { h.lost.iter().sum::<f64>() / mass } else { 1.0 },
        "spots": spot_stats(&spots),
    });
    write(&dir, "metrics.json", &export::json_with_provenance(metrics, &meta))?;
    println!(
        "condition_number {}  diagonal_dominance {}",
        kappa.map_or("n/a".into(), |k| format!("{k:.4}")),
        dominance.map_or("n/a".into(), |d| format!("{d:.3}"))
    );
    Ok(())
}

fn optimize(flags: &Flags) -> Outcome<()> {
    let mut cfg = load(flags)?;
    if let Some(s) = flags.seed {
        cfg.optimizer.seed = s;
    }
    if let Some(r) = flags.rays {
        cfg.optimizer.rays_per_led = r;
    }
    let dir = out_dir(&cfg)?;
    let initial = LensParams::of_scene(&cfg.scene).map_err(invalid)?;
    let result = lensopt::optimize(&cfg.scene, &initial, &cfg.optimizer).map_err(|e| match e {
        vlcsim::Error::InfeasibleStart(_) => invalid(e),
        _ => runtime(e),
    })?;
    let meta = Provenance {
        seed: cfg.optimizer.seed,
        rays_per_led: cfg.optimizer.rays_per_led,
        scene_digest: cfg.scene.digest(),
    };
    let params = json!({
        "best_params": result.best_params,
        "best_kappa": result.best_kappa,
        "initial_params": initial,
        "initial_kappa": result.trace.first().map(|t| t.kappa),
        "evaluation_count": result.evaluation_count,
        "options": cfg.optimizer,
    });
    write(&dir, "params.json", &export::json_with_provenance(params, &meta))?;
    write(&dir, "trace.csv", &export::optimizer_trace_csv(&result, &meta).map_err(runtime)?)?;
    println!("best kappa {:.4} after {} evaluations: {:?}", result.best_kappa, result.evaluation_count, result.best_params.to_array());
    Ok(())
}

fn sweep(flags: &Flags) -> Outcome<()> {
    let cfg = load(flags)?;
    if cfg.sweeps.is_empty() {
        return Err(invalid("config has no sweeps"));
    }
    let dir = out_dir(&cfg)?;
    let mut results = Vec::new();
    let mut summary = Vec::new();
    for spec in &cfg.sweeps {
        let mut spec = spec.clone();
        if let Some(s) = flags.seed {
            spec.seed = s;
        }
        if let Some(r) = flags.rays {
            spec.rays_per_led = r;
        }
        if flags.modes.is_some() {
            spec.modes = cfg.modes.clone();
        }
        if spec.noise_variance.is_none() {
            spec.noise_variance = cfg.noise_variance;
        }
        let result = run_sweep(&cfg.scene, &spec).map_err(runtime)?;
        let range = sweeps::movable_range(&result, cfg.kappa_threshold).ok().flatten();
        let collapse = sweeps::collapse_offset(&result);
        let label = export::sweep_label(&result);
        let unit = if spec.motion.is_rotation() { "deg" } else { "mm" };
        match range {
            Some(r) => println!("{label}: kappa <= {} on [{:.3}, {:.3}] {unit}", cfg.kappa_threshold, r.lower, r.upper),
            None => println!("{label}: no movable range at kappa <= {}", cfg.kappa_threshold),
        }
        if let Some(c) = collapse {
            println!("{label}: collapse at {c} {unit}");
        }
        summary.push(json!({
            "sweep": label,
            "threshold": cfg.kappa_threshold,
            "movable_range": range,
            "collapse_offset": collapse,
            "noise_variance": result.noise_variance,
        }));
        results.push(result);
    }
    let meta = provenance(&cfg);
    write(&dir, "sweep.csv", &export::sweep_csv(&results, &meta).map_err(runtime)?)?;
    write(&dir, "sweep_summary.json", &export::json_with_provenance(json!({ "sweeps": summary }), &meta))?;
    Ok(())
}

fn aligned() -> Offset {
    Offset::new(Unit::Receiver, Motion::RotateX, 0.0)
}

fn capacity(flags: &Flags) -> Outcome<()> {
    let cfg = load(flags)?;
    let dir = out_dir(&cfg)?;
    let offsets = if cfg.offsets.is_empty() { vec![aligned()] } else { cfg.offsets.clone() };
    let noise = noise_for(&cfg)?;
    let rows = sweeps::capacity_table(
        &cfg.scene,
        &offsets,
        &cfg.modes,
        noise,
        cfg.rays_per_led,
        cfg.seed,
        cfg.subset_size,
    )
    .map_err(runtime)?;
    write(&dir, "capacity.csv", &export::capacity_csv(&rows, &provenance(&cfg)).map_err(runtime)?)?;
    for r in &rows {
        let mean = r.capacity.iter().sum::<f64>() / r.capacity.len().max(1) as f64;
        println!("{} {}: mean capacity {mean:.4} bits/s/Hz", r.offset, r.mode);
    }
    Ok(())
}

fn symbols(flags: &Flags) -> Outcome<()> {
    let cfg = load(flags)?;
    let dir = out_dir(&cfg)?;
    let offset = cfg.offsets.first().copied().unwrap_or_else(aligned);
    if cfg.offsets.len() > 1 {
        eprintln!("symbols uses the first offset only: {offset}");
    }
    let noise = noise_for(&cfg)?;
    let h = estimate_gains(&offset.apply(&cfg.scene), cfg.rays_per_led, cfg.seed).map_err(runtime)?;
    if h.is_zero() {
        return Err(runtime(format!("channel at {offset} is all zero")));
    }
    let mut entries = Vec::new();
    for &mode in &cfg.modes {
        let p = sigproc::plan(&h, mode, cfg.subset_size).map_err(runtime)?;
        let report = sigproc::simulate_symbols(&h, &p, noise, cfg.n_symbols, cfg.seed).map_err(runtime)?;
        let ideal = sigproc::evaluate_with(&h, noise, mode, cfg.subset_size).map_err(runtime)?;
        let mean_ber = report.ber.iter().sum::<f64>() / report.ber.len() as f64;
        println!("{offset} {mode}: mean BER {mean_ber:.3e} over {} symbols", report.n_symbols);
        entries.push((report, ideal));
    }
    write(&dir, "ber.csv", &export::ber_csv(&entries, &Provenance::of(&h)).map_err(runtime)?)?;
    Ok(())
}
