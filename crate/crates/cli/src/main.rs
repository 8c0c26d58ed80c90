use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use railgauge::calibration::{calibrate_camera, fit_laser_plane, CalibrationOptions, CalibrationSet};
use railgauge::io::{read_csv, read_toml, write_csv, OutputRecord};
use railgauge::pipeline::{compare, run_odometry, run_pipeline, PipelineConfig, RunInputs};
use railgauge::profile_fit::{fit_rail, wear_report, FitOptions, RailProfileTemplate};
use railgauge::sensor_sim::{simulate, ScenarioConfig};
use railgauge::track_model::Side;
use railgauge::vision::{CameraFile, SensorBounds};
use railgauge::{Error, Matrix3, Result, Vector2};

/// Track geometry measurement from laser-line cameras, an IMU and an encoder.
#[derive(Parser, Debug)]
#[command(name = "railgauge", version)]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Options file (TOML); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic run with exact ground truth.
    Simulate {
        scenario: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the IMU and encoder sample period (s).
        #[arg(long)]
        dt: Option<f64>,
        /// Output directory.
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Calibrate a camera and its laser plane from correspondences.
    Calibrate {
        correspondences: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fit the rail-head template to one cross-section cloud.
    FitProfile {
        cloud: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the curvature-matching odometry alone.
    Odometry {
        run: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate the track irregularities of a run.
    Estimate {
        run: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Compare an estimate with ground truth.
    Compare {
        estimate: PathBuf,
        truth: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

fn load_config<T: Default + serde::de::DeserializeOwned>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => read_toml(p),
        None => Ok(T::default()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { scenario, seed, dt, out } => cmd_simulate(&scenario, seed, dt, &out),
        Command::Calibrate { correspondences, common } => cmd_calibrate(&correspondences, &common),
        Command::FitProfile { cloud, common } => cmd_fit_profile(&cloud, &common),
        Command::Odometry { run, common } => {
            let cfg = pipeline_config(&common)?;
            let report = run_odometry(&cfg, &RunInputs::load(&run)?)?;
            report.write(&common.out)?;
            println!("{} anchors written to {}", report.anchors.len(), common.out.display());
            for a in &report.anchors {
                println!("  s_app {:10.3} m -> s {:10.3} m (ne2 {:.2e})", a.s_app, a.s_ideal, a.ne2_min);
            }
            Ok(())
        }
        Command::Estimate { run, common } => {
            let cfg = pipeline_config(&common)?;
            let inputs = RunInputs::load(&run)?;
            let out = run_pipeline(&cfg, &inputs)?;
            out.write(&common.out, &run, &cfg)?;
            println!(
                "{} stations, {} frames quarantined, {} anchors; results in {}",
                out.records.len(),
                out.quarantined.len(),
                out.anchors.len(),
                common.out.display()
            );
            Ok(())
        }
        Command::Compare { estimate, truth, common } => cmd_compare(&estimate, &truth, &common),
    }
}

fn pipeline_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg: PipelineConfig = load_config(common.config.as_deref())?;
    if let Ok(v) = std::env::var("RAILGAUGE_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Input(format!("RAILGAUGE_THREADS must be a positive integer, got '{v}'")))?;
        cfg.max_threads = Some(n);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_simulate(scenario: &Path, seed: Option<u64>, dt: Option<f64>, out: &Path) -> Result<()> {
    let mut cfg = ScenarioConfig::load(scenario)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(dt) = dt {
        if dt.is_nan() || dt <= 0.0 {
            return Err(Error::Input(format!("--dt must be positive, got {dt}")));
        }
        cfg.rates.imu = 1.0 / dt;
        cfg.rates.encoder = 1.0 / dt;
    }
    let sim = simulate(&cfg)?;
    sim.write(out)?;
    println!(
        "{} IMU samples, {} frames, {} truth stations written to {}",
        sim.imu.len(),
        sim.frames.len(),
        sim.truth.len(),
        out.display()
    );
    Ok(())
}

/// Options of `calibrate`.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CalibrateConfig {
    /// Known intrinsic matrix, row-major; only the pose is estimated.
    intrinsics: Option<[f64; 9]>,
    /// Skip the reprojection refinement.
    linear_only: bool,
    max_refine_iter: Option<usize>,
    rms_warning: Option<f64>,
    sensor: Option<SensorBounds>,
}

fn cmd_calibrate(path: &Path, common: &Common) -> Result<()> {
    let cfg: CalibrateConfig = load_config(common.config.as_deref())?;
    let set = CalibrationSet::load(path)?;
    let mut opts = CalibrationOptions { refine: !cfg.linear_only, ..Default::default() };
    if let Some(k) = cfg.intrinsics {
        opts.intrinsics = Some(Matrix3::from_row_slice(&k));
    }
    if let Some(n) = cfg.max_refine_iter {
        opts.max_refine_iter = n;
    }
    if let Some(r) = cfg.rms_warning {
        opts.rms_warning = r;
    }
    let cal = calibrate_camera(&set.pattern, &opts)?;
    let plane = fit_laser_plane(&set.laser)?;
    create_dir(&common.out)?;
    let file = common.out.join("camera.toml");
    CameraFile::new(&cal.camera, &plane.plane, cfg.sensor).save(&file)?;
    println!("reprojection RMS {:.4} px, laser-plane RMS {:.3e} m", cal.rms, plane.rms);
    if cal.quality_warning {
        println!("warning: reprojection RMS above {:.3} px", opts.rms_warning);
    }
    println!("camera written to {}", file.display());
    Ok(())
}

/// Options of `fit-profile`.
#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FitProfileConfig {
    /// Template file; the built-in template when absent.
    template: Option<PathBuf>,
    side: Side,
    fit: FitOptions,
}

impl Default for FitProfileConfig {
    fn default() -> Self {
        Self { template: None, side: Side::Right, fit: FitOptions::default() }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CloudPoint {
    y: f64,
    z: f64,
}

#[derive(Debug, Serialize)]
struct ProfileFitRow {
    #[serde(rename = "y_Orp")]
    y_orp: f64,
    #[serde(rename = "z_Orp")]
    z_orp: f64,
    phi_rp: f64,
    rms: f64,
    lambda: f64,
    iterations: usize,
    converged: bool,
}

#[derive(Debug, Serialize)]
struct WearRow {
    y: f64,
    z: f64,
    wear: f64,
}

fn cmd_fit_profile(path: &Path, common: &Common) -> Result<()> {
    let cfg: FitProfileConfig = load_config(common.config.as_deref())?;
    let template = match &cfg.template {
        Some(p) => RailProfileTemplate::load(p)?,
        None => RailProfileTemplate::default(),
    };
    let rows: Vec<CloudPoint> = read_csv(path)?;
    let cloud: Vec<Vector2<f64>> = rows.iter().map(|p| Vector2::new(p.y, p.z)).collect();
    let fit = fit_rail(&cloud, cfg.side, &template, &cfg.fit)?;
    // The wear report works in the right-rail frame of the template.
    let local: Vec<Vector2<f64>> = match cfg.side {
        Side::Left => cloud.iter().map(|p| Vector2::new(-p.x, p.y)).collect(),
        Side::Right => cloud.clone(),
    };
    let local_fit = match cfg.side {
        Side::Left => fit_rail(&local, Side::Right, &template, &cfg.fit)?,
        Side::Right => fit.clone(),
    };
    let wear = wear_report(&local, &local_fit, &template)?;

    create_dir(&common.out)?;
    write_csv(
        &common.out.join("profile_fit.csv"),
        [ProfileFitRow {
            y_orp: fit.origin.x,
            z_orp: fit.origin.y,
            phi_rp: fit.roll,
            rms: fit.rms,
            lambda: fit.lambda,
            iterations: fit.iterations,
            converged: fit.converged,
        }],
    )?;
    write_csv(
        &common.out.join("wear.csv"),
        cloud.iter().zip(&wear).map(|(p, &w)| WearRow { y: p.x, z: p.y, wear: w }),
    )?;
    println!(
        "origin ({:.6}, {:.6}) m, roll {:.6} rad, rms {:.3e} m, {} iterations{}",
        fit.origin.x,
        fit.origin.y,
        fit.roll,
        fit.rms,
        fit.iterations,
        if fit.converged { "" } else { " (not converged)" }
    );
    Ok(())
}

/// Options of `compare`.
#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CompareConfig {
    /// High-pass cutoff applied to al/vp of both inputs (m); 0 disables it.
    highpass_wavelength: f64,
    resample_spacing: f64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self { highpass_wavelength: p.highpass_wavelength, resample_spacing: p.resample_spacing }
    }
}

fn cmd_compare(estimate: &Path, truth: &Path, common: &Common) -> Result<()> {
    let cfg: CompareConfig = load_config(common.config.as_deref())?;
    let est: Vec<OutputRecord> = read_csv(estimate)?;
    let tru: Vec<OutputRecord> = read_csv(truth)?;
    let c = compare(&est, &tru, cfg.highpass_wavelength, cfg.resample_spacing)?;
    create_dir(&common.out)?;
    write_csv(&common.out.join("errors.csv"), &c.channels)?;
    write_csv(&common.out.join("overlay.csv"), &c.overlay)?;
    println!("{:<8}{:>14}{:>14}{:>8}", "channel", "rms (m)", "max (m)", "n");
    for ch in &c.channels {
        println!("{:<8}{:>14.4e}{:>14.4e}{:>8}", ch.channel, ch.rms, ch.max, ch.count);
    }
    println!("error table and overlay written to {}", common.out.display());
    Ok(())
}
