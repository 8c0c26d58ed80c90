//! The measurement process: rail-head fits, odometry, attitude fusion and
//! the relative-motion ODE combined into the four irregularities plus twist.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix2, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fusion::{
    fuse_step, relative_euler, rest_gyro_bias, AttitudeEstimate, AttitudeRecord, FusionOptions, ImuSample,
};
use crate::io::{
    quality, read_csv, run_files, thread_pool, write_csv, EncoderRecord, FrameRecord, Manifest, OutputRecord,
    PixelRecord, RunInfo,
};
use crate::math::{highpass_zero_phase, interp, quadratic_derivatives, rpy};
use crate::odometry::{Anchor, CurvatureFunction, Ne2Sample, Odometer, OdometryOptions};
use crate::profile_fit::{fit_rail, FitOptions, FitResult, RailProfileTemplate};
use crate::track_model::{exact_frame_motion, frame_velocity, FrameMotion, Side, TrackFrameState, TrackLayout};
use crate::vision::{triangulate_cloud, CameraFile};
use crate::{Error, Result, GRAVITY};

/// Fitted rail-profile poses of both rails in one camera frame, TGMS
/// cross-section coordinates (y, z).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePair {
    pub t: f64,
    pub left: Vector2<f64>,
    pub right: Vector2<f64>,
    pub phi_left: f64,
    pub phi_right: f64,
    pub quality: u32,
}

impl FramePair {
    fn check_sides(&self) -> Result<()> {
        if self.left.x > self.right.x {
            Ok(())
        } else {
            Err(Error::SideSwap { left_y: self.left.x, right_y: self.right.x })
        }
    }
}

/// Gauge variation and cross level from the left-right difference of the
/// rail-profile origins, rotated into the track frame by the TGMS roll.
pub fn relative_irregularities(fp: &FramePair, phi: f64, half_gauge: f64) -> Result<(f64, f64)> {
    fp.check_sides()?;
    let dy = fp.left.x - fp.right.x;
    let dz = fp.left.y - fp.right.y;
    let gv = dy - phi * dz - 2.0 * half_gauge;
    let cl = phi * dy + dz;
    Ok((gv, cl))
}

/// Alignment and vertical profile from the half-sum of the rail-profile
/// origins plus the TGMS offset `r` relative to the track frame.
pub fn absolute_irregularities(fp: &FramePair, phi: f64, r_y: f64, r_z: f64) -> (f64, f64) {
    let sy = fp.left.x + fp.right.x;
    let sz = fp.left.y + fp.right.y;
    let al = 0.5 * sy - 0.5 * phi * sz + r_y;
    let vp = 0.5 * phi * sy + 0.5 * sz + r_z;
    (al, vp)
}

/// How the motion of the track frame enters the relative-motion equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameModel {
    /// Curvature rates `(rho_tw, rho_v, rho_h) V` and gravity linearised in
    /// cant and slope.
    Linear,
    /// Exact frame rotation rate and gravity direction; identical to
    /// `Linear` on flat uncanted track.
    #[default]
    Exact,
}

impl FrameModel {
    pub fn motion(self, state: &TrackFrameState, v: f64, vdot: f64) -> FrameMotion {
        match self {
            FrameModel::Linear => frame_velocity(state, v, vdot),
            FrameModel::Exact => exact_frame_motion(state, v, vdot),
        }
    }

    /// `-A_t^T (0, 0, g)`: gravity seen in the track frame.
    pub fn gravity(self, state: &TrackFrameState) -> Vector3<f64> {
        match self {
            FrameModel::Linear => Vector3::new(GRAVITY * state.theta_t, -GRAVITY * state.phi_t, -GRAVITY),
            FrameModel::Exact => -GRAVITY * state.a_t.row(2).transpose(),
        }
    }
}

/// Lateral and vertical components of the accelerometer reading projected
/// into the track frame with the small-angle relative rotation.
pub fn projected_acceleration(accel: &Vector3<f64>, euler: (f64, f64, f64)) -> Vector2<f64> {
    let (phi, theta, psi) = euler;
    let a = accel;
    Vector2::new(a.y + a.x * psi - a.z * phi, a.z - a.x * theta + a.y * phi)
}

/// Relative acceleration on straight, level track: the projected
/// accelerometer reading minus gravity.
pub fn straight_rhs(accel: &Vector3<f64>, euler: (f64, f64, f64)) -> Vector2<f64> {
    let p = projected_acceleration(accel, euler);
    Vector2::new(p.x, p.y - GRAVITY)
}

/// Coefficients of `r'' + C r' + K r = f` at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LtvInput {
    pub f: Vector2<f64>,
    pub c: Matrix2<f64>,
    pub k: Matrix2<f64>,
}

impl LtvInput {
    /// Builds the equation from the projected accelerometer reading and the
    /// track-frame motion.
    pub fn new(projected: &Vector2<f64>, model: FrameModel, state: &TrackFrameState, v: f64, vdot: f64) -> Self {
        let m = model.motion(state, v, vdot);
        let g = model.gravity(state);
        let f = Vector2::new(projected.x + g.y - m.r_ddot.y, projected.y + g.z - m.r_ddot.z);
        let (w, al) = (m.omega, m.alpha);
        // (alpha~ + omega~ omega~) and 2 omega~ restricted to the (y, z) block.
        let k = Matrix2::new(-(w.x * w.x + w.z * w.z), w.y * w.z - al.x, w.y * w.z + al.x, -(w.x * w.x + w.y * w.y));
        let c = Matrix2::new(0.0, -2.0 * w.x, 2.0 * w.x, 0.0);
        LtvInput { f, c, k }
    }

    pub fn acceleration(&self, r: &Vector2<f64>, rdot: &Vector2<f64>) -> Vector2<f64> {
        self.f - self.c * rdot - self.k * r
    }
}

/// Relative position and velocity `(r_y, r_z, r_y', r_z')`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RelativeState {
    pub r: Vector2<f64>,
    pub rdot: Vector2<f64>,
}

/// Classical fixed-step RK4 over the sample times `t`; `input` is evaluated
/// at every node and at every interval midpoint.
pub fn integrate_rk4(
    t: &[f64],
    initial: RelativeState,
    mut input: impl FnMut(f64) -> Result<LtvInput>,
) -> Result<Vec<RelativeState>> {
    let mut out = Vec::with_capacity(t.len());
    if t.is_empty() {
        return Ok(out);
    }
    out.push(initial);
    let mut x = initial;
    let mut at_node = input(t[0])?;
    for w in t.windows(2) {
        let h = w[1] - w[0];
        let mid = input(0.5 * (w[0] + w[1]))?;
        let next = input(w[1])?;
        let d = |inp: &LtvInput, r: Vector2<f64>, v: Vector2<f64>| (v, inp.acceleration(&r, &v));
        let (k1r, k1v) = d(&at_node, x.r, x.rdot);
        let (k2r, k2v) = d(&mid, x.r + 0.5 * h * k1r, x.rdot + 0.5 * h * k1v);
        let (k3r, k3v) = d(&mid, x.r + 0.5 * h * k2r, x.rdot + 0.5 * h * k2v);
        let (k4r, k4v) = d(&next, x.r + h * k3r, x.rdot + h * k3v);
        x = RelativeState {
            r: x.r + h / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r),
            rdot: x.rdot + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
        };
        if !(x.r.iter().chain(x.rdot.iter()).all(|v| v.is_finite())) {
            return Err(Error::Numerical(format!("relative motion diverged at t = {}", w[1])));
        }
        out.push(x);
        at_node = next;
    }
    Ok(out)
}

/// Time-aligned inputs of the relative-motion equations, one entry per IMU
/// sample.
#[derive(Debug, Clone, Copy)]
pub struct MotionStreams<'a> {
    pub t: &'a [f64],
    pub imu: &'a [ImuSample],
    /// TGMS angles relative to the track frame.
    pub euler: &'a [(f64, f64, f64)],
    pub s: &'a [f64],
    pub v: &'a [f64],
    pub vdot: &'a [f64],
}

/// Integrates the relative-motion equations at the IMU rate. Midpoint
/// inputs interpolate the measured streams linearly; the track-frame terms
/// are evaluated at the interpolated position.
pub fn integrate_relative_motion(
    initial: RelativeState,
    streams: &MotionStreams,
    layout: &TrackLayout,
    model: FrameModel,
) -> Result<Vec<RelativeState>> {
    let MotionStreams { t, imu, euler, s, v, vdot } = *streams;
    let n = t.len();
    if [imu.len(), euler.len(), s.len(), v.len(), vdot.len()].iter().any(|&k| k != n) {
        return Err(Error::Input("relative-motion streams differ in length".into()));
    }
    let projected: Vec<Vector2<f64>> =
        imu.iter().zip(euler).map(|(x, e)| projected_acceleration(&x.accel, *e)).collect();
    let nodes = s.iter().map(|&si| layout.frame_at(si)).collect::<Result<Vec<_>>>()?;
    let input = |tq: f64| -> Result<LtvInput> {
        let i = t.partition_point(|&x| x <= tq).saturating_sub(1);
        if t[i] == tq {
            return Ok(LtvInput::new(&projected[i], model, &nodes[i], v[i], vdot[i]));
        }
        let j = (i + 1).min(n - 1);
        let w = (tq - t[i]) / (t[j] - t[i]);
        let lerp = |a: f64, b: f64| a + w * (b - a);
        let p = projected[i] + w * (projected[j] - projected[i]);
        let state = layout.frame_at(lerp(s[i], s[j]))?;
        Ok(LtvInput::new(&p, model, &state, lerp(v[i], v[j]), lerp(vdot[i], vdot[j])))
    };
    integrate_rk4(t, initial, input)
}

/// Rejects streams whose sampling interval exceeds `factor` times the median.
pub fn check_gaps(t: &[f64], factor: f64) -> Result<f64> {
    if t.len() < 2 {
        return Err(Error::Input("stream needs at least two samples".into()));
    }
    let mut dts: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    if let Some(i) = dts.iter().position(|d| !(*d > 0.0)) {
        return Err(Error::Input(format!("time not increasing at t = {}", t[i + 1])));
    }
    let mut sorted = dts.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    if let Some(i) = dts.iter().position(|d| *d > factor * median) {
        return Err(Error::StreamGap { t: t[i], gap: dts.swap_remove(i) });
    }
    Ok(median)
}

/// Twist over `base` metres: `(cl(s) - cl(s - base)) / base`, NaN where the
/// series does not reach back far enough.
pub fn twist(s: &[f64], cl: &[f64], base: f64) -> Result<Vec<f64>> {
    if !(base > 0.0) {
        return Err(Error::Input(format!("twist base {base} m must be positive")));
    }
    let (Some(&first), Some(&last)) = (s.first(), s.last()) else {
        return Ok(Vec::new());
    };
    if base > last - first {
        return Err(Error::Input(format!("twist base {base} m exceeds the measured span {} m", last - first)));
    }
    Ok(s.iter()
        .zip(cl)
        .map(|(&si, &c)| if si - base >= first { (c - interp(s, cl, si - base)) / base } else { f64::NAN })
        .collect())
}

/// Zero-phase high-pass in space: resamples `(s, x)` on a uniform grid,
/// removes wavelengths longer than `wavelength` and maps back onto `s`.
/// `s` must be strictly increasing.
pub fn highpass_in_space(s: &[f64], x: &[f64], wavelength: f64, spacing: f64) -> Vec<f64> {
    if s.len() < 3 || !(wavelength > 0.0) {
        return x.to_vec();
    }
    let (s0, s1) = (s[0], s[s.len() - 1]);
    let n = ((s1 - s0) / spacing).ceil() as usize + 1;
    let step = (s1 - s0) / (n - 1) as f64;
    let grid: Vec<f64> = (0..n).map(|i| s0 + i as f64 * step).collect();
    let resampled: Vec<f64> = grid.iter().map(|&g| interp(s, x, g)).collect();
    let filtered = highpass_zero_phase(&resampled, wavelength / step);
    s.iter().map(|&si| interp(&grid, &filtered, si)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub frame_model: FrameModel,
    /// Refine the encoder position by curvature matching; when off the
    /// encoder reading is used with the run's start offset.
    pub use_odometry: bool,
    pub odometry: OdometryOptions,
    pub fusion: FusionOptions,
    /// When positive, the gyro bias is the mean over this initial rest
    /// period (s) instead of `fusion.gyro_bias`.
    pub rest_duration: f64,
    /// TGMS angles relative to the track at the first IMU sample (rad).
    pub initial_euler: [f64; 3],
    /// Relative offset (r_y, r_z) at the first IMU sample (m); the absolute
    /// irregularities are relative to this starting pose.
    pub initial_r: [f64; 2],
    /// Relative velocity at the first IMU sample (m/s).
    pub initial_rdot: [f64; 2],
    /// Window of the local-quadratic speed estimate (s).
    pub derivative_window: f64,
    /// Longest wavelength kept in r_y, r_z (m); 0 integrates raw.
    pub highpass_wavelength: f64,
    /// Grid spacing of the spatial high-pass (m).
    pub resample_spacing: f64,
    /// Sampling intervals longer than this multiple of the median are gaps.
    pub gap_factor: f64,
    pub twist_base: f64,
    pub fit: FitOptions,
    /// Cap on the fit pool size (also capped by `RAILGAUGE_THREADS`).
    pub max_threads: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            frame_model: FrameModel::default(),
            use_odometry: true,
            odometry: OdometryOptions::default(),
            fusion: FusionOptions::default(),
            rest_duration: 0.0,
            initial_euler: [0.0; 3],
            initial_r: [0.0; 2],
            initial_rdot: [0.0; 2],
            derivative_window: 1.0,
            highpass_wavelength: 70.0,
            resample_spacing: 0.25,
            gap_factor: 3.0,
            twist_base: 3.0,
            fit: FitOptions::default(),
            max_threads: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = crate::io::read_toml(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("derivative_window", self.derivative_window),
            ("resample_spacing", self.resample_spacing),
            ("gap_factor", self.gap_factor),
            ("twist_base", self.twist_base),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Input(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.highpass_wavelength >= 0.0) || !(self.rest_duration >= 0.0) {
            return Err(Error::Input("highpass_wavelength and rest_duration must be non-negative".into()));
        }
        Ok(())
    }
}

/// Everything read from a run directory.
#[derive(Debug, Clone)]
pub struct RunInputs {
    pub layout: TrackLayout,
    pub left: CameraFile,
    pub right: CameraFile,
    pub template: RailProfileTemplate,
    pub run: RunInfo,
    pub imu: Vec<ImuSample>,
    pub encoder: Vec<EncoderRecord>,
    pub frames: Vec<FrameRecord>,
    pub pixels: Vec<PixelRecord>,
}

impl RunInputs {
    /// Loads a run directory; the calibration files are checked first so a
    /// missing one is reported before any stream is parsed.
    pub fn load(dir: &Path) -> Result<Self> {
        use run_files::*;
        let left = CameraFile::load(&dir.join(CAMERA_LEFT))?;
        let right = CameraFile::load(&dir.join(CAMERA_RIGHT))?;
        Ok(Self {
            layout: TrackLayout::load(&dir.join(LAYOUT))?,
            left,
            right,
            template: RailProfileTemplate::load(&dir.join(TEMPLATE))?,
            run: RunInfo::load(&dir.join(RUN))?,
            imu: crate::fusion::load_imu(&dir.join(IMU))?,
            encoder: read_csv(&dir.join(ENCODER))?,
            frames: read_csv(&dir.join(FRAMES))?,
            pixels: read_csv(&dir.join(PIXELS))?,
        })
    }

    pub fn camera(&self, side: Side) -> &CameraFile {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }
}

/// Row of the profile-fit log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub frame_id: usize,
    pub side: Side,
    #[serde(rename = "y_Orp")]
    pub y_orp: f64,
    #[serde(rename = "z_Orp")]
    pub z_orp: f64,
    pub phi_rp: f64,
    pub rms: f64,
    pub converged: bool,
}

/// Per-IMU-sample motion log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionRecord {
    pub t: f64,
    pub s_app: f64,
    pub s: f64,
    pub v: f64,
    pub vdot: f64,
    pub r_y: f64,
    pub r_z: f64,
}

/// A frame left out of the output, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct Quarantined {
    pub frame_id: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub records: Vec<OutputRecord>,
    pub fits: Vec<FitRecord>,
    pub anchors: Vec<Anchor>,
    pub ne2: Vec<Ne2Sample>,
    pub attitude: Vec<AttitudeRecord>,
    pub motion: Vec<MotionRecord>,
    pub quarantined: Vec<Quarantined>,
}

pub const MOTION_FILE: &str = "motion.csv";

impl PipelineOutput {
    /// Writes the estimate and the diagnostic logs to `dir`, plus a manifest
    /// hashing them together with the inputs in `input_dir`.
    pub fn write(&self, dir: &Path, input_dir: &Path, cfg: &PipelineConfig) -> Result<()> {
        use run_files::*;
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
        write_csv(&dir.join(ESTIMATE), &self.records)?;
        write_csv(&dir.join(FITS), &self.fits)?;
        write_csv(&dir.join(ANCHORS), &self.anchors)?;
        write_csv(&dir.join(NE2), &self.ne2)?;
        write_csv(&dir.join(ATTITUDE), &self.attitude)?;
        write_csv(&dir.join(MOTION_FILE), &self.motion)?;
        let mut manifest = Manifest::build(
            dir,
            "estimate",
            &[ESTIMATE, FITS, ANCHORS, NE2, ATTITUDE, MOTION_FILE],
            crate::io::to_table(cfg)?,
        )?;
        let inputs = [LAYOUT, CAMERA_LEFT, CAMERA_RIGHT, TEMPLATE, RUN, IMU, ENCODER, FRAMES, PIXELS];
        let mut hashed = Manifest::build(input_dir, "estimate", &inputs, toml::Table::new())?.files;
        for f in &mut hashed {
            f.path = input_dir.join(&f.path).display().to_string();
        }
        manifest.files.extend(hashed);
        manifest.save(&dir.join(MANIFEST))
    }
}

/// A frame with its left and right fits.
pub type FittedFrame = (FrameRecord, [FitResult; 2]);

/// Fits both rails of every frame in parallel. Frames whose pixels cannot be
/// triangulated or fitted are returned as quarantined.
pub fn fit_frames(
    inputs: &RunInputs,
    opts: &FitOptions,
    max_threads: Option<usize>,
) -> Result<(Vec<FittedFrame>, Vec<Quarantined>)> {
    let mut clouds: BTreeMap<(usize, usize), Vec<Vector2<f64>>> = BTreeMap::new();
    for p in &inputs.pixels {
        let k = match p.side {
            Side::Left => 0,
            Side::Right => 1,
        };
        clouds.entry((p.frame_id, k)).or_default().push(Vector2::new(p.px, p.py));
    }
    let cams = [
        (Side::Left, inputs.left.camera()?, inputs.left.laser_plane()?),
        (Side::Right, inputs.right.camera()?, inputs.right.laser_plane()?),
    ];
    let fit_one = |fr: &FrameRecord| -> Result<[FitResult; 2]> {
        let mut fits = Vec::with_capacity(2);
        for (k, (side, cam, plane)) in cams.iter().enumerate() {
            let px = clouds.get(&(fr.frame_id, k)).map(Vec::as_slice).unwrap_or(&[]);
            if px.is_empty() {
                return Err(Error::Visibility { frame: fr.frame_id, side: side.to_string() });
            }
            let cloud = triangulate_cloud(cam, plane, px)?;
            let section: Vec<Vector2<f64>> = cloud.points.iter().map(|u| Vector2::new(u.y, u.z)).collect();
            fits.push(fit_rail(&section, *side, &inputs.template, opts)?);
        }
        let right = fits.pop().expect("two fits");
        let left = fits.pop().expect("two fits");
        Ok([left, right])
    };
    let pool = thread_pool(max_threads)?;
    let results: Vec<_> = pool.install(|| inputs.frames.par_iter().map(|fr| (*fr, fit_one(fr))).collect());
    let mut ok = Vec::with_capacity(results.len());
    let mut bad = Vec::new();
    for (fr, r) in results {
        match r {
            Ok(f) => ok.push((fr, f)),
            Err(e) => {
                log::warn!("frame {} quarantined: {e}", fr.frame_id);
                bad.push(Quarantined { frame_id: fr.frame_id, reason: e.to_string() });
            }
        }
    }
    Ok((ok, bad))
}

/// Track positions at the IMU times: encoder resampled to the IMU clock,
/// optionally refined by curvature matching.
struct Positions {
    s_app: Vec<f64>,
    s: Vec<f64>,
    odometer: Option<Odometer>,
}

fn positions(inputs: &RunInputs, cfg: &PipelineConfig, t: &[f64], dt: f64) -> Result<Positions> {
    let enc_t: Vec<f64> = inputs.encoder.iter().map(|e| e.t).collect();
    let enc_s: Vec<f64> = inputs.encoder.iter().map(|e| e.s_app).collect();
    check_gaps(&enc_t, cfg.gap_factor)?;
    let s_app: Vec<f64> = t.iter().map(|&ti| interp(&enc_t, &enc_s, ti)).collect();
    let s_app0 = enc_s[0];
    let start = inputs.run.start_s;
    if !cfg.use_odometry {
        let s = s_app.iter().map(|&v| start + (v - s_app0)).collect();
        return Ok(Positions { s_app, s, odometer: None });
    }
    let half = half_width(cfg.derivative_window, dt);
    let (v_app, _) = quadratic_derivatives(&s_app, dt, half);
    let bias = gyro_bias(inputs, cfg);
    let functions = CurvatureFunction::table(&inputs.layout, cfg.odometry.grid)?;
    let mut od = Odometer::new(functions, (s_app0, start), cfg.odometry);
    for ((sample, &sa), &v) in inputs.imu.iter().zip(&s_app).zip(&v_app) {
        od.push(sa, sample.gyro.z - bias.z, v)?;
    }
    for &k in od.skipped() {
        log::warn!("curve {k} passed without a detected exit");
    }
    let s = s_app.iter().map(|&v| od.correct(v)).collect();
    Ok(Positions { s_app, s, odometer: Some(od) })
}

/// Corrected position at one IMU sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionRecord {
    pub t: f64,
    pub s_app: f64,
    pub s: f64,
}

/// Result of the encoder correction alone.
#[derive(Debug, Clone, Default)]
pub struct OdometryReport {
    pub anchors: Vec<Anchor>,
    pub ne2: Vec<Ne2Sample>,
    pub positions: Vec<PositionRecord>,
}

pub const POSITIONS_FILE: &str = "positions.csv";

impl OdometryReport {
    pub fn write(&self, dir: &Path) -> Result<()> {
        use run_files::*;
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
        write_csv(&dir.join(ANCHORS), &self.anchors)?;
        write_csv(&dir.join(NE2), &self.ne2)?;
        write_csv(&dir.join(POSITIONS_FILE), &self.positions)
    }
}

/// Runs only the curvature-matching odometry over a loaded run.
pub fn run_odometry(cfg: &PipelineConfig, inputs: &RunInputs) -> Result<OdometryReport> {
    cfg.validate()?;
    let t: Vec<f64> = inputs.imu.iter().map(|s| s.t).collect();
    let dt = check_gaps(&t, cfg.gap_factor)?;
    if inputs.encoder.len() < 2 {
        return Err(Error::Input("encoder stream needs at least two samples".into()));
    }
    let cfg = PipelineConfig { use_odometry: true, ..cfg.clone() };
    let pos = positions(inputs, &cfg, &t, dt)?;
    let od = pos.odometer.expect("odometry enabled");
    let positions = (0..t.len()).map(|i| PositionRecord { t: t[i], s_app: pos.s_app[i], s: pos.s[i] }).collect();
    Ok(OdometryReport { anchors: od.anchors().to_vec(), ne2: od.trace().to_vec(), positions })
}

fn half_width(window: f64, dt: f64) -> usize {
    ((0.5 * window / dt).round() as usize).max(1)
}

fn gyro_bias(inputs: &RunInputs, cfg: &PipelineConfig) -> Vector3<f64> {
    if cfg.rest_duration > 0.0 {
        rest_gyro_bias(&inputs.imu, cfg.rest_duration)
    } else {
        Vector3::from(cfg.fusion.gyro_bias)
    }
}

/// Runs the full measurement process over a loaded run.
pub fn run_pipeline(cfg: &PipelineConfig, inputs: &RunInputs) -> Result<PipelineOutput> {
    cfg.validate()?;
    let imu = &inputs.imu;
    let t: Vec<f64> = imu.iter().map(|s| s.t).collect();
    let dt = check_gaps(&t, cfg.gap_factor)?;
    if inputs.encoder.len() < 2 {
        return Err(Error::Input("encoder stream needs at least two samples".into()));
    }
    let layout = &inputs.layout;

    let pos = positions(inputs, cfg, &t, dt)?;
    let (v, vdot) = quadratic_derivatives(&pos.s, dt, half_width(cfg.derivative_window, dt));
    let states = pos.s.iter().map(|&s| layout.frame_at(s)).collect::<Result<Vec<_>>>()?;

    // Attitude.
    let mut fusion = cfg.fusion;
    fusion.gyro_bias = gyro_bias(inputs, cfg).into();
    let [e0, e1, e2] = cfg.initial_euler;
    let mut est = AttitudeEstimate::new(
        t[0],
        &(states[0].a_t * rpy(e0, e1, e2)),
        imu[0].gyro - Vector3::from(fusion.gyro_bias),
        fusion.beta,
    );
    let mut euler = Vec::with_capacity(t.len());
    for (i, sample) in imu.iter().enumerate() {
        if i > 0 {
            let pred = cfg.frame_model.motion(&states[i], v[i], vdot[i]).r_ddot;
            est = fuse_step(&est, sample, &pred, &states[i].a_t, &fusion)?;
        }
        euler.push(relative_euler(&est, &states[i])?);
    }

    // Relative motion.
    let streams = MotionStreams { t: &t, imu, euler: &euler, s: &pos.s, v: &v, vdot: &vdot };
    let initial = RelativeState { r: Vector2::from(cfg.initial_r), rdot: Vector2::from(cfg.initial_rdot) };
    let rel = integrate_relative_motion(initial, &streams, layout, cfg.frame_model)?;
    let mut r_y: Vec<f64> = rel.iter().map(|x| x.r.x).collect();
    let mut r_z: Vec<f64> = rel.iter().map(|x| x.r.y).collect();

    if cfg.highpass_wavelength > 0.0 {
        // Filter in space over the strictly advancing samples.
        let mut keep = Vec::with_capacity(t.len());
        for (i, &s) in pos.s.iter().enumerate() {
            if keep.last().is_none_or(|&k: &usize| s > pos.s[k]) {
                keep.push(i);
            }
        }
        let ks: Vec<f64> = keep.iter().map(|&i| pos.s[i]).collect();
        for r in [&mut r_y, &mut r_z] {
            let kr: Vec<f64> = keep.iter().map(|&i| r[i]).collect();
            let f = highpass_in_space(&ks, &kr, cfg.highpass_wavelength, cfg.resample_spacing);
            for (&i, fv) in keep.iter().zip(f) {
                r[i] = fv;
            }
            // Samples at a standstill take the value at their position.
            let mut last = 0;
            for i in 0..r.len() {
                if keep.binary_search(&i).is_ok() {
                    last = i;
                } else {
                    r[i] = r[last];
                }
            }
        }
    }

    // Frames.
    let (fitted, mut quarantined) = fit_frames(inputs, &cfg.fit, cfg.max_threads)?;
    let phi: Vec<f64> = euler.iter().map(|e| e.0).collect();
    let mut fits = Vec::with_capacity(2 * fitted.len());
    let mut rows: Vec<OutputRecord> = Vec::with_capacity(fitted.len());
    for (fr, [lf, rf]) in &fitted {
        for (side, f) in [(Side::Left, lf), (Side::Right, rf)] {
            fits.push(FitRecord {
                frame_id: fr.frame_id,
                side,
                y_orp: f.origin.x,
                z_orp: f.origin.y,
                phi_rp: f.roll,
                rms: f.rms,
                converged: f.converged,
            });
        }
        let q = if lf.converged && rf.converged { quality::OK } else { quality::FIT_NOT_CONVERGED };
        let fp =
            FramePair { t: fr.t, left: lf.origin, right: rf.origin, phi_left: lf.roll, phi_right: rf.roll, quality: q };
        let s = interp(&t, &pos.s, fr.t);
        let ph = interp(&t, &phi, fr.t);
        let (gv, cl) = match relative_irregularities(&fp, ph, layout.half_gauge) {
            Ok(x) => x,
            Err(e) => {
                log::warn!("frame {} quarantined: {e}", fr.frame_id);
                quarantined.push(Quarantined { frame_id: fr.frame_id, reason: e.to_string() });
                continue;
            }
        };
        let (al, vp) = absolute_irregularities(&fp, ph, interp(&t, &r_y, fr.t), interp(&t, &r_z, fr.t));
        if rows.last().is_some_and(|p| !(s > p.s)) {
            quarantined.push(Quarantined { frame_id: fr.frame_id, reason: format!("position {s} m not advancing") });
            continue;
        }
        rows.push(OutputRecord { s, al, vp, gv, cl, tw: f64::NAN, quality: fp.quality });
    }
    quarantined.sort_by_key(|q| q.frame_id);

    let s_out: Vec<f64> = rows.iter().map(|r| r.s).collect();
    let cl_out: Vec<f64> = rows.iter().map(|r| r.cl).collect();
    match twist(&s_out, &cl_out, cfg.twist_base) {
        Ok(tw) => {
            for (r, tw) in rows.iter_mut().zip(tw) {
                r.tw = tw;
                if tw.is_nan() {
                    r.quality |= quality::NO_TWIST;
                }
            }
        }
        Err(e) => {
            log::warn!("no twist: {e}");
            for r in &mut rows {
                r.quality |= quality::NO_TWIST;
            }
        }
    }

    let attitude = t.iter().zip(&euler).map(|(&t, &(phi, theta, psi))| AttitudeRecord { t, phi, theta, psi }).collect();
    let motion = (0..t.len())
        .map(|i| MotionRecord {
            t: t[i],
            s_app: pos.s_app[i],
            s: pos.s[i],
            v: v[i],
            vdot: vdot[i],
            r_y: r_y[i],
            r_z: r_z[i],
        })
        .collect();
    let (anchors, ne2) = match &pos.odometer {
        Some(od) => (od.anchors().to_vec(), od.trace().to_vec()),
        None => (Vec::new(), Vec::new()),
    };
    Ok(PipelineOutput { records: rows, fits, anchors, ne2, attitude, motion, quarantined })
}

/// Error statistics of one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelError {
    pub channel: String,
    pub rms: f64,
    pub max: f64,
    pub count: usize,
}

/// One row of the overlay plot data: estimate and truth side by side
/// (al/vp after the common high-pass).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlayRecord {
    pub s: f64,
    pub al_est: f64,
    pub al_true: f64,
    pub vp_est: f64,
    pub vp_true: f64,
    pub gv_est: f64,
    pub gv_true: f64,
    pub cl_est: f64,
    pub cl_true: f64,
    pub tw_est: f64,
    pub tw_true: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub channels: Vec<ChannelError>,
    pub overlay: Vec<OverlayRecord>,
}

impl Comparison {
    pub fn channel(&self, name: &str) -> Option<&ChannelError> {
        self.channels.iter().find(|c| c.channel == name)
    }
}

/// Compares an estimate with ground truth at the estimate's positions.
/// Truth is interpolated linearly; al and vp of both are high-passed with
/// the same filter (`wavelength` 0 disables it); NaN samples are skipped.
pub fn compare(estimate: &[OutputRecord], truth: &[OutputRecord], wavelength: f64, spacing: f64) -> Result<Comparison> {
    let increasing = |r: &[OutputRecord]| r.windows(2).all(|w| w[1].s > w[0].s);
    if estimate.is_empty() || truth.is_empty() {
        return Err(Error::Input("nothing to compare".into()));
    }
    if !increasing(estimate) || !increasing(truth) {
        return Err(Error::Input("records must be strictly increasing in s".into()));
    }
    let ts: Vec<f64> = truth.iter().map(|r| r.s).collect();
    let s: Vec<f64> = estimate.iter().map(|r| r.s).collect();
    let col = |rs: &[OutputRecord], f: fn(&OutputRecord) -> f64| rs.iter().map(f).collect::<Vec<f64>>();
    let at = |f: fn(&OutputRecord) -> f64| {
        let v = col(truth, f);
        s.iter().map(|&x| interp(&ts, &v, x)).collect::<Vec<f64>>()
    };
    let hp = |x: Vec<f64>| highpass_in_space(&s, &x, wavelength, spacing);
    let est = [
        hp(col(estimate, |r| r.al)),
        hp(col(estimate, |r| r.vp)),
        col(estimate, |r| r.gv),
        col(estimate, |r| r.cl),
        col(estimate, |r| r.tw),
    ];
    let tru = [hp(at(|r| r.al)), hp(at(|r| r.vp)), at(|r| r.gv), at(|r| r.cl), at(|r| r.tw)];
    let channels = ["al", "vp", "gv", "cl", "tw"]
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let errs: Vec<f64> = est[k].iter().zip(&tru[k]).map(|(a, b)| a - b).filter(|e| !e.is_nan()).collect();
            let n = errs.len();
            let rms = if n == 0 { f64::NAN } else { (errs.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt() };
            let max = errs.iter().fold(if n == 0 { f64::NAN } else { 0.0 }, |m: f64, e| m.max(e.abs()));
            ChannelError { channel: name.to_string(), rms, max, count: n }
        })
        .collect();
    let overlay = (0..s.len())
        .map(|i| OverlayRecord {
            s: s[i],
            al_est: est[0][i],
            al_true: tru[0][i],
            vp_est: est[1][i],
            vp_true: tru[1][i],
            gv_est: est[2][i],
            gv_true: tru[2][i],
            cl_est: est[3][i],
            cl_true: tru[3][i],
            tw_est: est[4][i],
            tw_true: tru[4][i],
        })
        .collect();
    Ok(Comparison { channels, overlay })
}
