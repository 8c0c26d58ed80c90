//! Synthetic sensor streams with exact ground truth.
//!
//! The TGMS rides the ideal track frame at arc length `s(t)`, offset by a
//! prescribed relative motion. Every stream is generated from exact
//! kinematics, so a noiseless run is an oracle for the estimator.

use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fusion::{save_imu, ImuSample};
use crate::io::{
    quality, run_files, to_table, write_csv, write_toml, EncoderRecord, FrameRecord, Manifest, OutputRecord,
    PixelRecord, RunInfo,
};
use crate::math::rpy;
use crate::profile_fit::RailProfileTemplate;
use crate::track_model::{
    exact_frame_motion, irregularities_to_rails, rail_point_global, IrregularityField, IrregularityRecord, LayoutFile,
    Side, TrackLayout,
};
use crate::vision::{CameraFile, CameraModel, LaserPlane, SensorBounds};
use crate::{Error, Result, GRAVITY};

/// Stopping tolerance of the laser-slice root search along the track (m).
pub const SLICE_TOL: f64 = 1e-10;

/// Forward speed as piecewise-linear `(t, V)` knots, held constant outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedProfile {
    pub points: Vec<[f64; 2]>,
}

impl SpeedProfile {
    pub fn constant(v: f64) -> Self {
        Self { points: vec![[0.0, v]] }
    }

    fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Input("speed profile needs at least one point".into()));
        }
        for w in self.points.windows(2) {
            if !(w[1][0] > w[0][0]) {
                return Err(Error::Input("speed profile times must increase".into()));
            }
        }
        if self.points.iter().any(|p| !(p[1] >= 0.0) || !p[0].is_finite()) {
            return Err(Error::Input("speed profile needs finite times and non-negative speeds".into()));
        }
        Ok(())
    }

    /// Speed and its derivative at `t`.
    pub fn at(&self, t: f64) -> (f64, f64) {
        let p = &self.points;
        let i = p.partition_point(|k| k[0] <= t);
        if i == 0 {
            return (p[0][1], 0.0);
        }
        if i == p.len() {
            return (p[i - 1][1], 0.0);
        }
        let ([t0, v0], [t1, v1]) = (p[i - 1], p[i]);
        let a = (v1 - v0) / (t1 - t0);
        (v0 + a * (t - t0), a)
    }

    /// Distance travelled since `t = 0`.
    pub fn distance(&self, t: f64) -> f64 {
        // Integrate over the knots clipped to [0, t]; speed is linear between.
        let mut knots: Vec<f64> = vec![0.0];
        knots.extend(self.points.iter().map(|k| k[0]).filter(|&x| x > 0.0 && x < t));
        knots.push(t);
        knots.windows(2).map(|w| 0.5 * (self.at(w[0]).0 + self.at(w[1]).0) * (w[1] - w[0])).sum()
    }

    /// Time at which `distance` reaches `d`.
    fn time_for(&self, d: f64) -> Result<f64> {
        let mut hi = 1.0;
        while self.distance(hi) < d {
            hi *= 2.0;
            if hi > 1e8 {
                return Err(Error::Input("speed profile never covers the requested length".into()));
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.distance(mid) < d {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 {
                break;
            }
        }
        Ok(hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Al,
    Vp,
    Gv,
    Cl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrregularitySine {
    pub channel: Channel,
    /// Amplitude (m).
    pub amplitude: f64,
    /// Wavelength (m).
    pub wavelength: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrregularityStep {
    pub channel: Channel,
    /// Position of the step (m).
    pub s: f64,
    /// Height (m).
    pub height: f64,
}

/// Injected irregularities: sums of sinusoids and steps per channel,
/// sampled every `spacing` metres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrregularitySpec {
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default)]
    pub sines: Vec<IrregularitySine>,
    #[serde(default)]
    pub steps: Vec<IrregularityStep>,
}

fn default_spacing() -> f64 {
    crate::track_model::IRREGULARITY_SPACING
}

impl Default for IrregularitySpec {
    fn default() -> Self {
        Self { spacing: default_spacing(), sines: Vec::new(), steps: Vec::new() }
    }
}

impl IrregularitySpec {
    pub fn record(&self, s: f64) -> IrregularityRecord {
        let mut r = IrregularityRecord { s, ..Default::default() };
        let mut add = |c: Channel, v: f64| match c {
            Channel::Al => r.al += v,
            Channel::Vp => r.vp += v,
            Channel::Gv => r.gv += v,
            Channel::Cl => r.cl += v,
        };
        for w in &self.sines {
            add(w.channel, w.amplitude * (std::f64::consts::TAU * s / w.wavelength + w.phase).sin());
        }
        for st in &self.steps {
            if s >= st.s {
                add(st.channel, st.height);
            }
        }
        r
    }

    pub fn field(&self, total_length: f64) -> Result<IrregularityField> {
        if !(self.spacing > 0.0) || self.sines.iter().any(|w| !(w.wavelength > 0.0)) {
            return Err(Error::Input("irregularity spacing and wavelengths must be positive".into()));
        }
        Ok(IrregularityField::from_fn(total_length, self.spacing, |s| irregularities_to_rails(&self.record(s))))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coordinate {
    RY,
    RZ,
    Phi,
    Theta,
    Psi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSine {
    pub coordinate: Coordinate,
    /// m or rad.
    pub amplitude: f64,
    /// s.
    pub period: f64,
    #[serde(default)]
    pub phase: f64,
}

/// Prescribed TGMS motion relative to the track frame: constant offsets
/// `[r_y, r_z, phi, theta, psi]` plus sinusoids in time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RelativeMotion {
    #[serde(default)]
    pub offset: [f64; 5],
    #[serde(default)]
    pub sines: Vec<MotionSine>,
}

impl RelativeMotion {
    /// Values, first and second time derivatives of the five coordinates.
    pub fn at(&self, t: f64) -> [[f64; 3]; 5] {
        let mut out = [[0.0; 3]; 5];
        for (o, &v) in out.iter_mut().zip(&self.offset) {
            o[0] = v;
        }
        for w in &self.sines {
            let k = match w.coordinate {
                Coordinate::RY => 0,
                Coordinate::RZ => 1,
                Coordinate::Phi => 2,
                Coordinate::Theta => 3,
                Coordinate::Psi => 4,
            };
            let om = std::f64::consts::TAU / w.period;
            let (s, c) = (om * t + w.phase).sin_cos();
            out[k][0] += w.amplitude * s;
            out[k][1] += w.amplitude * om * c;
            out[k][2] -= w.amplitude * om * om * s;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub imu: f64,
    pub encoder: f64,
    pub camera: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Self { imu: 200.0, encoder: 200.0, camera: 25.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Accelerometer white noise (m/s²).
    pub accel: f64,
    /// Gyro white noise (rad/s).
    pub gyro: f64,
    /// Pixel noise (px).
    pub pixel: f64,
    /// Encoder scale: `s_app = k (s - s_start)`.
    pub encoder_drift: f64,
    /// Encoder white noise (m).
    pub encoder: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { accel: 0.0, gyro: 0.0, pixel: 0.0, encoder_drift: 1.0, encoder: 0.0 }
    }
}

/// Camera/laser parameters of both sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rig {
    pub left: CameraFile,
    pub right: CameraFile,
}

impl Default for Rig {
    /// Cameras above and inboard of each rail, looking down at the head,
    /// with the laser sheets in the TGMS cross-sectional plane.
    fn default() -> Self {
        let k = Matrix3::new(1500.0, 0.0, 0.0, 0.0, 1500.0, 0.0, 0.0, 0.0, 1.0);
        let plane = LaserPlane::new(1.0, 0.0, 0.0, 0.0).expect("unit normal");
        let side = |sign: f64| {
            let cam =
                CameraModel::looking_at(k, Vector3::new(-0.35, sign * 0.55, 0.35), Vector3::new(0.0, sign * 0.75, 0.0))
                    .expect("valid default camera");
            CameraFile::new(&cam, &plane, Some(SensorBounds::default()))
        };
        Rig { left: side(1.0), right: side(-1.0) }
    }
}

impl Rig {
    pub fn side(&self, side: Side) -> &CameraFile {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }
}

fn default_points() -> usize {
    120
}

fn default_twist_base() -> f64 {
    3.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub layout: LayoutFile,
    #[serde(default)]
    pub irregularities: IrregularitySpec,
    pub speed: SpeedProfile,
    /// Track position at `t = 0` (m).
    #[serde(default)]
    pub start_s: f64,
    /// Track position where the run stops; defaults to 1 m before the end.
    #[serde(default)]
    pub end_s: Option<f64>,
    #[serde(default)]
    pub rates: Rates,
    #[serde(default)]
    pub motion: RelativeMotion,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub seed: u64,
    /// Laser-line points generated per rail and frame.
    #[serde(default = "default_points")]
    pub points_per_profile: usize,
    /// Twist base length for the ground truth (m).
    #[serde(default = "default_twist_base")]
    pub twist_base: f64,
    #[serde(default)]
    pub rig: Option<Rig>,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        crate::io::read_toml(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_toml(path, self, "# Simulation scenario.\n")
    }
}

/// Exact TGMS state at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub s: f64,
    pub v: f64,
    pub r_y: f64,
    pub r_z: f64,
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
}

/// Exact, noiseless sensor model over a layout.
pub struct Kinematics<'a> {
    pub layout: &'a TrackLayout,
    pub speed: &'a SpeedProfile,
    pub motion: &'a RelativeMotion,
    pub start_s: f64,
}

/// TGMS pose in the global frame.
#[derive(Debug, Clone, Copy)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl Kinematics<'_> {
    pub fn trajectory(&self, t: f64) -> TrajectoryRecord {
        let q = self.motion.at(t);
        TrajectoryRecord {
            t,
            s: self.start_s + self.speed.distance(t),
            v: self.speed.at(t).0,
            r_y: q[0][0],
            r_z: q[1][0],
            phi: q[2][0],
            theta: q[3][0],
            psi: q[4][0],
        }
    }

    pub fn pose(&self, t: f64) -> Result<Pose> {
        let tr = self.trajectory(t);
        let f = self.layout.frame_at(tr.s)?;
        Ok(Pose {
            position: f.r_t + f.a_t * Vector3::new(0.0, tr.r_y, tr.r_z),
            rotation: f.a_t * rpy(tr.phi, tr.theta, tr.psi),
        })
    }

    /// Specific force and angular velocity at the TGMS origin, sensor frame.
    pub fn imu(&self, t: f64) -> Result<ImuSample> {
        let s = self.start_s + self.speed.distance(t);
        let (v, vdot) = self.speed.at(t);
        let f = self.layout.frame_at(s)?;
        let m = exact_frame_motion(&f, v, vdot);
        let q = self.motion.at(t);
        let r = Vector3::new(0.0, q[0][0], q[1][0]);
        let rd = Vector3::new(0.0, q[0][1], q[1][1]);
        let rdd = Vector3::new(0.0, q[0][2], q[1][2]);
        let (phi, theta, psi) = (q[2][0], q[3][0], q[4][0]);
        let rel = rpy(phi, theta, psi);

        let acc_tf = m.r_ddot + rdd + m.alpha.cross(&r) + m.omega.cross(&m.omega.cross(&r)) + 2.0 * m.omega.cross(&rd);
        let up = f.a_t.row(2).transpose();
        let accel = rel.transpose() * (acc_tf + GRAVITY * up);

        // Body rates of the Rz Ry Rx relative attitude.
        let (sp, cp) = phi.sin_cos();
        let (st, ct) = theta.sin_cos();
        let (dphi, dtheta, dpsi) = (q[2][1], q[3][1], q[4][1]);
        let w_rel = Vector3::new(dphi - dpsi * st, dtheta * cp + dpsi * ct * sp, -dtheta * sp + dpsi * ct * cp);
        let gyro = rel.transpose() * m.omega + w_rel;
        Ok(ImuSample { t, accel, gyro })
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

const STREAM_IMU: u64 = 1;
const STREAM_ENCODER: u64 = 2;
const STREAM_PIXELS: u64 = 1 << 32;

/// Intersects the laser sheet with the line `s' -> P(s', u)` swept by a
/// fixed profile point, returning the point in TGMS coordinates.
pub fn slice_point(
    layout: &TrackLayout,
    field: &IrregularityField,
    side: Side,
    u: &Vector2<f64>,
    pose: &Pose,
    plane: &LaserPlane,
    s_guess: f64,
) -> Result<Vector3<f64>> {
    let local = |s: f64| -> Result<Vector3<f64>> {
        let p = rail_point_global(layout, s, side, field, u)?;
        Ok(pose.rotation.transpose() * (p - pose.position))
    };
    let g = |s: f64| -> Result<(f64, Vector3<f64>)> {
        let x = local(s)?;
        Ok((plane.residual(&x), x))
    };
    let (mut s0, mut s1) = (s_guess, s_guess + 1e-3);
    let (mut g0, _) = g(s0)?;
    let (mut g1, mut x1) = g(s1)?;
    for _ in 0..60 {
        if g1 == 0.0 || (s1 - s0).abs() < SLICE_TOL {
            return Ok(x1);
        }
        let s2 = s1 - g1 * (s1 - s0) / (g1 - g0);
        if !s2.is_finite() {
            break;
        }
        (s0, g0) = (s1, g1);
        s1 = s2;
        (g1, x1) = g(s1)?;
    }
    if g1.abs() < 1e-12 {
        return Ok(x1);
    }
    Err(Error::Numerical(format!("laser slice did not converge near s = {s_guess}")))
}

/// Everything a simulation produces.
pub struct Simulation {
    pub config: ScenarioConfig,
    pub layout: TrackLayout,
    pub field: IrregularityField,
    pub template: RailProfileTemplate,
    pub rig: Rig,
    pub run: RunInfo,
    pub imu: Vec<ImuSample>,
    pub encoder: Vec<EncoderRecord>,
    pub frames: Vec<FrameRecord>,
    pub pixels: Vec<PixelRecord>,
    pub truth: Vec<OutputRecord>,
    pub trajectory: Vec<TrajectoryRecord>,
}

/// Ground truth at `s` straight from the injected field.
pub fn truth_record(field: &IrregularityField, s: f64, twist_base: f64) -> OutputRecord {
    let r = field.record_at(s);
    let (tw, q) = if s - twist_base >= field.stations()[0] {
        ((r.cl - field.record_at(s - twist_base).cl) / twist_base, quality::OK)
    } else {
        (f64::NAN, quality::NO_TWIST)
    };
    OutputRecord { s, al: r.al, vp: r.vp, gv: r.gv, cl: r.cl, tw, quality: q }
}

fn samples_until(rate: f64, t_end: f64) -> impl Iterator<Item = (usize, f64)> {
    let n = (t_end * rate + 1e-9).floor() as usize;
    (0..=n).map(move |k| (k, k as f64 / rate))
}

pub fn simulate(cfg: &ScenarioConfig) -> Result<Simulation> {
    let layout = cfg.layout.clone().into_layout()?;
    cfg.speed.validate()?;
    let r = cfg.rates;
    if !(r.imu > 0.0 && r.encoder > 0.0 && r.camera > 0.0) {
        return Err(Error::Input("sensor rates must be positive".into()));
    }
    let n = cfg.noise;
    if !((1.0 - n.encoder_drift).abs() < 0.1) {
        return Err(Error::Input(format!("encoder drift factor {} outside (0.9, 1.1)", n.encoder_drift)));
    }
    if [n.accel, n.gyro, n.pixel, n.encoder].iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Input("noise levels must be non-negative".into()));
    }
    let end_s = cfg.end_s.unwrap_or(layout.total_length() - 1.0);
    if !(cfg.start_s >= 0.0 && end_s > cfg.start_s && end_s <= layout.total_length()) {
        return Err(Error::Input(format!("run span [{}, {end_s}] outside the layout", cfg.start_s)));
    }
    let t_end = cfg.speed.time_for(end_s - cfg.start_s)?;
    let field = cfg.irregularities.field(layout.total_length())?;
    let template = RailProfileTemplate::default();
    let rig = cfg.rig.clone().unwrap_or_default();
    let kin = Kinematics { layout: &layout, speed: &cfg.speed, motion: &cfg.motion, start_s: cfg.start_s };

    let mut rng_imu = rng(cfg.seed, STREAM_IMU);
    let (na, ng) = (Normal::new(0.0, n.accel).unwrap(), Normal::new(0.0, n.gyro).unwrap());
    let mut imu = Vec::new();
    let mut trajectory = Vec::new();
    for (_, t) in samples_until(r.imu, t_end) {
        let mut s = kin.imu(t)?;
        if n.accel > 0.0 || n.gyro > 0.0 {
            for k in 0..3 {
                s.accel[k] += na.sample(&mut rng_imu);
                s.gyro[k] += ng.sample(&mut rng_imu);
            }
        }
        imu.push(s);
        trajectory.push(kin.trajectory(t));
    }

    let mut rng_enc = rng(cfg.seed, STREAM_ENCODER);
    let ne = Normal::new(0.0, n.encoder).unwrap();
    let encoder = samples_until(r.encoder, t_end)
        .map(|(_, t)| {
            let d = cfg.speed.distance(t);
            let noise = if n.encoder > 0.0 { ne.sample(&mut rng_enc) } else { 0.0 };
            EncoderRecord { t, s_app: n.encoder_drift * d + noise }
        })
        .collect();

    let frames: Vec<FrameRecord> =
        samples_until(r.camera, t_end).map(|(k, t)| FrameRecord { frame_id: k, t }).collect();
    let cams = [
        (Side::Left, rig.left.camera()?, rig.left.laser_plane()?, rig.left.sensor.unwrap_or_default()),
        (Side::Right, rig.right.camera()?, rig.right.laser_plane()?, rig.right.sensor.unwrap_or_default()),
    ];
    let profile = template.sample(cfg.points_per_profile.max(1));
    let pixels_per_frame = frames
        .par_iter()
        .map(|fr| -> Result<Vec<PixelRecord>> {
            let pose = kin.pose(fr.t)?;
            let s = kin.trajectory(fr.t).s;
            let mut out = Vec::new();
            for (k, (side, cam, plane, bounds)) in cams.iter().enumerate() {
                let mut rng_px = rng(cfg.seed, STREAM_PIXELS + 2 * fr.frame_id as u64 + k as u64);
                let np = Normal::new(0.0, n.pixel).unwrap();
                let before = out.len();
                for p in &profile {
                    let u = match side {
                        Side::Left => Vector2::new(-p.x, p.y),
                        Side::Right => *p,
                    };
                    let x = slice_point(&layout, &field, *side, &u, &pose, plane, s)?;
                    let Ok(mut px) = cam.project(&x) else { continue };
                    if n.pixel > 0.0 {
                        px.x += np.sample(&mut rng_px);
                        px.y += np.sample(&mut rng_px);
                    }
                    if bounds.contains(&px) {
                        out.push(PixelRecord { frame_id: fr.frame_id, side: *side, px: px.x, py: px.y });
                    }
                }
                if out.len() == before {
                    return Err(Error::Visibility { frame: fr.frame_id, side: side.to_string() });
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let pixels = pixels_per_frame.into_iter().flatten().collect();

    let truth = frames.iter().map(|fr| truth_record(&field, kin.trajectory(fr.t).s, cfg.twist_base)).collect();

    Ok(Simulation {
        config: cfg.clone(),
        run: RunInfo { start_s: cfg.start_s, seed: Some(cfg.seed) },
        layout,
        field,
        template,
        rig,
        imu,
        encoder,
        frames,
        pixels,
        truth,
        trajectory,
    })
}

pub const TRAJECTORY_FILE: &str = "trajectory.csv";

impl Simulation {
    /// Writes the run directory and its manifest.
    pub fn write(&self, dir: &Path) -> Result<()> {
        use run_files::*;
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
        self.layout.save(&dir.join(LAYOUT))?;
        self.rig.left.save(&dir.join(CAMERA_LEFT))?;
        self.rig.right.save(&dir.join(CAMERA_RIGHT))?;
        self.template.save(&dir.join(TEMPLATE))?;
        self.run.save(&dir.join(RUN))?;
        save_imu(&dir.join(IMU), &self.imu)?;
        write_csv(&dir.join(ENCODER), &self.encoder)?;
        write_csv(&dir.join(FRAMES), &self.frames)?;
        write_csv(&dir.join(PIXELS), &self.pixels)?;
        write_csv(&dir.join(TRUTH), &self.truth)?;
        write_csv(&dir.join(TRAJECTORY_FILE), &self.trajectory)?;
        self.field.save(&dir.join(IRREGULARITIES))?;
        let files = [
            LAYOUT,
            CAMERA_LEFT,
            CAMERA_RIGHT,
            TEMPLATE,
            RUN,
            IMU,
            ENCODER,
            FRAMES,
            PIXELS,
            TRUTH,
            TRAJECTORY_FILE,
            IRREGULARITIES,
        ];
        Manifest::build(dir, "simulate", &files, to_table(&self.config)?)?.save(&dir.join(MANIFEST))
    }
}
