//! Gyroscope/accelerometer attitude filter (gradient-descent, no
//! magnetometer) with the accelerometer corrected by the acceleration of a
//! particle moving along the ideal track.

use std::path::Path;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::io::{read_csv, write_csv};
use crate::math::rpy_angles;
use crate::track_model::TrackFrameState;
use crate::{Error, Result};

/// Relative pitch beyond which Euler extraction is refused (rad).
pub const ENVELOPE_PITCH: f64 = 1.4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    /// Specific force in the sensor frame (gravity included), m/s².
    pub accel: Vector3<f64>,
    /// Angular velocity in the sensor frame, rad/s.
    pub gyro: Vector3<f64>,
}

/// Row of the IMU CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuRecord {
    pub t: f64,
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
}

impl From<ImuRecord> for ImuSample {
    fn from(r: ImuRecord) -> Self {
        Self { t: r.t, accel: Vector3::new(r.ax, r.ay, r.az), gyro: Vector3::new(r.wx, r.wy, r.wz) }
    }
}

impl From<ImuSample> for ImuRecord {
    fn from(s: ImuSample) -> Self {
        let (a, w) = (s.accel, s.gyro);
        Self { t: s.t, ax: a.x, ay: a.y, az: a.z, wx: w.x, wy: w.y, wz: w.z }
    }
}

/// Loads an IMU CSV, checking that time strictly increases and values are finite.
pub fn load_imu(path: &Path) -> Result<Vec<ImuSample>> {
    let rows: Vec<ImuRecord> = read_csv(path)?;
    let mut out: Vec<ImuSample> = Vec::with_capacity(rows.len());
    for r in rows {
        let s = ImuSample::from(r);
        if !(s.t.is_finite() && s.accel.iter().chain(s.gyro.iter()).all(|v| v.is_finite())) {
            return Err(Error::Input(format!("{}: non-finite IMU sample at t = {}", path.display(), s.t)));
        }
        if let Some(p) = out.last() {
            if !(s.t > p.t) {
                return Err(Error::Input(format!("{}: IMU time not increasing at t = {}", path.display(), s.t)));
            }
        }
        out.push(s);
    }
    Ok(out)
}

pub fn save_imu(path: &Path, samples: &[ImuSample]) -> Result<()> {
    write_csv(path, samples.iter().map(|&s| ImuRecord::from(s)))
}

/// Row of the attitude CSV: TGMS angles relative to the track frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttitudeRecord {
    pub t: f64,
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
}

/// Acceleration of a particle riding the ideal centreline at speed `v`,
/// in track-frame components.
pub fn predicted_body_acceleration(state: &TrackFrameState, v: f64, vdot: f64) -> Vector3<f64> {
    Vector3::new(vdot, state.rho_h * v * v, -state.rho_v * v * v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionOptions {
    /// Gradient step gain (rad/s scale).
    pub beta: f64,
    /// Gradient norms below this are not normalised, so the correction fades
    /// out smoothly instead of chattering around the optimum.
    pub gradient_floor: f64,
    /// Corrected accelerometer norms below this trigger a gyro-only step (m/s²).
    pub free_fall: f64,
    /// Constant gyro bias subtracted from every sample (rad/s).
    pub gyro_bias: [f64; 3],
}

impl Default for FusionOptions {
    fn default() -> Self {
        Self { beta: 0.05, gradient_floor: 0.02, free_fall: 1e-6, gyro_bias: [0.0; 3] }
    }
}

/// Mean gyro reading over the first `duration` seconds (vehicle at rest).
pub fn rest_gyro_bias(samples: &[ImuSample], duration: f64) -> Vector3<f64> {
    let Some(t0) = samples.first().map(|s| s.t) else {
        return Vector3::zeros();
    };
    let rest: Vec<_> = samples.iter().take_while(|s| s.t - t0 <= duration).collect();
    rest.iter().map(|s| s.gyro).sum::<Vector3<f64>>() / rest.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeEstimate {
    pub t: f64,
    /// Sensor-to-global rotation.
    pub q: UnitQuaternion<f64>,
    /// Bias-corrected rate of the previous sample, for trapezoidal integration.
    pub omega: Vector3<f64>,
    pub beta: f64,
    /// Set when the last step skipped the accelerometer.
    pub free_fall: bool,
}

impl AttitudeEstimate {
    pub fn new(t: f64, rotation: &Matrix3<f64>, omega: Vector3<f64>, beta: f64) -> Self {
        let q = UnitQuaternion::from_matrix(rotation);
        Self { t, q, omega, beta, free_fall: false }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.q.to_rotation_matrix().into_inner()
    }
}

/// Gradient of `|R(q)^T e_z - a|^2 / 2` with respect to the quaternion
/// components.
fn gravity_gradient(q: &Quaternion<f64>, a: &Vector3<f64>) -> Quaternion<f64> {
    let (q0, q1, q2, q3) = (q.w, q.i, q.j, q.k);
    let f = Vector3::new(
        2.0 * (q1 * q3 - q0 * q2) - a.x,
        2.0 * (q0 * q1 + q2 * q3) - a.y,
        2.0 * (0.5 - q1 * q1 - q2 * q2) - a.z,
    );
    #[rustfmt::skip]
    let jt = nalgebra::Matrix4x3::new(
        -2.0 * q2, 2.0 * q1, 0.0,
        2.0 * q3, 2.0 * q0, -4.0 * q1,
        -2.0 * q0, 2.0 * q3, -4.0 * q2,
        2.0 * q1, 2.0 * q2, 0.0,
    );
    let g = jt * f;
    Quaternion::new(g[0], g[1], g[2], g[3])
}

/// One filter step.
///
/// The gyro rate is integrated with the trapezoidal average of the previous
/// and current samples through the exact quaternion exponential. The
/// accelerometer, stripped of the predicted track acceleration
/// `A^T A_t a_pred` (A from the gyro step), pulls roll and pitch towards gravity; yaw is left to the
/// gyro since gravity carries no heading information.
pub fn fuse_step(
    est: &AttitudeEstimate,
    sample: &ImuSample,
    predicted_a: &Vector3<f64>,
    a_t: &Matrix3<f64>,
    opts: &FusionOptions,
) -> Result<AttitudeEstimate> {
    let dt = sample.t - est.t;
    if !(dt > 0.0) {
        return Err(Error::Input(format!("non-increasing IMU time {} -> {}", est.t, sample.t)));
    }
    let omega = sample.gyro - Vector3::from(opts.gyro_bias);
    let w = 0.5 * (est.omega + omega);
    let q_gyro = est.q * UnitQuaternion::from_scaled_axis(w * dt);

    // The gyro-propagated attitude rotates the prediction into the sensor
    // frame; the previous estimate would lag by omega*dt and bias the tilt
    // by |a_pred| omega dt / g on curves.
    let r_prior = q_gyro.to_rotation_matrix().into_inner();
    let corrected = sample.accel - r_prior.transpose() * a_t * predicted_a;
    let norm = corrected.norm();
    if !(norm > opts.free_fall) {
        return Ok(AttitudeEstimate { t: sample.t, q: q_gyro, omega, beta: est.beta, free_fall: true });
    }
    let grad = gravity_gradient(q_gyro.quaternion(), &(corrected / norm));
    let step = est.beta * dt / grad.norm().max(opts.gradient_floor);
    let tilted = UnitQuaternion::from_quaternion(q_gyro.quaternion() - grad * step);
    let (phi, theta, _) = tilted.euler_angles();
    let (_, _, psi) = q_gyro.euler_angles();
    let q = UnitQuaternion::from_euler_angles(phi, theta, psi);
    Ok(AttitudeEstimate { t: sample.t, q, omega, beta: est.beta, free_fall: false })
}

/// TGMS angles relative to the track frame, `A_t^T A` decomposed in the
/// roll-pitch-yaw convention (exact, not linearised).
pub fn relative_euler(est: &AttitudeEstimate, state: &TrackFrameState) -> Result<(f64, f64, f64)> {
    let rel = state.a_t.transpose() * est.rotation();
    let (phi, theta, psi) = rpy_angles(&rel);
    if theta.abs() > ENVELOPE_PITCH {
        return Err(Error::OutOfEnvelope { theta });
    }
    Ok((phi, theta, psi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{rpy, small_angle_rotation};
    use crate::track_model::TrackLayout;
    use crate::GRAVITY;
    use approx::assert_relative_eq;
    use nalgebra::Vector4;
    use proptest::prelude::*;

    fn state(rho_h: f64, rho_v: f64, a_t: Matrix3<f64>) -> TrackFrameState {
        let layout = TrackLayout::straight(10.0, 0.7175).unwrap();
        let mut s = layout.frame_at(0.0).unwrap();
        s.rho_h = rho_h;
        s.rho_v = rho_v;
        s.a_t = a_t;
        s
    }

    #[test]
    fn predicted_acceleration_values() {
        let i = Matrix3::identity();
        assert_eq!(predicted_body_acceleration(&state(0.0, 0.0, i), 20.0, 0.0), Vector3::zeros());
        assert_eq!(predicted_body_acceleration(&state(0.002, 0.0, i), 20.0, 0.0), Vector3::new(0.0, 0.8, 0.0));
        let p = predicted_body_acceleration(&state(0.0, 5e-4, i), 20.0, 0.3);
        assert_relative_eq!(p, Vector3::new(0.3, 0.0, -0.2), epsilon = 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let q = UnitQuaternion::from_euler_angles(0.1, -0.2, 0.7);
        let a = Vector3::new(0.1, -0.05, 0.99).normalize();
        let f = |c: Vector4<f64>| {
            let q = Quaternion::from(c);
            // Off the unit sphere, as the closed-form gradient assumes.
            let g = Vector3::new(
                2.0 * (q.i * q.k - q.w * q.j),
                2.0 * (q.w * q.i + q.j * q.k),
                2.0 * (0.5 - q.i * q.i - q.j * q.j),
            );
            0.5 * (g - a).norm_squared()
        };
        let c = q.quaternion().coords;
        let g = gravity_gradient(q.quaternion(), &a);
        for k in 0..4 {
            let mut e = Vector4::zeros();
            e[k] = 1e-6;
            let fd = (f(c + e) - f(c - e)) / 2e-6;
            assert_relative_eq!(g.coords[k], fd, epsilon = 1e-8);
        }
    }

    fn stationary(t: f64) -> ImuSample {
        ImuSample { t, accel: Vector3::new(0.0, 0.0, GRAVITY), gyro: Vector3::zeros() }
    }

    #[test]
    fn stationary_converges_from_offset() {
        let opts = FusionOptions { beta: 0.1, ..Default::default() };
        let off = 2f64.to_radians();
        let mut est = AttitudeEstimate::new(0.0, &rpy(off, -off, 0.0), Vector3::zeros(), opts.beta);
        let dt = 0.005;
        let i = Matrix3::identity();
        for k in 1..=1000 {
            est = fuse_step(&est, &stationary(k as f64 * dt), &Vector3::zeros(), &i, &opts).unwrap();
        }
        let (phi, theta, psi) = relative_euler(&est, &state(0.0, 0.0, i)).unwrap();
        assert!(phi.abs() < 1e-4 && theta.abs() < 1e-4, "{phi} {theta}");
        assert!(psi.abs() < 1e-12, "{psi}");
    }

    #[test]
    fn gyro_only_yaw_is_exact() {
        let opts = FusionOptions::default();
        let w = Vector3::new(0.0, 0.0, 0.1);
        let mut est = AttitudeEstimate::new(0.0, &Matrix3::identity(), w, opts.beta);
        let dt = 0.005;
        for k in 1..=2000 {
            let s = ImuSample { t: k as f64 * dt, accel: Vector3::zeros(), gyro: w };
            est = fuse_step(&est, &s, &Vector3::zeros(), &Matrix3::identity(), &opts).unwrap();
            assert!(est.free_fall);
        }
        let (_, _, psi) = rpy_angles(&est.rotation());
        assert!((psi - 1.0).abs() < 1e-6, "{psi}");
    }

    #[test]
    fn zero_prediction_is_the_baseline() {
        // With a zero prediction the track rotation must not enter at all.
        let opts = FusionOptions::default();
        let est = AttitudeEstimate::new(0.0, &rpy(0.01, 0.02, 0.3), Vector3::zeros(), opts.beta);
        let s = ImuSample { t: 0.01, accel: Vector3::new(0.3, 0.2, 9.7), gyro: Vector3::new(0.01, 0.0, 0.02) };
        let a = fuse_step(&est, &s, &Vector3::zeros(), &Matrix3::identity(), &opts).unwrap();
        let b = fuse_step(&est, &s, &Vector3::zeros(), &rpy(0.1, 0.2, 0.3), &opts).unwrap();
        assert_eq!(a.q, b.q);
    }

    #[test]
    fn relative_euler_small_cases() {
        let a_t = rpy(0.05, 0.01, 1.2);
        let st = state(0.0, 0.0, a_t);
        let est = AttitudeEstimate::new(0.0, &a_t, Vector3::zeros(), 0.05);
        let (p, t, y) = relative_euler(&est, &st).unwrap();
        assert!(p.abs() < 1e-12 && t.abs() < 1e-12 && y.abs() < 1e-12);
        let est = AttitudeEstimate::new(0.0, &(a_t * rpy(0.01, 0.0, 0.0)), Vector3::zeros(), 0.05);
        let (p, t, y) = relative_euler(&est, &st).unwrap();
        assert_relative_eq!(p, 0.01, epsilon = 1e-6);
        assert!(t.abs() < 1e-6 && y.abs() < 1e-6);
        let est = AttitudeEstimate::new(0.0, &(a_t * rpy(0.0, 1.45, 0.0)), Vector3::zeros(), 0.05);
        assert!(matches!(relative_euler(&est, &st), Err(Error::OutOfEnvelope { .. })));
    }

    proptest! {
        #[test]
        fn small_angles_agree_with_linearisation(
            phi in -0.02f64..0.02, theta in -0.02f64..0.02, psi in -0.02f64..0.02,
            cant in -0.1f64..0.1, slope in -0.03f64..0.03, heading in -3.0f64..3.0,
        ) {
            let a_t = rpy(cant, slope, heading);
            // Linearised relative rotation, re-orthonormalised.
            let lin = small_angle_rotation(phi, theta, psi);
            let svd = lin.svd(true, true);
            let r = svd.u.unwrap() * svd.v_t.unwrap();
            let est = AttitudeEstimate::new(0.0, &(a_t * r), Vector3::zeros(), 0.05);
            let (p, t, y) = relative_euler(&est, &state(0.0, 0.0, a_t)).unwrap();
            let m = phi.abs().max(theta.abs()).max(psi.abs());
            let tol = 2.0 * m * m + 1e-12;
            prop_assert!((p - phi).abs() < tol && (t - theta).abs() < tol && (y - psi).abs() < tol);
        }

        #[test]
        fn correction_leaves_yaw_alone(
            phi in -0.3f64..0.3, theta in -0.3f64..0.3, psi in -3.0f64..3.0,
            ax in -3.0f64..3.0, ay in -3.0f64..3.0,
        ) {
            let opts = FusionOptions { beta: 5.0, ..Default::default() };
            let est = AttitudeEstimate::new(0.0, &rpy(phi, theta, psi), Vector3::zeros(), opts.beta);
            let s = ImuSample { t: 0.01, accel: Vector3::new(ax, ay, GRAVITY), gyro: Vector3::zeros() };
            let out = fuse_step(&est, &s, &Vector3::zeros(), &Matrix3::identity(), &opts).unwrap();
            let (_, _, y) = rpy_angles(&out.rotation());
            let d = (y - psi + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
            prop_assert!(d.abs() < 1e-12);
            prop_assert!((out.q.norm() - 1.0).abs() < 1e-12);
        }
    }
}
