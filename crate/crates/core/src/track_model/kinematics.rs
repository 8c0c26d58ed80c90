use nalgebra::{Matrix3, Vector2, Vector3};

use super::{IrregularityField, Side, TrackFrameState, TrackLayout};
use crate::math::{rot_x, skew, small_angle_rotation};
use crate::Result;

/// Velocity, acceleration, angular velocity and angular acceleration of a
/// body moving with the track frame, in track-frame components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameMotion {
    pub r_dot: Vector3<f64>,
    pub r_ddot: Vector3<f64>,
    pub omega: Vector3<f64>,
    pub alpha: Vector3<f64>,
}

/// Track-frame motion at forward speed `v` and acceleration `v_dot`, using
/// the small cant/slope curvature model.
pub fn frame_velocity(state: &TrackFrameState, v: f64, v_dot: f64) -> FrameMotion {
    FrameMotion {
        r_dot: Vector3::new(v, 0.0, 0.0),
        r_ddot: Vector3::new(v_dot, state.rho_h * v * v, -state.rho_v * v * v),
        omega: Vector3::new(state.rho_tw * v, state.rho_v * v, state.rho_h * v),
        alpha: Vector3::new(state.rho_tw * v_dot, state.rho_v * v_dot, state.rho_h * v_dot + state.rho_h_prime * v * v),
    }
}

/// Exact track-frame motion from the frame's rotation rate per unit arc
/// length. Agrees with [`frame_velocity`] on flat, uncanted track.
pub fn exact_frame_motion(state: &TrackFrameState, v: f64, v_dot: f64) -> FrameMotion {
    let (k, dk) = state.darboux();
    FrameMotion {
        r_dot: Vector3::new(v, 0.0, 0.0),
        r_ddot: Vector3::new(v_dot, v * v * k.z, -v * v * k.y),
        omega: k * v,
        alpha: k * v_dot + dk * (v * v),
    }
}

/// Generalised coordinates of a body relative to its track frame: arc
/// length, lateral and vertical offsets and roll/pitch/yaw (small angles).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TgmsState {
    pub s: f64,
    pub r_y: f64,
    pub r_z: f64,
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
}

impl TgmsState {
    pub fn offset(&self) -> Vector3<f64> {
        Vector3::new(0.0, self.r_y, self.r_z)
    }

    pub fn angles(&self) -> Vector3<f64> {
        Vector3::new(self.phi, self.theta, self.psi)
    }

    /// Linearised rotation from the body frame to the track frame.
    pub fn a_t_i(&self) -> Matrix3<f64> {
        small_angle_rotation(self.phi, self.theta, self.psi)
    }
}

/// Absolute velocity and acceleration of a body point, in track-frame
/// components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BodyMotion {
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

/// Absolute velocity and acceleration of point `u_hat` (body-frame
/// components) of a body with coordinates `q` and their time derivatives.
pub fn body_kinematics(
    q: &TgmsState,
    q_dot: &TgmsState,
    q_ddot: &TgmsState,
    state: &TrackFrameState,
    v: f64,
    v_dot: f64,
    u_hat: &Vector3<f64>,
) -> BodyMotion {
    body_kinematics_in(q, q_dot, q_ddot, &frame_velocity(state, v, v_dot), u_hat)
}

/// As [`body_kinematics`], with the track-frame motion supplied.
pub fn body_kinematics_in(
    q: &TgmsState,
    q_dot: &TgmsState,
    q_ddot: &TgmsState,
    frame: &FrameMotion,
    u_hat: &Vector3<f64>,
) -> BodyMotion {
    let a = q.a_t_i();
    let w_rel = q_dot.angles();
    let w = a.transpose() * frame.omega + w_rel;
    let al = skew(&w_rel).transpose() * frame.omega + a.transpose() * frame.alpha + q_ddot.angles();

    let r = q.offset();
    let r_dot = q_dot.offset();
    let r_ddot = q_ddot.offset();
    let wt = skew(&frame.omega);

    let velocity = frame.r_dot + r_dot + wt * r + a * w.cross(u_hat);
    let acceleration = frame.r_ddot
        + r_ddot
        + (skew(&frame.alpha) + wt * wt) * r
        + 2.0 * wt * r_dot
        + a * (al.cross(u_hat) + w.cross(&w.cross(u_hat)));
    BodyMotion { velocity, acceleration }
}

/// Orientation of the left and right rail-profile frames relative to the
/// track frame for rail inclination `beta`, cross level `cl` and half gauge.
pub fn rail_profile_frames(beta: f64, cl: f64, half_gauge: f64) -> (Matrix3<f64>, Matrix3<f64>) {
    let delta = cl / (2.0 * half_gauge);
    (rot_x(beta + delta), rot_x(-beta + delta))
}

/// Track-frame position of a rail-profile point `u_hat` = (lateral, height)
/// in the profile frame of `side`, displaced by the irregularities at `s`.
pub fn rail_point_tf(
    layout: &TrackLayout,
    s: f64,
    side: Side,
    irr: &IrregularityField,
    u_hat: &Vector2<f64>,
) -> Vector3<f64> {
    let o = irr.at(s);
    let (a_l, a_r) = rail_profile_frames(layout.rail_inclination, o.z_lir - o.z_rir, layout.half_gauge);
    let (a_rp, y_ir, z_ir) = match side {
        Side::Left => (a_l, o.y_lir, o.z_lir),
        Side::Right => (a_r, o.y_rir, o.z_rir),
    };
    let r_rp = Vector3::new(0.0, side.sign() * layout.half_gauge, 0.0);
    r_rp + Vector3::new(0.0, y_ir, z_ir) + a_rp * Vector3::new(0.0, u_hat.x, u_hat.y)
}

/// Global position of a rail-profile point.
pub fn rail_point_global(
    layout: &TrackLayout,
    s: f64,
    side: Side,
    irr: &IrregularityField,
    u_hat: &Vector2<f64>,
) -> Result<Vector3<f64>> {
    let f = layout.frame_at(s)?;
    Ok(f.r_t + f.a_t * rail_point_tf(layout, s, side, irr, u_hat))
}
