//! Track geometry measurement.
//!
//! Recovers the four track irregularities (alignment, vertical profile, gauge
//! variation and cross level) plus twist from laser-line camera frames, an
//! IMU and a wheel encoder. The crate is organised bottom-up:
//!
//! - [`track_model`]: ideal track preprocessor, rail irregularities and the
//!   kinematics of a body moving along the track.
//! - [`vision`]: pin-hole projection and laser-plane triangulation.
//! - [`profile_fit`]: constrained two-arc rail-head fit.
//! - [`calibration`]: camera (DLT) and laser-plane calibration.
//! - [`odometry`]: curvature-signature correction of the encoder position.
//! - [`fusion`]: track-aware gradient-descent attitude filter.
//! - [`pipeline`]: the measurement process that ties everything together.
//! - [`sensor_sim`]: synthetic sensor streams with exact ground truth.
//! - [`io`]: CSV and parameter-file formats shared by all of the above.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod error;
pub mod fusion;
pub mod io;
pub mod math;
pub mod odometry;
pub mod pipeline;
pub mod profile_fit;
pub mod sensor_sim;
pub mod track_model;
pub mod vision;

pub use error::{Error, Result};

pub use nalgebra::{Matrix3, Matrix3x4, Vector2, Vector3};

/// Standard gravity used throughout (m/s²).
pub const GRAVITY: f64 = 9.81;
