use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("arc length {s} m outside track range [0, {total}] m")]
    Range { s: f64, total: f64 },

    #[error("invalid layout: {0}")]
    Layout(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("point is behind the camera (scale factor {c:e})")]
    BehindCamera { c: f64 },

    #[error("viewing ray is parallel to the laser plane")]
    SingularGeometry,

    #[error("no valid points left after triangulation ({dropped} dropped)")]
    EmptyCloud { dropped: usize },

    #[error("degenerate point cloud: {0}")]
    DegenerateCloud(String),

    #[error("angle undefined: point coincides with an arc centre")]
    UndefinedAngle,

    #[error("profile parameter {alpha} rad outside [{min}, {max}]")]
    AlphaRange { alpha: f64, min: f64, max: f64 },

    #[error("degenerate calibration configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("speed {v} m/s below minimum {v_min} m/s")]
    BelowSpeed { v: f64, v_min: f64 },

    #[error("anchor ({s_app}, {s_ideal}) conflicts with existing anchors")]
    AnchorConflict { s_app: f64, s_ideal: f64 },

    #[error("attitude outside small-angle envelope (pitch {theta} rad)")]
    OutOfEnvelope { theta: f64 },

    #[error("stream gap of {gap} s at t = {t} s exceeds limit")]
    StreamGap { t: f64, gap: f64 },

    #[error("left and right rails swapped (left y {left_y} <= right y {right_y})")]
    SideSwap { left_y: f64, right_y: f64 },

    #[error("frame {frame}: camera on {side} side cannot see the rail head")]
    Visibility { frame: usize, side: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical(_)
                | Error::SingularGeometry
                | Error::DegenerateCloud(_)
                | Error::DegenerateConfiguration(_)
                | Error::OutOfEnvelope { .. }
        )
    }
}
