//! Ideal track preprocessor and track/body kinematics.
//!
//! The track frame (TF) at arc length `s` has X tangent to the ideal
//! centreline, Y joining the ideal rail-profile origins (pointing left) and Z
//! completing the triad (up). Its orientation is `Rz(psi) Ry(theta) Rx(phi)`
//! with heading `psi`, slope `theta` (positive downwards) and cant `phi`.

mod irregularity;
mod kinematics;
mod layout;

pub use irregularity::{
    irregularities_to_rails, IrregularityField, IrregularityRecord, RailOffsets,
    DEFAULT_SPACING as IRREGULARITY_SPACING,
};
pub use kinematics::{
    body_kinematics, body_kinematics_in, exact_frame_motion, frame_velocity, rail_point_global, rail_point_tf,
    rail_profile_frames, BodyMotion, FrameMotion, TgmsState,
};
pub use layout::{
    HorizontalKind, HorizontalSection, LayoutFile, TrackFrameState, TrackLayout, VerticalKind, VerticalSection,
};

use serde::{Deserialize, Serialize};

/// Rail side, seen in the direction of travel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    /// +1 for the left rail, -1 for the right rail.
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

impl std::str::FromStr for Side {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" | "l" => Ok(Side::Left),
            "right" | "r" => Ok(Side::Right),
            other => Err(crate::Error::Input(format!("unknown rail side '{other}'"))),
        }
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
