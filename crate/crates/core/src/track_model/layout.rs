use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::io::{read_toml, write_toml};
use crate::math::rpy;
use crate::{Error, Result};

/// Quadrature step of the cached centreline position table (m).
const POSITION_STEP: f64 = 0.1;
const CONTINUITY_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizontalKind {
    Straight,
    Circular,
    Transition,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerticalKind {
    ConstantSlope,
    Transition,
}

/// One section of the horizontal profile. Curvatures are signed (positive
/// for curves to the left); a straight end has curvature zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HorizontalSection {
    pub kind: HorizontalKind,
    pub length: f64,
    pub curvature_start: f64,
    pub curvature_end: f64,
    pub cant_start: f64,
    pub cant_end: f64,
}

impl HorizontalSection {
    pub fn straight(length: f64) -> Self {
        Self::straight_canted(length, 0.0)
    }

    pub fn straight_canted(length: f64, cant: f64) -> Self {
        HorizontalSection {
            kind: HorizontalKind::Straight,
            length,
            curvature_start: 0.0,
            curvature_end: 0.0,
            cant_start: cant,
            cant_end: cant,
        }
    }

    /// Circular section of signed radius `radius`.
    pub fn circular(length: f64, radius: f64, cant: f64) -> Self {
        HorizontalSection {
            kind: HorizontalKind::Circular,
            length,
            curvature_start: 1.0 / radius,
            curvature_end: 1.0 / radius,
            cant_start: cant,
            cant_end: cant,
        }
    }

    /// Clothoid between two curvatures and cants.
    pub fn transition(length: f64, curvature: (f64, f64), cant: (f64, f64)) -> Self {
        HorizontalSection {
            kind: HorizontalKind::Transition,
            length,
            curvature_start: curvature.0,
            curvature_end: curvature.1,
            cant_start: cant.0,
            cant_end: cant.1,
        }
    }
}

/// One section of the vertical profile. Slopes are pitch angles of the
/// centreline tangent, positive when descending in the direction of travel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerticalSection {
    pub kind: VerticalKind,
    pub length: f64,
    pub slope_start: f64,
    pub slope_end: f64,
}

impl VerticalSection {
    pub fn constant(length: f64, slope: f64) -> Self {
        VerticalSection { kind: VerticalKind::ConstantSlope, length, slope_start: slope, slope_end: slope }
    }

    pub fn transition(length: f64, slope_start: f64, slope_end: f64) -> Self {
        VerticalSection { kind: VerticalKind::Transition, length, slope_start, slope_end }
    }
}

/// Track-frame state at one arc length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackFrameState {
    pub s: f64,
    /// Centreline position in the global frame.
    pub r_t: Vector3<f64>,
    /// Rotation from the track frame to the global frame.
    pub a_t: Matrix3<f64>,
    pub psi_t: f64,
    pub theta_t: f64,
    pub phi_t: f64,
    pub rho_h: f64,
    pub rho_v: f64,
    pub rho_tw: f64,
    pub rho_h_prime: f64,
    pub alpha_v: f64,
}

impl TrackFrameState {
    /// Small-angle orientation matrix (cant and slope linearised).
    pub fn a_t_small_angle(&self) -> Matrix3<f64> {
        let (s, c) = self.psi_t.sin_cos();
        let (th, ph) = (self.theta_t, self.phi_t);
        Matrix3::new(c, -s, ph * s + th * c, s, c, th * s - ph * c, -th, ph, 1.0)
    }

    /// Exact angular rate of the track frame per unit arc length, in
    /// track-frame components, and its arc-length derivative.
    ///
    /// For a flat uncanted track this is `(0, 0, rho_h)`; in general it
    /// differs from the small-angle rates by terms in cant and slope.
    pub fn darboux(&self) -> (Vector3<f64>, Vector3<f64>) {
        let (sp, cp) = self.phi_t.sin_cos();
        let (st, ct) = self.theta_t.sin_cos();
        let (dpsi, dth, dphi) = (self.rho_h, self.rho_v, self.rho_tw);
        let ddpsi = self.rho_h_prime;
        let k = Vector3::new(dphi - dpsi * st, dth * cp + dpsi * ct * sp, -dth * sp + dpsi * ct * cp);
        let dk = Vector3::new(
            -ddpsi * st - dpsi * ct * dth,
            -dth * sp * dphi + ddpsi * ct * sp - dpsi * st * dth * sp + dpsi * ct * cp * dphi,
            -dth * cp * dphi + ddpsi * ct * cp - dpsi * st * dth * cp - dpsi * ct * sp * dphi,
        );
        (k, dk)
    }
}

/// Ideal track geometry: horizontal and vertical profiles plus the cached
/// centreline position table.
#[derive(Clone, Debug)]
pub struct TrackLayout {
    horizontal: Vec<HorizontalSection>,
    vertical: Vec<VerticalSection>,
    pub half_gauge: f64,
    pub rail_inclination: f64,
    total_length: f64,
    h_starts: Vec<f64>,
    h_heading: Vec<f64>,
    v_starts: Vec<f64>,
    step: f64,
    nodes_r: Vec<Vector3<f64>>,
    nodes_t: Vec<Vector3<f64>>,
}

impl TrackLayout {
    /// Validates the profiles and precomputes the centreline table. The
    /// track starts at the global origin with zero heading.
    pub fn new(
        horizontal: Vec<HorizontalSection>,
        vertical: Vec<VerticalSection>,
        half_gauge: f64,
        rail_inclination: f64,
    ) -> Result<Self> {
        validate(&horizontal, &vertical, half_gauge)?;
        let total_length: f64 = horizontal.iter().map(|h| h.length).sum();

        let mut h_starts = Vec::with_capacity(horizontal.len());
        let mut h_heading = Vec::with_capacity(horizontal.len());
        let (mut s0, mut psi0) = (0.0, 0.0);
        for h in &horizontal {
            h_starts.push(s0);
            h_heading.push(psi0);
            s0 += h.length;
            psi0 += 0.5 * h.length * (h.curvature_start + h.curvature_end);
        }
        let mut v_starts = Vec::with_capacity(vertical.len());
        let mut s0 = 0.0;
        for v in &vertical {
            v_starts.push(s0);
            s0 += v.length;
        }

        let mut layout = TrackLayout {
            horizontal,
            vertical,
            half_gauge,
            rail_inclination,
            total_length,
            h_starts,
            h_heading,
            v_starts,
            step: 0.0,
            nodes_r: Vec::new(),
            nodes_t: Vec::new(),
        };
        layout.build_position_table();
        Ok(layout)
    }

    /// Straight flat track of the given length.
    pub fn straight(length: f64, half_gauge: f64) -> Result<Self> {
        Self::new(
            vec![HorizontalSection::straight(length)],
            vec![VerticalSection::constant(length, 0.0)],
            half_gauge,
            0.0,
        )
    }

    /// Flat layout from a horizontal profile alone.
    pub fn flat(horizontal: Vec<HorizontalSection>, half_gauge: f64, rail_inclination: f64) -> Result<Self> {
        let total: f64 = horizontal.iter().map(|h| h.length).sum();
        Self::new(horizontal, vec![VerticalSection::constant(total, 0.0)], half_gauge, rail_inclination)
    }

    pub fn total_length(&self) -> f64 {
        self.total_length
    }

    pub fn horizontal(&self) -> &[HorizontalSection] {
        &self.horizontal
    }

    pub fn vertical(&self) -> &[VerticalSection] {
        &self.vertical
    }

    /// Start arc length of every horizontal section.
    pub fn horizontal_starts(&self) -> &[f64] {
        &self.h_starts
    }

    fn check_range(&self, s: f64) -> Result<()> {
        if !(s >= 0.0 && s <= self.total_length) {
            return Err(Error::Range { s, total: self.total_length });
        }
        Ok(())
    }

    fn h_index(&self, s: f64) -> usize {
        (self.h_starts.partition_point(|&x| x <= s).max(1) - 1).min(self.horizontal.len() - 1)
    }

    fn v_index(&self, s: f64) -> usize {
        (self.v_starts.partition_point(|&x| x <= s).max(1) - 1).min(self.vertical.len() - 1)
    }

    /// Horizontal curvature only; cheaper than [`frame_at`](Self::frame_at).
    pub fn curvature_h(&self, s: f64) -> Result<f64> {
        self.check_range(s)?;
        let i = self.h_index(s);
        let h = &self.horizontal[i];
        let u = s - self.h_starts[i];
        Ok(h.curvature_start + (h.curvature_end - h.curvature_start) * (u / h.length))
    }

    /// Closed-form angles and curvatures: (psi, theta, phi, rho_h, rho_v,
    /// rho_tw, rho_h', alpha_v).
    fn angles(&self, s: f64) -> [f64; 8] {
        let i = self.h_index(s);
        let h = &self.horizontal[i];
        let u = s - self.h_starts[i];
        let dk = (h.curvature_end - h.curvature_start) / h.length;
        let rho_h = h.curvature_start + dk * u;
        let psi = self.h_heading[i] + h.curvature_start * u + 0.5 * dk * u * u;
        let rho_tw = (h.cant_end - h.cant_start) / h.length;
        let phi = h.cant_start + rho_tw * u;
        let rho_h_prime = if h.kind == HorizontalKind::Transition { dk } else { 0.0 };

        let j = self.v_index(s);
        let v = &self.vertical[j];
        let w = s - self.v_starts[j];
        let rho_v = (v.slope_end - v.slope_start) / v.length;
        let alpha_v = v.slope_start + rho_v * w;
        [psi, alpha_v, phi, rho_h, rho_v, rho_tw, rho_h_prime, alpha_v]
    }

    fn tangent(&self, s: f64) -> Vector3<f64> {
        let a = self.angles(s);
        let (sp, cp) = a[0].sin_cos();
        let (st, ct) = a[1].sin_cos();
        Vector3::new(ct * cp, ct * sp, -st)
    }

    fn build_position_table(&mut self) {
        let n = (self.total_length / POSITION_STEP).ceil().max(1.0) as usize;
        let h = self.total_length / n as f64;
        self.step = h;
        self.nodes_r = Vec::with_capacity(n + 1);
        self.nodes_t = Vec::with_capacity(n + 1);
        let mut r = Vector3::zeros();
        let mut t0 = self.tangent(0.0);
        self.nodes_r.push(r);
        self.nodes_t.push(t0);
        for k in 0..n {
            let s0 = k as f64 * h;
            let s1 = if k + 1 == n { self.total_length } else { (k + 1) as f64 * h };
            let tm = self.tangent(0.5 * (s0 + s1));
            let t1 = self.tangent(s1);
            r += (s1 - s0) / 6.0 * (t0 + 4.0 * tm + t1);
            self.nodes_r.push(r);
            self.nodes_t.push(t1);
            t0 = t1;
        }
    }

    /// Centreline position from the cached table (cubic Hermite).
    pub fn position(&self, s: f64) -> Result<Vector3<f64>> {
        self.check_range(s)?;
        Ok(self.position_unchecked(s))
    }

    fn position_unchecked(&self, s: f64) -> Vector3<f64> {
        let n = self.nodes_r.len() - 1;
        let k = ((s / self.step).floor() as usize).min(n - 1);
        let s0 = k as f64 * self.step;
        let h = if k + 1 == n { self.total_length - s0 } else { self.step };
        let t = ((s - s0) / h).clamp(0.0, 1.0);
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        self.nodes_r[k] * h00
            + self.nodes_t[k] * (h10 * h)
            + self.nodes_r[k + 1] * h01
            + self.nodes_t[k + 1] * (h11 * h)
    }

    /// Position, orientation and curvatures of the track frame at `s`.
    pub fn frame_at(&self, s: f64) -> Result<TrackFrameState> {
        self.check_range(s)?;
        let [psi, theta, phi, rho_h, rho_v, rho_tw, rho_h_prime, alpha_v] = self.angles(s);
        Ok(TrackFrameState {
            s,
            r_t: self.position_unchecked(s),
            a_t: rpy(phi, theta, psi),
            psi_t: psi,
            theta_t: theta,
            phi_t: phi,
            rho_h,
            rho_v,
            rho_tw,
            rho_h_prime,
            alpha_v,
        })
    }

    /// Loads a layout file (TOML, see [`LayoutFile`]).
    pub fn load(path: &Path) -> Result<Self> {
        read_toml::<LayoutFile>(path)?.into_layout()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_toml(path, &LayoutFile::from_layout(self), LAYOUT_HEADER)
    }
}

const LAYOUT_HEADER: &str = "\
# Track layout.
# half_gauge: distance from centreline to each ideal rail-profile origin (m)
# rail_inclination: rail-profile inclination angle (rad)
# [[horizontal]] kind = straight | circular | transition, length (m),
#   radius_start / radius_end (m, signed, positive to the left; omit for straight ends),
#   cant_start / cant_end (rad)
# [[vertical]] kind = constant_slope | transition, length (m),
#   slope_start / slope_end (rad, positive descending)
";

fn validate(horizontal: &[HorizontalSection], vertical: &[VerticalSection], half_gauge: f64) -> Result<()> {
    let bad = |m: String| Err(Error::Layout(m));
    if !(half_gauge > 0.0) {
        return bad(format!("half gauge must be positive, got {half_gauge}"));
    }
    if horizontal.is_empty() || vertical.is_empty() {
        return bad("both profiles need at least one section".into());
    }
    for (i, h) in horizontal.iter().enumerate() {
        if !(h.length > 0.0) || !h.length.is_finite() {
            return bad(format!("horizontal section {i} has non-positive length {}", h.length));
        }
        let vals = [h.curvature_start, h.curvature_end, h.cant_start, h.cant_end];
        if vals.iter().any(|v| !v.is_finite()) {
            return bad(format!("horizontal section {i} has non-finite values"));
        }
        match h.kind {
            HorizontalKind::Straight => {
                if h.curvature_start != 0.0 || h.curvature_end != 0.0 {
                    return bad(format!("straight section {i} has nonzero curvature"));
                }
                if h.cant_start != h.cant_end {
                    return bad(format!("straight section {i} has varying cant"));
                }
            }
            HorizontalKind::Circular => {
                if h.curvature_start == 0.0 || h.curvature_start != h.curvature_end {
                    return bad(format!("circular section {i} needs equal nonzero end curvatures"));
                }
                if h.cant_start != h.cant_end {
                    return bad(format!("circular section {i} has varying cant"));
                }
            }
            HorizontalKind::Transition => {}
        }
        if i > 0 {
            let p = &horizontal[i - 1];
            if (p.curvature_end - h.curvature_start).abs() > CONTINUITY_TOL {
                return bad(format!("curvature jump between horizontal sections {} and {i}", i - 1));
            }
            if (p.cant_end - h.cant_start).abs() > CONTINUITY_TOL {
                return bad(format!("cant jump between horizontal sections {} and {i}", i - 1));
            }
        }
    }
    for (i, v) in vertical.iter().enumerate() {
        if !(v.length > 0.0) || !v.length.is_finite() {
            return bad(format!("vertical section {i} has non-positive length {}", v.length));
        }
        if !v.slope_start.is_finite() || !v.slope_end.is_finite() {
            return bad(format!("vertical section {i} has non-finite slope"));
        }
        if v.kind == VerticalKind::ConstantSlope && v.slope_start != v.slope_end {
            return bad(format!("constant-slope section {i} has varying slope"));
        }
        if i > 0 && (vertical[i - 1].slope_end - v.slope_start).abs() > CONTINUITY_TOL {
            return bad(format!("slope jump between vertical sections {} and {i}", i - 1));
        }
    }
    let th: f64 = horizontal.iter().map(|h| h.length).sum();
    let tv: f64 = vertical.iter().map(|v| v.length).sum();
    if (th - tv).abs() > 1e-9 * th.max(1.0) {
        return bad(format!("horizontal length {th} m differs from vertical length {tv} m"));
    }
    Ok(())
}

/// On-disk layout representation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayoutFile {
    pub half_gauge: f64,
    #[serde(default)]
    pub rail_inclination: f64,
    pub horizontal: Vec<HorizontalRecord>,
    #[serde(default)]
    pub vertical: Vec<VerticalRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HorizontalRecord {
    pub kind: HorizontalKind,
    pub length: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius_start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius_end: Option<f64>,
    #[serde(default)]
    pub cant_start: f64,
    #[serde(default)]
    pub cant_end: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerticalRecord {
    pub kind: VerticalKind,
    pub length: f64,
    #[serde(default)]
    pub slope_start: f64,
    #[serde(default)]
    pub slope_end: f64,
}

fn radius_to_curvature(r: Option<f64>) -> f64 {
    match r {
        Some(r) if r.is_finite() && r != 0.0 => 1.0 / r,
        _ => 0.0,
    }
}

fn curvature_to_radius(k: f64) -> Option<f64> {
    (k != 0.0).then(|| 1.0 / k)
}

impl LayoutFile {
    pub fn into_layout(self) -> Result<TrackLayout> {
        let horizontal: Vec<HorizontalSection> = self
            .horizontal
            .iter()
            .map(|r| HorizontalSection {
                kind: r.kind,
                length: r.length,
                curvature_start: radius_to_curvature(r.radius_start),
                curvature_end: radius_to_curvature(r.radius_end),
                cant_start: r.cant_start,
                cant_end: r.cant_end,
            })
            .collect();
        let mut vertical: Vec<VerticalSection> = self
            .vertical
            .iter()
            .map(|r| VerticalSection {
                kind: r.kind,
                length: r.length,
                slope_start: r.slope_start,
                slope_end: r.slope_end,
            })
            .collect();
        if vertical.is_empty() {
            let total = horizontal.iter().map(|h| h.length).sum();
            vertical.push(VerticalSection::constant(total, 0.0));
        }
        TrackLayout::new(horizontal, vertical, self.half_gauge, self.rail_inclination)
    }

    pub fn from_layout(layout: &TrackLayout) -> Self {
        LayoutFile {
            half_gauge: layout.half_gauge,
            rail_inclination: layout.rail_inclination,
            horizontal: layout
                .horizontal
                .iter()
                .map(|h| HorizontalRecord {
                    kind: h.kind,
                    length: h.length,
                    radius_start: curvature_to_radius(h.curvature_start),
                    radius_end: curvature_to_radius(h.curvature_end),
                    cant_start: h.cant_start,
                    cant_end: h.cant_end,
                })
                .collect(),
            vertical: layout
                .vertical
                .iter()
                .map(|v| VerticalRecord {
                    kind: v.kind,
                    length: v.length,
                    slope_start: v.slope_start,
                    slope_end: v.slope_end,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn curve_layout() -> TrackLayout {
        TrackLayout::flat(
            vec![
                HorizontalSection::straight(100.0),
                HorizontalSection::transition(80.0, (0.0, 1.0 / 500.0), (0.0, 0.1)),
                HorizontalSection::circular(200.0, 500.0, 0.1),
                HorizontalSection::transition(80.0, (1.0 / 500.0, 0.0), (0.1, 0.0)),
                HorizontalSection::straight(100.0),
            ],
            0.75,
            0.025,
        )
        .unwrap()
    }

    #[test]
    fn straight_track_is_identity() {
        let l = TrackLayout::straight(100.0, 0.75).unwrap();
        for s in [0.0, 12.3, 100.0] {
            let f = l.frame_at(s).unwrap();
            assert_eq!(f.a_t, Matrix3::identity());
            assert_eq!(f.rho_h, 0.0);
            assert_eq!(f.rho_v, 0.0);
            assert_eq!(f.rho_tw, 0.0);
            assert_relative_eq!(f.r_t, Vector3::new(s, 0.0, 0.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn circular_heading_integrates_curvature() {
        let l = TrackLayout::flat(vec![HorizontalSection::circular(300.0, 500.0, 0.0)], 0.75, 0.0).unwrap();
        let f = l.frame_at(100.0).unwrap();
        assert_relative_eq!(f.psi_t, 0.2, epsilon = 1e-15);
        assert_relative_eq!(f.rho_h, 0.002, epsilon = 1e-15);
        // Chord of a circular arc.
        let expected = Vector3::new(500.0 * 0.2f64.sin(), 500.0 * (1.0 - 0.2f64.cos()), 0.0);
        assert_relative_eq!(f.r_t, expected, epsilon = 1e-9);
    }

    #[test]
    fn transition_midpoint_values() {
        let l = TrackLayout::flat(
            vec![
                HorizontalSection::straight(10.0),
                HorizontalSection::transition(80.0, (0.0, 1.0 / 500.0), (0.0, 0.0)),
                HorizontalSection::circular(10.0, 500.0, 0.0),
            ],
            0.75,
            0.0,
        )
        .unwrap();
        let f = l.frame_at(50.0).unwrap();
        assert_relative_eq!(f.rho_h, 0.001, epsilon = 1e-15);
        assert_relative_eq!(f.rho_h_prime, 2.5e-5, epsilon = 1e-18);
    }

    #[test]
    fn orthonormal_everywhere() {
        let l = curve_layout();
        let mut s = 0.0;
        while s <= l.total_length() {
            let a = l.frame_at(s).unwrap().a_t;
            let e = a.transpose() * a - Matrix3::identity();
            assert!(e.amax() < 1e-12);
            assert_relative_eq!(a.determinant(), 1.0, epsilon = 1e-12);
            s += 0.7;
        }
    }

    #[test]
    fn curvature_and_cant_continuous_at_boundaries() {
        let l = curve_layout();
        for &b in &l.h_starts[1..] {
            let lo = l.frame_at(b - 1e-9).unwrap();
            let hi = l.frame_at(b).unwrap();
            // Values differ only by the slope times 1e-9.
            assert!((lo.rho_h - hi.rho_h).abs() < 1e-12);
            assert!((lo.phi_t - hi.phi_t).abs() < 1e-10);
            assert!((lo.psi_t - hi.psi_t).abs() < 1e-10);
        }
    }

    #[test]
    fn small_angle_matrix_close_to_exact() {
        let l = TrackLayout::new(
            vec![HorizontalSection::circular(100.0, 300.0, 0.05)],
            vec![VerticalSection::constant(100.0, -0.05)],
            0.75,
            0.0,
        )
        .unwrap();
        let f = l.frame_at(60.0).unwrap();
        assert!((f.a_t - f.a_t_small_angle()).amax() < 5e-3);
    }

    #[test]
    fn darboux_matches_finite_difference_of_orientation() {
        let l = TrackLayout::new(
            vec![
                HorizontalSection::straight(20.0),
                HorizontalSection::transition(60.0, (0.0, 1.0 / 300.0), (0.0, 0.1)),
                HorizontalSection::circular(50.0, 300.0, 0.1),
            ],
            vec![
                VerticalSection::constant(30.0, 0.01),
                VerticalSection::transition(70.0, 0.01, -0.02),
                VerticalSection::constant(30.0, -0.02),
            ],
            0.75,
            0.0,
        )
        .unwrap();
        let h = 1e-4;
        for s in [40.0, 55.5, 70.0] {
            let f = l.frame_at(s).unwrap();
            let ap = l.frame_at(s + h).unwrap().a_t;
            let am = l.frame_at(s - h).unwrap().a_t;
            let da = (ap - am) / (2.0 * h);
            let w = f.a_t.transpose() * da;
            let (k, dk) = f.darboux();
            assert_relative_eq!(Vector3::new(w[(2, 1)], w[(0, 2)], w[(1, 0)]), k, epsilon = 1e-9);
            let kp = l.frame_at(s + h).unwrap().darboux().0;
            let km = l.frame_at(s - h).unwrap().darboux().0;
            assert_relative_eq!((kp - km) / (2.0 * h), dk, epsilon = 1e-10);
        }
    }

    #[test]
    fn position_matches_dense_quadrature() {
        let l = curve_layout();
        // Independent oracle: composite midpoint rule with 1 mm steps.
        let s_end = 333.3;
        let n = 333_300;
        let h = s_end / n as f64;
        let mut r = Vector3::zeros();
        for k in 0..n {
            r += l.tangent((k as f64 + 0.5) * h) * h;
        }
        assert_relative_eq!(l.position(s_end).unwrap(), r, epsilon = 1e-6);
    }

    #[test]
    fn frame_at_is_deterministic() {
        let l = curve_layout();
        assert_eq!(l.frame_at(123.456).unwrap(), l.frame_at(123.456).unwrap());
    }

    #[test]
    fn rejects_bad_layouts() {
        assert!(matches!(TrackLayout::flat(vec![HorizontalSection::straight(0.0)], 0.75, 0.0), Err(Error::Layout(_))));
        let jump = vec![HorizontalSection::straight(10.0), HorizontalSection::circular(10.0, 300.0, 0.0)];
        assert!(matches!(TrackLayout::flat(jump, 0.75, 0.0), Err(Error::Layout(_))));
        let l = TrackLayout::straight(10.0, 0.75).unwrap();
        assert!(matches!(l.frame_at(10.5), Err(Error::Range { .. })));
        assert!(matches!(l.frame_at(-0.1), Err(Error::Range { .. })));
    }

    #[test]
    fn layout_file_round_trip() {
        let l = curve_layout();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("layout.toml");
        l.save(&p).unwrap();
        let back = TrackLayout::load(&p).unwrap();
        assert_eq!(back.horizontal().len(), 5);
        let a = l.frame_at(250.0).unwrap();
        let b = back.frame_at(250.0).unwrap();
        assert_relative_eq!(a.rho_h, b.rho_h, epsilon = 1e-15);
        assert_relative_eq!(a.r_t, b.r_t, epsilon = 1e-9);
    }
}
