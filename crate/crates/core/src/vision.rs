//! Pin-hole projection and laser-plane triangulation.
//!
//! Pixel coordinates are relative to the principal point region described by
//! `M_int`; with the default intrinsics they are centred on the sensor (x to
//! the right, y down). No lens distortion is modelled.

use std::path::Path;

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::io::{read_toml, write_toml};
use crate::math::{rpy, rpy_angles};
use crate::{Error, Result};

/// Minimum homogeneous depth accepted in front of the camera.
pub const MIN_DEPTH: f64 = 1e-9;
/// Minimum |ray . plane normal| for a usable intersection.
pub const MIN_INCIDENCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    m_int: Matrix3<f64>,
    u_cam: Vector3<f64>,
    euler: Vector3<f64>,
    a_tgms_cam: Matrix3<f64>,
    m_ext: Matrix3x4<f64>,
    p: Matrix3x4<f64>,
}

impl CameraModel {
    /// Camera with intrinsics `m_int`, optical centre `u_cam` and attitude
    /// `euler = (phi, theta, psi)` of the camera frame in the TGMS frame.
    pub fn new(m_int: Matrix3<f64>, u_cam: Vector3<f64>, euler: Vector3<f64>) -> Result<Self> {
        if m_int[(1, 0)] != 0.0 || m_int[(2, 0)] != 0.0 || m_int[(2, 1)] != 0.0 {
            return Err(Error::Input("intrinsic matrix must be upper triangular".into()));
        }
        if !(0..3).all(|i| m_int[(i, i)] > 0.0) {
            return Err(Error::Input("intrinsic matrix needs a positive diagonal".into()));
        }
        if m_int.iter().chain(u_cam.iter()).chain(euler.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite camera parameter".into()));
        }
        let a = rpy(euler.x, euler.y, euler.z);
        Ok(Self::assemble(m_int, u_cam, euler, a))
    }

    /// Camera from an explicit rotation matrix (camera frame to TGMS frame).
    pub fn from_rotation(m_int: Matrix3<f64>, u_cam: Vector3<f64>, a_tgms_cam: Matrix3<f64>) -> Result<Self> {
        let (phi, theta, psi) = rpy_angles(&a_tgms_cam);
        let cam = Self::new(m_int, u_cam, Vector3::new(phi, theta, psi))?;
        Ok(Self::assemble(cam.m_int, u_cam, cam.euler, a_tgms_cam))
    }

    /// Camera at `eye` whose optical axis points at `target`, with image x
    /// as horizontal as possible.
    pub fn looking_at(m_int: Matrix3<f64>, eye: Vector3<f64>, target: Vector3<f64>) -> Result<Self> {
        let z = (target - eye).normalize();
        let up = Vector3::z();
        let x = z.cross(&up);
        if x.norm() < 1e-9 {
            return Err(Error::Input("camera axis is vertical".into()));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        Self::from_rotation(m_int, eye, Matrix3::from_columns(&[x, y, z]))
    }

    fn assemble(m_int: Matrix3<f64>, u_cam: Vector3<f64>, euler: Vector3<f64>, a: Matrix3<f64>) -> Self {
        let at = a.transpose();
        let mut m_ext = Matrix3x4::zeros();
        m_ext.fixed_view_mut::<3, 3>(0, 0).copy_from(&at);
        m_ext.set_column(3, &(-at * u_cam));
        CameraModel { m_int, u_cam, euler, a_tgms_cam: a, m_ext, p: m_int * m_ext }
    }

    pub fn m_int(&self) -> &Matrix3<f64> {
        &self.m_int
    }

    pub fn position(&self) -> &Vector3<f64> {
        &self.u_cam
    }

    pub fn euler(&self) -> &Vector3<f64> {
        &self.euler
    }

    pub fn a_tgms_cam(&self) -> &Matrix3<f64> {
        &self.a_tgms_cam
    }

    pub fn m_ext(&self) -> &Matrix3x4<f64> {
        &self.m_ext
    }

    pub fn projection(&self) -> &Matrix3x4<f64> {
        &self.p
    }

    /// Pixel and homogeneous scale factor of a TGMS point.
    pub fn project_with_depth(&self, u: &Vector3<f64>) -> Result<(Vector2<f64>, f64)> {
        let h = self.p * u.push(1.0);
        if h.z <= MIN_DEPTH {
            return Err(Error::BehindCamera { c: h.z });
        }
        Ok((Vector2::new(h.x / h.z, h.y / h.z), h.z))
    }

    pub fn project(&self, u: &Vector3<f64>) -> Result<Vector2<f64>> {
        self.project_with_depth(u).map(|(n, _)| n)
    }

    /// Unit direction (TGMS components) of the ray through pixel `n`.
    pub fn ray(&self, n: &Vector2<f64>) -> Vector3<f64> {
        let k_inv = self.m_int.try_inverse().expect("validated intrinsics");
        (self.a_tgms_cam * k_inv * n.push(1.0)).normalize()
    }
}

/// Plane `a x + b y + c z + d = 0` in the TGMS frame with unit normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaserPlane {
    pub normal: Vector3<f64>,
    pub d: f64,
}

impl LaserPlane {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        let n = Vector3::new(a, b, c);
        let norm = n.norm();
        if !(norm > 0.0) || !norm.is_finite() || !d.is_finite() {
            return Err(Error::Input("laser plane needs a finite nonzero normal".into()));
        }
        Ok(LaserPlane { normal: n / norm, d: d / norm })
    }

    pub fn coefficients(&self) -> [f64; 4] {
        [self.normal.x, self.normal.y, self.normal.z, self.d]
    }

    pub fn residual(&self, u: &Vector3<f64>) -> f64 {
        self.normal.dot(u) + self.d
    }
}

/// Intersects the back-projected ray of pixel `n` with the laser plane by
/// solving the projection and plane equations together for the point and
/// its scale factor.
pub fn triangulate_on_plane(cam: &CameraModel, plane: &LaserPlane, n: &Vector2<f64>) -> Result<Vector3<f64>> {
    if cam.ray(n).dot(&plane.normal).abs() <= MIN_INCIDENCE {
        return Err(Error::SingularGeometry);
    }
    let p = cam.projection();
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&p.fixed_view::<3, 3>(0, 0));
    m[(0, 3)] = -n.x;
    m[(1, 3)] = -n.y;
    m[(2, 3)] = -1.0;
    m.fixed_view_mut::<1, 3>(3, 0).copy_from(&plane.normal.transpose());
    let rhs = Vector4::new(-p[(0, 3)], -p[(1, 3)], -p[(2, 3)], -plane.d);
    let x = m.lu().solve(&rhs).ok_or(Error::SingularGeometry)?;
    if x.w <= MIN_DEPTH {
        return Err(Error::BehindCamera { c: x.w });
    }
    let mut u = x.xyz();
    // One refinement step removes residual rounding in the plane row.
    u -= plane.normal * plane.residual(&u);
    Ok(u)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangulatedCloud {
    pub points: Vec<Vector3<f64>>,
    pub dropped: usize,
}

/// Triangulates every pixel, dropping those with degenerate geometry.
pub fn triangulate_cloud(cam: &CameraModel, plane: &LaserPlane, pixels: &[Vector2<f64>]) -> Result<TriangulatedCloud> {
    let mut out = TriangulatedCloud { points: Vec::with_capacity(pixels.len()), dropped: 0 };
    for n in pixels {
        match triangulate_on_plane(cam, plane, n) {
            Ok(u) => out.points.push(u),
            Err(Error::SingularGeometry | Error::BehindCamera { .. }) => out.dropped += 1,
            Err(e) => return Err(e),
        }
    }
    if out.points.is_empty() {
        return Err(Error::EmptyCloud { dropped: out.dropped });
    }
    Ok(out)
}

/// Sensor extent in pixels about the principal point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorBounds {
    pub width: f64,
    pub height: f64,
}

impl Default for SensorBounds {
    fn default() -> Self {
        SensorBounds { width: 1280.0, height: 1024.0 }
    }
}

impl SensorBounds {
    pub fn contains(&self, n: &Vector2<f64>) -> bool {
        n.x.abs() <= 0.5 * self.width && n.y.abs() <= 0.5 * self.height
    }
}

/// Camera and laser parameters for one side, as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    /// Intrinsic matrix, row-major.
    pub m_int: [f64; 9],
    /// Optical centre in the TGMS frame (m).
    pub u_cam: [f64; 3],
    /// Camera attitude (phi, theta, psi) in the TGMS frame (rad).
    pub euler: [f64; 3],
    /// Laser plane coefficients (A, B, C, D).
    pub plane: [f64; 4],
    #[serde(default)]
    pub sensor: Option<SensorBounds>,
}

const CAMERA_HEADER: &str = "\
# Camera and laser-plane parameters (TGMS frame).
# m_int: intrinsic matrix, row-major, pixels
# u_cam: optical centre (m); euler: camera attitude phi, theta, psi (rad), R = Rz Ry Rx
# plane: A, B, C, D with A x + B y + C z + D = 0
";

impl CameraFile {
    pub fn new(cam: &CameraModel, plane: &LaserPlane, sensor: Option<SensorBounds>) -> Self {
        let k = cam.m_int();
        CameraFile {
            m_int: [k[(0, 0)], k[(0, 1)], k[(0, 2)], k[(1, 0)], k[(1, 1)], k[(1, 2)], k[(2, 0)], k[(2, 1)], k[(2, 2)]],
            u_cam: (*cam.position()).into(),
            euler: (*cam.euler()).into(),
            plane: plane.coefficients(),
            sensor,
        }
    }

    pub fn camera(&self) -> Result<CameraModel> {
        CameraModel::new(Matrix3::from_row_slice(&self.m_int), Vector3::from(self.u_cam), Vector3::from(self.euler))
    }

    pub fn laser_plane(&self) -> Result<LaserPlane> {
        let [a, b, c, d] = self.plane;
        LaserPlane::new(a, b, c, d)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_toml(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_toml(path, self, CAMERA_HEADER)
    }
}
