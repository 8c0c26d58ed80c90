//! Camera and laser-plane calibration from pattern correspondences given
//! directly in the TGMS frame.
//!
//! The projection matrix is estimated by a normalised direct linear
//! transform and split into intrinsics and pose by an RQ decomposition; an
//! optional Gauss-Newton pass then minimises reprojection error.

use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::io::read_csv;
use crate::math::rpy;
use crate::vision::{CameraModel, LaserPlane};
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CalibrationSet {
    /// Pattern points with their pixel observations.
    pub pattern: Vec<(Vector3<f64>, Vector2<f64>)>,
    /// Points where the laser sheet meets the pattern.
    pub laser: Vec<Vector3<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorrespondenceRow {
    tag: String,
    #[serde(rename = "X")]
    x: f64,
    #[serde(rename = "Y")]
    y: f64,
    #[serde(rename = "Z")]
    z: f64,
    px: Option<f64>,
    py: Option<f64>,
}

impl CalibrationSet {
    /// Reads `tag,X,Y,Z,px,py` rows; tag `P` rows need pixels, tag `Q` rows
    /// may leave them empty.
    pub fn load(path: &Path) -> Result<Self> {
        let rows: Vec<CorrespondenceRow> = read_csv(path)?;
        let mut set = CalibrationSet::default();
        for (i, r) in rows.into_iter().enumerate() {
            let u = Vector3::new(r.x, r.y, r.z);
            match r.tag.trim() {
                "P" | "p" => match (r.px, r.py) {
                    (Some(px), Some(py)) => set.pattern.push((u, Vector2::new(px, py))),
                    _ => {
                        return Err(Error::Input(format!(
                            "{}: P row {} lacks pixel coordinates",
                            path.display(),
                            i + 1
                        )))
                    }
                },
                "Q" | "q" => set.laser.push(u),
                other => {
                    return Err(Error::Input(format!("{}: unknown tag '{other}' on row {}", path.display(), i + 1)))
                }
            }
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let rows = self
            .pattern
            .iter()
            .map(|(u, n)| CorrespondenceRow { tag: "P".into(), x: u.x, y: u.y, z: u.z, px: Some(n.x), py: Some(n.y) })
            .chain(self.laser.iter().map(|u| CorrespondenceRow {
                tag: "Q".into(),
                x: u.x,
                y: u.y,
                z: u.z,
                px: None,
                py: None,
            }));
        crate::io::write_csv(path, rows)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibrationOptions {
    /// Intrinsics known from a separate calibration; only the pose is then
    /// estimated (linear estimate used as the starting point).
    pub intrinsics: Option<Matrix3<f64>>,
    /// Run Gauss-Newton reprojection refinement after the linear estimate.
    pub refine: bool,
    pub max_refine_iter: usize,
    /// Reprojection RMS (px) above which the result is flagged.
    pub rms_warning: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions { intrinsics: None, refine: true, max_refine_iter: 10, rms_warning: 2.0 }
    }
}

#[derive(Clone, Debug)]
pub struct CameraCalibration {
    pub camera: CameraModel,
    /// Root-mean-square reprojection distance over the pattern points (px).
    pub rms: f64,
    pub quality_warning: bool,
}

/// Hartley normalisation: translate to the centroid and scale to mean
/// distance `sqrt(dim)`. Returns the normalised points and the transform.
fn normalise<const D: usize>(
    pts: &[nalgebra::SVector<f64, D>],
) -> (Vec<nalgebra::SVector<f64, D>>, f64, nalgebra::SVector<f64, D>) {
    let n = pts.len() as f64;
    let c = pts.iter().fold(nalgebra::SVector::<f64, D>::zeros(), |a, p| a + p) / n;
    let mean_dist = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean_dist > 0.0 { (D as f64).sqrt() / mean_dist } else { 1.0 };
    (pts.iter().map(|p| (p - c) * s).collect(), s, c)
}

/// Projection matrix from at least six non-coplanar correspondences.
pub fn estimate_projection(pattern: &[(Vector3<f64>, Vector2<f64>)]) -> Result<Matrix3x4<f64>> {
    if pattern.len() < 6 {
        return Err(Error::DegenerateConfiguration(format!("{} correspondences, need at least 6", pattern.len())));
    }
    let world: Vec<Vector3<f64>> = pattern.iter().map(|p| p.0).collect();
    let image: Vec<Vector2<f64>> = pattern.iter().map(|p| p.1).collect();
    let (wn, ws, wc) = normalise(&world);
    let (im, is, ic) = normalise(&image);

    let n = pattern.len();
    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for i in 0..n {
        let x = wn[i].push(1.0);
        let (u, v) = (im[i].x, im[i].y);
        for j in 0..4 {
            a[(2 * i, j)] = x[j];
            a[(2 * i, 8 + j)] = -u * x[j];
            a[(2 * i + 1, 4 + j)] = x[j];
            a[(2 * i + 1, 8 + j)] = -v * x[j];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv = |k: usize| svd.singular_values[order[k]];
    if order.len() < 12 || sv(10) <= 1e-9 * sv(0) {
        return Err(Error::DegenerateConfiguration("correspondences do not determine a projection (coplanar?)".into()));
    }
    let h = v_t.row(order[11]);
    let p_hat = Matrix3x4::from_row_slice(&h.iter().copied().collect::<Vec<_>>());

    // Undo the normalisations: P = T_img^-1 * P_hat * T_world.
    let t_img_inv = Matrix3::new(1.0 / is, 0.0, ic.x, 0.0, 1.0 / is, ic.y, 0.0, 0.0, 1.0);
    let mut t_world = nalgebra::Matrix4::identity() * ws;
    t_world[(3, 3)] = 1.0;
    t_world.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-wc * ws));
    Ok(t_img_inv * p_hat * t_world)
}

/// RQ decomposition of a 3x3 matrix into upper-triangular `K` (positive
/// diagonal) and orthogonal `R`.
fn rq3(m: &Matrix3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let flip = Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0);
    let qr = (flip * m).transpose().qr();
    let (q, r) = (qr.q(), qr.r());
    let mut k = flip * r.transpose() * flip;
    let mut rot = flip * q.transpose();
    for i in 0..3 {
        if k[(i, i)] < 0.0 {
            k.column_mut(i).neg_mut();
            rot.row_mut(i).neg_mut();
        }
    }
    (k, rot)
}

/// Splits a projection matrix into a camera model.
pub fn decompose_projection(p: &Matrix3x4<f64>) -> Result<CameraModel> {
    let mut p = *p;
    let m = p.fixed_view::<3, 3>(0, 0).into_owned();
    if m.determinant().abs() < f64::EPSILON * m.norm().powi(3) {
        return Err(Error::DegenerateConfiguration("projection matrix has singular left block".into()));
    }
    if m.determinant() < 0.0 {
        p = -p;
    }
    let (mut k, rot) = rq3(&p.fixed_view::<3, 3>(0, 0).into_owned());
    let scale = k[(2, 2)];
    let t = k.try_inverse().ok_or(Error::SingularGeometry)? * p.column(3);
    k /= scale;
    k[(1, 0)] = 0.0;
    k[(2, 0)] = 0.0;
    k[(2, 1)] = 0.0;
    let a_tgms_cam = rot.transpose();
    let u_cam = -a_tgms_cam * t;
    CameraModel::from_rotation(k, u_cam, a_tgms_cam)
}

pub fn reprojection_rms(cam: &CameraModel, pattern: &[(Vector3<f64>, Vector2<f64>)]) -> Result<f64> {
    let mut sum = 0.0;
    for (u, n) in pattern {
        sum += (cam.project(u)? - n).norm_squared();
    }
    Ok((sum / pattern.len() as f64).sqrt())
}

fn params_of(cam: &CameraModel) -> [f64; 11] {
    let k = cam.m_int();
    let e = cam.euler();
    let u = cam.position();
    [k[(0, 0)], k[(0, 1)], k[(0, 2)], k[(1, 1)], k[(1, 2)], e.x, e.y, e.z, u.x, u.y, u.z]
}

fn camera_of(p: &[f64; 11]) -> Result<CameraModel> {
    let k = Matrix3::new(p[0], p[1], p[2], 0.0, p[3], p[4], 0.0, 0.0, 1.0);
    CameraModel::new(k, Vector3::new(p[8], p[9], p[10]), Vector3::new(p[5], p[6], p[7]))
}

fn residuals(p: &[f64; 11], pattern: &[(Vector3<f64>, Vector2<f64>)]) -> Option<nalgebra::DVector<f64>> {
    // Direct evaluation avoids rebuilding a validated camera per sample.
    let k = Matrix3::new(p[0], p[1], p[2], 0.0, p[3], p[4], 0.0, 0.0, 1.0);
    let a = rpy(p[5], p[6], p[7]);
    let c = Vector3::new(p[8], p[9], p[10]);
    let mut r = nalgebra::DVector::zeros(2 * pattern.len());
    for (i, (u, n)) in pattern.iter().enumerate() {
        let h = k * (a.transpose() * (u - c));
        if h.z <= 0.0 {
            return None;
        }
        r[2 * i] = h.x / h.z - n.x;
        r[2 * i + 1] = h.y / h.z - n.y;
    }
    Some(r)
}

/// Gauss-Newton minimisation of reprojection error over the 11 camera
/// parameters with a central-difference Jacobian and step halving.
fn refine(
    cam: &CameraModel,
    pattern: &[(Vector3<f64>, Vector2<f64>)],
    max_iter: usize,
    free: std::ops::Range<usize>,
) -> Result<CameraModel> {
    let mut p = params_of(cam);
    let Some(mut r) = residuals(&p, pattern) else { return Ok(cam.clone()) };
    let mut cost = r.norm_squared();
    for _ in 0..max_iter {
        let mut j = DMatrix::zeros(r.len(), free.len());
        for (col, k) in free.clone().enumerate() {
            let h = 1e-6 * p[k].abs().max(1e-3);
            let (mut pp, mut pm) = (p, p);
            pp[k] += h;
            pm[k] -= h;
            let (Some(rp), Some(rm)) = (residuals(&pp, pattern), residuals(&pm, pattern)) else {
                return camera_of(&p);
            };
            j.set_column(col, &((rp - rm) / (2.0 * h)));
        }
        let jt = j.transpose();
        let Some(step) = (&jt * &j).cholesky().map(|c| c.solve(&(-(&jt * &r)))) else { break };
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..20 {
            let mut trial = p;
            for (col, k) in free.clone().enumerate() {
                trial[k] += alpha * step[col];
            }
            if let Some(rt) = residuals(&trial, pattern) {
                let ct = rt.norm_squared();
                if ct < cost {
                    p = trial;
                    r = rt;
                    improved = cost - ct > 1e-15 * cost;
                    cost = ct;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !improved {
            break;
        }
    }
    camera_of(&p)
}

/// Estimates the camera model from pattern correspondences.
pub fn calibrate_camera(
    pattern: &[(Vector3<f64>, Vector2<f64>)],
    opts: &CalibrationOptions,
) -> Result<CameraCalibration> {
    let p = estimate_projection(pattern)?;
    let mut camera = decompose_projection(&p)?;
    if let Some(k) = opts.intrinsics {
        let k = k / k[(2, 2)];
        camera = CameraModel::new(k, *camera.position(), *camera.euler())?;
        camera = refine(&camera, pattern, opts.max_refine_iter.max(20), 5..11)?;
    } else if opts.refine {
        camera = refine(&camera, pattern, opts.max_refine_iter, 0..11)?;
    }
    let rms = reprojection_rms(&camera, pattern)?;
    let quality_warning = rms > opts.rms_warning;
    if quality_warning {
        log::warn!("calibration reprojection RMS {rms:.3} px exceeds {:.3} px", opts.rms_warning);
    }
    Ok(CameraCalibration { camera, rms, quality_warning })
}

#[derive(Clone, Copy, Debug)]
pub struct PlaneFit {
    pub plane: LaserPlane,
    /// RMS point-to-plane distance (m).
    pub rms: f64,
}

/// Total-least-squares plane through the laser points. The normal is
/// oriented so its largest component is positive.
pub fn fit_laser_plane(points: &[Vector3<f64>]) -> Result<PlaneFit> {
    if points.len() < 3 {
        return Err(Error::DegenerateConfiguration(format!("{} laser points, need at least 3", points.len())));
    }
    let n = points.len() as f64;
    let c = points.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut m = DMatrix::zeros(points.len().max(3), 3);
    for (i, p) in points.iter().enumerate() {
        m.set_row(i, &(p - c).transpose());
    }
    let svd = m.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested");
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let s = |k: usize| svd.singular_values[order[k]];
    if s(1) <= 1e-9 * s(0) {
        return Err(Error::DegenerateConfiguration("laser points are collinear".into()));
    }
    let mut normal: Vector3<f64> = v_t.row(order[2]).transpose().into_owned().fixed_rows::<3>(0).into_owned();
    let imax = normal.iamax();
    if normal[imax] < 0.0 {
        normal = -normal;
    }
    let plane = LaserPlane::new(normal.x, normal.y, normal.z, -normal.dot(&c))?;
    let rms = (points.iter().map(|p| plane.residual(p).powi(2)).sum::<f64>() / n).sqrt();
    Ok(PlaneFit { plane, rms })
}

/// Three mutually orthogonal pattern planes meeting at `vertex`. `axes`
/// holds the plane normals as columns; each plane is spanned by the other
/// two axes, and points lie in the positive quadrant of that span.
#[derive(Clone, Debug, PartialEq)]
pub struct Trihedral {
    pub vertex: Vector3<f64>,
    pub axes: Matrix3<f64>,
}

impl Trihedral {
    /// `per_plane` points on each face, placed on a jittered grid spanning
    /// `[margin, extent]` along the two in-plane axes.
    pub fn pattern_points(&self, per_plane: usize, margin: f64, extent: f64) -> Vec<Vector3<f64>> {
        let side = (per_plane as f64).sqrt().ceil() as usize;
        let mut out = Vec::with_capacity(3 * per_plane);
        for face in 0..3 {
            let a = self.axes.column((face + 1) % 3).into_owned();
            let b = self.axes.column((face + 2) % 3).into_owned();
            for k in 0..per_plane {
                let (i, j) = (k % side, k / side);
                let step = (extent - margin) / (side.max(2) - 1) as f64;
                // Staggering rows keeps the points of a face off a single line.
                let shift = if j % 2 == 1 { 0.5 * step } else { 0.0 };
                let ca = (margin + i as f64 * step + shift).min(extent);
                let cb = margin + j as f64 * step;
                out.push(self.vertex + a * ca + b * cb);
            }
        }
        out
    }

    /// Points where `plane` crosses each face, `per_face` per face spread
    /// over the part of the crossing line inside `[margin, extent]`.
    pub fn laser_points(&self, plane: &LaserPlane, per_face: usize, margin: f64, extent: f64) -> Vec<Vector3<f64>> {
        let mut out = Vec::new();
        for face in 0..3 {
            let mut a = self.axes.column((face + 1) % 3).into_owned();
            let mut b = self.axes.column((face + 2) % 3).into_owned();
            // Points v + t a + w b on the plane: n.v + d + t n.a + w n.b = 0.
            if plane.normal.dot(&b).abs() < plane.normal.dot(&a).abs() {
                std::mem::swap(&mut a, &mut b);
            }
            let (na, nb) = (plane.normal.dot(&a), plane.normal.dot(&b));
            if nb.abs() < 1e-12 {
                continue;
            }
            let base = plane.residual(&self.vertex);
            let w = |t: f64| -(base + na * t) / nb;
            // Range of t keeping w within the face as well.
            let (mut lo, mut hi) = (margin, extent);
            if na.abs() > 1e-12 {
                let t1 = -(base + nb * margin) / na;
                let t2 = -(base + nb * extent) / na;
                lo = lo.max(t1.min(t2));
                hi = hi.min(t1.max(t2));
            } else if !(margin..=extent).contains(&w(margin)) {
                continue;
            }
            if hi <= lo {
                continue;
            }
            for k in 0..per_face {
                let t = lo + (hi - lo) * (k as f64 + 0.5) / per_face as f64;
                out.push(self.vertex + a * t + b * w(t));
            }
        }
        out
    }
}
