//! Two-arc rail-head profile fitting by constrained least squares.
//!
//! The fitted unknowns are the two arc centres `x = (y_C1, z_C1, y_C2, z_C2)`
//! in the TGMS cross-section plane; the arcs stay tangent through the
//! constraint `|C1 - C2| = R2 - R1`, enforced with a Lagrange multiplier.

use std::path::Path;

use nalgebra::{Matrix2, Matrix5, Rotation2, SymmetricEigen, Vector2, Vector4, Vector5};
use serde::{Deserialize, Serialize};

use crate::io::{read_toml, write_toml};
use crate::track_model::Side;
use crate::{Error, Result};

/// Two tangent arcs describing the gauge-corner region of a right rail head,
/// in the rail-profile frame (y towards the track centre, z up).
#[derive(Clone, Debug, PartialEq)]
pub struct RailProfileTemplate {
    pub r1: f64,
    pub r2: f64,
    pub c1: Vector2<f64>,
    pub c2: Vector2<f64>,
    /// Angular range covered by the profile; arc 1 spans
    /// `[alpha_min, beta1]` and arc 2 spans `[beta1, alpha_max]`.
    pub alpha_min: f64,
    pub alpha_max: f64,
}

impl Default for RailProfileTemplate {
    /// Illustrative head with 13 mm corner and 80 mm crown radii; not
    /// certified profile data.
    ///
    /// The profile origin sits 20.5 mm towards the gauge side of and 20.5 mm
    /// below the crown top. Fitted poses are best determined there: the roll
    /// of a two-arc profile is weakly observable, and this point minimises
    /// how much roll error leaks into the recovered origin.
    fn default() -> Self {
        let (r1, r2, beta1): (f64, f64, f64) = (0.013, 0.080, 1.2);
        let crown_top = Vector2::new(-0.0205, 0.0205);
        let c2 = crown_top - Vector2::new(0.0, r2);
        let c1 = c2 + Vector2::new(beta1.cos(), beta1.sin()) * (r2 - r1);
        RailProfileTemplate { r1, r2, c1, c2, alpha_min: -0.6, alpha_max: std::f64::consts::FRAC_PI_2 }
    }
}

/// Arc of the profile a point is assigned to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arc {
    Corner,
    Crown,
}

fn beta1_of(c1: &Vector2<f64>, c2: &Vector2<f64>) -> f64 {
    (c1.y - c2.y).atan2(c1.x - c2.x)
}

impl RailProfileTemplate {
    pub fn new(r1: f64, r2: f64, c1: Vector2<f64>, c2: Vector2<f64>, alpha_min: f64, alpha_max: f64) -> Result<Self> {
        if !(r1 > 0.0 && r2 > r1) {
            return Err(Error::Input(format!("template radii must satisfy 0 < R1 < R2, got {r1}, {r2}")));
        }
        let gap = (c1 - c2).norm() - (r2 - r1);
        if gap.abs() > 1e-12 {
            return Err(Error::Input(format!("template arcs are not tangent (centre distance off by {gap} m)")));
        }
        let t = RailProfileTemplate { r1, r2, c1, c2, alpha_min, alpha_max };
        let b = t.beta1();
        if !(alpha_min < b && b < alpha_max) {
            return Err(Error::Input("template angular range must contain the tangency angle".into()));
        }
        Ok(t)
    }

    /// Direction of the tangency point seen from either centre.
    pub fn beta1(&self) -> f64 {
        beta1_of(&self.c1, &self.c2)
    }

    pub fn centers(&self) -> Vector4<f64> {
        Vector4::new(self.c1.x, self.c1.y, self.c2.x, self.c2.y)
    }

    /// Profile point at angle `alpha`; the tangency angle belongs to arc 1.
    pub fn point(&self, alpha: f64) -> Result<Vector2<f64>> {
        if !(alpha >= self.alpha_min && alpha <= self.alpha_max) {
            return Err(Error::AlphaRange { alpha, min: self.alpha_min, max: self.alpha_max });
        }
        let dir = Vector2::new(alpha.cos(), alpha.sin());
        Ok(if alpha <= self.beta1() { self.c1 + self.r1 * dir } else { self.c2 + self.r2 * dir })
    }

    /// Points evenly spaced in arc length along the whole profile.
    pub fn sample(&self, n: usize) -> Vec<Vector2<f64>> {
        let b = self.beta1();
        let l1 = self.r1 * (b - self.alpha_min);
        let l2 = self.r2 * (self.alpha_max - b);
        let total = l1 + l2;
        (0..n)
            .map(|k| {
                let d = total * k as f64 / (n.max(2) - 1) as f64;
                let a = if d <= l1 { self.alpha_min + d / self.r1 } else { b + (d - l1) / self.r2 };
                self.point(a.clamp(self.alpha_min, self.alpha_max)).expect("in range")
            })
            .collect()
    }

    /// Height of the profile at lateral position `y`, where the profile is
    /// a function of `y`.
    pub fn height(&self, y: f64) -> Option<f64> {
        let top = |c: &Vector2<f64>, r: f64| {
            let dy = y - c.x;
            (dy.abs() <= r).then(|| c.y + (r * r - dy * dy).sqrt())
        };
        let p_b = self.point(self.beta1()).ok()?;
        let crown_start = self.c2.x + self.r2 * self.alpha_max.cos();
        if y >= crown_start && y <= p_b.x {
            top(&self.c2, self.r2)
        } else if y > p_b.x && y <= self.c1.x + self.r1 {
            top(&self.c1, self.r1)
        } else {
            None
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f: TemplateFile = read_toml(path)?;
        Self::new(f.r1, f.r2, Vector2::from(f.c1), Vector2::from(f.c2), f.alpha_min, f.alpha_max)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let crown_start = self.c2.x + self.r2 * self.alpha_max.cos();
        let y_end = self.c1.x + self.r1;
        let n = 41;
        let h_r = (0..n)
            .filter_map(|k| {
                let y = crown_start + (y_end - crown_start) * k as f64 / (n - 1) as f64;
                self.height(y).map(|z| [y, z])
            })
            .collect();
        let f = TemplateFile {
            r1: self.r1,
            r2: self.r2,
            c1: self.c1.into(),
            c2: self.c2.into(),
            alpha_min: self.alpha_min,
            alpha_max: self.alpha_max,
            h_r,
        };
        write_toml(path, &f, TEMPLATE_HEADER)
    }
}

const TEMPLATE_HEADER: &str = "\
# Rail-head profile template (right rail, profile frame: y towards track centre, z up).
# r1, r2: corner and crown radii (m); c1, c2: arc centres (m)
# alpha_min, alpha_max: angular extent of the profile (rad)
# h_r: sampled profile height [y, z] (m), informative only
";

#[derive(Debug, Serialize, Deserialize)]
struct TemplateFile {
    r1: f64,
    r2: f64,
    c1: [f64; 2],
    c2: [f64; 2],
    alpha_min: f64,
    alpha_max: f64,
    #[serde(default)]
    h_r: Vec<[f64; 2]>,
}

/// Angular parameter of `p` and its arc for centres `x`.
///
/// The angle about C1 is tried first; points beyond the tangency direction
/// take the angle about C2. Points falling between the two tests (inside the
/// head, behind the corner centre) go to whichever circle is closer.
pub fn assign_alpha(x: &Vector4<f64>, r: (f64, f64), p: &Vector2<f64>) -> Result<(f64, Arc)> {
    let c1 = Vector2::new(x[0], x[1]);
    let c2 = Vector2::new(x[2], x[3]);
    let d1 = p - c1;
    let d2 = p - c2;
    if d1.norm() == 0.0 || d2.norm() == 0.0 {
        return Err(Error::UndefinedAngle);
    }
    let b = beta1_of(&c1, &c2);
    // Angles are measured relative to beta1 to keep the comparison free of
    // the atan2 branch cut.
    let rel1 = wrap(d1.y.atan2(d1.x) - b);
    if rel1 <= 0.0 {
        return Ok((b + rel1, Arc::Corner));
    }
    let rel2 = wrap(d2.y.atan2(d2.x) - b);
    if rel2 > 0.0 {
        return Ok((b + rel2, Arc::Crown));
    }
    if (d1.norm() - r.0).abs() <= (d2.norm() - r.1).abs() {
        Ok((b + rel1, Arc::Corner))
    } else {
        Ok((b + rel2, Arc::Crown))
    }
}

fn wrap(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    a - two_pi * ((a + std::f64::consts::PI) / two_pi).floor()
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub constraint_tol: f64,
    pub max_halvings: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_iter: 50, grad_tol: 1e-9, constraint_tol: 1e-10, max_halvings: 20 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    /// Fitted centres (y_C1, z_C1, y_C2, z_C2).
    pub x: Vector4<f64>,
    pub lambda: f64,
    /// Rail-profile origin in the TGMS cross-section plane.
    pub origin: Vector2<f64>,
    /// Roll of the rail-profile frame relative to the TGMS frame.
    pub roll: f64,
    pub rms: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step, starting with the initial value.
    pub objective_history: Vec<f64>,
}

impl FitResult {
    pub fn constraint(&self, t: &RailProfileTemplate) -> f64 {
        constraint(&self.x, t)
    }
}

/// Sum of squared point-to-profile distances.
pub fn objective(x: &Vector4<f64>, t: &RailProfileTemplate, cloud: &[Vector2<f64>]) -> Result<f64> {
    let mut f = 0.0;
    for p in cloud {
        let (c, r) = assigned_circle(x, t, p)?;
        let res = (p - c).norm() - r;
        f += res * res;
    }
    Ok(f)
}

/// Gradient of [`objective`] for the current arc assignment.
pub fn objective_gradient(x: &Vector4<f64>, t: &RailProfileTemplate, cloud: &[Vector2<f64>]) -> Result<Vector4<f64>> {
    Ok(assemble(x, t, cloud)?.1)
}

pub fn constraint(x: &Vector4<f64>, t: &RailProfileTemplate) -> f64 {
    let d = Vector2::new(x[0] - x[2], x[1] - x[3]);
    d.norm_squared() - (t.r2 - t.r1).powi(2)
}

fn assigned_circle(x: &Vector4<f64>, t: &RailProfileTemplate, p: &Vector2<f64>) -> Result<(Vector2<f64>, f64)> {
    let (_, arc) = assign_alpha(x, (t.r1, t.r2), p)?;
    Ok(match arc {
        Arc::Corner => (Vector2::new(x[0], x[1]), t.r1),
        Arc::Crown => (Vector2::new(x[2], x[3]), t.r2),
    })
}

/// Objective, gradient and Hessian for the current assignment.
fn assemble(
    x: &Vector4<f64>,
    t: &RailProfileTemplate,
    cloud: &[Vector2<f64>],
) -> Result<(f64, Vector4<f64>, nalgebra::Matrix4<f64>)> {
    let mut f = 0.0;
    let mut g = Vector4::zeros();
    let mut h = nalgebra::Matrix4::zeros();
    for p in cloud {
        let (_, arc) = assign_alpha(x, (t.r1, t.r2), p)?;
        let (k, c, r) = match arc {
            Arc::Corner => (0, Vector2::new(x[0], x[1]), t.r1),
            Arc::Crown => (2, Vector2::new(x[2], x[3]), t.r2),
        };
        let d = p - c;
        let rho = d.norm();
        let u = d / rho;
        let res = rho - r;
        f += res * res;
        let gi = -2.0 * res * u;
        g[k] += gi.x;
        g[k + 1] += gi.y;
        let uu = u * u.transpose();
        let hi = 2.0 * uu + 2.0 * (res / rho) * (Matrix2::identity() - uu);
        let mut blk = h.fixed_view_mut::<2, 2>(k, k);
        blk += hi;
    }
    Ok((f, g, h))
}

fn kkt(
    x: &Vector4<f64>,
    lambda: f64,
    t: &RailProfileTemplate,
    cloud: &[Vector2<f64>],
) -> Result<(f64, Vector5<f64>, Matrix5<f64>)> {
    let (f, gf, hf) = assemble(x, t, cloud)?;
    let d = Vector2::new(x[0] - x[2], x[1] - x[3]);
    let gg = Vector4::new(2.0 * d.x, 2.0 * d.y, -2.0 * d.x, -2.0 * d.y);
    let gval = constraint(x, t);
    let mut res = Vector5::zeros();
    res.fixed_rows_mut::<4>(0).copy_from(&(gf + lambda * gg));
    res[4] = gval;
    let mut j = Matrix5::zeros();
    j.fixed_view_mut::<4, 4>(0, 0).copy_from(&hf);
    for i in 0..2 {
        j[(i, i)] += 2.0 * lambda;
        j[(i + 2, i + 2)] += 2.0 * lambda;
        j[(i, i + 2)] -= 2.0 * lambda;
        j[(i + 2, i)] -= 2.0 * lambda;
    }
    for i in 0..4 {
        j[(i, 4)] = gg[i];
        j[(4, i)] = gg[i];
    }
    Ok((f, res, j))
}

/// Template centres translated so the template centroid meets the cloud
/// centroid.
pub fn initial_guess(cloud: &[Vector2<f64>], t: &RailProfileTemplate) -> Vector4<f64> {
    let mean = |v: &[Vector2<f64>]| v.iter().fold(Vector2::zeros(), |a, p| a + p) / v.len() as f64;
    let shift = mean(cloud) - mean(&t.sample(200));
    t.centers() + Vector4::new(shift.x, shift.y, shift.x, shift.y)
}

fn check_cloud(cloud: &[Vector2<f64>]) -> Result<()> {
    if cloud.len() < 5 {
        return Err(Error::DegenerateCloud(format!("{} points, need at least 5", cloud.len())));
    }
    let n = cloud.len() as f64;
    let mean = cloud.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let cov = cloud.iter().fold(Matrix2::zeros(), |a, p| a + (p - mean) * (p - mean).transpose()) / n;
    let spread = SymmetricEigen::new(cov).eigenvalues.min().max(0.0).sqrt();
    if spread < 1e-9 {
        return Err(Error::DegenerateCloud("points are collinear".into()));
    }
    Ok(())
}

/// Restores the tangency constraint exactly by rescaling the centre
/// separation about its midpoint.
fn project_to_constraint(x: &Vector4<f64>, t: &RailProfileTemplate) -> Vector4<f64> {
    let c1 = Vector2::new(x[0], x[1]);
    let c2 = Vector2::new(x[2], x[3]);
    let mid = 0.5 * (c1 + c2);
    let d = c1 - c2;
    let n = d.norm();
    if n == 0.0 {
        return *x;
    }
    let half = d * (0.5 * (t.r2 - t.r1) / n);
    Vector4::new(mid.x + half.x, mid.y + half.y, mid.x - half.x, mid.y - half.y)
}

const POLISH: f64 = 1e-3;

struct Iterate {
    x: Vector4<f64>,
    lambda: f64,
    f: f64,
    res: Vector5<f64>,
    jac: Matrix5<f64>,
}

impl Iterate {
    /// Evaluates the stationarity system at `x` with the multiplier that
    /// best balances the objective gradient.
    fn at(x: Vector4<f64>, t: &RailProfileTemplate, cloud: &[Vector2<f64>]) -> Result<Self> {
        let (_, gf, _) = assemble(&x, t, cloud)?;
        let d = Vector2::new(x[0] - x[2], x[1] - x[3]);
        let gg = Vector4::new(2.0 * d.x, 2.0 * d.y, -2.0 * d.x, -2.0 * d.y);
        let lambda = if gg.norm_squared() > 0.0 { -gf.dot(&gg) / gg.norm_squared() } else { 0.0 };
        let (f, res, jac) = kkt(&x, lambda, t, cloud)?;
        Ok(Iterate { x, lambda, f, res, jac })
    }

    fn stationarity(&self) -> f64 {
        self.res.fixed_rows::<4>(0).norm()
    }
}

/// Fits the template to a cloud of (y, z) points.
///
/// Each iteration re-assigns arcs, takes a Newton step on the stationarity
/// conditions of the Lagrangian, and restores the tangency constraint; the
/// step is halved until the objective does not increase.
pub fn fit_profile(
    cloud: &[Vector2<f64>],
    t: &RailProfileTemplate,
    x0: Option<Vector4<f64>>,
    opts: &FitOptions,
) -> Result<FitResult> {
    check_cloud(cloud)?;
    let x0 = x0.unwrap_or_else(|| initial_guess(cloud, t));
    let mut cur = Iterate::at(project_to_constraint(&x0, t), t, cloud)?;
    let mut history = vec![cur.f];
    let mut iterations = 0;
    for it in 0..=opts.max_iter {
        iterations = it;
        // Iterate past the acceptance tolerance while progress is cheap: the
        // roll direction is poorly conditioned, so a stationarity residual
        // that just meets the tolerance can still leave a visible roll error.
        if cur.stationarity() < POLISH * opts.grad_tol || it == opts.max_iter {
            break;
        }
        let Some(step) = cur.jac.lu().solve(&(-cur.res)) else { break };
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let xt = project_to_constraint(&(cur.x + alpha * step.fixed_rows::<4>(0)), t);
            if let Ok(trial) = Iterate::at(xt, t, cloud) {
                let descent = trial.f <= cur.f;
                // Rounding-level ties still count when stationarity improves.
                // Residuals are differences of distances near the radii, so
                // the objective carries a relative rounding noise of ~1e-13.
                let tie = trial.f - cur.f <= 1e-12 * cur.f && trial.stationarity() < cur.stationarity();
                if descent || tie {
                    accepted = Some(trial);
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some(next) = accepted else { break };
        cur = next;
        history.push(cur.f);
    }

    let converged = cur.stationarity() < opts.grad_tol && cur.res[4].abs() < opts.constraint_tol;
    let (origin, roll) = pose_from_centers(&cur.x, t);
    Ok(FitResult {
        x: cur.x,
        lambda: cur.lambda,
        origin,
        roll,
        rms: (cur.f / cloud.len() as f64).sqrt(),
        iterations,
        converged,
        objective_history: history,
    })
}

/// Rigid pose of the profile frame that maps the template centres onto `x`:
/// rotation from the C2->C1 direction, translation from C1.
pub fn pose_from_centers(x: &Vector4<f64>, t: &RailProfileTemplate) -> (Vector2<f64>, f64) {
    let c1 = Vector2::new(x[0], x[1]);
    let c2 = Vector2::new(x[2], x[3]);
    let roll = wrap(beta1_of(&c1, &c2) - t.beta1());
    let origin = c1 - Rotation2::new(roll) * t.c1;
    (origin, roll)
}

/// Template centres placed at a given pose.
pub fn centers_at_pose(t: &RailProfileTemplate, origin: &Vector2<f64>, roll: f64) -> Vector4<f64> {
    let r = Rotation2::new(roll);
    let c1 = origin + r * t.c1;
    let c2 = origin + r * t.c2;
    Vector4::new(c1.x, c1.y, c2.x, c2.y)
}

fn mirror(p: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(-p.x, p.y)
}

/// Fits a rail of either side. The template describes a right rail; left
/// clouds are mirrored across the TGMS mid-plane, fitted, and the pose is
/// mirrored back (lateral position and roll change sign).
pub fn fit_rail(cloud: &[Vector2<f64>], side: Side, t: &RailProfileTemplate, opts: &FitOptions) -> Result<FitResult> {
    match side {
        Side::Right => fit_profile(cloud, t, None, opts),
        Side::Left => {
            let m: Vec<_> = cloud.iter().map(mirror).collect();
            let mut r = fit_profile(&m, t, None, opts)?;
            r.x = Vector4::new(-r.x[0], r.x[1], -r.x[2], r.x[3]);
            r.origin = mirror(&r.origin);
            r.roll = -r.roll;
            Ok(r)
        }
    }
}

/// Signed distance of every point to the fitted profile, negative where
/// the measured surface lies inside the nominal head (material loss).
pub fn wear_report(cloud: &[Vector2<f64>], fit: &FitResult, t: &RailProfileTemplate) -> Result<Vec<f64>> {
    cloud.iter().map(|p| assigned_circle(&fit.x, t, p).map(|(c, r)| (p - c).norm() - r)).collect()
}
