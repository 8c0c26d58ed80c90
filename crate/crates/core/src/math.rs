//! Small numerical helpers shared across modules.

use nalgebra::{Matrix3, Vector3};

/// Elementary rotation about X.
pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Elementary rotation about Y.
pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Elementary rotation about Z.
pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Roll-pitch-yaw rotation `Rz(psi) * Ry(theta) * Rx(phi)`.
///
/// This is the track-frame convention: heading, downward-positive slope and
/// cant. The same convention is used for camera and TGMS attitudes.
pub fn rpy(phi: f64, theta: f64, psi: f64) -> Matrix3<f64> {
    rot_z(psi) * rot_y(theta) * rot_x(phi)
}

/// Inverse of [`rpy`]: returns `(phi, theta, psi)`.
pub fn rpy_angles(a: &Matrix3<f64>) -> (f64, f64, f64) {
    let theta = (-a[(2, 0)]).clamp(-1.0, 1.0).asin();
    let phi = a[(2, 1)].atan2(a[(2, 2)]);
    let psi = a[(1, 0)].atan2(a[(0, 0)]);
    (phi, theta, psi)
}

/// Linearised relative rotation for small angles.
pub fn small_angle_rotation(phi: f64, theta: f64, psi: f64) -> Matrix3<f64> {
    Matrix3::new(1.0, -psi, theta, psi, 1.0, -phi, -theta, phi, 1.0)
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Linear interpolation of `ys` sampled at strictly increasing `xs`.
/// Values outside the range are clamped to the end samples.
pub fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let i = xs.partition_point(|&v| v <= x) - 1;
    let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + t * (ys[i + 1] - ys[i])
}

/// Zero-phase second-order Butterworth high-pass applied forward and
/// backward on a uniformly sampled signal.
///
/// `cutoff` is expressed in samples: the filter removes content whose period
/// is longer than `cutoff` samples. Signals are padded by odd reflection to
/// limit edge transients.
pub fn highpass_zero_phase(x: &[f64], cutoff: f64) -> Vec<f64> {
    let n = x.len();
    if n < 3 || !(cutoff > 2.0) {
        return x.to_vec();
    }
    let k = (std::f64::consts::PI / cutoff).tan();
    let norm = 1.0 + std::f64::consts::SQRT_2 * k + k * k;
    let b0 = 1.0 / norm;
    let b = [b0, -2.0 * b0, b0];
    let a = [2.0 * (k * k - 1.0) / norm, (1.0 - std::f64::consts::SQRT_2 * k + k * k) / norm];

    let pad = ((3.0 * cutoff).ceil() as usize).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        ext.push(2.0 * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    for i in 1..=pad {
        ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
    }

    let run = |sig: &mut Vec<f64>| {
        let (mut x1, mut x2, mut y1, mut y2) = (sig[0], sig[0], 0.0, 0.0);
        for v in sig.iter_mut() {
            let x0 = *v;
            let y0 = b[0] * x0 + b[1] * x1 + b[2] * x2 - a[0] * y1 - a[1] * y2;
            x2 = x1;
            x1 = x0;
            y2 = y1;
            y1 = y0;
            *v = y0;
        }
    };
    run(&mut ext);
    ext.reverse();
    run(&mut ext);
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

/// First and second derivative of uniformly sampled data by a local
/// least-squares quadratic over `half_width` samples on either side
/// (window shifted inwards at the ends).
pub fn quadratic_derivatives(y: &[f64], dt: f64, half_width: usize) -> (Vec<f64>, Vec<f64>) {
    let n = y.len();
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    if n < 3 {
        if n == 2 {
            let v = (y[1] - y[0]) / dt;
            d1 = vec![v, v];
        }
        return (d1, d2);
    }
    let hw = half_width.max(1).min((n - 1) / 2);
    for i in 0..n {
        let lo = i.saturating_sub(hw).min(n - 1 - 2 * hw);
        let hi = lo + 2 * hw;
        // Fit y = c0 + c1 u + c2 u^2 with u = (j - i) dt, centred on sample i.
        let mut s = [0.0f64; 5];
        let mut r = [0.0f64; 3];
        for j in lo..=hi {
            let u = (j as f64 - i as f64) * dt;
            let mut p = 1.0;
            for sk in s.iter_mut() {
                *sk += p;
                p *= u;
            }
            let yj = y[j] - y[i];
            r[0] += yj;
            r[1] += yj * u;
            r[2] += yj * u * u;
        }
        let m = Matrix3::new(s[0], s[1], s[2], s[1], s[2], s[3], s[2], s[3], s[4]);
        if let Some(c) = m.lu().solve(&Vector3::new(r[0], r[1], r[2])) {
            d1[i] = c[1];
            d2[i] = 2.0 * c[2];
        }
    }
    (d1, d2)
}
