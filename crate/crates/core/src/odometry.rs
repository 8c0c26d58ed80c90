//! Encoder drift correction by matching the measured horizontal curvature
//! against the ideal curvature functions of the layout at curve exits.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::track_model::{HorizontalKind, TrackLayout};
use crate::{Error, Result};

/// One curve of the ideal layout: a maximal run of non-straight horizontal
/// sections. S-curves form a single (double-trapezoid) function.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureFunction {
    pub s_start: f64,
    pub s_exit: f64,
    /// Quadrature spacing of `samples` (divides the width exactly).
    pub step: f64,
    /// Ideal curvature at `s_start + j * step`.
    pub samples: Vec<f64>,
    /// Trapezoidal integral of the squared samples.
    pub i2: f64,
}

impl CurvatureFunction {
    pub fn width(&self) -> f64 {
        self.s_exit - self.s_start
    }

    /// Samples the curvature of `layout` over `[s_start, s_exit]` with
    /// spacing no larger than `grid`.
    pub fn from_layout(layout: &TrackLayout, s_start: f64, s_exit: f64, grid: f64) -> Result<Self> {
        let width = s_exit - s_start;
        if !(width > 0.0) || !(grid > 0.0) {
            return Err(Error::Input(format!("empty curvature window [{s_start}, {s_exit}]")));
        }
        let n = (width / grid).ceil().max(1.0) as usize;
        let step = width / n as f64;
        let samples =
            (0..=n).map(|j| layout.curvature_h((s_start + j as f64 * step).min(s_exit))).collect::<Result<Vec<_>>>()?;
        let i2 = trapezoid_sq(samples.iter().copied(), step);
        if !(i2 > 0.0) {
            return Err(Error::Input(format!("zero curvature over [{s_start}, {s_exit}]")));
        }
        Ok(Self { s_start, s_exit, step, samples, i2 })
    }

    /// All curves of a layout, in order.
    pub fn table(layout: &TrackLayout, grid: f64) -> Result<Vec<Self>> {
        let starts = layout.horizontal_starts();
        let mut out = Vec::new();
        let mut run: Option<f64> = None;
        for (i, h) in layout.horizontal().iter().enumerate() {
            let straight = h.kind == HorizontalKind::Straight || (h.curvature_start == 0.0 && h.curvature_end == 0.0);
            match (straight, run) {
                (false, None) => run = Some(starts[i]),
                (true, Some(s0)) => {
                    out.push(Self::from_layout(layout, s0, starts[i], grid)?);
                    run = None;
                }
                _ => {}
            }
        }
        if let Some(s0) = run {
            out.push(Self::from_layout(layout, s0, layout.total_length(), grid)?);
        }
        Ok(out)
    }
}

fn trapezoid_sq(values: impl ExactSizeIterator<Item = f64>, step: f64) -> f64 {
    let n = values.len();
    values.enumerate().map(|(j, v)| if j == 0 || j + 1 == n { 0.5 * v * v } else { v * v }).sum::<f64>() * step
}

/// Curvature of the TGMS trajectory from the yaw rate and forward speed.
pub fn estimate_curvature(omega_z: f64, v: f64, v_min: f64) -> Result<f64> {
    if !(v > v_min) {
        return Err(Error::BelowSpeed { v, v_min });
    }
    Ok(omega_z / v)
}

/// A detected correspondence between the encoder reading and the ideal
/// arc length. Also the row format of the anchor log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub s_app: f64,
    pub s_ideal: f64,
    pub ne2_min: f64,
}

/// Piecewise-linear map from encoder arc length to track arc length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnchorMap {
    anchors: Vec<Anchor>,
}

impl AnchorMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    /// Appends an anchor; it must lie strictly after the last one in both
    /// coordinates.
    pub fn push(&mut self, a: Anchor) -> Result<()> {
        if let Some(last) = self.anchors.last() {
            if !(a.s_app > last.s_app && a.s_ideal > last.s_ideal) {
                return Err(Error::AnchorConflict { s_app: a.s_app, s_ideal: a.s_ideal });
            }
        }
        self.anchors.push(a);
        Ok(())
    }

    /// Encoder-to-track scale over all anchors (1 with fewer than two).
    pub fn scale(&self) -> f64 {
        match (self.anchors.first(), self.anchors.last()) {
            (Some(a), Some(b)) if b.s_ideal > a.s_ideal => (b.s_app - a.s_app) / (b.s_ideal - a.s_ideal),
            _ => 1.0,
        }
    }

    /// Corrected arc length. Before the first anchor the offset of that
    /// anchor is applied; past the last one the last segment's slope is
    /// extrapolated (plain offset with a single anchor).
    pub fn correct(&self, s_app: f64) -> f64 {
        let a = &self.anchors;
        match a.len() {
            0 => s_app,
            1 => s_app + a[0].s_ideal - a[0].s_app,
            n => {
                if s_app <= a[0].s_app {
                    return s_app + a[0].s_ideal - a[0].s_app;
                }
                let i = (a.partition_point(|x| x.s_app <= s_app) - 1).min(n - 2);
                let (p, q) = (&a[i], &a[i + 1]);
                p.s_ideal + (s_app - p.s_app) * (q.s_ideal - p.s_ideal) / (q.s_app - p.s_app)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OdometryOptions {
    /// Spacing of the uniform encoder grid (m).
    pub grid: f64,
    /// Samples below this speed are skipped (m/s).
    pub v_min: f64,
    /// A minimum must fall below this to count as an exit.
    pub threshold: f64,
    /// Rise above the minimum required to confirm it.
    pub hysteresis: f64,
    /// Search half-width around the predicted exit: `gate + gate_fraction * d`
    /// where `d` is the distance travelled since the last anchor (m).
    pub gate: f64,
    pub gate_fraction: f64,
    /// Stretch the window by the scale estimated from previous anchors.
    pub scale_compensation: bool,
}

impl Default for OdometryOptions {
    fn default() -> Self {
        Self {
            grid: 0.5,
            v_min: 0.5,
            threshold: 0.2,
            hysteresis: 0.05,
            gate: 20.0,
            gate_fraction: 0.05,
            scale_compensation: true,
        }
    }
}

/// Squared-error normalisation of one window.
///
/// `rho_at(s)` returns the measured curvature at encoder position `s` (or
/// `None` where not covered); the window ends at `s` and spans
/// `scale * width`. Quadrature nodes coincide with the function samples, so an
/// all-zero window gives exactly 1.
pub fn normalized_squared_error(
    f: &CurvatureFunction,
    s: f64,
    scale: f64,
    rho_at: impl Fn(f64) -> Option<f64>,
) -> Option<f64> {
    let n = f.samples.len();
    let width = f.width();
    let mut e2 = 0.0;
    for (j, &ideal) in f.samples.iter().enumerate() {
        let sigma = j as f64 * f.step;
        let measured = scale * rho_at(s - scale * (width - sigma))?;
        let d = measured - ideal;
        let w = if j == 0 || j + 1 == n { 0.5 } else { 1.0 };
        e2 += w * d * d;
    }
    Some(e2 * f.step / f.i2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ne2Sample {
    pub s_app: f64,
    pub function: usize,
    pub ne2: f64,
}

/// Half-width, in grid steps, of the minimum re-location scan.
const LOCATE_SPAN: i32 = 16;

#[derive(Debug, Clone)]
struct Search {
    min: f64,
    at: f64,
}

/// Streaming odometry state machine.
#[derive(Debug, Clone)]
pub struct Odometer {
    functions: Vec<CurvatureFunction>,
    opts: OdometryOptions,
    map: AnchorMap,
    next: usize,
    /// Encoder position of `buf[0]`.
    buf_s0: f64,
    buf: VecDeque<f64>,
    capacity: usize,
    last_raw: Option<(f64, f64)>,
    search: Option<Search>,
    trace: Vec<Ne2Sample>,
    skipped: Vec<usize>,
}

impl Odometer {
    /// `origin` pins the first encoder reading to a known track position.
    pub fn new(functions: Vec<CurvatureFunction>, origin: (f64, f64), opts: OdometryOptions) -> Self {
        let mut map = AnchorMap::new();
        map.anchors.push(Anchor { s_app: origin.0, s_ideal: origin.1, ne2_min: 0.0 });
        let next = functions.partition_point(|f| f.s_start < origin.1);
        let longest = functions.iter().map(|f| f.width()).fold(0.0, f64::max);
        let capacity = ((1.5 * longest + 10.0) / opts.grid).ceil() as usize + 4;
        Self {
            functions,
            opts,
            map,
            next,
            buf_s0: origin.0,
            buf: VecDeque::new(),
            capacity,
            last_raw: None,
            search: None,
            trace: Vec::new(),
            skipped: Vec::new(),
        }
    }

    pub fn anchors(&self) -> &[Anchor] {
        // The origin is an input, not a detection.
        &self.map.anchors[1..]
    }

    pub fn map(&self) -> &AnchorMap {
        &self.map
    }

    pub fn functions(&self) -> &[CurvatureFunction] {
        &self.functions
    }

    pub fn trace(&self) -> &[Ne2Sample] {
        &self.trace
    }

    /// Indices of functions passed without a detection.
    pub fn skipped(&self) -> &[usize] {
        &self.skipped
    }

    pub fn correct(&self, s_app: f64) -> f64 {
        self.map.correct(s_app)
    }

    fn scale(&self) -> f64 {
        if self.opts.scale_compensation {
            self.map.scale()
        } else {
            1.0
        }
    }

    fn rho_at(&self, s: f64) -> Option<f64> {
        let u = (s - self.buf_s0) / self.opts.grid;
        if u < -1e-9 || self.buf.is_empty() {
            return None;
        }
        let u = u.max(0.0);
        let i = u.floor() as usize;
        if i + 1 >= self.buf.len() {
            return (i + 1 == self.buf.len() && u - i as f64 <= 1e-9).then(|| self.buf[i]);
        }
        let t = u - i as f64;
        Some(self.buf[i] + t * (self.buf[i + 1] - self.buf[i]))
    }

    /// Feeds one measured sample; speeds at or below `v_min` are skipped.
    /// Returns the anchor detected by this sample, if any.
    pub fn push(&mut self, s_app: f64, omega_z: f64, v: f64) -> Result<Option<Anchor>> {
        match estimate_curvature(omega_z, v, self.opts.v_min) {
            Ok(rho) => self.push_curvature(s_app, rho),
            Err(Error::BelowSpeed { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Feeds one `(s_app, rho_exp)` pair. Non-increasing positions are ignored.
    pub fn push_curvature(&mut self, s_app: f64, rho: f64) -> Result<Option<Anchor>> {
        let g = self.opts.grid;
        let Some((s_prev, r_prev)) = self.last_raw else {
            self.last_raw = Some((s_app, rho));
            // Grid starts at the first sample.
            self.buf_s0 = s_app;
            self.buf.push_back(rho);
            return Ok(None);
        };
        if !(s_app > s_prev) {
            return Ok(None);
        }
        self.last_raw = Some((s_app, rho));
        let mut found = None;
        loop {
            let k = self.buf.len();
            let sk = self.buf_s0 + k as f64 * g;
            if sk > s_app {
                break;
            }
            let t = (sk - s_prev) / (s_app - s_prev);
            self.buf.push_back(r_prev + t * (rho - r_prev));
            if self.buf.len() > self.capacity {
                self.buf.pop_front();
                self.buf_s0 += g;
            }
            if let Some(a) = self.step(sk)? {
                found = Some(a);
            }
        }
        Ok(found)
    }

    /// Grid minimum of ne2 within a few metres of `near` (not past `s_max`),
    /// refined by a parabola through its neighbours.
    fn locate(&self, f: &CurvatureFunction, scale: f64, near: f64, s_max: f64) -> Option<(f64, f64)> {
        let g = self.opts.grid;
        let centre = self.buf_s0 + ((near - self.buf_s0) / g).round() * g;
        let ne2 = |x: f64| normalized_squared_error(f, x, scale, |u| self.rho_at(u));
        let mut best: Option<(f64, f64)> = None;
        for k in -LOCATE_SPAN..=LOCATE_SPAN {
            let x = centre + k as f64 * g;
            if x > s_max + 1e-9 * g {
                break;
            }
            if let Some(v) = ne2(x) {
                if best.is_none_or(|b| v < b.1) {
                    best = Some((x, v));
                }
            }
        }
        let (x, y0) = best?;
        if let (Some(ym), Some(yp)) = (ne2(x - g), (x + g <= s_max + 1e-9 * g).then(|| ne2(x + g)).flatten()) {
            let c = ym - 2.0 * y0 + yp;
            if c > 0.0 {
                return Some((x + (0.5 * (ym - yp) / c).clamp(-0.5, 0.5) * g, y0));
            }
        }
        Some((x, y0))
    }

    /// Evaluates the current function at a new grid point.
    fn step(&mut self, s: f64) -> Result<Option<Anchor>> {
        let Some(f) = self.functions.get(self.next) else {
            return Ok(None);
        };
        let last = *self.map.anchors.last().expect("origin anchor");
        let predicted = self.map.correct(s);
        let gate = self.opts.gate + self.opts.gate_fraction * (predicted - last.s_ideal).abs();
        if predicted < f.s_exit - gate {
            return Ok(None);
        }
        if predicted > f.s_exit + gate {
            log::warn!("no exit detected for curve ending at {:.1} m", f.s_exit);
            self.skipped.push(self.next);
            self.next += 1;
            self.search = None;
            return Ok(None);
        }
        let scale = self.scale();
        let Some(v) = normalized_squared_error(f, s, scale, |x| self.rho_at(x)) else {
            return Ok(None);
        };
        self.trace.push(Ne2Sample { s_app: s, function: self.next, ne2: v });

        let (tau, h) = (self.opts.threshold, self.opts.hysteresis);
        let st = self.search.get_or_insert(Search { min: f64::INFINITY, at: s });
        if v < st.min {
            st.min = v;
            st.at = s;
        }
        if !(st.min < tau && v > st.min + h) {
            return Ok(None);
        }

        let (mut at, mut y0) = (st.at, st.min);
        // The window width depends on the scale, which in turn depends on
        // where this exit lands: iterate to a fixed point.
        let first = self.map.anchors[0];
        for _ in 0..8 {
            let k = if self.opts.scale_compensation && f.s_exit > first.s_ideal {
                (at - first.s_app) / (f.s_exit - first.s_ideal)
            } else {
                1.0
            };
            let Some((a, y)) = self.locate(f, k, at, s) else { break };
            let done = (a - at).abs() < 1e-6;
            (at, y0) = (a, y);
            if done {
                break;
            }
        }
        let anchor = Anchor { s_app: at, s_ideal: f.s_exit, ne2_min: y0 };
        self.search = None;
        self.next += 1;
        match self.map.push(anchor) {
            Ok(()) => Ok(Some(anchor)),
            Err(e) => {
                log::warn!("rejected anchor: {e}");
                Ok(None)
            }
        }
    }
}

/// Runs the odometer over a recorded `(s_app, rho_exp)` series.
pub fn detect_anchors(
    functions: Vec<CurvatureFunction>,
    origin: (f64, f64),
    samples: impl IntoIterator<Item = (f64, f64)>,
    opts: OdometryOptions,
) -> Result<Odometer> {
    let mut od = Odometer::new(functions, origin, opts);
    for (s, rho) in samples {
        od.push_curvature(s, rho)?;
    }
    Ok(od)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track_model::HorizontalSection;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn one_curve() -> TrackLayout {
        TrackLayout::flat(
            vec![
                HorizontalSection::straight(400.0),
                HorizontalSection::transition(60.0, (0.0, 1.0 / 300.0), (0.0, 0.0)),
                HorizontalSection::circular(150.0, 300.0, 0.0),
                HorizontalSection::transition(60.0, (1.0 / 300.0, 0.0), (0.0, 0.0)),
                HorizontalSection::straight(400.0),
            ],
            0.7175,
            0.05,
        )
        .unwrap()
    }

    #[test]
    fn curvature_from_yaw_rate() {
        assert_eq!(estimate_curvature(0.04, 20.0, 0.5).unwrap(), 0.002);
        assert_eq!(estimate_curvature(0.0, 7.0, 0.5).unwrap(), 0.0);
        assert!(matches!(estimate_curvature(0.01, 0.5, 0.5), Err(Error::BelowSpeed { .. })));
    }

    #[test]
    fn table_groups_curves() {
        let t = CurvatureFunction::table(&one_curve(), 0.5).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!((t[0].s_start, t[0].s_exit), (400.0, 670.0));
        // Trapezoid: closed-form I2 = k^2 (L_c + 2 L_t / 3); the trapezoid rule
        // is exact on the flat part and off by O(step^2) on the ramps.
        let k: f64 = 1.0 / 300.0;
        let exact = k * k * (150.0 + 2.0 * 60.0 / 3.0);
        assert_relative_eq!(t[0].i2, exact, max_relative = 1e-5);
    }

    #[test]
    fn s_curve_is_one_function() {
        let layout = TrackLayout::flat(
            vec![
                HorizontalSection::straight(100.0),
                HorizontalSection::transition(50.0, (0.0, 0.004), (0.0, 0.0)),
                HorizontalSection::transition(100.0, (0.004, -0.004), (0.0, 0.0)),
                HorizontalSection::transition(50.0, (-0.004, 0.0), (0.0, 0.0)),
                HorizontalSection::straight(100.0),
            ],
            0.7175,
            0.0,
        )
        .unwrap();
        let t = CurvatureFunction::table(&layout, 0.5).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].s_exit, 300.0);
    }

    #[test]
    fn ne2_limits() {
        let f = &CurvatureFunction::table(&one_curve(), 0.5).unwrap()[0];
        assert_eq!(normalized_squared_error(f, 1000.0, 1.0, |_| Some(0.0)), Some(1.0));
        let layout = one_curve();
        let exact = normalized_squared_error(f, f.s_exit, 1.0, |x| layout.curvature_h(x).ok()).unwrap();
        assert!(exact < 1e-12, "{exact}");
        assert_eq!(normalized_squared_error(f, 100.0, 1.0, |x| (x >= 0.0).then_some(0.0)), None);
    }

    #[test]
    fn correct_s_interpolates() {
        let mut m = AnchorMap::new();
        m.push(Anchor { s_app: 100.0, s_ideal: 98.0, ne2_min: 0.0 }).unwrap();
        assert_eq!(m.correct(150.0), 148.0);
        m.push(Anchor { s_app: 300.0, s_ideal: 294.0, ne2_min: 0.0 }).unwrap();
        assert_eq!(m.correct(200.0), 196.0);
        assert_eq!(m.correct(100.0), 98.0);
        assert_eq!(m.correct(300.0), 294.0);
        assert_eq!(m.correct(50.0), 48.0);
        assert_relative_eq!(m.correct(400.0), 392.0, epsilon = 1e-12);
        let bad = m.push(Anchor { s_app: 350.0, s_ideal: 290.0, ne2_min: 0.0 });
        assert!(matches!(bad, Err(Error::AnchorConflict { .. })));
        assert_eq!(m.anchors().len(), 2);
    }

    fn run(layout: &TrackLayout, drift: f64, noise: impl Fn(usize) -> f64) -> Odometer {
        let table = CurvatureFunction::table(layout, 0.5).unwrap();
        let ds = 0.1;
        let n = (layout.total_length() / ds) as usize;
        let samples = (0..=n).map(|i| {
            let s = i as f64 * ds;
            (drift * s, layout.curvature_h(s).unwrap() / drift + noise(i))
        });
        detect_anchors(table, (0.0, 0.0), samples, OdometryOptions::default()).unwrap()
    }

    #[test]
    fn clean_curve_anchors_at_exit() {
        let od = run(&one_curve(), 1.0, |_| 0.0);
        assert_eq!(od.anchors().len(), 1);
        let a = od.anchors()[0];
        assert!((a.s_app - 670.0).abs() < 1.0, "{a:?}");
        assert!(a.ne2_min < 0.05);
    }

    #[test]
    fn straight_track_has_no_anchor() {
        let layout = TrackLayout::straight(2000.0, 0.7175).unwrap();
        let od = run(&layout, 1.0, |_| 0.0);
        assert!(od.anchors().is_empty());
        assert!(od.trace().is_empty());
    }

    #[test]
    fn noisy_curve_anchors_within_three_metres() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let peak = 1.0 / 300.0;
        let layout = one_curve();
        for seed in 0..20 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, 0.1 * peak).unwrap();
            let noise: Vec<f64> = (0..20000).map(|_| normal.sample(&mut rng)).collect();
            let od = run(&layout, 1.0, |i| noise[i]);
            assert_eq!(od.anchors().len(), 1, "seed {seed}");
            assert!((od.anchors()[0].s_app - 670.0).abs() < 3.0, "seed {seed}: {:?}", od.anchors());
        }
    }

    #[test]
    fn reprocessing_is_idempotent() {
        let a = run(&one_curve(), 1.02, |_| 0.0);
        let b = run(&one_curve(), 1.02, |_| 0.0);
        assert_eq!(a.anchors(), b.anchors());
    }

    fn five_curves() -> TrackLayout {
        let mut h = vec![HorizontalSection::straight(800.0)];
        for (i, r) in [300.0, -500.0, 800.0, -400.0, 1200.0].into_iter().enumerate() {
            let k = 1.0 / r;
            h.push(HorizontalSection::transition(80.0, (0.0, k), (0.0, 0.0)));
            h.push(HorizontalSection::circular(200.0 + 100.0 * i as f64, r, 0.0));
            h.push(HorizontalSection::transition(80.0, (k, 0.0), (0.0, 0.0)));
            h.push(HorizontalSection::straight(1300.0));
        }
        let used: f64 = h.iter().map(|x| x.length).sum();
        h.last_mut().unwrap().length += 10_000.0 - used;
        TrackLayout::flat(h, 0.7175, 0.05).unwrap()
    }

    #[test]
    fn drift_is_corrected_at_every_exit() {
        let layout = five_curves();
        let table = CurvatureFunction::table(&layout, 0.5).unwrap();
        let od = run(&layout, 1.02, |_| 0.0);
        assert_eq!(od.anchors().len(), 5, "{:?}", od.anchors());
        for (a, f) in od.anchors().iter().zip(&table) {
            assert!((a.s_app - 1.02 * f.s_exit).abs() < 3.0, "{a:?}");
        }
        let worst = (0..=1000)
            .map(|i| {
                let s = i as f64 * 10.0;
                (od.correct(1.02 * s) - s).abs()
            })
            .fold(0.0, f64::max);
        assert!(worst < 2.0, "{worst}");
    }

    proptest! {
        #[test]
        fn ne2_nonnegative(vals in proptest::collection::vec(-0.01f64..0.01, 50)) {
            let f = &CurvatureFunction::table(&one_curve(), 0.5).unwrap()[0];
            let v = normalized_squared_error(f, 800.0, 1.0, |x| {
                Some(vals[((x.max(0.0) as usize) / 20) % vals.len()])
            }).unwrap();
            prop_assert!(v >= 0.0);
        }

        #[test]
        fn correct_s_monotone(
            steps in proptest::collection::vec((1.0f64..500.0, 0.9f64..1.1), 1..8),
            probes in proptest::collection::vec(-100.0f64..4000.0, 30),
        ) {
            let mut m = AnchorMap::new();
            let (mut sa, mut si) = (0.0, 0.0);
            for (d, k) in steps {
                sa += d * k;
                si += d;
                m.push(Anchor { s_app: sa, s_ideal: si, ne2_min: 0.0 }).unwrap();
            }
            let mut p = probes.clone();
            p.sort_by(f64::total_cmp);
            for w in p.windows(2) {
                prop_assert!(m.correct(w[1]) >= m.correct(w[0]) - 1e-9);
            }
            for a in m.anchors() {
                prop_assert!((m.correct(a.s_app) - a.s_ideal).abs() < 1e-9);
            }
        }
    }
}
