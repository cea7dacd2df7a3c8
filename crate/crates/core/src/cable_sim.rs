//! Quasistatic planar plant: a gripper sliding along a cable whose other end
//! is held by a fixed gripper.
//!
//! The cable is described intrinsically by its curvature profile along
//! arclength. The in-hand state `[y, theta, alpha]` is integrated from the
//! gripper's motion relative to the cable, in the frame of the fixed gripper
//! (origin at the fixed gripper, X along its heading). Rotating or
//! translating the whole world therefore leaves the in-hand trajectory
//! unchanged.
//!
//! Per step, with `t = (cos theta, sin theta)`, `n = (-sin theta, cos theta)`
//! and gripper displacement `dp` in the fixed frame:
//!
//! - slip factor `sigma = exp(-F / f_slip)`;
//! - `ds = sigma * (dp . t)`;
//! - `dy = -sigma * (dp . n) / cos theta`;
//! - `dtheta = kappa(s) * ds * swing + k_str * |dp| * wrap(beta - theta)`,
//!   where `beta` is the bearing of the in-hand cable point from the fixed
//!   gripper (the taut-line direction);
//! - `alpha` is the bearing of the moving gripper from the fixed gripper.
//!
//! Angles use the convention `(-pi/2, pi/2]`; `alpha = 0` lies along the
//! fixed gripper's X axis.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector, Rotation2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;
use crate::tactile_sim::{synth_frame, ContactTruth, SensorGeometry, TactileFrame};

/// Arclength spacing of the curve table, mm.
pub const TABLE_SPACING_MM: f64 = 0.1;
const DENSE_DX_MM: f64 = 0.05;
const REGEN_ATTEMPTS: usize = 25;
const REGEN_DAMPING: f64 = 0.75;

/// Wraps an angle into `(-pi/2, pi/2]` (lines have no direction).
pub fn wrap_half(a: f64) -> f64 {
    let mut a = a % PI;
    if a <= -FRAC_PI_2 {
        a += PI;
    } else if a > FRAC_PI_2 {
        a -= PI;
    }
    a
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CableSpec {
    pub name: String,
    pub diameter_mm: f64,
    /// Straightening weight, dimensionless.
    pub bend_stiffness: f64,
    pub mu: f64,
    /// Contact area gained per newton of grip force, px/N.
    pub area_gain: f64,
    /// g/m.
    pub mass_per_m: f64,
    /// Grip force scale of the slip factor, N.
    pub f_slip: f64,
}

impl CableSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cable.diameter_mm", self.diameter_mm),
            ("cable.mu", self.mu),
            ("cable.area_gain", self.area_gain),
            ("cable.f_slip", self.f_slip),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(field, format!("must be positive, got {v}")));
            }
        }
        if !(self.bend_stiffness >= 0.0) {
            return Err(invalid("cable.bend_stiffness", "must be non-negative"));
        }
        if !(self.mass_per_m >= 0.0) {
            return Err(invalid("cable.mass_per_m", "must be non-negative"));
        }
        Ok(())
    }

    /// The five built-in cables, easiest last.
    pub fn presets() -> Vec<CableSpec> {
        let spec = |name: &str, diameter_mm, bend_stiffness, mu, area_gain, mass_per_m, f_slip| CableSpec {
            name: name.to_string(),
            diameter_mm,
            bend_stiffness,
            mu,
            area_gain,
            mass_per_m,
            f_slip,
        };
        vec![
            spec("thin_nylon_usb", 3.0, 1.0, 0.35, 1500.0, 22.0, 9.0),
            spec("thick_rubber_hdmi", 7.0, 1.3, 0.6, 1200.0, 60.0, 10.0),
            spec("thick_nylon_rope", 8.0, 0.8, 0.3, 1000.0, 35.0, 8.0),
            spec("thin_nylon_rope", 2.5, 0.3, 0.25, 1500.0, 2.5, 8.0),
            spec("thin_rubber_usb", 3.5, 1.8, 0.6, 1500.0, 25.0, 10.0),
        ]
    }

    pub fn preset(name: &str) -> Option<CableSpec> {
        Self::presets().into_iter().find(|c| c.name == name)
    }
}

/// World and contact constants shared by all cables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub y_fall_mm: f64,
    pub sigma_min: f64,
    pub t_stuck_s: f64,
    /// N per mm of finger closure past the cable surface.
    pub grip_stiffness: f64,
    pub max_opening_mm: f64,
    /// Marker displacement per newton of friction, px/N.
    pub shear_gain: f64,
    /// Saturated contact area per mm of cable diameter, px/mm.
    pub area_sat_px_per_mm: f64,
    /// Depth at which the imprint edge becomes visible, mm.
    pub visible_depth_mm: f64,
    /// Straightening rate per mm of pulling at unit bend stiffness.
    pub straighten_rate: f64,
    /// Cables much lighter than this swing with the gripper, g/m.
    pub swing_ref_mass: f64,
    /// Distance between the fixed gripper and a fresh grasp, mm.
    pub gap_mm: f64,
    pub v_max: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            y_fall_mm: 8.0,
            sigma_min: 0.05,
            t_stuck_s: 0.5,
            grip_stiffness: 2.0,
            max_opening_mm: 20.0,
            shear_gain: 1.0,
            area_sat_px_per_mm: 2400.0,
            visible_depth_mm: 0.05,
            straighten_rate: 0.04,
            swing_ref_mass: 10.0,
            gap_mm: 30.0,
            v_max: 0.1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sim.y_fall_mm", self.y_fall_mm),
            ("sim.t_stuck_s", self.t_stuck_s),
            ("sim.grip_stiffness", self.grip_stiffness),
            ("sim.max_opening_mm", self.max_opening_mm),
            ("sim.shear_gain", self.shear_gain),
            ("sim.area_sat_px_per_mm", self.area_sat_px_per_mm),
            ("sim.visible_depth_mm", self.visible_depth_mm),
            ("sim.gap_mm", self.gap_mm),
            ("sim.v_max", self.v_max),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(field, format!("must be positive, got {v}")));
            }
        }
        if !(self.sigma_min > 0.0 && self.sigma_min < 1.0) {
            return Err(invalid("sim.sigma_min", "must lie in (0, 1)"));
        }
        if !(self.straighten_rate >= 0.0) {
            return Err(invalid("sim.straighten_rate", "must be non-negative"));
        }
        if !(self.swing_ref_mass >= 0.0) {
            return Err(invalid("sim.swing_ref_mass", "must be non-negative"));
        }
        Ok(())
    }

    /// Grip force for a finger opening, N.
    pub fn grip_force(&self, spec: &CableSpec, opening_mm: f64) -> f64 {
        self.grip_stiffness * (spec.diameter_mm - opening_mm).max(0.0)
    }

    /// Opening that produces `force`, clamped to the gripper range.
    pub fn opening_for_force(&self, spec: &CableSpec, force: f64) -> f64 {
        (spec.diameter_mm - force / self.grip_stiffness).clamp(0.0, self.max_opening_mm)
    }

    /// Curvature amplification for light cables, in `[1, 2]`.
    pub fn swing(&self, spec: &CableSpec) -> f64 {
        1.0 + self.swing_ref_mass / (self.swing_ref_mass + spec.mass_per_m).max(f64::MIN_POSITIVE)
    }
}

pub fn slip_factor(grip_force: f64, spec: &CableSpec) -> f64 {
    (-grip_force.max(0.0) / spec.f_slip).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub friction_n: f64,
    pub area_px: f64,
    /// Marker displacement magnitude, px.
    pub shear_px: f64,
}

/// Kinetic friction, saturating contact area and marker shear for a grip
/// force.
pub fn friction_model(grip_force: f64, spec: &CableSpec, sliding: bool, config: &SimConfig) -> Contact {
    let f = grip_force.max(0.0);
    let a_sat = config.area_sat_px_per_mm * spec.diameter_mm;
    let area_px = a_sat * (1.0 - (-spec.area_gain * f / a_sat).exp());
    let friction_n = if sliding { spec.mu * f } else { 0.0 };
    Contact {
        friction_n,
        area_px,
        shear_px: config.shear_gain * friction_n,
    }
}

#[derive(Debug, Clone, Copy)]
struct NaturalSpline<'a> {
    x: &'a [f64],
    y: &'a [f64],
    m: &'a [f64],
}

impl NaturalSpline<'_> {
    fn segment(&self, x: f64) -> usize {
        let n = self.x.len();
        match self.x.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    /// Value, first and second derivative.
    fn eval(&self, x: f64) -> (f64, f64, f64) {
        let i = self.segment(x);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - x) / h;
        let b = (x - self.x[i]) / h;
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let y = a * self.y[i] + b * self.y[i + 1] + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let dy = (self.y[i + 1] - self.y[i]) / h + (-(3.0 * a * a - 1.0) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
        let ddy = a * m0 + b * m1;
        (y, dy, ddy)
    }

    fn speed(&self, x: f64) -> f64 {
        let (_, dy, _) = self.eval(x);
        (1.0 + dy * dy).sqrt()
    }

    /// Arclength between two abscissae by Simpson's rule.
    fn arc(&self, x0: f64, x1: f64) -> f64 {
        (x1 - x0) / 6.0 * (self.speed(x0) + 4.0 * self.speed(0.5 * (x0 + x1)) + self.speed(x1))
    }
}

/// Second derivatives of the natural cubic spline through `(x, y)`.
fn spline_moments(x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return Ok(m);
    }
    let k = n - 2;
    let mut a = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    for r in 0..k {
        let i = r + 1;
        let h0 = x[i] - x[i - 1];
        let h1 = x[i + 1] - x[i];
        a[(r, r)] = (h0 + h1) / 3.0;
        if r > 0 {
            a[(r, r - 1)] = h0 / 6.0;
        }
        if r + 1 < k {
            a[(r, r + 1)] = h1 / 6.0;
        }
        rhs[r] = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
    }
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::CableGeneration("singular spline system".into()))?;
    m[1..=k].copy_from_slice(sol.as_slice());
    Ok(m)
}

/// Unit-speed arclength table of a planar cable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CableCurve {
    pub control_points: Vec<[f64; 2]>,
    pub spacing_mm: f64,
    pub points: Vec<[f64; 2]>,
    pub tangents: Vec<[f64; 2]>,
    pub curvature: Vec<f64>,
    pub total_length_mm: f64,
    /// Waviness actually used after any damping.
    pub waviness: f64,
}

impl CableCurve {
    fn lookup(&self, s: f64) -> (usize, f64) {
        let s = s.clamp(0.0, self.total_length_mm);
        let last = self.points.len() - 1;
        let u = s / self.spacing_mm;
        let i = (u.floor() as usize).min(last.saturating_sub(1));
        let span = if i + 1 == last {
            self.total_length_mm - i as f64 * self.spacing_mm
        } else {
            self.spacing_mm
        };
        let f = if span > 0.0 { ((s - i as f64 * self.spacing_mm) / span).clamp(0.0, 1.0) } else { 0.0 };
        (i, f)
    }

    pub fn point(&self, s: f64) -> Vector2<f64> {
        let (i, f) = self.lookup(s);
        let j = (i + 1).min(self.points.len() - 1);
        let p0 = Vector2::from(self.points[i]);
        let p1 = Vector2::from(self.points[j]);
        p0 + (p1 - p0) * f
    }

    pub fn tangent(&self, s: f64) -> Vector2<f64> {
        let (i, f) = self.lookup(s);
        let j = (i + 1).min(self.tangents.len() - 1);
        let t = Vector2::from(self.tangents[i]) * (1.0 - f) + Vector2::from(self.tangents[j]) * f;
        t.normalize()
    }

    pub fn curvature_at(&self, s: f64) -> f64 {
        let (i, f) = self.lookup(s);
        let j = (i + 1).min(self.curvature.len() - 1);
        self.curvature[i] * (1.0 - f) + self.curvature[j] * f
    }

    pub fn max_curvature(&self) -> f64 {
        self.curvature.iter().fold(0.0f64, |m, k| m.max(k.abs()))
    }

    /// Same curve rigidly rotated about the origin.
    pub fn rotated(&self, angle: f64) -> CableCurve {
        let rot = Rotation2::new(angle);
        let map = |v: &[f64; 2]| {
            let r = rot * Vector2::from(*v);
            [r.x, r.y]
        };
        CableCurve {
            control_points: self.control_points.iter().map(map).collect(),
            points: self.points.iter().map(map).collect(),
            tangents: self.tangents.iter().map(map).collect(),
            ..self.clone()
        }
    }
}

/// Smooth random cable of exactly `total_length_mm`.
///
/// Waypoints are evenly spaced along X with Gaussian lateral deviations of
/// scale `waviness` (the first two stay on the axis so the grasp starts on a
/// straight stretch). A natural cubic spline through them is resampled at
/// [`TABLE_SPACING_MM`]. If the peak curvature exceeds `kappa_max` the
/// waviness is damped and the curve regenerated.
pub fn make_cable(
    seed: u64,
    total_length_mm: f64,
    waviness: f64,
    n_waypoints: usize,
    kappa_max: f64,
) -> Result<CableCurve> {
    if !(total_length_mm > 0.0 && total_length_mm.is_finite()) {
        return Err(invalid("total_length_mm", "must be positive"));
    }
    if !(waviness >= 0.0) {
        return Err(invalid("waviness", "must be non-negative"));
    }
    if n_waypoints < 2 {
        return Err(invalid("n_waypoints", "need at least 2"));
    }
    if !(kappa_max > 0.0) {
        return Err(invalid("kappa_max", "must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<f64> = (0..=n_waypoints)
        .map(|k| {
            let z: f64 = StandardNormal.sample(&mut rng);
            if k < 2 {
                0.0
            } else {
                z
            }
        })
        .collect();

    let mut amp = waviness;
    for _ in 0..REGEN_ATTEMPTS {
        let curve = build_curve(total_length_mm, n_waypoints, &base, amp)?;
        if curve.max_curvature() <= kappa_max {
            return Ok(curve);
        }
        amp *= REGEN_DAMPING;
    }
    Err(Error::CableGeneration(format!(
        "curvature above {kappa_max} /mm after {REGEN_ATTEMPTS} damped attempts"
    )))
}

fn build_curve(length: f64, n_waypoints: usize, base: &[f64], amp: f64) -> Result<CableCurve> {
    // One extra waypoint past the end guarantees enough arclength.
    let step = length / (n_waypoints - 1) as f64;
    let xs: Vec<f64> = (0..=n_waypoints).map(|k| k as f64 * step).collect();
    let ys: Vec<f64> = base.iter().map(|z| z * amp).collect();
    let m = spline_moments(&xs, &ys)?;
    let spline = NaturalSpline { x: &xs, y: &ys, m: &m };

    let x_end = *xs.last().unwrap();
    let n_dense = (x_end / DENSE_DX_MM).ceil() as usize;
    let dx = x_end / n_dense as f64;
    let mut dense_s = Vec::with_capacity(n_dense + 1);
    dense_s.push(0.0);
    for j in 0..n_dense {
        let x0 = j as f64 * dx;
        dense_s.push(dense_s[j] + spline.arc(x0, x0 + dx));
    }
    if *dense_s.last().unwrap() < length {
        return Err(Error::CableGeneration("spline shorter than requested length".into()));
    }

    let n_table = (length / TABLE_SPACING_MM).floor() as usize;
    let mut targets: Vec<f64> = (0..=n_table).map(|k| k as f64 * TABLE_SPACING_MM).collect();
    if length - targets[n_table] > 1e-9 {
        targets.push(length);
    }
    let mut points = Vec::with_capacity(targets.len());
    let mut tangents = Vec::with_capacity(targets.len());
    let mut curvature = Vec::with_capacity(targets.len());
    let mut j = 0usize;
    for &s in &targets {
        while j + 1 < n_dense && dense_s[j + 1] < s {
            j += 1;
        }
        let x0 = j as f64 * dx;
        let mut x = x0 + (s - dense_s[j]) / spline.speed(x0);
        for _ in 0..4 {
            let err = dense_s[j] + spline.arc(x0, x) - s;
            x -= err / spline.speed(x);
        }
        let (y, dy, ddy) = spline.eval(x);
        let speed = (1.0 + dy * dy).sqrt();
        points.push([x, y]);
        tangents.push([1.0 / speed, dy / speed]);
        curvature.push(ddy / (speed * speed * speed));
    }

    Ok(CableCurve {
        control_points: xs.iter().zip(&ys).map(|(&x, &y)| [x, y]).collect(),
        spacing_mm: TABLE_SPACING_MM,
        points,
        tangents,
        curvature,
        total_length_mm: length,
        waviness: amp,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CableState {
    pub y: f64,
    pub theta: f64,
    pub alpha: f64,
}

impl CableState {
    pub fn as_vector<T: Real>(&self) -> nalgebra::Vector3<T> {
        nalgebra::Vector3::new(T::lit(self.y), T::lit(self.theta), T::lit(self.alpha))
    }
}

/// World-frame velocity command, m/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotCommand {
    pub v_x: f64,
    pub v_y: f64,
}

impl RobotCommand {
    pub const STOP: RobotCommand = RobotCommand { v_x: 0.0, v_y: 0.0 };

    pub fn speed(&self) -> f64 {
        self.v_x.hypot(self.v_y)
    }

    /// Speed `v` along direction `alpha + phi`, both measured in the frame of
    /// a fixed gripper with world heading `heading`.
    pub fn from_pull(v: f64, phi: f64, alpha: f64, heading: f64) -> RobotCommand {
        let dir = heading + alpha + phi;
        RobotCommand {
            v_x: v * dir.cos(),
            v_y: v * dir.sin(),
        }
    }

    /// `(v_x, v_y)` given in the fixed-gripper frame.
    pub fn from_local(v_x: f64, v_y: f64, heading: f64) -> RobotCommand {
        let r = Rotation2::new(heading) * Vector2::new(v_x, v_y);
        RobotCommand { v_x: r.x, v_y: r.y }
    }

    /// Pulling direction relative to `alpha`.
    pub fn phi(&self, alpha: f64, heading: f64) -> f64 {
        let local = Rotation2::new(-heading) * Vector2::new(self.v_x, self.v_y);
        let d = local.y.atan2(local.x) - alpha;
        (d + PI).rem_euclid(2.0 * PI) - PI
    }
}

/// Where the fixed gripper sits in the world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub position: [f64; 2],
    /// World angle of the fixed gripper's X axis, rad.
    pub heading: f64,
}

impl Default for Fixture {
    fn default() -> Self {
        Self {
            position: [0.0, 0.0],
            heading: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimEvent {
    None,
    Completed,
    Fell,
    Stuck,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub gripper_pos: Vector2<f64>,
    pub s: f64,
    pub grip_force: f64,
    pub opening_mm: f64,
    pub cable_state: CableState,
    pub fallen: bool,
    pub stuck: bool,
    pub completed: bool,
    pub t: f64,
    /// Current slip factor.
    pub sigma: f64,
    /// Relative slide direction in the last step: +1 forward, -1 back, 0 none.
    pub slide_dir: f64,
    pub low_slip_time: f64,
}

impl SimState {
    pub fn is_over(&self) -> bool {
        self.fallen || self.stuck || self.completed
    }
}

/// One cable, one fixture and the moving gripper.
#[derive(Debug, Clone)]
pub struct CableSim {
    pub curve: CableCurve,
    pub spec: CableSpec,
    pub config: SimConfig,
    pub fixture: Fixture,
    pub state: SimState,
    swing: f64,
}

impl CableSim {
    /// Fresh grasp at arclength 0, centered and aligned, with the given
    /// finger opening.
    pub fn new(curve: CableCurve, spec: CableSpec, config: SimConfig, fixture: Fixture, opening_mm: f64) -> Result<Self> {
        spec.validate()?;
        config.validate()?;
        let swing = config.swing(&spec);
        let mut sim = Self {
            curve,
            spec,
            config,
            fixture,
            state: SimState {
                gripper_pos: Vector2::zeros(),
                s: 0.0,
                grip_force: 0.0,
                opening_mm: 0.0,
                cable_state: CableState {
                    y: 0.0,
                    theta: 0.0,
                    alpha: 0.0,
                },
                fallen: false,
                stuck: false,
                completed: false,
                t: 0.0,
                sigma: 1.0,
                slide_dir: 0.0,
                low_slip_time: 0.0,
            },
            swing,
        };
        sim.set_opening(opening_mm);
        sim.regrasp(CableState {
            y: 0.0,
            theta: 0.0,
            alpha: 0.0,
        })?;
        Ok(sim)
    }

    fn set_opening(&mut self, opening_mm: f64) {
        let o = opening_mm.clamp(0.0, self.config.max_opening_mm);
        self.state.opening_mm = o;
        self.state.grip_force = self.config.grip_force(&self.spec, o);
        self.state.sigma = slip_factor(self.state.grip_force, &self.spec);
    }

    fn to_local(&self, v: Vector2<f64>) -> Vector2<f64> {
        Rotation2::new(-self.fixture.heading) * v
    }

    fn local_position(&self) -> Vector2<f64> {
        self.to_local(self.state.gripper_pos - Vector2::from(self.fixture.position))
    }

    /// Re-places the moving gripper `gap_mm` ahead of the fixed gripper at
    /// bearing `in_hand.alpha`, keeping `s`. Used for the initial grasp and
    /// for regrasps.
    pub fn regrasp(&mut self, in_hand: CableState) -> Result<()> {
        if self.state.fallen || self.state.stuck {
            return Err(invalid("sim", "episode already ended"));
        }
        let dir = self.fixture.heading + in_hand.alpha;
        self.state.gripper_pos = Vector2::from(self.fixture.position) + Vector2::new(dir.cos(), dir.sin()) * self.config.gap_mm;
        self.state.cable_state = CableState {
            y: in_hand.y,
            theta: wrap_half(in_hand.theta),
            alpha: wrap_half(in_hand.alpha),
        };
        self.state.low_slip_time = 0.0;
        self.state.slide_dir = 0.0;
        Ok(())
    }

    /// Advances the plant by `dt` seconds.
    pub fn step(&mut self, cmd: RobotCommand, opening_cmd_mm: f64, dt: f64) -> Result<SimEvent> {
        if !(dt > 0.0) {
            return Err(invalid("dt", "must be positive"));
        }
        if self.state.is_over() {
            return Err(invalid("sim", "episode already ended"));
        }
        self.set_opening(opening_cmd_mm);
        let sigma = self.state.sigma;

        let mut v = Vector2::new(cmd.v_x, cmd.v_y) * 1000.0;
        let v_max = self.config.v_max * 1000.0;
        if v.norm() > v_max {
            v *= v_max / v.norm();
        }
        let dp = self.to_local(v * dt);
        let travel = dp.norm();

        let cs = self.state.cable_state;
        let (sin_t, cos_t) = cs.theta.sin_cos();
        let along = dp.x * cos_t + dp.y * sin_t;
        let lateral = -dp.x * sin_t + dp.y * cos_t;
        let ds = sigma * along;
        let y = cs.y - sigma * lateral / cos_t.max(0.1);

        let s_prev = self.state.s;
        let s = (s_prev + ds).clamp(0.0, self.curve.total_length_mm);
        let kappa = self.curve.curvature_at(0.5 * (s_prev + s));

        self.state.gripper_pos += v * dt;
        let p = self.local_position();
        let grip_point = p + Vector2::new(0.0, y);
        let beta = grip_point.y.atan2(grip_point.x);
        let k_str = self.config.straighten_rate * self.spec.bend_stiffness;
        let theta = cs.theta + kappa * (s - s_prev) * self.swing + k_str * travel * wrap_half(beta - cs.theta);
        let alpha = p.y.atan2(p.x);

        self.state.cable_state = CableState {
            y,
            theta: wrap_half(theta),
            alpha: wrap_half(alpha),
        };
        self.state.s = s;
        self.state.t += dt;
        self.state.slide_dir = if travel > 0.0 { along.signum() } else { 0.0 };

        if travel > 0.0 && sigma < self.config.sigma_min {
            self.state.low_slip_time += dt;
        } else {
            self.state.low_slip_time = 0.0;
        }

        if y.abs() > self.config.y_fall_mm {
            self.state.fallen = true;
            return Ok(SimEvent::Fell);
        }
        if self.state.low_slip_time > self.config.t_stuck_s {
            self.state.stuck = true;
            return Ok(SimEvent::Stuck);
        }
        if s >= self.curve.total_length_mm {
            self.state.completed = true;
            return Ok(SimEvent::Completed);
        }
        Ok(SimEvent::None)
    }

    /// Ground-truth in-hand state; `None` once the cable fell.
    pub fn observe_state(&self) -> Option<CableState> {
        if self.state.fallen {
            None
        } else {
            Some(self.state.cable_state)
        }
    }

    pub fn contact(&self) -> Contact {
        friction_model(self.state.grip_force, &self.spec, self.state.slide_dir != 0.0, &self.config)
    }

    /// Local bearing of the moving gripper from the fixed one, and distance.
    pub fn polar(&self) -> (f64, f64) {
        let p = self.local_position();
        (p.y.atan2(p.x), p.norm())
    }

    /// Ground-truth imprint for the current state.
    pub fn contact_truth<T: Real>(&self, geom: &SensorGeometry) -> ContactTruth<T> {
        let cs = self.state.cable_state;
        let contact = self.contact();
        let radius = 0.5 * self.spec.diameter_mm;
        let indent = if contact.area_px > 0.0 {
            let scale = geom.mm_per_px();
            let chord = chord_length(geom, cs.y, cs.theta).max(1.0);
            let w = contact.area_px * scale * scale / chord;
            (self.config.visible_depth_mm + w * w / (8.0 * radius)).min(radius)
        } else {
            0.0
        };
        let shear = Vector2::new(cs.theta.cos(), cs.theta.sin()) * (-contact.shear_px * self.state.slide_dir);
        ContactTruth {
            y_mm: T::lit(cs.y),
            theta_rad: T::lit(cs.theta),
            indent_mm: T::lit(indent),
            cable_radius_mm: T::lit(radius),
            shear_px: Vector2::new(T::lit(shear.x), T::lit(shear.y)),
        }
    }

    /// Renders the tactile frame the sensor would see now.
    pub fn observe_tactile<T: Real>(&self, geom: &SensorGeometry, marker_noise_px: f64, seed: u64) -> Result<TactileFrame<T>> {
        synth_frame(&self.contact_truth(geom), geom, marker_noise_px, seed, T::lit(self.state.t))
    }
}

/// Length of the line through `(0, y)` at angle `theta` inside the sensor
/// window, mm.
pub fn chord_length(geom: &SensorGeometry, y: f64, theta: f64) -> f64 {
    let (hw, hh) = (0.5 * geom.width_mm, 0.5 * geom.height_mm);
    let (s, c) = theta.sin_cos();
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    // Parametrise (x, y) = (u c, y + u s) and clip against each slab.
    for (p0, d, h) in [(0.0, c, hw), (y, s, hh)] {
        if d.abs() < 1e-12 {
            if p0.abs() > h {
                return 0.0;
            }
            continue;
        }
        let a = (-h - p0) / d;
        let b = (h - p0) / d;
        lo = lo.max(a.min(b));
        hi = hi.min(a.max(b));
    }
    (hi - lo).max(0.0)
}
