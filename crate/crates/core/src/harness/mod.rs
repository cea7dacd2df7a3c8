//! Episode runner, regrasp logic, metrics and experiment grids.
//!
//! One episode steps the plant at the base rate, runs grip control at the
//! grip rate and renders, perceives and commands the pose at the pose rate.
//! Perception estimates become usable `perception_latency_s` after their
//! frame was captured. The bearing `alpha` is read from robot kinematics and
//! is not delayed.

mod config;
mod experiments;

pub use config::{Config, CorpusConfig, EpisodeSettings, ExperimentSettings, SysidSettings};
pub use experiments::{
    compare_controllers, fit_model, schedule_from_file, summarize, sweep_cables, sweep_velocity, write_results_csv, write_summary_csv,
    FittedModel, GroupSummary, ResultRow, RunManifest,
};

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cable_sim::{make_cable, CableSim, CableSpec, CableState, Fixture, RobotCommand, SimConfig, SimEvent};
use crate::error::{invalid, Error, Result};
use crate::grip_control::{GripConfig, GripController};
use crate::lqr::{pose_control, GainSchedule};
use crate::perception::{Perception, PerceptionConfig};
use crate::schedule::Ticker;
use crate::tactile_sim::SensorGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    OpenLoop,
    OpenLoopRegrasp,
    PControl,
    LqrControl,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 4] = [
        ControllerKind::OpenLoop,
        ControllerKind::OpenLoopRegrasp,
        ControllerKind::PControl,
        ControllerKind::LqrControl,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerKind::OpenLoop => "open_loop",
            ControllerKind::OpenLoopRegrasp => "open_loop_regrasp",
            ControllerKind::PControl => "p_control",
            ControllerKind::LqrControl => "lqr_control",
        }
    }

    fn emergency_regrasps(&self) -> bool {
        !matches!(self, ControllerKind::OpenLoop)
    }

    fn regulates_grip(&self) -> bool {
        matches!(self, ControllerKind::PControl | ControllerKind::LqrControl)
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "open_loop" => Ok(ControllerKind::OpenLoop),
            "open_loop_regrasp" => Ok(ControllerKind::OpenLoopRegrasp),
            "p_control" | "p" => Ok(ControllerKind::PControl),
            "lqr_control" | "lqr" => Ok(ControllerKind::LqrControl),
            _ => Err(invalid(
                "controller",
                format!("unknown controller `{s}` (open_loop, open_loop_regrasp, p_control, lqr_control)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Fell,
    Stuck,
    RegraspLimit,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Completed => "completed",
            Outcome::Fell => "fell",
            Outcome::Stuck => "stuck",
            Outcome::RegraspLimit => "regrasp_limit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegraspCause {
    Workspace,
    Emergency,
    QualityLost,
}

/// Everything one episode needs.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub controller: ControllerKind,
    pub cable: CableSpec,
    pub curve_seed: u64,
    pub corpus: CorpusConfig,
    pub v_x: f64,
    pub settings: EpisodeSettings,
    pub sim: SimConfig,
    pub sensor: SensorGeometry,
    pub perception: PerceptionConfig,
    pub grip: GripConfig,
    /// Required by `lqr_control`; solved at `v_x` when the episode starts.
    pub gain: Option<GainSchedule<f64>>,
    pub phi_max_rad: f64,
}

impl EpisodeConfig {
    pub fn from_config(
        cfg: &Config,
        controller: ControllerKind,
        cable: &str,
        curve_seed: u64,
        gain: Option<&GainSchedule<f64>>,
    ) -> Result<Self> {
        Ok(Self {
            controller,
            cable: cfg.cable(cable)?.clone(),
            curve_seed,
            corpus: cfg.corpus.clone(),
            v_x: cfg.episode.v_x,
            settings: cfg.episode.clone(),
            sim: cfg.sim.clone(),
            sensor: cfg.sensor.clone(),
            perception: cfg.perception.clone(),
            grip: cfg.grip.clone(),
            gain: gain.cloned(),
            phi_max_rad: cfg.lqr.phi_max_deg.to_radians(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_x > 0.0) {
            return Err(invalid("episode.v_x", "must be positive"));
        }
        if !(self.settings.workspace_mm > 0.0) {
            return Err(invalid("episode.workspace_mm", "must be positive"));
        }
        if self.controller == ControllerKind::LqrControl && self.gain.is_none() {
            return Err(invalid("gain", "lqr_control needs a fitted model"));
        }
        self.cable.validate()?;
        self.sim.validate()?;
        self.sensor.validate()?;
        self.perception.validate()?;
        self.grip.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub ratio_followed: f64,
    pub dist_per_regrasp_norm: f64,
    pub velocity_norm: f64,
    pub n_regrasps: usize,
    pub outcome: Outcome,
    pub followed_mm: f64,
    pub duration_s: f64,
    /// Arclength followed in each grasp segment; sums to `followed_mm`.
    pub segment_followed_mm: Vec<f64>,
}

impl EpisodeMetrics {
    pub fn regrasps_per_m(&self) -> f64 {
        if self.followed_mm > 0.0 {
            self.n_regrasps as f64 / (self.followed_mm / 1000.0)
        } else {
            0.0
        }
    }
}

/// One row per base tick, plus `start` and regrasp rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub gripper_x: f64,
    pub gripper_y: f64,
    pub s: f64,
    pub y: f64,
    pub theta: f64,
    pub alpha: f64,
    pub grip_force: f64,
    pub opening: f64,
    pub d_true: f64,
    pub s_true: u8,
    pub y_est: f64,
    pub theta_est: f64,
    pub d_est: f64,
    pub s_est: u8,
    pub d_t: f64,
    pub v_x: f64,
    pub v_y: f64,
    pub phi: f64,
    pub event: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub metrics: EpisodeMetrics,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Estimate {
    y: f64,
    theta: f64,
    d: f64,
    s: bool,
}

struct Segment {
    start_pos: Vector2<f64>,
    start_s: f64,
}

struct Closed {
    travel_mm: f64,
    x_progress_mm: f64,
    followed_mm: f64,
}

pub fn write_trace(rows: &[TraceRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn finish_metrics(
    closed: &[Closed],
    outcome: Outcome,
    total_length: f64,
    duration: f64,
    settings: &EpisodeSettings,
) -> EpisodeMetrics {
    let n_regrasps = closed.len().saturating_sub(1);
    let followed: f64 = closed.iter().map(|c| c.followed_mm).sum();
    let mean_travel = closed.iter().map(|c| c.travel_mm).sum::<f64>() / closed.len().max(1) as f64;
    let x_progress: f64 = closed.iter().map(|c| c.x_progress_mm).sum();
    let charged = duration + settings.regrasp_time_s * n_regrasps as f64;
    let velocity = if charged > 0.0 { x_progress / 1000.0 / charged } else { 0.0 };
    let ratio = if outcome == Outcome::Completed {
        1.0
    } else {
        (followed / total_length).clamp(0.0, 1.0)
    };
    EpisodeMetrics {
        ratio_followed: ratio,
        dist_per_regrasp_norm: mean_travel / settings.workspace_mm,
        velocity_norm: velocity / settings.v_ref,
        n_regrasps,
        outcome,
        followed_mm: followed,
        duration_s: duration,
        segment_followed_mm: closed.iter().map(|c| c.followed_mm).collect(),
    }
}

/// Recomputes the metrics from a trace. Segments start at the `start` row
/// and at every `regrasp_*` row.
pub fn metrics_from_trace(rows: &[TraceRow], total_length: f64, settings: &EpisodeSettings) -> Result<EpisodeMetrics> {
    let first = rows.first().ok_or_else(|| invalid("trace", "empty"))?;
    let last = rows.last().unwrap();
    let outcome = match last.event.as_str() {
        "completed" => Outcome::Completed,
        "fell" => Outcome::Fell,
        "stuck" | "timeout" => Outcome::Stuck,
        "regrasp_limit" => Outcome::RegraspLimit,
        other => return Err(invalid("trace", format!("last event `{other}` is not terminal"))),
    };
    let mut closed = Vec::new();
    let mut start = first;
    for (i, r) in rows.iter().enumerate().skip(1) {
        if r.event.starts_with("regrasp_") && r.event != "regrasp_limit" {
            let end = &rows[i - 1];
            closed.push(Closed {
                travel_mm: (end.gripper_x - start.gripper_x).hypot(end.gripper_y - start.gripper_y),
                x_progress_mm: end.gripper_x - start.gripper_x,
                followed_mm: end.s - start.s,
            });
            start = r;
        }
    }
    closed.push(Closed {
        travel_mm: (last.gripper_x - start.gripper_x).hypot(last.gripper_y - start.gripper_y),
        x_progress_mm: last.gripper_x - start.gripper_x,
        followed_mm: last.s - start.s,
    });
    Ok(finish_metrics(&closed, outcome, total_length, last.t, settings))
}

/// Runs one episode. `seed` drives marker noise and regrasp placement; the
/// cable shape comes from `config.curve_seed`. Failures are outcomes; only
/// an invalid configuration is an error.
pub fn run_episode(config: &EpisodeConfig, seed: u64) -> Result<Episode> {
    config.validate()?;
    let st = &config.settings;
    let curve = make_cable(
        config.curve_seed,
        config.corpus.length_mm,
        config.corpus.waviness_mm,
        config.corpus.n_waypoints,
        config.corpus.kappa_max,
    )?;
    let total_length = curve.total_length_mm;
    let fixture = Fixture::default();
    let heading = fixture.heading;
    let heading_dir = Vector2::new(heading.cos(), heading.sin());
    let opening0 = config.sim.opening_for_force(&config.cable, st.initial_grip_force_n);
    let mut sim = CableSim::new(curve, config.cable.clone(), config.sim.clone(), fixture, opening0)?;
    let mut grip = GripController::<f64>::new(&config.grip, opening0)?;
    let perception = Perception::<f64>::new(config.sensor.clone(), config.perception.clone())?;
    let reference = config.sensor.marker_rest_positions::<f64>();
    let area_min = config.perception.area_min_px as f64;

    let gain = match &config.gain {
        Some(g) if config.controller == ControllerKind::LqrControl => Some(g.gain_at(config.v_x)?),
        _ => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise_y = Normal::new(0.0, st.regrasp_noise_y_mm).map_err(|e| invalid("episode.regrasp_noise_y_mm", e.to_string()))?;
    let noise_theta = Normal::new(0.0, st.regrasp_noise_theta_deg.to_radians())
        .map_err(|e| invalid("episode.regrasp_noise_theta_deg", e.to_string()))?;

    let dt = 1.0 / st.base_rate_hz;
    let grip_dt = 1.0 / st.grip_rate_hz;
    let pose_dt = 1.0 / st.pose_rate_hz;
    let mut pose_tick = Ticker::new(st.pose_rate_hz, st.base_rate_hz);
    let mut grip_tick = Ticker::new(st.grip_rate_hz, st.base_rate_hz);
    let max_ticks = (st.max_time_s * st.base_rate_hz).ceil() as u64;

    let fresh = Estimate {
        y: 0.0,
        theta: 0.0,
        d: grip.d_t,
        s: true,
    };
    let mut estimate = fresh;
    let mut pending: VecDeque<(f64, Estimate)> = VecDeque::new();
    let mut lost_s = 0.0;
    let mut cmd = RobotCommand::STOP;
    let mut phi = 0.0;
    let mut opening = opening0;

    let mut trace = Vec::new();
    let row = |sim: &CableSim, est: &Estimate, d_t: f64, cmd: RobotCommand, phi: f64, event: &str| {
        let cs = sim.state.cable_state;
        let contact = sim.contact();
        TraceRow {
            t: sim.state.t,
            gripper_x: sim.state.gripper_pos.x,
            gripper_y: sim.state.gripper_pos.y,
            s: sim.state.s,
            y: cs.y,
            theta: cs.theta,
            alpha: cs.alpha,
            grip_force: sim.state.grip_force,
            opening: sim.state.opening_mm,
            d_true: contact.shear_px,
            s_true: u8::from(contact.area_px >= area_min),
            y_est: est.y,
            theta_est: est.theta,
            d_est: est.d,
            s_est: u8::from(est.s),
            d_t,
            v_x: cmd.v_x,
            v_y: cmd.v_y,
            phi,
            event: event.to_string(),
        }
    };
    trace.push(row(&sim, &estimate, grip.d_t, cmd, phi, "start"));

    let mut segment = Segment {
        start_pos: sim.state.gripper_pos,
        start_s: sim.state.s,
    };
    let mut closed: Vec<Closed> = Vec::new();
    let close = |sim: &CableSim, seg: &Segment| {
        let d = sim.state.gripper_pos - seg.start_pos;
        Closed {
            travel_mm: d.norm(),
            x_progress_mm: d.dot(&heading_dir),
            followed_mm: sim.state.s - seg.start_s,
        }
    };

    let mut outcome = Outcome::Stuck;
    let mut tick = 0u64;
    'episode: loop {
        if tick >= max_ticks {
            trace.push(row(&sim, &estimate, grip.d_t, cmd, phi, "timeout"));
            break;
        }
        let t = sim.state.t;
        let pose_now = pose_tick.fires(tick);
        let grip_now = grip_tick.fires(tick);

        if pose_now {
            let frame = sim.observe_tactile::<f64>(&config.sensor, st.marker_noise_px, rng.gen())?;
            let obs = perception.process(&frame, &reference)?;
            let est = Estimate {
                y: if obs.pose.valid { obs.pose.y_mm } else { estimate.y },
                theta: if obs.pose.valid { obs.pose.theta_rad } else { estimate.theta },
                d: obs.friction.d,
                s: obs.quality.s,
            };
            pending.push_back((t + st.perception_latency_s, est));
        }
        while let Some(&(ready, est)) = pending.front() {
            if ready > t + 1e-9 {
                break;
            }
            estimate = est;
            pending.pop_front();
        }

        let mut cause = None;
        if (sim.state.gripper_pos - segment.start_pos).norm() >= st.workspace_mm {
            cause = Some(RegraspCause::Workspace);
        }
        if pose_now {
            lost_s = if estimate.s { 0.0 } else { lost_s + pose_dt };
            if cause.is_none() && config.controller.emergency_regrasps() {
                if estimate.y.abs() > st.y_emergency_mm {
                    cause = Some(RegraspCause::Emergency);
                } else if lost_s >= st.t_lost_s {
                    cause = Some(RegraspCause::QualityLost);
                }
            }
        }
        if let Some(cause) = cause {
            if closed.len() >= st.max_regrasps {
                trace.push(row(&sim, &estimate, grip.d_t, cmd, phi, "regrasp_limit"));
                outcome = Outcome::RegraspLimit;
                break 'episode;
            }
            closed.push(close(&sim, &segment));
            let placed = CableState {
                y: noise_y.sample(&mut rng),
                theta: noise_theta.sample(&mut rng),
                alpha: 0.0,
            };
            sim.regrasp(placed)?;
            estimate = Estimate { d: estimate.d, ..fresh };
            pending.clear();
            lost_s = 0.0;
            segment = Segment {
                start_pos: sim.state.gripper_pos,
                start_s: sim.state.s,
            };
            let tag = match cause {
                RegraspCause::Workspace => "regrasp_workspace",
                RegraspCause::Emergency => "regrasp_emergency",
                RegraspCause::QualityLost => "regrasp_quality",
            };
            trace.push(row(&sim, &estimate, grip.d_t, cmd, phi, tag));
        }

        if pose_now || cause.is_some() {
            let alpha = sim.polar().0;
            cmd = match config.controller {
                ControllerKind::OpenLoop | ControllerKind::OpenLoopRegrasp => RobotCommand::from_local(config.v_x, 0.0, heading),
                ControllerKind::PControl => RobotCommand::from_local(config.v_x, st.p_gain * estimate.y, heading),
                ControllerKind::LqrControl => {
                    let gain = gain.as_ref().expect("validated");
                    let x = nalgebra::Vector3::new(estimate.y, estimate.theta, alpha);
                    phi = pose_control(&x, gain, config.phi_max_rad);
                    RobotCommand::from_pull(config.v_x, phi, alpha, heading)
                }
            };
            if config.controller != ControllerKind::LqrControl {
                phi = cmd.phi(alpha, heading);
            }
        }

        if grip_now && config.controller.regulates_grip() {
            opening = grip.grip_step(estimate.d, estimate.s, grip_dt)?;
        }

        let event = sim.step(cmd, opening, dt)?;
        let tag = match event {
            SimEvent::None => "",
            SimEvent::Completed => "completed",
            SimEvent::Fell => "fell",
            SimEvent::Stuck => "stuck",
        };
        trace.push(row(&sim, &estimate, grip.d_t, cmd, phi, tag));
        match event {
            SimEvent::None => {}
            SimEvent::Completed => {
                outcome = Outcome::Completed;
                break;
            }
            SimEvent::Fell => {
                outcome = Outcome::Fell;
                break;
            }
            SimEvent::Stuck => {
                outcome = Outcome::Stuck;
                break;
            }
        }
        tick += 1;
    }
    closed.push(close(&sim, &segment));
    let metrics = finish_metrics(&closed, outcome, total_length, sim.state.t, st);
    Ok(Episode { metrics, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_config(controller: ControllerKind, waviness: f64, length: f64) -> EpisodeConfig {
        let mut cfg = Config::default();
        cfg.corpus.waviness_mm = waviness;
        cfg.corpus.length_mm = length;
        EpisodeConfig::from_config(&cfg, controller, "thin_nylon_usb", 0, None).unwrap()
    }

    #[test]
    fn controller_names_round_trip() {
        for c in ControllerKind::ALL {
            assert_eq!(c.as_str().parse::<ControllerKind>().unwrap(), c);
        }
        assert!("pid".parse::<ControllerKind>().is_err());
    }

    #[test]
    fn lqr_without_gain_is_rejected() {
        let c = short_config(ControllerKind::LqrControl, 0.0, 100.0);
        assert!(run_episode(&c, 0).is_err());
    }

    #[test]
    fn straight_open_loop_completes_without_regrasp() {
        let c = short_config(ControllerKind::OpenLoop, 0.0, 250.0);
        let e = run_episode(&c, 3).unwrap();
        assert_eq!(e.metrics.outcome, Outcome::Completed);
        assert_eq!(e.metrics.ratio_followed, 1.0);
        assert_eq!(e.metrics.n_regrasps, 0);
    }

    #[test]
    fn trace_recomputation_matches_metrics() {
        let c = short_config(ControllerKind::OpenLoopRegrasp, 22.0, 600.0);
        let e = run_episode(&c, 1).unwrap();
        let again = metrics_from_trace(&e.trace, 600.0, &c.settings).unwrap();
        assert_eq!(again.n_regrasps, e.metrics.n_regrasps);
        assert_eq!(again.outcome, e.metrics.outcome);
        assert!((again.ratio_followed - e.metrics.ratio_followed).abs() < 1e-12);
        assert!((again.velocity_norm - e.metrics.velocity_norm).abs() < 1e-12);
        assert!((again.dist_per_regrasp_norm - e.metrics.dist_per_regrasp_norm).abs() < 1e-12);
        let total: f64 = e.metrics.segment_followed_mm.iter().sum();
        assert!((total - e.metrics.followed_mm).abs() < 1e-9);
    }
}
