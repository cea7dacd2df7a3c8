//! Top-level JSON configuration.
//!
//! Sections: `sensor`, `perception`, `sim`, `cables`, `corpus`, `grip`,
//! `lqr`, `sysid`, `episode`, `experiments`. Every field has a default, so
//! `{}` is a valid file. Validation errors name the offending field with
//! its section prefix.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cable_sim::{CableSpec, SimConfig};
use crate::error::{Error, Result};
use crate::grip_control::GripConfig;
use crate::lqr::LqrConfig;
use crate::perception::PerceptionConfig;
use crate::sysid::CollectConfig;
use crate::tactile_sim::SensorGeometry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub length_mm: f64,
    pub waviness_mm: f64,
    pub n_waypoints: usize,
    pub kappa_max: f64,
    /// Cable used by `compare` and `sweep-velocity`.
    pub default_cable: String,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            length_mm: 1000.0,
            waviness_mm: 22.0,
            n_waypoints: 12,
            kappa_max: 0.03,
            default_cable: "thin_nylon_usb".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SysidSettings {
    pub collect: CollectConfig,
    pub n_points: usize,
    pub n_trajectories: usize,
    pub seed: u64,
    pub train_fraction: f64,
    pub cable: String,
    /// Curve seeds for collection are drawn from this corpus shape.
    pub waviness_mm: f64,
    pub grip_force_n: f64,
}

impl Default for SysidSettings {
    fn default() -> Self {
        Self {
            collect: CollectConfig::default(),
            n_points: 2000,
            n_trajectories: 10,
            seed: 7,
            train_fraction: 0.8,
            cable: "thin_nylon_usb".into(),
            waviness_mm: 8.0,
            grip_force_n: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeSettings {
    /// Nominal follow speed, m/s.
    pub v_x: f64,
    pub workspace_mm: f64,
    pub max_regrasps: usize,
    pub y_emergency_mm: f64,
    pub t_lost_s: f64,
    pub regrasp_noise_y_mm: f64,
    pub regrasp_noise_theta_deg: f64,
    /// Charged per regrasp in the velocity metric, s.
    pub regrasp_time_s: f64,
    pub base_rate_hz: f64,
    pub grip_rate_hz: f64,
    pub pose_rate_hz: f64,
    /// Delay between a frame being captured and its estimate being usable, s.
    pub perception_latency_s: f64,
    pub marker_noise_px: f64,
    /// Proportional baseline gain, (m/s) per mm.
    pub p_gain: f64,
    pub initial_grip_force_n: f64,
    pub max_time_s: f64,
    /// Velocity normaliser, m/s.
    pub v_ref: f64,
}

impl Default for EpisodeSettings {
    fn default() -> Self {
        Self {
            v_x: 0.02,
            workspace_mm: 450.0,
            max_regrasps: 30,
            y_emergency_mm: 6.0,
            t_lost_s: 0.5,
            regrasp_noise_y_mm: 1.0,
            regrasp_noise_theta_deg: 3.0,
            regrasp_time_s: 2.0,
            base_rate_hz: 125.0,
            grip_rate_hz: 60.0,
            pose_rate_hz: 30.0,
            perception_latency_s: 0.1,
            marker_noise_px: 0.05,
            p_gain: 0.002,
            initial_grip_force_n: 1.5,
            max_time_s: 600.0,
            v_ref: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSettings {
    pub seeds: Vec<u64>,
    pub velocities: Vec<f64>,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3, 4],
            velocities: vec![0.025, 0.045, 0.065],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub sensor: SensorGeometry,
    pub perception: PerceptionConfig,
    pub sim: SimConfig,
    pub cables: Vec<CableSpec>,
    pub corpus: CorpusConfig,
    pub grip: GripConfig,
    pub lqr: LqrConfig,
    pub sysid: SysidSettings,
    pub episode: EpisodeSettings,
    pub experiments: ExperimentSettings,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            sensor: SensorGeometry::default(),
            perception: PerceptionConfig::default(),
            sim: SimConfig::default(),
            cables: CableSpec::presets(),
            corpus: CorpusConfig::default(),
            grip: GripConfig::default(),
            lqr: LqrConfig::default(),
            sysid: SysidSettings::default(),
            episode: EpisodeSettings::default(),
            experiments: ExperimentSettings::default(),
        }
    }
}

fn field(name: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config {
        field: name.into(),
        reason: reason.into(),
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field(name, format!("must be positive, got {v}")))
    }
}

/// Re-labels a sub-config error as a config error.
fn section(e: Error) -> Error {
    match e {
        Error::InvalidArgument { field: f, reason } => field(f, reason),
        other => other,
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Config = serde_json::from_str(&text).map_err(|e| field("<json>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn cable(&self, name: &str) -> Result<&CableSpec> {
        self.cables
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| field("cables", format!("no cable named `{name}`")))
    }

    pub fn validate(&self) -> Result<()> {
        self.sensor.validate().map_err(section)?;
        self.perception.validate().map_err(section)?;
        self.sim.validate().map_err(section)?;
        self.grip.validate().map_err(section)?;
        self.lqr.validate().map_err(section)?;
        self.sysid.collect.validate().map_err(section)?;
        if self.cables.is_empty() {
            return Err(field("cables", "need at least one cable"));
        }
        for (i, c) in self.cables.iter().enumerate() {
            c.validate().map_err(|e| match section(e) {
                Error::Config { field: f, reason } => field(format!("cables[{i}].{}", f.trim_start_matches("cable.")), reason),
                other => other,
            })?;
            if self.cables[..i].iter().any(|o| o.name == c.name) {
                return Err(field(format!("cables[{i}].name"), format!("duplicate name `{}`", c.name)));
            }
        }

        let c = &self.corpus;
        positive("corpus.length_mm", c.length_mm)?;
        if !(c.waviness_mm >= 0.0) {
            return Err(field("corpus.waviness_mm", "must be non-negative"));
        }
        if c.n_waypoints < 2 {
            return Err(field("corpus.n_waypoints", "need at least 2"));
        }
        positive("corpus.kappa_max", c.kappa_max)?;
        self.cable(&c.default_cable)
            .map_err(|_| field("corpus.default_cable", format!("no cable named `{}`", c.default_cable)))?;

        let s = &self.sysid;
        if s.n_points < 100 {
            return Err(field("sysid.n_points", "need at least 100"));
        }
        if s.n_trajectories == 0 {
            return Err(field("sysid.n_trajectories", "must be positive"));
        }
        if !(s.train_fraction > 0.0 && s.train_fraction < 1.0) {
            return Err(field("sysid.train_fraction", "must lie in (0, 1)"));
        }
        self.cable(&s.cable)
            .map_err(|_| field("sysid.cable", format!("no cable named `{}`", s.cable)))?;
        positive("sysid.grip_force_n", s.grip_force_n)?;

        let e = &self.episode;
        for (name, v) in [
            ("episode.v_x", e.v_x),
            ("episode.workspace_mm", e.workspace_mm),
            ("episode.y_emergency_mm", e.y_emergency_mm),
            ("episode.t_lost_s", e.t_lost_s),
            ("episode.base_rate_hz", e.base_rate_hz),
            ("episode.grip_rate_hz", e.grip_rate_hz),
            ("episode.pose_rate_hz", e.pose_rate_hz),
            ("episode.initial_grip_force_n", e.initial_grip_force_n),
            ("episode.max_time_s", e.max_time_s),
            ("episode.v_ref", e.v_ref),
        ] {
            positive(name, v)?;
        }
        for (name, v) in [
            ("episode.regrasp_noise_y_mm", e.regrasp_noise_y_mm),
            ("episode.regrasp_noise_theta_deg", e.regrasp_noise_theta_deg),
            ("episode.regrasp_time_s", e.regrasp_time_s),
            ("episode.perception_latency_s", e.perception_latency_s),
            ("episode.marker_noise_px", e.marker_noise_px),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(field(name, format!("must be non-negative, got {v}")));
            }
        }
        if e.grip_rate_hz > e.base_rate_hz || e.pose_rate_hz > e.base_rate_hz {
            return Err(field("episode.base_rate_hz", "sub-rates cannot exceed the base rate"));
        }
        if e.v_x > self.sim.v_max {
            return Err(field("episode.v_x", "exceeds sim.v_max"));
        }
        if e.y_emergency_mm >= self.sim.y_fall_mm {
            return Err(field("episode.y_emergency_mm", "must be inside sim.y_fall_mm"));
        }

        let x = &self.experiments;
        if x.seeds.is_empty() {
            return Err(field("experiments.seeds", "need at least one seed"));
        }
        for (i, v) in x.velocities.iter().enumerate() {
            if !(*v > 0.0 && *v <= self.sim.v_max) {
                return Err(field(format!("experiments.velocities[{i}]"), "must lie in (0, sim.v_max]"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_json_is_default() {
        let c: Config = serde_json::from_str("{}").unwrap();
        assert_eq!(c, Config::default());
        c.validate().unwrap();
    }

    #[test]
    fn errors_name_the_field() {
        let cases = [
            (r#"{"episode": {"v_x": -1}}"#, "episode.v_x"),
            (r#"{"grip": {"lambda": 2}}"#, "grip.lambda"),
            (r#"{"corpus": {"default_cable": "nope"}}"#, "corpus.default_cable"),
            (r#"{"cables": [{"name": "a", "diameter_mm": 0, "bend_stiffness": 1, "mu": 1, "area_gain": 1, "mass_per_m": 1, "f_slip": 1}]}"#, "cables[0].diameter_mm"),
            (r#"{"experiments": {"velocities": [0.5]}}"#, "experiments.velocities[0]"),
        ];
        for (json, name) in cases {
            let c: Config = serde_json::from_str(json).unwrap();
            let msg = c.validate().unwrap_err().to_string();
            assert!(msg.contains(name), "{json}: {msg}");
        }
    }
}
