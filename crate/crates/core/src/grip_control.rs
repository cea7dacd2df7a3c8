//! Grip-force regulation on the marker-displacement friction proxy.
//!
//! A PD law drives the gripper opening so the measured displacement `D`
//! tracks a target `D_t`; a leaky integrator raises `D_t` while grasp quality
//! is poor. `D_t` is clamped to `[d_t_min, d_t_max]`: without the floor the
//! integrator decays the target to zero under sustained good quality.
//! Positive error (too much friction) opens the gripper.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GripConfig {
    /// mm/s of opening per px of displacement error.
    pub k_p: f64,
    /// mm/s per px of error change between updates.
    pub k_d: f64,
    /// Leakage of the target integrator, in (0, 1).
    pub lambda: f64,
    pub d_t_init: f64,
    pub d_t_min: f64,
    pub d_t_max: f64,
    pub max_opening_mm: f64,
}

impl Default for GripConfig {
    fn default() -> Self {
        Self {
            k_p: 4.0,
            k_d: 1.0,
            lambda: 0.95,
            d_t_init: 0.8,
            d_t_min: 0.3,
            d_t_max: 2.0,
            max_opening_mm: 20.0,
        }
    }
}

impl GripConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_p > 0.0) {
            return Err(invalid("grip.k_p", "must be positive"));
        }
        if !(self.k_d >= 0.0) {
            return Err(invalid("grip.k_d", "must be non-negative"));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(invalid("grip.lambda", "must lie in (0, 1)"));
        }
        if !(self.d_t_min >= 0.0 && self.d_t_min <= self.d_t_max) {
            return Err(invalid("grip.d_t_min", "need 0 <= d_t_min <= d_t_max"));
        }
        if !(self.max_opening_mm > 0.0) {
            return Err(invalid("grip.max_opening_mm", "must be positive"));
        }
        Ok(())
    }
}

/// Pure leaky-integrator update, before clamping.
pub fn leaky_target<T: Real>(d_t: T, s: T, lambda: T) -> T {
    lambda * d_t + (T::one() - lambda) * (T::one() - s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GripController<T: Real> {
    pub k_p: T,
    pub k_d: T,
    pub d_t: T,
    pub lambda: T,
    pub prev_error: T,
    pub grip_pos_mm: T,
    pub d_t_min: T,
    pub d_t_max: T,
    pub max_opening_mm: T,
}

impl<T: Real> GripController<T> {
    pub fn new(config: &GripConfig, grip_pos_mm: T) -> Result<Self> {
        config.validate()?;
        let d_t_min = T::lit(config.d_t_min);
        let d_t_max = T::lit(config.d_t_max);
        let max_opening_mm = T::lit(config.max_opening_mm);
        Ok(Self {
            k_p: T::lit(config.k_p),
            k_d: T::lit(config.k_d),
            d_t: T::lit(config.d_t_init).clamp(d_t_min, d_t_max),
            lambda: T::lit(config.lambda),
            prev_error: T::zero(),
            grip_pos_mm: grip_pos_mm.clamp(T::zero(), max_opening_mm),
            d_t_min,
            d_t_max,
            max_opening_mm,
        })
    }

    /// PD law; returns the opening velocity `u_pd` in mm/s.
    pub fn pd_step(&mut self, d: T) -> T {
        let e = d - self.d_t;
        let u = self.k_p * e + self.k_d * (e - self.prev_error);
        self.prev_error = e;
        u
    }

    /// Leaky integrator on the target with `S` in {0, 1}.
    pub fn leaky_update(&mut self, s: bool) -> T {
        let s = if s { T::one() } else { T::zero() };
        self.d_t = leaky_target(self.d_t, s, self.lambda).clamp(self.d_t_min, self.d_t_max);
        self.d_t
    }

    /// One 60 Hz tick: target update, PD, then position integration.
    pub fn grip_step(&mut self, d: T, s: bool, dt: T) -> Result<T> {
        if !(dt > T::zero()) {
            return Err(invalid("dt", "must be positive"));
        }
        self.leaky_update(s);
        let u = self.pd_step(d);
        self.grip_pos_mm = (self.grip_pos_mm + u * dt).clamp(T::zero(), self.max_opening_mm);
        Ok(self.grip_pos_mm)
    }

    /// Last error, for traces.
    pub fn error(&self) -> T {
        self.prev_error
    }
}
