//! Tactile perception: depth reconstruction, contact region, cable pose,
//! marker flow and grasp quality.

mod contact;
mod markers;
mod poisson;

pub use contact::{
    estimate_pose, extract_contact, grasp_quality, region_from_mask, CablePoseEstimate,
    ContactRegion, GraspQuality,
};
pub use markers::{track_markers, FrictionEstimate};
pub use poisson::{poisson_reconstruct, poisson_residual, PoissonSolver};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Real;
use crate::tactile_sim::{SensorGeometry, TactileFrame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionConfig {
    pub depth_threshold_mm: f64,
    pub area_min_px: usize,
    pub marker_reg_weight: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            depth_threshold_mm: 0.05,
            area_min_px: 150,
            marker_reg_weight: 1.0,
        }
    }
}

impl PerceptionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.depth_threshold_mm > 0.0) {
            return Err(invalid("perception.depth_threshold_mm", "must be positive"));
        }
        if self.area_min_px == 0 {
            return Err(invalid("perception.area_min_px", "must be positive"));
        }
        if !(self.marker_reg_weight >= 0.0) {
            return Err(invalid("perception.marker_reg_weight", "must be non-negative"));
        }
        Ok(())
    }
}

/// Everything the controllers read from one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<T: Real> {
    pub pose: CablePoseEstimate<T>,
    pub friction: FrictionEstimate<T>,
    pub quality: GraspQuality,
}

/// Frame-to-estimate pipeline for a fixed sensor geometry.
pub struct Perception<T: Real> {
    geom: SensorGeometry,
    config: PerceptionConfig,
    solver: PoissonSolver<T>,
}

impl<T: Real> Perception<T> {
    pub fn new(geom: SensorGeometry, config: PerceptionConfig) -> Result<Self> {
        geom.validate()?;
        config.validate()?;
        let solver = PoissonSolver::new(geom.rows, geom.cols);
        Ok(Self {
            geom,
            config,
            solver,
        })
    }

    pub fn geometry(&self) -> &SensorGeometry {
        &self.geom
    }

    /// `reference` is the marker list the displacement is measured against,
    /// normally the undeformed grid captured when the cable was grasped.
    pub fn process(&self, frame: &TactileFrame<T>, reference: &[Vector2<T>]) -> Result<Observation<T>> {
        let depth = self.solver.solve(&frame.grad_x, &frame.grad_y)?;
        let region = extract_contact(&depth, T::lit(self.config.depth_threshold_mm));
        let pose = estimate_pose(&region, &self.geom, self.config.area_min_px);
        let quality = grasp_quality(&region, self.config.area_min_px);
        let friction = track_markers(reference, &frame.markers, T::lit(self.config.marker_reg_weight))?;
        Ok(Observation {
            pose,
            friction,
            quality,
        })
    }
}
