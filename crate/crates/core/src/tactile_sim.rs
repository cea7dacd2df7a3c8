//! Synthetic GelSight-like observations.
//!
//! A cable pressed into the gel is rendered as a parabolic ridge whose
//! centerline passes through `(0, y_mm)` in the sensor frame at angle
//! `theta_rad` from the sensor X axis. Pixel `(row i, col j)` sits at pixel
//! coordinates `(x, y) = (j, i)`; the sensor center is at
//! `((cols - 1) / 2, (rows - 1) / 2)` and sensor-frame millimetres are
//! `(x - cx) * mm_per_px`, `(y - cy) * mm_per_px`.
//!
//! Debug dump formats:
//! - depth: binary PGM (`P5`), header `P5\n<cols> <rows>\n255\n`, then one
//!   byte per pixel in row-major order, `round(255 * depth / full_scale)`
//!   clamped to `[0, 255]`; `full_scale` is the frame maximum (all zero if
//!   the frame is flat).
//! - markers: CSV with header `id,x_px,y_px`, one row per marker.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Real;

/// Active area and sampling of the sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorGeometry {
    pub width_mm: f64,
    pub height_mm: f64,
    pub cols: usize,
    pub rows: usize,
    pub marker_cols: usize,
    pub marker_rows: usize,
}

impl Default for SensorGeometry {
    fn default() -> Self {
        Self {
            width_mm: 25.7,
            height_mm: 19.3,
            cols: 257,
            rows: 193,
            marker_cols: 8,
            marker_rows: 6,
        }
    }
}

impl SensorGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.cols == 0 || self.rows == 0 {
            return Err(invalid("sensor.cols/rows", "must be positive"));
        }
        if self.marker_cols == 0 || self.marker_rows == 0 {
            return Err(invalid("sensor.marker_cols/marker_rows", "must be positive"));
        }
        if !(self.width_mm > 0.0 && self.height_mm > 0.0) {
            return Err(invalid("sensor.width_mm/height_mm", "must be positive"));
        }
        let sx = self.width_mm / self.cols as f64;
        let sy = self.height_mm / self.rows as f64;
        if (sx - sy).abs() > 1e-9 * sx.max(sy) {
            return Err(invalid(
                "sensor",
                format!("pixels must be square ({sx} mm/px wide vs {sy} mm/px tall)"),
            ));
        }
        Ok(())
    }

    pub fn mm_per_px(&self) -> f64 {
        self.width_mm / self.cols as f64
    }

    /// Pixel coordinates of the sensor center.
    pub fn center_px(&self) -> (f64, f64) {
        (
            (self.cols as f64 - 1.0) / 2.0,
            (self.rows as f64 - 1.0) / 2.0,
        )
    }

    pub fn marker_count(&self) -> usize {
        self.marker_cols * self.marker_rows
    }

    /// Undeformed marker grid, row-major, in pixel coordinates.
    pub fn marker_rest_positions<T: Real>(&self) -> Vec<Vector2<T>> {
        let (cx, cy) = self.center_px();
        let sx = self.cols as f64 / self.marker_cols as f64;
        let sy = self.rows as f64 / self.marker_rows as f64;
        let mut out = Vec::with_capacity(self.marker_count());
        for r in 0..self.marker_rows {
            for c in 0..self.marker_cols {
                let x = cx + (c as f64 - (self.marker_cols as f64 - 1.0) / 2.0) * sx;
                let y = cy + (r as f64 - (self.marker_rows as f64 - 1.0) / 2.0) * sy;
                out.push(Vector2::new(T::lit(x), T::lit(y)));
            }
        }
        out
    }
}

/// Ground-truth contact state a frame is rendered from.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactTruth<T: Real> {
    pub y_mm: T,
    pub theta_rad: T,
    pub indent_mm: T,
    pub cable_radius_mm: T,
    pub shear_px: Vector2<T>,
}

impl<T: Real> ContactTruth<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.cable_radius_mm > T::zero()) {
            return Err(invalid("cable_radius_mm", "must be positive"));
        }
        if self.indent_mm < T::zero() || self.indent_mm > self.cable_radius_mm {
            return Err(invalid(
                "indent_mm",
                format!("must lie in [0, cable_radius_mm], got {}", self.indent_mm),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TactileFrame<T: Real> {
    pub depth: DMatrix<T>,
    pub grad_x: DMatrix<T>,
    pub grad_y: DMatrix<T>,
    pub markers: Vec<Vector2<T>>,
    pub timestamp_s: T,
}

/// Parabolic imprint of a cylinder of radius `cable_radius_mm` pressed
/// `indent_mm` into the gel. Depth is in millimetres.
pub fn render_depth<T: Real>(truth: &ContactTruth<T>, geom: &SensorGeometry) -> DMatrix<T> {
    let scale = T::lit(geom.mm_per_px());
    let (cx, cy) = geom.center_px();
    let (cx, cy) = (T::lit(cx), T::lit(cy));
    let (sin_t, cos_t) = (truth.theta_rad.sin(), truth.theta_rad.cos());
    let two_r = T::lit(2.0) * truth.cable_radius_mm;
    let zero = T::zero();

    DMatrix::from_fn(geom.rows, geom.cols, |i, j| {
        if truth.indent_mm <= zero {
            return zero;
        }
        let x = (T::lit(j as f64) - cx) * scale;
        let y = (T::lit(i as f64) - cy) * scale - truth.y_mm;
        let d = cos_t * y - sin_t * x;
        let z = truth.indent_mm - d * d / two_r;
        if z > zero {
            z
        } else {
            zero
        }
    })
}

/// Per-pixel spatial derivatives of a grid: central differences inside,
/// one-sided at the borders. Units are grid units per pixel.
pub fn differentiate<T: Real>(grid: &DMatrix<T>) -> (DMatrix<T>, DMatrix<T>) {
    let (rows, cols) = grid.shape();
    let half = T::lit(0.5);
    let gx = DMatrix::from_fn(rows, cols, |i, j| {
        if cols < 2 {
            T::zero()
        } else if j == 0 {
            grid[(i, 1)] - grid[(i, 0)]
        } else if j == cols - 1 {
            grid[(i, j)] - grid[(i, j - 1)]
        } else {
            (grid[(i, j + 1)] - grid[(i, j - 1)]) * half
        }
    });
    let gy = DMatrix::from_fn(rows, cols, |i, j| {
        if rows < 2 {
            T::zero()
        } else if i == 0 {
            grid[(1, j)] - grid[(0, j)]
        } else if i == rows - 1 {
            grid[(i, j)] - grid[(i - 1, j)]
        } else {
            (grid[(i + 1, j)] - grid[(i - 1, j)]) * half
        }
    });
    (gx, gy)
}

/// Marker grid displaced by a uniform shear plus zero-mean Gaussian jitter.
pub fn render_markers<T: Real>(
    geom: &SensorGeometry,
    shear_px: Vector2<T>,
    noise_std_px: f64,
    seed: u64,
) -> Result<Vec<Vector2<T>>> {
    if !(noise_std_px >= 0.0) {
        return Err(invalid("noise_std_px", "must be non-negative"));
    }
    let mut markers = geom.marker_rest_positions::<T>();
    let jitter = Normal::new(0.0, noise_std_px).map_err(|e| invalid("noise_std_px", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for m in &mut markers {
        *m += shear_px;
        if noise_std_px > 0.0 {
            m.x += T::lit(jitter.sample(&mut rng));
            m.y += T::lit(jitter.sample(&mut rng));
        }
    }
    Ok(markers)
}

pub fn synth_frame<T: Real>(
    truth: &ContactTruth<T>,
    geom: &SensorGeometry,
    noise_std_px: f64,
    seed: u64,
    timestamp_s: T,
) -> Result<TactileFrame<T>> {
    truth.validate()?;
    let depth = render_depth(truth, geom);
    let (grad_x, grad_y) = differentiate(&depth);
    let markers = render_markers(geom, truth.shear_px, noise_std_px, seed)?;
    Ok(TactileFrame {
        depth,
        grad_x,
        grad_y,
        markers,
        timestamp_s,
    })
}

pub fn write_pgm<T: Real>(depth: &DMatrix<T>, path: &Path) -> Result<()> {
    let full_scale = depth
        .iter()
        .fold(0.0f64, |m, v| m.max(v.to_f64_lossy()));
    let (rows, cols) = depth.shape();
    let mut bytes = Vec::with_capacity(rows * cols + 32);
    write!(bytes, "P5\n{cols} {rows}\n255\n")?;
    for i in 0..rows {
        for j in 0..cols {
            let v = if full_scale > 0.0 {
                (255.0 * depth[(i, j)].to_f64_lossy() / full_scale)
                    .round()
                    .clamp(0.0, 255.0)
            } else {
                0.0
            };
            bytes.push(v as u8);
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn write_markers_csv<T: Real>(markers: &[Vector2<T>], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "x_px", "y_px"])?;
    for (id, m) in markers.iter().enumerate() {
        w.write_record(&[
            id.to_string(),
            m.x.to_f64_lossy().to_string(),
            m.y.to_f64_lossy().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
