//! Contact region, principal-axis cable pose and grasp quality.

use nalgebra::{DMatrix, Matrix2, Vector2};

use crate::scalar::Real;
use crate::tactile_sim::SensorGeometry;

#[derive(Debug, Clone, PartialEq)]
pub struct ContactRegion<T: Real> {
    pub mask: DMatrix<bool>,
    pub area_px: usize,
    /// Pixel coordinates `(x = col, y = row)`.
    pub centroid_px: Vector2<T>,
    /// Central second moments normalised by area (pixel² units).
    pub second_moments: Matrix2<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CablePoseEstimate<T: Real> {
    pub y_mm: T,
    pub theta_rad: T,
    pub major_eigenvalue: T,
    pub minor_eigenvalue: T,
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraspQuality {
    pub s: bool,
    pub area_px: usize,
    pub area_min: usize,
}

impl GraspQuality {
    /// `S` as the 0/1 indicator used by the leaky integrator.
    pub fn indicator<T: Real>(&self) -> T {
        if self.s {
            T::one()
        } else {
            T::zero()
        }
    }
}

/// Thresholds the depth map and accumulates mask moments.
pub fn extract_contact<T: Real>(depth: &DMatrix<T>, threshold_mm: T) -> ContactRegion<T> {
    region_from_mask(depth.map(|v| v > threshold_mm))
}

/// Moments of an arbitrary mask. Exposed so callers can build synthetic
/// regions directly.
pub fn region_from_mask<T: Real>(mask: DMatrix<bool>) -> ContactRegion<T> {
    let (rows, cols) = mask.shape();
    let mut area = 0usize;
    let (mut sx, mut sy) = (0.0f64, 0.0f64);
    for j in 0..cols {
        for i in 0..rows {
            if mask[(i, j)] {
                area += 1;
                sx += j as f64;
                sy += i as f64;
            }
        }
    }
    if area == 0 {
        return ContactRegion {
            mask,
            area_px: 0,
            centroid_px: Vector2::zeros(),
            second_moments: Matrix2::zeros(),
        };
    }
    let n = area as f64;
    let (mx, my) = (sx / n, sy / n);
    let (mut cxx, mut cyy, mut cxy) = (0.0f64, 0.0f64, 0.0f64);
    for j in 0..cols {
        for i in 0..rows {
            if mask[(i, j)] {
                let dx = j as f64 - mx;
                let dy = i as f64 - my;
                cxx += dx * dx;
                cyy += dy * dy;
                cxy += dx * dy;
            }
        }
    }
    ContactRegion {
        mask,
        area_px: area,
        centroid_px: Vector2::new(T::lit(mx), T::lit(my)),
        second_moments: Matrix2::new(
            T::lit(cxx / n),
            T::lit(cxy / n),
            T::lit(cxy / n),
            T::lit(cyy / n),
        ),
    }
}

/// Principal axis of the contact region.
///
/// `theta_rad` is the major-axis angle from the sensor X axis in
/// `(-pi/2, pi/2]`. `y_mm` is where that axis crosses the sensor's central
/// column, measured from the sensor center along +Y; for near-vertical axes
/// (|cos theta| < 0.1) the centroid offset is used instead. An empty region
/// returns zeros with `valid = false`, and the caller decides what to hold.
/// For isotropic regions the two eigenvalues coincide and `theta_rad` is
/// arbitrary.
pub fn estimate_pose<T: Real>(
    region: &ContactRegion<T>,
    geom: &SensorGeometry,
    area_min: usize,
) -> CablePoseEstimate<T> {
    if region.area_px == 0 {
        return CablePoseEstimate {
            y_mm: T::zero(),
            theta_rad: T::zero(),
            major_eigenvalue: T::zero(),
            minor_eigenvalue: T::zero(),
            valid: false,
        };
    }
    let m = &region.second_moments;
    let (a, b, c) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
    let half = T::lit(0.5);
    let mean = (a + c) * half;
    let spread = ((a - c) * (a - c) * T::lit(0.25) + b * b).sqrt();
    let major = mean + spread;
    let minor = (mean - spread).max(T::zero());

    let mut theta = half * (T::lit(2.0) * b).atan2(a - c);
    if theta <= -T::frac_pi_2() {
        theta += T::pi();
    }

    let scale = T::lit(geom.mm_per_px());
    let (cx, cy) = geom.center_px();
    let x_c = (region.centroid_px.x - T::lit(cx)) * scale;
    let y_c = (region.centroid_px.y - T::lit(cy)) * scale;
    let y_mm = if theta.cos().abs() < T::lit(0.1) {
        y_c
    } else {
        y_c - x_c * theta.tan()
    };

    CablePoseEstimate {
        y_mm,
        theta_rad: theta,
        major_eigenvalue: major,
        minor_eigenvalue: minor,
        valid: region.area_px >= area_min,
    }
}

/// `S = 1` iff the contact area reaches `area_min` (inclusive).
pub fn grasp_quality<T: Real>(region: &ContactRegion<T>, area_min: usize) -> GraspQuality {
    GraspQuality {
        s: region.area_px >= area_min,
        area_px: region.area_px,
        area_min,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tactile_sim::{render_depth, ContactTruth};

    fn bar_mask(rows: usize, cols: usize, angle: f64, half_len: f64, half_w: f64, c: (f64, f64)) -> DMatrix<bool> {
        let (s, co) = angle.sin_cos();
        DMatrix::from_fn(rows, cols, |i, j| {
            let dx = j as f64 - c.0;
            let dy = i as f64 - c.1;
            let along = co * dx + s * dy;
            let across = -s * dx + co * dy;
            along.abs() <= half_len && across.abs() <= half_w
        })
    }

    #[test]
    fn empty_depth_has_no_area() {
        let d = DMatrix::<f64>::zeros(20, 30);
        let r = extract_contact(&d, 0.05);
        assert_eq!(r.area_px, 0);
        let g = SensorGeometry::default();
        assert!(!estimate_pose(&r, &g, 150).valid);
        let q = grasp_quality(&r, 150);
        assert!(!q.s);
        assert_eq!(q.indicator::<f64>(), 0.0);
    }

    #[test]
    fn centered_ridge_centroid_and_axis() {
        let g = SensorGeometry::default();
        let truth = ContactTruth {
            y_mm: 0.0,
            theta_rad: 0.0,
            indent_mm: 0.5,
            cable_radius_mm: 2.0,
            shear_px: Vector2::zeros(),
        };
        let r = extract_contact(&render_depth(&truth, &g), 0.05);
        let (cx, cy) = g.center_px();
        assert!((r.centroid_px.x - cx).abs() <= 1.0 && (r.centroid_px.y - cy).abs() <= 1.0);
        let p = estimate_pose(&r, &g, 150);
        assert!(p.valid);
        assert!(p.theta_rad.to_degrees().abs() < 1.0);
        assert!(p.major_eigenvalue >= p.minor_eigenvalue && p.minor_eigenvalue >= 0.0);
    }

    #[test]
    fn offset_ridge_lateral_offset() {
        let g = SensorGeometry::default();
        let truth = ContactTruth {
            y_mm: 3.0,
            theta_rad: 0.0,
            indent_mm: 0.5,
            cable_radius_mm: 2.0,
            shear_px: Vector2::zeros(),
        };
        let r = extract_contact(&render_depth(&truth, &g), 0.05);
        let p = estimate_pose(&r, &g, 150);
        assert!((p.y_mm - 3.0f64).abs() <= g.mm_per_px());
    }

    #[test]
    fn rotated_bar_angle() {
        let g = SensorGeometry::default();
        let c = (120.0, 90.0);
        let flat = region_from_mask::<f64>(bar_mask(180, 240, 0.0, 60.0, 6.0, c));
        let p0 = estimate_pose(&flat, &g, 150);
        assert!(p0.theta_rad.to_degrees().abs() < 1.0);
        let rot = region_from_mask::<f64>(bar_mask(180, 240, 30f64.to_radians(), 60.0, 6.0, c));
        let p1 = estimate_pose(&rot, &g, 150);
        assert!((p1.theta_rad.to_degrees() - 30.0).abs() < 2.0);
    }

    #[test]
    fn vertical_axis_stays_in_range() {
        use std::f64::consts::FRAC_PI_2;
        let g = SensorGeometry::default();
        let mask = DMatrix::from_fn(180, 240, |i, j| (30..150).contains(&i) && (116..125).contains(&j));
        let r = region_from_mask::<f64>(mask);
        let p = estimate_pose(&r, &g, 150);
        assert!(p.theta_rad > -FRAC_PI_2 && p.theta_rad <= FRAC_PI_2);
        assert!(p.theta_rad.cos().abs() < 1e-9);
    }

    #[test]
    fn isotropic_disk_has_equal_eigenvalues() {
        let g = SensorGeometry::default();
        let mask = DMatrix::from_fn(181, 241, |i, j| {
            (i as f64 - 90.0).powi(2) + (j as f64 - 120.0).powi(2) <= 30.0 * 30.0
        });
        let r = region_from_mask::<f64>(mask);
        let p = estimate_pose(&r, &g, 150);
        assert!(p.valid);
        assert!((p.major_eigenvalue - p.minor_eigenvalue).abs() < 1e-6 * p.major_eigenvalue);
    }

    #[test]
    fn quality_boundary_is_inclusive() {
        let mut mask = DMatrix::from_element(20, 20, false);
        for k in 0..150 {
            mask[(k / 20, k % 20)] = true;
        }
        let r = region_from_mask::<f64>(mask);
        assert_eq!(r.area_px, 150);
        assert!(grasp_quality(&r, 150).s);
        assert!(!grasp_quality(&r, 151).s);
    }

    #[test]
    fn quality_turns_on_monotonically_with_indent() {
        let g = SensorGeometry::default();
        let mut last = false;
        let mut last_area = 0;
        for k in 0..40 {
            let indent = k as f64 * 0.005;
            let truth = ContactTruth {
                y_mm: 0.5,
                theta_rad: 0.1,
                indent_mm: indent,
                cable_radius_mm: 2.0,
                shear_px: Vector2::zeros(),
            };
            let r = extract_contact(&render_depth(&truth, &g), 0.05);
            let q = grasp_quality(&r, 150);
            assert!(r.area_px >= last_area);
            assert!(q.s || !last, "quality dropped at indent {indent}");
            last = q.s;
            last_area = r.area_px;
        }
        assert!(last);
    }
}
