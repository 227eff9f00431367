//! Geometric tumour exposure: the fraction of the camera-facing tumour
//! hemisphere with an unobstructed line of sight to the camera.

use super::tissue::TissueState;
use crate::geometry::{segment_hits_triangle, Vec3};

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

/// Deterministic Fibonacci-spiral samples on the hemisphere of the sphere
/// `(center, radius)` that faces `camera`. Samples are equal-area.
pub fn hemisphere_samples(center: Vec3, radius: f64, camera: Vec3, n: usize) -> Vec<Vec3> {
    let axis = (camera - center).normalized();
    let helper = if axis.x.abs() < 0.9 { Vec3::new(1.0, 0.0, 0.0) } else { Vec3::new(0.0, 1.0, 0.0) };
    let u = axis.cross(helper).normalized();
    let v = axis.cross(u);
    (0..n)
        .map(|i| {
            let h = 1.0 - (i as f64 + 0.5) / n as f64;
            let r = (1.0 - h * h).sqrt();
            let phi = i as f64 * GOLDEN_ANGLE;
            center + (u * (r * phi.cos()) + v * (r * phi.sin()) + axis * h) * radius
        })
        .collect()
}

/// Whether the segment from `point` to `camera` passes through the sheet mesh.
pub fn is_occluded(tissue: &TissueState, triangles: &[[usize; 3]], point: Vec3, camera: Vec3) -> bool {
    let p = &tissue.particles;
    triangles.iter().any(|t| segment_hits_triangle(point, camera, p[t[0]], p[t[1]], p[t[2]], 1e-9))
}

/// Visible fraction in `[0, 1]` of `n_samples` hemisphere points.
pub fn tumour_exposure(tissue: &TissueState, tumour_center: Vec3, tumour_radius: f64, camera: Vec3, n_samples: usize) -> f64 {
    assert!(n_samples >= 1, "tumour_exposure needs at least one sample");
    let triangles = tissue.triangles();
    let visible = hemisphere_samples(tumour_center, tumour_radius, camera, n_samples)
        .into_iter()
        .filter(|&s| !is_occluded(tissue, &triangles, s, camera))
        .count();
    visible as f64 / n_samples as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_lie_on_facing_hemisphere() {
        let c = Vec3::new(1.0, -2.0, 3.0);
        let cam = Vec3::new(0.0, 50.0, 80.0);
        let axis = (cam - c).normalized();
        let pts = hemisphere_samples(c, 4.0, cam, 200);
        assert_eq!(pts.len(), 200);
        for p in pts {
            assert!((p.distance(c) - 4.0).abs() < 1e-12);
            assert!((p - c).dot(axis) > 0.0);
        }
    }

    #[test]
    fn empty_sheet_exposes_everything() {
        let te = tumour_exposure(&TissueState::empty(), Vec3::ZERO, 5.0, Vec3::new(0.0, 10.0, 100.0), 64);
        assert_eq!(te, 1.0);
    }
}
