//! Start positions for episodes: a rectangle above the sheet at fixed height.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SceneConfig;
use crate::geometry::Vec3;

/// Default inset of the start region from the sheet border, in mm.
pub const START_INSET: f64 = 5.0;
/// Default start height above the sheet rest plane, in mm.
pub const START_HEIGHT: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartRegion {
    pub x_range: (f64, f64),
    pub z_range: (f64, f64),
    pub y: f64,
}

impl StartRegion {
    /// Sheet footprint inset by [`START_INSET`], [`START_HEIGHT`] above the sheet.
    pub fn for_scene(scene: &SceneConfig) -> Self {
        let (w, d) = scene.sheet_extent;
        let hx = 0.5 * w - START_INSET;
        let hz = 0.5 * d - START_INSET;
        Self { x_range: (-hx, hx), z_range: (-hz, hz), y: scene.sheet_height + START_HEIGHT }
    }

    /// Uniform random start inside the region.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec3 {
        let x = self.x_range.0 + rng.random::<f64>() * (self.x_range.1 - self.x_range.0);
        let z = self.z_range.0 + rng.random::<f64>() * (self.z_range.1 - self.z_range.0);
        Vec3::new(x, self.y, z)
    }

    /// Regular `nx x nz` lattice covering the region including its border,
    /// row-major in `(i, j)` with `i` along x.
    pub fn lattice(&self, nx: usize, nz: usize) -> Vec<(usize, usize, Vec3)> {
        let coord = |(lo, hi): (f64, f64), i: usize, n: usize| {
            if n == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        };
        let mut out = Vec::with_capacity(nx * nz);
        for i in 0..nx {
            for j in 0..nz {
                out.push((i, j, Vec3::new(coord(self.x_range, i, nx), self.y, coord(self.z_range, j, nz))));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_region_is_inset_footprint() {
        let r = StartRegion::for_scene(&SceneConfig::default());
        assert_eq!(r.x_range, (-35.0, 35.0));
        assert_eq!(r.z_range, (-35.0, 35.0));
        assert_eq!(r.y, 20.0);
    }

    #[test]
    fn lattice_spans_region_row_major() {
        let r = StartRegion::for_scene(&SceneConfig::default());
        let l = r.lattice(7, 7);
        assert_eq!(l.len(), 49);
        assert_eq!(l[0].2, Vec3::new(-35.0, 20.0, -35.0));
        assert_eq!(l[1].2, Vec3::new(-35.0, 20.0, -35.0 + 70.0 / 6.0));
        assert_eq!(l[48].2, Vec3::new(35.0, 20.0, 35.0));
        assert_eq!(r.lattice(1, 1)[0].2, Vec3::new(0.0, 20.0, 0.0));
    }

    #[test]
    fn samples_stay_inside() {
        let r = StartRegion::for_scene(&SceneConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let p = r.sample(&mut rng);
            assert!(p.x >= -35.0 && p.x <= 35.0 && p.z >= -35.0 && p.z <= 35.0 && p.y == 20.0);
        }
    }
}
