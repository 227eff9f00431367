//! Position-based-dynamics fat sheet.
//!
//! The sheet is a regular particle grid joined by distance constraints between
//! grid neighbours. One border is pinned to the anatomy; a single particle may
//! be bound to the end-effector. Constraints are projected Gauss-Seidel style
//! in a fixed order, so the solver is a pure function of its inputs.

use serde::{Deserialize, Serialize};

use super::config::{AttachmentEdge, SceneConfig};
use crate::geometry::Vec3;

/// Distance constraint between two grid neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub a: usize,
    pub b: usize,
    pub rest: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueState {
    /// Particle counts along x and z; particle `(ix, iz)` lives at `iz * nx + ix`.
    pub nx: usize,
    pub nz: usize,
    pub particles: Vec<Vec3>,
    pub rest_positions: Vec<Vec3>,
    pub fixed_mask: Vec<bool>,
    pub grasped_particle: Option<usize>,
    /// The sheet lies on the anatomy and never sinks below this height.
    pub floor: f64,
}

impl TissueState {
    pub fn from_scene(scene: &SceneConfig) -> Self {
        let (nx, nz) = scene.sheet_grid;
        let (w, d) = scene.sheet_extent;
        let (sx, sz) = scene.rest_particle_spacing();
        let mut rest = Vec::with_capacity(nx * nz);
        let mut fixed = Vec::with_capacity(nx * nz);
        for iz in 0..nz {
            for ix in 0..nx {
                rest.push(Vec3::new(-0.5 * w + ix as f64 * sx, scene.sheet_height, -0.5 * d + iz as f64 * sz));
                fixed.push(match scene.attachment_edge {
                    AttachmentEdge::XMin => ix == 0,
                    AttachmentEdge::XMax => ix == nx - 1,
                    AttachmentEdge::ZMin => iz == 0,
                    AttachmentEdge::ZMax => iz == nz - 1,
                });
            }
        }
        Self { nx, nz, particles: rest.clone(), rest_positions: rest, fixed_mask: fixed, grasped_particle: None, floor: scene.sheet_height }
    }

    /// A sheet with no particles. Only useful for exposure fixtures.
    pub fn empty() -> Self {
        Self {
            nx: 0,
            nz: 0,
            particles: Vec::new(),
            rest_positions: Vec::new(),
            fixed_mask: Vec::new(),
            grasped_particle: None,
            floor: f64::NEG_INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn index(&self, ix: usize, iz: usize) -> usize {
        iz * self.nx + ix
    }

    /// Grid-neighbour links in solver order (all x-links, then all z-links).
    pub fn links(&self) -> Vec<Link> {
        let mut links = Vec::with_capacity(2 * self.len());
        for iz in 0..self.nz {
            for ix in 0..self.nx.saturating_sub(1) {
                links.push(self.link(self.index(ix, iz), self.index(ix + 1, iz)));
            }
        }
        for iz in 0..self.nz.saturating_sub(1) {
            for ix in 0..self.nx {
                links.push(self.link(self.index(ix, iz), self.index(ix, iz + 1)));
            }
        }
        links
    }

    fn link(&self, a: usize, b: usize) -> Link {
        Link { a, b, rest: self.rest_positions[a].distance(self.rest_positions[b]) }
    }

    /// Two triangles per grid cell.
    pub fn triangles(&self) -> Vec<[usize; 3]> {
        let mut tris = Vec::with_capacity(2 * self.len());
        for iz in 0..self.nz.saturating_sub(1) {
            for ix in 0..self.nx.saturating_sub(1) {
                let a = self.index(ix, iz);
                let b = self.index(ix + 1, iz);
                let c = self.index(ix, iz + 1);
                let d = self.index(ix + 1, iz + 1);
                tris.push([a, b, d]);
                tris.push([a, d, c]);
            }
        }
        tris
    }

    /// Nearest free (non-anchored) particle within `radius` of `p`, lowest index on ties.
    pub fn nearest_free_particle(&self, p: Vec3, radius: f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, q) in self.particles.iter().enumerate() {
            if self.fixed_mask[i] {
                continue;
            }
            let d = q.distance(p);
            if d <= radius && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }

    /// Largest relative elongation `len / rest - 1` over all links.
    pub fn max_stretch(&self) -> f64 {
        self.links().iter().map(|l| self.particles[l.a].distance(self.particles[l.b]) / l.rest - 1.0).fold(0.0, f64::max)
    }

    fn inverse_mass(&self, i: usize) -> f64 {
        if self.fixed_mask[i] || self.grasped_particle == Some(i) {
            0.0
        } else {
            1.0
        }
    }
}

/// Relaxes the sheet around the grasp point.
///
/// The grasped particle (if any) is placed at `grasp_target` and held there;
/// anchored particles never move. Each iteration projects every link toward
/// its rest length and then lifts free particles back onto the floor plane.
pub fn solve_tissue(tissue: &TissueState, grasp_target: Vec3, iterations: usize) -> TissueState {
    assert!(iterations >= 1, "solve_tissue needs at least one iteration");
    let mut out = tissue.clone();
    if let Some(g) = out.grasped_particle {
        out.particles[g] = grasp_target;
    }
    let links = out.links();
    let inv: Vec<f64> = (0..out.len()).map(|i| out.inverse_mass(i)).collect();
    for _ in 0..iterations {
        for l in &links {
            let (wa, wb) = (inv[l.a], inv[l.b]);
            let wsum = wa + wb;
            if wsum == 0.0 {
                continue;
            }
            let delta = out.particles[l.b] - out.particles[l.a];
            let len = delta.norm();
            if len < 1e-12 || len == l.rest {
                continue;
            }
            let corr = delta * ((len - l.rest) / (len * wsum));
            out.particles[l.a] += corr * wa;
            out.particles[l.b] -= corr * wb;
        }
        for (i, p) in out.particles.iter_mut().enumerate() {
            if inv[i] > 0.0 && p.y < out.floor {
                p.y = out.floor;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sheet() -> TissueState {
        TissueState::from_scene(&SceneConfig::default())
    }

    #[test]
    fn rest_grid_layout() {
        let t = sheet();
        assert_eq!(t.len(), 81);
        assert_eq!(t.particles[0], Vec3::new(-40.0, 0.0, -40.0));
        assert_eq!(t.particles[80], Vec3::new(40.0, 0.0, 40.0));
        assert_eq!(t.fixed_mask.iter().filter(|f| **f).count(), 9);
        assert!(t.fixed_mask[t.index(0, 4)]);
        assert!(!t.fixed_mask[t.index(1, 4)]);
        assert_eq!(t.links().len(), 2 * 8 * 9);
        assert_eq!(t.triangles().len(), 2 * 64);
    }

    #[test]
    fn rest_sheet_is_a_fixed_point() {
        let t = sheet();
        let out = solve_tissue(&t, Vec3::new(5.0, 5.0, 5.0), 10);
        assert_eq!(out, t);
    }

    #[test]
    fn grasped_particle_follows_target_and_anchor_holds() {
        let mut t = sheet();
        let corner = t.index(8, 8);
        t.grasped_particle = Some(corner);
        let target = t.rest_positions[corner] + Vec3::new(0.0, 10.0, 0.0);
        let out = solve_tissue(&t, target, 10);
        assert_eq!(out.particles[corner], target);
        for i in 0..out.len() {
            if out.fixed_mask[i] {
                assert_eq!(out.particles[i], out.rest_positions[i]);
            }
        }
    }

    #[test]
    fn nearest_free_particle_skips_anchor() {
        let t = sheet();
        // Right on top of an anchored particle: nothing within 2 mm is free.
        assert_eq!(t.nearest_free_particle(Vec3::new(-40.0, 1.0, 0.0), 2.0), None);
        let i = t.nearest_free_particle(Vec3::new(10.5, 1.0, -0.5), 2.0).unwrap();
        assert_eq!(t.particles[i], Vec3::new(10.0, 0.0, 0.0));
    }
}
