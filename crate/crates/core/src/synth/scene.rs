//! Fronto-parallel layered scenes and exact multi-layer ray casting.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::depth_map::{DepthUnits, MultiLayerDepthMap};
use crate::error::{Error, Result};

/// Pinhole camera looking down +z. Pixel `(u, v)` is sampled at its center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Camera {
    /// Principal point at the image center.
    pub fn centered(width: usize, height: usize, focal: f64) -> Self {
        Self {
            width,
            height,
            focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        }
    }

    /// Point where the ray through pixel `(u, v)` meets the plane at depth `z`.
    pub fn intersect(&self, u: usize, v: usize, z: f64) -> (f64, f64) {
        (
            z * (u as f64 + 0.5 - self.cx) / self.focal,
            z * (v as f64 + 0.5 - self.cy) / self.focal,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    /// Infinite plane.
    Full,
    /// Half-open world-space rectangle `[x0, x1) x [y0, y1)` on the surface plane.
    Rect { x0: f64, x1: f64, y0: f64, y1: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub id: u32,
    pub z: f64,
    pub geometry: Geometry,
    pub transparent: bool,
    #[serde(default)]
    pub feature: Vec<f64>,
}

impl Surface {
    /// Rectangle covering exactly the pixels `px0..px1` by `py0..py1` as seen from `camera`.
    pub fn pixel_rect(camera: &Camera, id: u32, z: f64, px: (usize, usize), py: (usize, usize), transparent: bool) -> Self {
        let to_world = |p: usize, c: f64| z * (p as f64 - c) / camera.focal;
        Self {
            id,
            z,
            geometry: Geometry::Rect {
                x0: to_world(px.0, camera.cx),
                x1: to_world(px.1, camera.cx),
                y0: to_world(py.0, camera.cy),
                y1: to_world(py.1, camera.cy),
            },
            transparent,
            feature: Vec::new(),
        }
    }

    pub fn hit(&self, camera: &Camera, u: usize, v: usize) -> bool {
        match self.geometry {
            Geometry::Full => true,
            Geometry::Rect { x0, x1, y0, y1 } => {
                let (x, y) = camera.intersect(u, v, self.z);
                x0 <= x && x < x1 && y0 <= y && y < y1
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub camera: Camera,
    pub surfaces: Vec<Surface>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        let c = &self.camera;
        if c.width == 0 || c.height == 0 || !(c.focal > 0.0) {
            return Err(Error::invalid("camera needs a positive image size and focal length"));
        }
        for s in &self.surfaces {
            if !(s.z > 0.0) || !s.z.is_finite() {
                return Err(Error::invalid(format!("surface {} has non-positive depth {}", s.id, s.z)));
            }
            if s.feature.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("surface {} has a non-finite feature", s.id)));
            }
        }
        Ok(())
    }

    /// Surfaces on the ray through `(u, v)`, nearest first, up to and
    /// including the first opaque one.
    pub fn ray_hits(&self, u: usize, v: usize) -> Vec<&Surface> {
        let mut hits: Vec<&Surface> = self.surfaces.iter().filter(|s| s.hit(&self.camera, u, v)).collect();
        hits.sort_by(|a, b| a.z.total_cmp(&b.z).then(a.id.cmp(&b.id)));
        if let Some(k) = hits.iter().position(|s| !s.transparent) {
            hits.truncate(k + 1);
        }
        hits
    }

    pub fn feature_dim(&self) -> usize {
        self.surfaces.iter().map(|s| s.feature.len()).max().unwrap_or(0)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let scene: Scene = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// Per-pixel z-depths of every surface hit, truncated at the first opaque one.
/// Coincident surfaces contribute a single layer.
pub fn raycast_multilayer(scene: &Scene) -> Result<MultiLayerDepthMap> {
    scene.validate()?;
    let (w, h) = (scene.camera.width, scene.camera.height);
    let pixels: Vec<Vec<f64>> = (0..w * h)
        .into_par_iter()
        .map(|p| {
            let mut depths: Vec<f64> = scene.ray_hits(p % w, p / w).iter().map(|s| s.z).collect();
            depths.dedup();
            depths
        })
        .collect();
    MultiLayerDepthMap::from_pixels(h, w, DepthUnits::Raw, pixels)
}

/// Layout of the two-transparent-planes scene. Rectangles are given in
/// pixel coordinates `(start, end)`, end exclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverlapParams {
    pub size: usize,
    pub focal: f64,
    pub front_x: (usize, usize),
    pub front_y: (usize, usize),
    pub front_z: f64,
    pub rear_x: (usize, usize),
    pub rear_y: (usize, usize),
    pub rear_z: f64,
    /// Background is split at this column into two opaque panels.
    pub background_split: usize,
    pub background_z: (f64, f64),
    pub feature_dim: usize,
    /// Seed for the per-surface feature vectors.
    pub feature_seed: u64,
}

impl Default for OverlapParams {
    fn default() -> Self {
        Self {
            size: 64,
            focal: 64.0,
            front_x: (6, 30),
            front_y: (6, 38),
            front_z: 1.5,
            rear_x: (18, 40),
            rear_y: (20, 56),
            rear_z: 2.5,
            background_split: 44,
            background_z: (4.0, 5.5),
            feature_dim: 16,
            feature_seed: 0,
        }
    }
}

fn span_len(a: (usize, usize)) -> usize {
    a.1.saturating_sub(a.0)
}

fn overlap(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    (a.0.max(b.0), a.1.min(b.1))
}

impl OverlapParams {
    /// Pixel counts of the `(1, 2, 3)`-layer regions, from rectangle areas alone.
    pub fn region_areas(&self) -> (usize, usize, usize) {
        let front = span_len(self.front_x) * span_len(self.front_y);
        let rear = span_len(self.rear_x) * span_len(self.rear_y);
        let both = span_len(overlap(self.front_x, self.rear_x)) * span_len(overlap(self.front_y, self.rear_y));
        let total = self.size * self.size;
        (total - front - rear + both, front + rear - 2 * both, both)
    }
}

/// Two partially overlapping transparent rectangles in front of an opaque background.
pub fn scene_overlapping_planes(params: &OverlapParams) -> Result<Scene> {
    let p = params;
    let in_image = |r: (usize, usize)| r.0 < r.1 && r.1 <= p.size;
    if ![p.front_x, p.front_y, p.rear_x, p.rear_y].into_iter().all(in_image) {
        return Err(Error::invalid("plane rectangles must be nonempty and inside the image"));
    }
    if span_len(overlap(p.front_x, p.rear_x)) == 0 || span_len(overlap(p.front_y, p.rear_y)) == 0 {
        return Err(Error::invalid("the two planes do not overlap"));
    }
    let (bg_a, bg_b) = p.background_z;
    if !(0.0 < p.front_z && p.front_z < p.rear_z && p.rear_z < bg_a.min(bg_b)) {
        return Err(Error::invalid("need 0 < front_z < rear_z < background depth"));
    }
    if p.background_split > p.size {
        return Err(Error::invalid("background split lies outside the image"));
    }
    let camera = Camera::centered(p.size, p.size, p.focal);
    let full = (0, p.size);
    let mut surfaces = vec![
        Surface::pixel_rect(&camera, 0, p.front_z, p.front_x, p.front_y, true),
        Surface::pixel_rect(&camera, 1, p.rear_z, p.rear_x, p.rear_y, true),
        Surface::pixel_rect(&camera, 2, bg_a, (0, p.background_split), full, false),
        Surface::pixel_rect(&camera, 3, bg_b, (p.background_split, p.size), full, false),
    ];
    surfaces.retain(|s| !matches!(s.geometry, Geometry::Rect { x0, x1, .. } if x0 >= x1));
    let mut rng = ChaCha8Rng::seed_from_u64(p.feature_seed);
    for s in &mut surfaces {
        s.feature = (0..p.feature_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    }
    Ok(Scene { camera, surfaces })
}
