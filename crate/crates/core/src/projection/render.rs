//! Lambert-shaded z-buffer renders from one camera per HEALPix base region,
//! and their re-projection onto the sphere.

use rayon::prelude::*;

use super::mesh::{cross, dot, norm, normalize, scale, sub, TriMesh, Vec3};
use super::raycast::DepthCast;
use crate::error::{Result, StmError};
use crate::healpix::{pix_corners, GridLevel, Level};
use crate::transformer::SphericalSignal;

pub const LIGHT_DISTANCE: f64 = 2.0;
/// Camera-depth tolerance for accepting a render pixel as the same surface.
pub const DEPTH_TOLERANCE: f64 = 1e-2;
/// Two render taps belong to the same surface patch only if their normals
/// agree to within this cosine.
pub const NORMAL_AGREEMENT: f64 = 0.999;
pub const MIN_RESOLUTION: usize = 16;

pub fn lights() -> [Vec3; 6] {
    let d = LIGHT_DISTANCE;
    [[d, 0.0, 0.0], [-d, 0.0, 0.0], [0.0, d, 0.0], [0.0, -d, 0.0], [0.0, 0.0, d], [0.0, 0.0, -d]]
}

/// Sum over the six point lights of `max(0, n . l)`, divided by 6 and
/// clamped to `[0, 1]`; `l` is the unit vector from `x` to the light.
pub fn lambert(x: Vec3, n: Vec3) -> f64 {
    let s: f64 = lights()
        .iter()
        .map(|&l| {
            let to = sub(l, x);
            dot(n, to).max(0.0) / norm(to)
        })
        .sum();
    (s / 6.0).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub forward: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    /// Vertical field of view in degrees.
    pub fov_deg: f64,
}

impl Camera {
    pub fn look_at(position: Vec3, target: Vec3, up_hint: Vec3, fov_deg: f64) -> Result<Camera> {
        let forward = normalize(sub(target, position));
        let r = cross(forward, up_hint);
        if !(norm(r) > 1e-9) {
            return Err(StmError::Degenerate("camera up hint is parallel to the view direction".into()));
        }
        let right = normalize(r);
        let up = cross(right, forward);
        Ok(Camera { position, forward, right, up, fov_deg })
    }

    fn focal(&self, res: usize) -> f64 {
        res as f64 / 2.0 / (self.fov_deg.to_radians() / 2.0).tan()
    }

    /// Continuous image coordinates `(col, row)` and camera depth of `x`.
    /// Pixel `(i, j)` has its centre at `(i + 0.5, j + 0.5)`.
    pub fn project(&self, x: Vec3, res: usize) -> (f64, f64, f64) {
        let q = sub(x, self.position);
        let z = dot(q, self.forward);
        let f = self.focal(res);
        let h = res as f64 / 2.0;
        (h + f * dot(q, self.right) / z, h - f * dot(q, self.up) / z, z)
    }

    /// Unit direction of the ray through image point `(col, row)`.
    pub fn ray(&self, col: f64, row: f64, res: usize) -> Vec3 {
        let f = self.focal(res);
        let h = res as f64 / 2.0;
        let d = [0, 1, 2].map(|k| self.forward[k] * f + self.right[k] * (col - h) - self.up[k] * (row - h));
        normalize(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub resolution: usize,
    pub distance: f64,
    pub fov_deg: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig { resolution: 128, distance: 3.0, fov_deg: 40.0 }
    }
}

#[derive(Debug, Clone)]
pub struct View {
    pub camera: Camera,
    pub resolution: usize,
    /// Row-major gray values; background is exactly 0.
    pub gray: Vec<f32>,
    /// Camera depth per pixel, `INFINITY` for background.
    pub depth: Vec<f64>,
    /// Visible face per pixel.
    pub face: Vec<u32>,
}

impl View {
    pub fn is_background(&self, i: usize) -> bool {
        self.depth[i] == f64::INFINITY
    }
}

#[derive(Debug, Clone)]
pub struct RenderSet {
    pub views: Vec<View>,
}

/// Viewing direction of base region `r`: the normalised mean of its corners.
pub fn region_direction(r: usize) -> Vec3 {
    let corners = pix_corners(Level::new(0).unwrap(), r).expect("base pixel");
    let mut s = [0.0; 3];
    for c in corners {
        for k in 0..3 {
            s[k] += c[k];
        }
    }
    normalize(s)
}

pub fn region_camera(r: usize, cfg: &RenderConfig) -> Camera {
    let dir = region_direction(r);
    Camera::look_at(scale(dir, cfg.distance), [0.0; 3], [0.0, 0.0, 1.0], cfg.fov_deg)
        .expect("no base region looks along the z axis")
}

/// Rasterises `mesh` with a z-buffer. Triangles are two-sided; the shading
/// normal is the face normal turned toward the camera and the shaded point
/// is where the pixel ray meets the triangle's plane.
pub fn render_view(mesh: &TriMesh, camera: Camera, res: usize) -> Result<View> {
    if res < MIN_RESOLUTION {
        return Err(StmError::Config(format!("render resolution {res} is below {MIN_RESOLUTION}")));
    }
    let n = res * res;
    let mut depth = vec![f64::INFINITY; n];
    let mut face = vec![u32::MAX; n];
    for (f, tri) in mesh.faces().iter().enumerate() {
        let p = tri.map(|k| camera.project(mesh.vertices()[k as usize], res));
        if p.iter().any(|q| !(q.2 > 1e-9)) {
            continue; // behind or at the camera; cannot happen for meshes inside the unit ball
        }
        let area = (p[1].0 - p[0].0) * (p[2].1 - p[0].1) - (p[2].0 - p[0].0) * (p[1].1 - p[0].1);
        if area.abs() < 1e-12 {
            continue; // seen edge-on
        }
        let lo_c = p.iter().map(|q| q.0).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let hi_c = (p.iter().map(|q| q.0).fold(f64::NEG_INFINITY, f64::max).ceil().min(res as f64)) as usize;
        let lo_r = p.iter().map(|q| q.1).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let hi_r = (p.iter().map(|q| q.1).fold(f64::NEG_INFINITY, f64::max).ceil().min(res as f64)) as usize;
        for row in lo_r..hi_r {
            for col in lo_c..hi_c {
                let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
                let w0 = ((p[1].0 - x) * (p[2].1 - y) - (p[2].0 - x) * (p[1].1 - y)) / area;
                let w1 = ((p[2].0 - x) * (p[0].1 - y) - (p[0].0 - x) * (p[2].1 - y)) / area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                // depth is affine in 1/z across the screen
                let z = 1.0 / (w0 / p[0].2 + w1 / p[1].2 + w2 / p[2].2);
                let i = row * res + col;
                if z < depth[i] {
                    depth[i] = z;
                    face[i] = f as u32;
                }
            }
        }
    }
    let gray = (0..n)
        .map(|i| {
            if face[i] == u32::MAX {
                return 0.0;
            }
            let f = face[i] as usize;
            let nrm = mesh.normals()[f];
            let d = camera.ray((i % res) as f64 + 0.5, (i / res) as f64 + 0.5, res);
            let a = mesh.vertices()[mesh.faces()[f][0] as usize];
            let denom = dot(nrm, d);
            let t = dot(nrm, sub(a, camera.position)) / denom;
            let x = [0, 1, 2].map(|k| camera.position[k] + t * d[k]);
            let facing = if denom < 0.0 { nrm } else { scale(nrm, -1.0) };
            lambert(x, facing) as f32
        })
        .collect();
    Ok(View { camera, resolution: res, gray, depth, face })
}

/// One render per base region, each camera on the region's axis looking at the origin.
pub fn render_views(mesh: &TriMesh, cfg: &RenderConfig) -> Result<RenderSet> {
    if cfg.resolution < MIN_RESOLUTION {
        return Err(StmError::Config(format!("render resolution {} is below {MIN_RESOLUTION}", cfg.resolution)));
    }
    let views = (0..12)
        .into_par_iter()
        .map(|r| render_view(mesh, region_camera(r, cfg), cfg.resolution))
        .collect::<Result<Vec<_>>>()?;
    Ok(RenderSet { views })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProjectionStats {
    pub hits: usize,
    pub misses: usize,
    /// Hit pixels shaded directly because no render tap matched.
    pub fallbacks: usize,
}

/// Camera-facing copy of a face normal.
fn facing(n: Vec3, x: Vec3, cam: &Camera) -> Vec3 {
    if dot(n, sub(cam.position, x)) >= 0.0 {
        n
    } else {
        scale(n, -1.0)
    }
}

/// Gray value per pixel from the render of the pixel's base region. The
/// hit point is projected into that render and sampled bilinearly over the
/// taps that show the same surface (rendered depth within [`DEPTH_TOLERANCE`]
/// of the hit plane along the tap's ray, normal within [`NORMAL_AGREEMENT`]), with weights
/// renormalised. With no such tap the hit point is shaded directly.
pub fn render_projection(
    mesh: &TriMesh,
    cast: &DepthCast,
    renders: &RenderSet,
) -> Result<(SphericalSignal<f64>, ProjectionStats)> {
    let level = cast.signal.level();
    if renders.views.len() != 12 {
        return Err(StmError::contract(format!("expected 12 views, got {}", renders.views.len())));
    }
    let res = renders.views[0].resolution;
    if renders.views.iter().any(|v| v.resolution != res || v.gray.len() != res * res) {
        return Err(StmError::contract("views differ in resolution"));
    }
    let grid = GridLevel::cached(level);
    let mut stats = ProjectionStats::default();
    let mut out = vec![0.0; level.n_pixels()];
    for (p, hit) in cast.hits.iter().enumerate() {
        let Some(hit) = hit else {
            stats.misses += 1;
            continue;
        };
        stats.hits += 1;
        let view = &renders.views[grid.base_region(p)];
        let cam = &view.camera;
        let n_hit = mesh.normals()[hit.face];
        let (u, v, _) = cam.project(hit.point, res);
        let (cu, cv) = (u - 0.5, v - 0.5);
        let (c0, r0) = (cu.floor(), cv.floor());
        let (fu, fv) = (cu - c0, cv - r0);
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for (dc, dr, w) in [(0, 0, (1.0 - fu) * (1.0 - fv)), (1, 0, fu * (1.0 - fv)), (0, 1, (1.0 - fu) * fv), (1, 1, fu * fv)] {
            let (c, r) = (c0 as i64 + dc, r0 as i64 + dr);
            if w == 0.0 || c < 0 || r < 0 || c >= res as i64 || r >= res as i64 {
                continue;
            }
            let i = r as usize * res + c as usize;
            if view.is_background(i) {
                continue;
            }
            // depth the hit surface would have at this tap's centre
            let d = cam.ray(c as f64 + 0.5, r as f64 + 0.5, res);
            let denom = dot(n_hit, d);
            if denom.abs() < 1e-9 {
                continue;
            }
            let z_tap = dot(n_hit, sub(hit.point, cam.position)) / denom * dot(d, cam.forward);
            if (view.depth[i] - z_tap).abs() > DEPTH_TOLERANCE {
                continue;
            }
            if dot(mesh.normals()[view.face[i] as usize], n_hit).abs() < NORMAL_AGREEMENT {
                continue;
            }
            acc += w * view.gray[i] as f64;
            wsum += w;
        }
        out[p] = if wsum > 0.0 {
            acc / wsum
        } else {
            stats.fallbacks += 1;
            lambert(hit.point, facing(n_hit, hit.point, cam))
        };
    }
    Ok((SphericalSignal::new(level, 1, out)?, stats))
}

/// Direct Lambert shading of every hit point, as seen from its region's camera.
pub fn direct_shading(mesh: &TriMesh, cast: &DepthCast, cfg: &RenderConfig) -> SphericalSignal<f64> {
    let level = cast.signal.level();
    let grid = GridLevel::cached(level);
    SphericalSignal::from_fn(level, 1, |p, _| match &cast.hits[p] {
        Some(h) => {
            let cam = region_camera(grid.base_region(p), cfg);
            lambert(h.point, facing(mesh.normals()[h.face], h.point, &cam))
        }
        None => 0.0,
    })
}
