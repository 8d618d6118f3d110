//! Ray casting from HEALPix pixel centres toward the origin.

use rayon::prelude::*;

use super::mesh::{cross, dot, sub, TriMesh, Vec3};
use crate::error::Result;
use crate::healpix::{GridLevel, Level};
use crate::transformer::SphericalSignal;

/// Determinant threshold below which a ray counts as parallel to a triangle.
pub const PARALLEL_EPS: f64 = 1e-9;
/// Longest ray: a chord of the unit sphere.
pub const MAX_T: f64 = 2.0;
/// Channel values for a ray that hits nothing.
pub const MISS: [f64; 3] = [2.0, 0.0, 0.0];
/// Barycentric slack so rays through a shared vertex or edge do not slip
/// between the adjacent triangles.
const EDGE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub face: usize,
    pub point: Vec3,
}

/// Determinant-based ray/triangle test. Returns `t` for hits with `t > 0`.
#[inline]
pub fn intersect_triangle(o: Vec3, d: Vec3, tri: &[Vec3; 3]) -> Option<f64> {
    let e1 = sub(tri[1], tri[0]);
    let e2 = sub(tri[2], tri[0]);
    let p = cross(d, e2);
    let det = dot(e1, p);
    if det.abs() < PARALLEL_EPS {
        return None;
    }
    let inv = 1.0 / det;
    let s = sub(o, tri[0]);
    let u = dot(s, p) * inv;
    if !(-EDGE_EPS..=1.0 + EDGE_EPS).contains(&u) {
        return None;
    }
    let q = cross(s, e1);
    let v = dot(d, q) * inv;
    if v < -EDGE_EPS || u + v > 1.0 + EDGE_EPS {
        return None;
    }
    let t = dot(e2, q) * inv;
    (t > 0.0).then_some(t)
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Aabb { lo: [f64::INFINITY; 3], hi: [f64::NEG_INFINITY; 3] }
    }

    fn grow(&mut self, p: Vec3) {
        for k in 0..3 {
            self.lo[k] = self.lo[k].min(p[k]);
            self.hi[k] = self.hi[k].max(p[k]);
        }
    }

    /// Entry distance of the ray into the box, if it enters before `t_max`.
    fn enter(&self, o: Vec3, inv_d: Vec3, t_max: f64) -> Option<f64> {
        let (mut t0, mut t1) = (0.0f64, t_max);
        for k in 0..3 {
            if inv_d[k].is_infinite() {
                if o[k] < self.lo[k] || o[k] > self.hi[k] {
                    return None;
                }
                continue;
            }
            let a = (self.lo[k] - o[k]) * inv_d[k];
            let b = (self.hi[k] - o[k]) * inv_d[k];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone)]
enum BvhNode {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

/// Bounding-volume hierarchy over a mesh's triangles.
#[derive(Debug, Clone)]
pub struct Bvh<'m> {
    mesh: &'m TriMesh,
    order: Vec<usize>,
    nodes: Vec<BvhNode>,
}

const LEAF_SIZE: usize = 4;
const BOX_PAD: f64 = 1e-9;

impl<'m> Bvh<'m> {
    pub fn new(mesh: &'m TriMesh) -> Self {
        let n = mesh.faces().len();
        let mut order: Vec<usize> = (0..n).collect();
        let centroids: Vec<Vec3> = (0..n)
            .map(|f| {
                let t = mesh.triangle(f);
                [0, 1, 2].map(|k| (t[0][k] + t[1][k] + t[2][k]) / 3.0)
            })
            .collect();
        let mut nodes = Vec::with_capacity(2 * n / LEAF_SIZE + 1);
        if n > 0 {
            Self::build(mesh, &centroids, &mut order, 0, n, &mut nodes);
        }
        Bvh { mesh, order, nodes }
    }

    fn build(
        mesh: &TriMesh,
        centroids: &[Vec3],
        order: &mut [usize],
        start: usize,
        end: usize,
        nodes: &mut Vec<BvhNode>,
    ) -> usize {
        let mut bounds = Aabb::empty();
        let mut cbox = Aabb::empty();
        for &f in &order[start..end] {
            for p in mesh.triangle(f) {
                bounds.grow(p);
            }
            cbox.grow(centroids[f]);
        }
        // padding keeps flat boxes from rejecting hits on their own plane
        for k in 0..3 {
            bounds.lo[k] -= BOX_PAD;
            bounds.hi[k] += BOX_PAD;
        }
        let id = nodes.len();
        if end - start <= LEAF_SIZE {
            nodes.push(BvhNode::Leaf { bounds, start, end });
            return id;
        }
        let ext = sub(cbox.hi, cbox.lo);
        let axis = if ext[0] >= ext[1] && ext[0] >= ext[2] {
            0
        } else if ext[1] >= ext[2] {
            1
        } else {
            2
        };
        let mid = (start + end) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b))
        });
        nodes.push(BvhNode::Leaf { bounds, start, end }); // placeholder
        let left = Self::build(mesh, centroids, order, start, mid, nodes);
        let right = Self::build(mesh, centroids, order, mid, end, nodes);
        nodes[id] = BvhNode::Inner { bounds, left, right };
        id
    }

    /// Nearest hit with `0 < t <= t_max`; equal `t` resolves to the lowest face index.
    pub fn cast(&self, o: Vec3, d: Vec3, t_max: f64) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv_d = d.map(|c| 1.0 / c);
        let mut best: Option<(f64, usize)> = None;
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let limit = best.map_or(t_max, |b| b.0);
            match &self.nodes[i] {
                BvhNode::Leaf { bounds, start, end } => {
                    if bounds.enter(o, inv_d, limit).is_none() {
                        continue;
                    }
                    for &f in &self.order[*start..*end] {
                        if let Some(t) = intersect_triangle(o, d, &self.mesh.triangle(f)) {
                            let better = match best {
                                None => t <= t_max,
                                Some((bt, bf)) => t < bt || (t == bt && f < bf),
                            };
                            if better {
                                best = Some((t, f));
                            }
                        }
                    }
                }
                BvhNode::Inner { bounds, left, right } => {
                    if bounds.enter(o, inv_d, limit).is_some() {
                        stack.push(*right);
                        stack.push(*left);
                    }
                }
            }
        }
        best.map(|(t, face)| Hit { t, face, point: [0, 1, 2].map(|k| o[k] + t * d[k]) })
    }
}

/// Per-pixel rays and their hits at one level.
#[derive(Debug, Clone)]
pub struct DepthCast {
    /// Channels `(t, sin, cos)`; misses hold [`MISS`].
    pub signal: SphericalSignal<f64>,
    pub hits: Vec<Option<Hit>>,
}

/// Casts a ray from each pixel centre `o` along `-o` and records the
/// distance to the first surface and the angle between surface normal and ray.
pub fn raycast_depth(mesh: &TriMesh, level: Level) -> Result<DepthCast> {
    let grid = GridLevel::cached(level);
    let bvh = Bvh::new(mesh);
    let hits: Vec<Option<Hit>> = grid
        .centers()
        .par_iter()
        .map(|&o| bvh.cast(o, o.map(|c| -c), MAX_T))
        .collect();
    let mut data = Vec::with_capacity(hits.len() * 3);
    for (h, o) in hits.iter().zip(grid.centers()) {
        match h {
            Some(h) => {
                let cos = dot(mesh.normals()[h.face], *o).abs().min(1.0);
                let sin = (1.0 - cos * cos).max(0.0).sqrt();
                data.extend([h.t, sin, cos]);
            }
            None => data.extend(MISS),
        }
    }
    Ok(DepthCast { signal: SphericalSignal::new(level, 3, data)?, hits })
}
