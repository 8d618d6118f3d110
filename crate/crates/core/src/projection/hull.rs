//! Incremental 3D convex hull.

use std::collections::{HashMap, HashSet};

use super::mesh::{cross, dot, norm, sub, TriMesh, Vec3};
use crate::error::{Result, StmError};

struct Face {
    v: [usize; 3],
    n: Vec3,
    off: f64,
}

impl Face {
    fn new(pts: &[Vec3], v: [usize; 3]) -> Face {
        let n = cross(sub(pts[v[1]], pts[v[0]]), sub(pts[v[2]], pts[v[0]]));
        let len = norm(n);
        let n = n.map(|c| c / len);
        Face { v, n, off: dot(n, pts[v[0]]) }
    }

    fn dist(&self, p: Vec3) -> f64 {
        dot(self.n, p) - self.off
    }
}

/// Convex hull of `points` as an outward-facing triangle mesh holding only
/// the hull vertices. Coplanar or coincident inputs are rejected.
pub fn convex_hull(points: &[Vec3]) -> Result<TriMesh> {
    if points.len() < 4 {
        return Err(StmError::Degenerate(format!("convex hull needs 4 points, got {}", points.len())));
    }
    if points.iter().flatten().any(|c| !c.is_finite()) {
        return Err(StmError::Domain("non-finite point".into()));
    }
    let scale = points.iter().map(|&p| norm(p)).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let eps = 1e-10 * scale;

    // initial tetrahedron from extreme points
    let i0 = (0..points.len()).min_by(|&a, &b| points[a][0].total_cmp(&points[b][0])).unwrap();
    let far = |score: &dyn Fn(Vec3) -> f64| {
        (0..points.len()).max_by(|&a, &b| score(points[a]).total_cmp(&score(points[b]))).unwrap()
    };
    let i1 = far(&|p| norm(sub(p, points[i0])));
    let e = sub(points[i1], points[i0]);
    if norm(e) <= eps {
        return Err(StmError::Degenerate("all points coincide".into()));
    }
    let i2 = far(&|p| norm(cross(e, sub(p, points[i0]))) / norm(e));
    let plane = cross(e, sub(points[i2], points[i0]));
    if norm(plane) / norm(e) <= eps {
        return Err(StmError::Degenerate("all points are collinear".into()));
    }
    let i3 = far(&|p| (dot(plane, sub(p, points[i0])) / norm(plane)).abs());
    if (dot(plane, sub(points[i3], points[i0])) / norm(plane)).abs() <= eps {
        return Err(StmError::Degenerate("all points are coplanar".into()));
    }

    let inside = [0, 1, 2].map(|k| (points[i0][k] + points[i1][k] + points[i2][k] + points[i3][k]) / 4.0);
    let oriented = |v: [usize; 3]| {
        let f = Face::new(points, v);
        if f.dist(inside) > 0.0 {
            Face::new(points, [v[0], v[2], v[1]])
        } else {
            f
        }
    };
    let mut faces: Vec<Option<Face>> =
        vec![[i0, i1, i2], [i0, i1, i3], [i0, i2, i3], [i1, i2, i3]].into_iter().map(|v| Some(oriented(v))).collect();

    let seed: HashSet<usize> = [i0, i1, i2, i3].into();
    for (p, &pt) in points.iter().enumerate() {
        if seed.contains(&p) {
            continue;
        }
        let visible: Vec<usize> = faces
            .iter()
            .enumerate()
            .filter_map(|(i, f)| f.as_ref().filter(|f| f.dist(pt) > eps).map(|_| i))
            .collect();
        if visible.is_empty() {
            continue;
        }
        // directed edges of the visible region; an edge whose reverse is
        // not also visible lies on the horizon
        let mut edges: HashMap<(usize, usize), ()> = HashMap::new();
        for &i in &visible {
            let v = faces[i].as_ref().unwrap().v;
            for k in 0..3 {
                edges.insert((v[k], v[(k + 1) % 3]), ());
            }
        }
        let mut horizon: Vec<(usize, usize)> =
            edges.keys().filter(|&&(a, b)| !edges.contains_key(&(b, a))).copied().collect();
        horizon.sort_unstable();
        for &i in &visible {
            faces[i] = None;
        }
        for (a, b) in horizon {
            faces.push(Some(Face::new(points, [a, b, p])));
        }
    }

    let mut remap = HashMap::new();
    let mut verts = Vec::new();
    let mut tris = Vec::new();
    for f in faces.into_iter().flatten() {
        let t = f.v.map(|k| {
            *remap.entry(k).or_insert_with(|| {
                verts.push(points[k]);
                (verts.len() - 1) as u32
            })
        });
        tris.push(t);
    }
    Ok(TriMesh::new(verts, tris)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::mesh::cube_mesh;

    #[test]
    fn cube_corners() {
        let cube = cube_mesh(-1.0, 1.0);
        let h = convex_hull(cube.vertices()).unwrap();
        assert_eq!(h.vertices().len(), 8);
        assert_eq!(h.faces().len(), 12);
    }

    #[test]
    fn interior_point_is_dropped() {
        let mut pts = cube_mesh(-1.0, 1.0).vertices().to_vec();
        pts.push([0.1, -0.2, 0.3]);
        let h = convex_hull(&pts).unwrap();
        assert_eq!(h.vertices().len(), 8);
        assert!(!h.vertices().contains(&[0.1, -0.2, 0.3]));
    }

    #[test]
    fn degenerate_inputs() {
        assert!(convex_hull(&[[0.0; 3]; 5]).is_err());
        let flat: Vec<Vec3> = (0..10).map(|i| [i as f64, (i * i) as f64, 0.0]).collect();
        assert!(matches!(convex_hull(&flat), Err(StmError::Degenerate(_))));
        let line: Vec<Vec3> = (0..10).map(|i| [i as f64; 3]).collect();
        assert!(convex_hull(&line).is_err());
    }
}
