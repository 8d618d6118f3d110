use crate::error::{Result, StmError};

pub use crate::healpix::Vec3;

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

/// Indexed triangle mesh with per-face unit normals (right-hand winding).
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    normals: Vec<Vec3>,
}

impl TriMesh {
    /// Validates indices and drops zero-area faces; returns the mesh and
    /// the number of faces dropped.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<(TriMesh, usize)> {
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(StmError::Domain("mesh has non-finite vertex coordinates".into()));
        }
        let nv = vertices.len();
        let mut kept = Vec::with_capacity(faces.len());
        let mut normals = Vec::with_capacity(faces.len());
        for (i, f) in faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&k| k as usize >= nv) {
                return Err(StmError::Index(format!("face {i} references vertex {bad} of {nv}")));
            }
            let [a, b, c] = f.map(|k| vertices[k as usize]);
            let n = cross(sub(b, a), sub(c, a));
            let len = norm(n);
            let longest = norm(sub(b, a)).max(norm(sub(c, a))).max(norm(sub(c, b)));
            if len <= 1e-12 * longest * longest || len == 0.0 {
                continue;
            }
            kept.push(*f);
            normals.push(scale(n, 1.0 / len));
        }
        let dropped = faces.len() - kept.len();
        Ok((TriMesh { vertices, faces: kept, normals }, dropped))
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        self.faces[f].map(|k| self.vertices[k as usize])
    }

    /// Maps every vertex through `f`; faces keep their indices.
    pub fn map_vertices(&self, f: impl Fn(Vec3) -> Vec3) -> Result<TriMesh> {
        let v = self.vertices.iter().map(|&p| f(p)).collect();
        Ok(TriMesh::new(v, self.faces.clone())?.0)
    }
}

/// Translates by minus the bounding-box centre, then scales so the largest
/// vertex norm is 1.
pub fn normalize_mesh(mesh: &TriMesh) -> Result<TriMesh> {
    let v = mesh.vertices();
    if v.len() < 3 {
        return Err(StmError::Degenerate(format!("mesh has {} vertices", v.len())));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in v {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let centre = scale(add(lo, hi), 0.5);
    let r = v.iter().map(|&p| norm(sub(p, centre))).fold(0.0, f64::max);
    if r <= 1e-300 {
        return Err(StmError::Degenerate("all vertices coincide".into()));
    }
    mesh.map_vertices(|p| scale(sub(p, centre), 1.0 / r))
}

/// Axis-aligned cube `[lo, hi]^3` as 12 outward-facing triangles.
pub fn cube_mesh(lo: f64, hi: f64) -> TriMesh {
    let v: Vec<Vec3> = (0..8)
        .map(|i| {
            let pick = |bit: usize| if i >> bit & 1 == 1 { hi } else { lo };
            [pick(0), pick(1), pick(2)]
        })
        .collect();
    // quads as (v0, v1, v2, v3) counter-clockwise seen from outside
    let quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
    let faces = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
    TriMesh::new(v, faces).expect("valid cube").0
}

/// Icosahedron subdivided `n` times and pushed onto the sphere of `radius`.
pub fn icosphere(subdivisions: u32, radius: f64) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|&p| normalize(p))
    .collect();
    let mut f: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid = std::collections::HashMap::new();
        let mut midpoint = |a: u32, b: u32, v: &mut Vec<Vec3>| -> u32 {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                v.push(normalize(scale(add(v[a as usize], v[b as usize]), 0.5)));
                (v.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(f.len() * 4);
        for &[a, b, c] in &f {
            let ab = midpoint(a, b, &mut v);
            let bc = midpoint(b, c, &mut v);
            let ca = midpoint(c, a, &mut v);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = next;
    }
    let v = v.into_iter().map(|p| scale(p, radius)).collect();
    TriMesh::new(v, f).expect("valid icosphere").0
}

/// Torus around the z axis, `nu` segments around the axis and `nv` around the tube.
pub fn torus_mesh(major: f64, minor: f64, nu: usize, nv: usize) -> TriMesh {
    use std::f64::consts::TAU;
    let mut v = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let a = TAU * i as f64 / nu as f64;
        for j in 0..nv {
            let b = TAU * j as f64 / nv as f64;
            let r = major + minor * b.cos();
            v.push([r * a.cos(), r * a.sin(), minor * b.sin()]);
        }
    }
    let id = |i: usize, j: usize| ((i % nu) * nv + j % nv) as u32;
    let mut f = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            f.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            f.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    TriMesh::new(v, f).expect("valid torus").0
}

/// L-shaped prism: the hexagon (0,0) (2,0) (2,1) (1,1) (1,2) (0,2) extruded
/// over z in [0, 1]. Not convex.
pub fn l_bracket_mesh() -> TriMesh {
    let outline = [[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 1.0], [1.0, 2.0], [0.0, 2.0]];
    let mut v: Vec<Vec3> = outline.iter().map(|p| [p[0], p[1], 0.0]).collect();
    v.extend(outline.iter().map(|p| [p[0], p[1], 1.0]));
    // fan from the reflex corner (1, 1), index 3
    let cap = [[3, 4, 5], [3, 5, 0], [3, 0, 1], [3, 1, 2]];
    let mut f: Vec<[u32; 3]> = Vec::new();
    for t in cap {
        f.push([t[0], t[2], t[1]]);
        f.push([t[0] + 6, t[1] + 6, t[2] + 6]);
    }
    for i in 0..6u32 {
        let j = (i + 1) % 6;
        f.push([i, j, j + 6]);
        f.push([i, j + 6, i + 6]);
    }
    TriMesh::new(v, f).expect("valid bracket").0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_cube_normalises_to_half_width_inv_sqrt3() {
        let m = normalize_mesh(&cube_mesh(0.0, 1.0)).unwrap();
        let h = 1.0 / 3f64.sqrt();
        for p in m.vertices() {
            assert!((norm(*p) - 1.0).abs() < 1e-12);
            for c in p {
                assert!((c.abs() - h).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalisation_is_idempotent() {
        let once = normalize_mesh(&icosphere(1, 2.5)).unwrap();
        let twice = normalize_mesh(&once).unwrap();
        for (a, b) in once.vertices().iter().zip(twice.vertices()) {
            assert!(norm(sub(*a, *b)) < 1e-12);
        }
    }

    #[test]
    fn coincident_vertices_are_degenerate() {
        let (m, dropped) = TriMesh::new(vec![[1.0, 2.0, 3.0]; 4], vec![[0, 1, 2]]).unwrap();
        assert_eq!(dropped, 1);
        assert!(matches!(normalize_mesh(&m), Err(StmError::Degenerate(_))));
    }

    #[test]
    fn cube_normals_point_outward() {
        let m = cube_mesh(-1.0, 1.0);
        assert_eq!(m.faces().len(), 12);
        for f in 0..12 {
            let t = m.triangle(f);
            let c = scale(add(add(t[0], t[1]), t[2]), 1.0 / 3.0);
            assert!(dot(m.normals()[f], c) > 0.0);
        }
    }

    #[test]
    fn icosphere_counts_and_outward_normals() {
        let m = icosphere(2, 1.0);
        assert_eq!(m.faces().len(), 20 * 16);
        assert_eq!(m.vertices().len(), 162);
        for f in 0..m.faces().len() {
            let t = m.triangle(f);
            assert!(dot(m.normals()[f], t[0]) > 0.0);
        }
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        assert!(matches!(TriMesh::new(vec![[0.0; 3]; 3], vec![[0, 1, 3]]), Err(StmError::Index(_))));
    }
}
