//! Spherical signals from meshes, panoramas and planar digits.

pub mod digit;
pub mod equirect;
pub mod hull;
pub mod mesh;
pub mod raycast;
pub mod render;

pub use digit::project_digit;
pub use equirect::{equirect_resample, EquirectImage, Sampling};
pub use hull::convex_hull;
pub use mesh::{cube_mesh, icosphere, l_bracket_mesh, normalize_mesh, torus_mesh, TriMesh};
pub use raycast::{raycast_depth, Bvh, DepthCast, Hit, MISS};
pub use render::{render_projection, render_view, render_views, Camera, RenderConfig, RenderSet, View};

use crate::error::Result;
use crate::healpix::Level;
use crate::transformer::SphericalSignal;

/// Model `(t, sin, cos)` followed by the same three channels for its convex hull.
pub fn depth_channels(mesh: &TriMesh, level: Level) -> Result<SphericalSignal<f64>> {
    let model = raycast_depth(mesh, level)?;
    let hull = raycast_depth(&convex_hull(mesh.vertices())?, level)?;
    SphericalSignal::concat_channels(&[&model.signal, &hull.signal])
}
