//! Directory-wide mesh projection.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use stm_core::formats::{read_off, save_sphs};
use stm_core::projection::{
    depth_channels, normalize_mesh, raycast_depth, render_projection, render_views, RenderConfig, TriMesh,
};
use stm_core::{Level, Result, SphericalSignal, StmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionKind {
    /// Model and hull depth, 6 channels.
    Depth,
    /// Re-projected rendering, 1 channel.
    Render,
    /// Depth then rendering, 7 channels.
    Both,
}

impl std::str::FromStr for ProjectionKind {
    type Err = StmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "depth" => Ok(ProjectionKind::Depth),
            "render" => Ok(ProjectionKind::Render),
            "both" => Ok(ProjectionKind::Both),
            _ => Err(StmError::Config(format!("unknown projection kind {s:?} (depth, render, both)"))),
        }
    }
}

pub fn render_signal(mesh: &TriMesh, level: Level, cfg: &RenderConfig) -> Result<SphericalSignal<f64>> {
    let cast = raycast_depth(mesh, level)?;
    let views = render_views(mesh, cfg)?;
    let (sig, stats) = render_projection(mesh, &cast, &views)?;
    if stats.fallbacks > 0 {
        info!("{} of {} hit pixels shaded directly", stats.fallbacks, stats.hits);
    }
    Ok(sig)
}

/// Normalises a mesh and projects it.
pub fn project_mesh(mesh: &TriMesh, level: Level, kind: ProjectionKind, cfg: &RenderConfig) -> Result<SphericalSignal<f32>> {
    let mesh = normalize_mesh(mesh)?;
    let sig = match kind {
        ProjectionKind::Depth => depth_channels(&mesh, level)?,
        ProjectionKind::Render => render_signal(&mesh, level, cfg)?,
        ProjectionKind::Both => {
            let d = depth_channels(&mesh, level)?;
            let r = render_signal(&mesh, level, cfg)?;
            SphericalSignal::concat_channels(&[&d, &r])?
        }
    };
    Ok(sig.cast())
}

#[derive(Debug, Clone, Default)]
pub struct BatchReport {
    pub written: Vec<PathBuf>,
    pub skipped: Vec<PathBuf>,
    pub failed: Vec<(PathBuf, String)>,
}

/// Projects every `.off` file in `mesh_dir` into `out_dir/<stem>.sphs`.
/// Failures are logged and collected; existing outputs are kept unless `force`.
pub fn project_batch(
    mesh_dir: &Path,
    out_dir: &Path,
    level: Level,
    kind: ProjectionKind,
    cfg: &RenderConfig,
    force: bool,
) -> Result<BatchReport> {
    let mut inputs: Vec<PathBuf> = fs::read_dir(mesh_dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    inputs.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("off")));
    inputs.sort();
    fs::create_dir_all(out_dir)?;
    let mut report = BatchReport::default();
    for (i, input) in inputs.iter().enumerate() {
        let out = out_dir.join(input.file_stem().unwrap()).with_extension("sphs");
        if out.exists() && !force {
            report.skipped.push(out);
            continue;
        }
        let result = read_off(input).and_then(|m| {
            if m.dropped_degenerate > 0 {
                warn!("{}: dropped {} degenerate faces", input.display(), m.dropped_degenerate);
            }
            project_mesh(&m.mesh, level, kind, cfg)
        });
        match result.and_then(|sig| save_sphs(&out, &sig)) {
            Ok(()) => {
                info!("[{}/{}] {}", i + 1, inputs.len(), out.display());
                report.written.push(out);
            }
            Err(e) => {
                warn!("[{}/{}] {}: {e}", i + 1, inputs.len(), input.display());
                report.failed.push((input.clone(), e.to_string()));
            }
        }
    }
    Ok(report)
}
