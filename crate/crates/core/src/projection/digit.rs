//! Planar digits onto a polar cap by gnomonic projection.

use crate::error::{Result, StmError};
use crate::healpix::{GridLevel, Level};
use crate::transformer::SphericalSignal;

pub const DIGIT_SIZE: usize = 28;
/// Colatitude of the cap edge.
pub const CAP_DEG: f64 = 60.0;

/// Continuous `(col, row)` image coordinates of a unit vector in the cap, or
/// `None` outside it. Integer coordinates are pixel centres.
pub fn digit_coords(v: [f64; 3]) -> Option<(f64, f64)> {
    let cap = CAP_DEG.to_radians();
    if v[2] < cap.cos() || v[2] <= 0.0 {
        return None;
    }
    let t = cap.tan();
    let (x, y) = (v[0] / v[2], v[1] / v[2]);
    let n = DIGIT_SIZE as f64;
    Some(((x + t) / (2.0 * t) * n - 0.5, (t - y) / (2.0 * t) * n - 0.5))
}

/// Bilinear sample with clamp-to-edge.
fn bilinear(img: &[f32], col: f64, row: f64) -> f32 {
    let n = DIGIT_SIZE;
    let max = (n - 1) as f64;
    let (c, r) = (col.clamp(0.0, max), row.clamp(0.0, max));
    let (c0, r0) = (c.floor() as usize, r.floor() as usize);
    let (c1, r1) = ((c0 + 1).min(n - 1), (r0 + 1).min(n - 1));
    let (fc, fr) = (c - c0 as f64, r - r0 as f64);
    let at = |r: usize, c: usize| img[r * n + c] as f64;
    let top = (1.0 - fc) * at(r0, c0) + fc * at(r0, c1);
    let bot = (1.0 - fc) * at(r1, c0) + fc * at(r1, c1);
    ((1.0 - fr) * top + fr * bot) as f32
}

/// Maps a 28x28 image onto the tangent plane at the north pole with half
/// extent `tan(60 deg)`; pixels farther than 60 deg from the pole are 0.
pub fn project_digit(img: &[f32], level: Level) -> Result<SphericalSignal<f32>> {
    if img.len() != DIGIT_SIZE * DIGIT_SIZE {
        return Err(StmError::contract(format!("digit must be 28x28, got {} values", img.len())));
    }
    let grid = GridLevel::cached(level);
    let data = grid
        .centers()
        .iter()
        .map(|&v| digit_coords(v).map_or(0.0, |(c, r)| bilinear(img, c, r)))
        .collect();
    SphericalSignal::new(level, 1, data)
}
