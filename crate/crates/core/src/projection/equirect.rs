//! Equirectangular panoramas to HEALPix.

use std::f64::consts::PI;
use std::str::FromStr;

use crate::error::{Result, StmError};
use crate::healpix::{vec_to_ang, GridLevel, Level};
use crate::transformer::SphericalSignal;

/// `width x height x channels`, row-major. Column `u` covers longitude
/// `2 pi (u + 0.5) / W - pi`, row `v` covers colatitude `pi (v + 0.5) / H`.
#[derive(Debug, Clone, PartialEq)]
pub struct EquirectImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl EquirectImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(StmError::contract("equirect image with a zero dimension"));
        }
        if data.len() != width * height * channels {
            return Err(StmError::contract(format!(
                "{} values for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(StmError::Domain("equirect image has non-finite values".into()));
        }
        Ok(EquirectImage { width, height, channels, data })
    }

    fn at(&self, u: usize, v: usize) -> &[f32] {
        let i = (v * self.width + u) * self.channels;
        &self.data[i..i + self.channels]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    Bilinear,
    Nearest,
}

impl FromStr for Sampling {
    type Err = StmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilinear" => Ok(Sampling::Bilinear),
            "nearest" => Ok(Sampling::Nearest),
            _ => Err(StmError::Config(format!("unknown sampling mode {s:?}"))),
        }
    }
}

/// Continuous pixel coordinates of a direction; integer values are pixel centres.
pub fn equirect_coords(theta: f64, phi: f64, width: usize, height: usize) -> (f64, f64) {
    let lambda = if phi > PI { phi - 2.0 * PI } else { phi };
    ((lambda + PI) * width as f64 / (2.0 * PI) - 0.5, theta * height as f64 / PI - 0.5)
}

/// Samples the image at every pixel centre. Bilinear wraps in longitude and
/// clamps in latitude; nearest returns the source pixel containing the centre.
pub fn equirect_resample(img: &EquirectImage, level: Level, mode: Sampling) -> SphericalSignal<f32> {
    let grid = GridLevel::cached(level);
    let (w, h, c) = (img.width, img.height, img.channels);
    let mut out = Vec::with_capacity(grid.n_pix() * c);
    for &v in grid.centers() {
        let (theta, phi) = vec_to_ang(v);
        let (uc, vc) = equirect_coords(theta, phi, w, h);
        match mode {
            Sampling::Nearest => {
                let u = ((uc + 0.5).floor() as i64).rem_euclid(w as i64) as usize;
                let r = ((vc + 0.5).floor().max(0.0) as usize).min(h - 1);
                out.extend_from_slice(img.at(u, r));
            }
            Sampling::Bilinear => {
                let (u0, v0) = (uc.floor(), vc.floor());
                let (fu, fv) = (uc - u0, vc - v0);
                let ua = (u0 as i64).rem_euclid(w as i64) as usize;
                let ub = (u0 as i64 + 1).rem_euclid(w as i64) as usize;
                let va = (v0.max(0.0) as usize).min(h - 1);
                let vb = ((v0 + 1.0).max(0.0) as usize).min(h - 1);
                for ch in 0..c {
                    let top = (1.0 - fu) * img.at(ua, va)[ch] as f64 + fu * img.at(ub, va)[ch] as f64;
                    let bot = (1.0 - fu) * img.at(ua, vb)[ch] as f64 + fu * img.at(ub, vb)[ch] as f64;
                    out.push(((1.0 - fv) * top + fv * bot) as f32);
                }
            }
        }
    }
    SphericalSignal::new(level, c, out).expect("finite samples")
}
