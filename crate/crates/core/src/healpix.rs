//! HEALPix pixelization of the sphere in the nested scheme.
//!
//! A pixel at level `l` is addressed by its base face `f` in `0..12` and
//! its integer coordinates `(ix, iy)` inside that face, `0 <= ix, iy < 2^l`.
//! The nested index interleaves the bits of `ix` (even bits) and `iy` (odd
//! bits) below the face number, so the four children of `p` are `4p..4p+3`.
//!
//! Face-local axes: `x` grows towards the north-east edge of a face and `y`
//! towards its north-west edge.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::sync::{Arc, OnceLock};

use crate::error::{Result, StmError};

/// Highest supported level. `12 * 4^13 * 9` gather indices still fit in an `i32`.
pub const MAX_LEVEL: u32 = 13;

pub type Vec3 = [f64; 3];

/// HEALPix subdivision level; `nside = 2^level`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Level(u8);

impl Level {
    pub fn new(level: u32) -> Result<Self> {
        if level > MAX_LEVEL {
            return Err(StmError::Domain(format!(
                "level {level} exceeds the supported maximum {MAX_LEVEL}"
            )));
        }
        Ok(Level(level as u8))
    }

    pub fn get(self) -> u32 {
        self.0 as u32
    }

    pub fn nside(self) -> u32 {
        1 << self.0
    }

    pub fn n_pixels(self) -> usize {
        n_pixels(self)
    }

    /// The next coarser level, `None` at level 0.
    pub fn coarser(self) -> Option<Level> {
        self.0.checked_sub(1).map(Level)
    }

    /// The next finer level, `None` at the cap.
    pub fn finer(self) -> Option<Level> {
        (self.get() < MAX_LEVEL).then(|| Level(self.0 + 1))
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Number of pixels at `level`: `12 * 4^level`.
pub fn n_pixels(level: Level) -> usize {
    12usize << (2 * level.get())
}

/// Neighbour slot order used by [`neighbors`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    SW = 0,
    W = 1,
    NW = 2,
    N = 3,
    NE = 4,
    E = 5,
    SE = 6,
    S = 7,
}

impl Direction {
    pub const ALL: [Direction; 8] = [
        Direction::SW,
        Direction::W,
        Direction::NW,
        Direction::N,
        Direction::NE,
        Direction::E,
        Direction::SE,
        Direction::S,
    ];
}

/// Ring index (in units of nside) of the southernmost corner of each base face.
const JRLL: [i64; 12] = [2, 2, 2, 2, 3, 3, 3, 3, 4, 4, 4, 4];
/// Longitude index (in units of pi/4) of each base face centre.
const JPLL: [i64; 12] = [1, 3, 5, 7, 0, 2, 4, 6, 1, 3, 5, 7];

const X_OFFSET: [i64; 8] = [-1, -1, 0, 1, 1, 1, 0, -1];
const Y_OFFSET: [i64; 8] = [0, 1, 1, 1, 0, -1, -1, -1];

// Face reached when stepping out of face `f` into neighbour block `nb`
// (nb = 4 + dx + 3*dy, dx/dy in {-1,0,1}); -1 where the block does not exist.
const FACE_ARRAY: [[i8; 12]; 9] = [
    [8, 9, 10, 11, -1, -1, -1, -1, 10, 11, 8, 9],
    [5, 6, 7, 4, 8, 9, 10, 11, 9, 10, 11, 8],
    [-1, -1, -1, -1, 5, 6, 7, 4, -1, -1, -1, -1],
    [4, 5, 6, 7, 11, 8, 9, 10, 11, 8, 9, 10],
    [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11],
    [1, 2, 3, 0, 0, 1, 2, 3, 5, 6, 7, 4],
    [-1, -1, -1, -1, 7, 4, 5, 6, -1, -1, -1, -1],
    [3, 0, 1, 2, 3, 0, 1, 2, 4, 5, 6, 7],
    [2, 3, 0, 1, -1, -1, -1, -1, 0, 1, 2, 3],
];

// Coordinate fix-up when crossing into the neighbour face, indexed by
// [nb][face row]: bit 0 mirrors x, bit 1 mirrors y, bit 2 swaps x and y.
const SWAP_ARRAY: [[u8; 3]; 9] = [
    [0, 0, 3],
    [0, 0, 6],
    [0, 0, 0],
    [0, 0, 5],
    [0, 0, 0],
    [5, 0, 0],
    [0, 0, 0],
    [6, 0, 0],
    [3, 0, 0],
];

fn check_pix(level: Level, pix: usize) -> Result<()> {
    let n = n_pixels(level);
    if pix >= n {
        return Err(StmError::Index(format!(
            "pixel {pix} out of range for level {level} ({n} pixels)"
        )));
    }
    Ok(())
}

fn spread_bits(v: u32) -> u64 {
    let mut x = v as u64;
    x = (x | (x << 16)) & 0x0000_FFFF_0000_FFFF;
    x = (x | (x << 8)) & 0x00FF_00FF_00FF_00FF;
    x = (x | (x << 4)) & 0x0F0F_0F0F_0F0F_0F0F;
    x = (x | (x << 2)) & 0x3333_3333_3333_3333;
    x = (x | (x << 1)) & 0x5555_5555_5555_5555;
    x
}

fn compress_bits(v: u64) -> u32 {
    let mut x = v & 0x5555_5555_5555_5555;
    x = (x | (x >> 1)) & 0x3333_3333_3333_3333;
    x = (x | (x >> 2)) & 0x0F0F_0F0F_0F0F_0F0F;
    x = (x | (x >> 4)) & 0x00FF_00FF_00FF_00FF;
    x = (x | (x >> 8)) & 0x0000_FFFF_0000_FFFF;
    x = (x | (x >> 16)) & 0x0000_0000_FFFF_FFFF;
    x as u32
}

/// Splits a nested index into `(ix, iy, face)`. `pix` must be valid.
pub fn nest_to_xyf(level: Level, pix: usize) -> (u32, u32, usize) {
    let shift = 2 * level.get();
    let face = pix >> shift;
    let local = (pix as u64) & ((1u64 << shift) - 1);
    (compress_bits(local), compress_bits(local >> 1), face)
}

/// Inverse of [`nest_to_xyf`].
pub fn xyf_to_nest(level: Level, ix: u32, iy: u32, face: usize) -> usize {
    let local = spread_bits(ix) | (spread_bits(iy) << 1);
    (face << (2 * level.get())) | local as usize
}

/// Maps continuous face coordinates (`x`, `y` in `[0, 1]`) to a unit vector.
///
/// `(ix + 0.5) / nside` gives pixel centres, integer offsets give corners.
pub fn face_point_to_vec(face: usize, x: f64, y: f64) -> Vec3 {
    let jr = JRLL[face] as f64 - x - y;
    let (nr, z, sth);
    if jr < 1.0 {
        nr = jr;
        let tmp = nr * nr / 3.0;
        z = 1.0 - tmp;
        sth = (tmp * (2.0 - tmp)).sqrt();
    } else if jr > 3.0 {
        nr = 4.0 - jr;
        let tmp = nr * nr / 3.0;
        z = tmp - 1.0;
        sth = (tmp * (2.0 - tmp)).sqrt();
    } else {
        nr = 1.0;
        z = (2.0 - jr) * 2.0 / 3.0;
        sth = ((1.0 - z) * (1.0 + z)).sqrt();
    }
    let mut tmp = JPLL[face] as f64 * nr + x - y;
    if tmp < 0.0 {
        tmp += 8.0;
    }
    if tmp >= 8.0 {
        tmp -= 8.0;
    }
    let phi = if nr < 1e-15 { 0.0 } else { FRAC_PI_4 * tmp / nr };
    [sth * phi.cos(), sth * phi.sin(), z]
}

/// Centre direction of `pix` at `level`.
pub fn pix2vec(level: Level, pix: usize) -> Result<Vec3> {
    check_pix(level, pix)?;
    let (ix, iy, face) = nest_to_xyf(level, pix);
    let ns = level.nside() as f64;
    Ok(face_point_to_vec(face, (ix as f64 + 0.5) / ns, (iy as f64 + 0.5) / ns))
}

/// The four corners of `pix` in the order south, east, north, west.
pub fn pix_corners(level: Level, pix: usize) -> Result<[Vec3; 4]> {
    check_pix(level, pix)?;
    let (ix, iy, face) = nest_to_xyf(level, pix);
    let ns = level.nside() as f64;
    let (x0, y0) = (ix as f64 / ns, iy as f64 / ns);
    let d = 1.0 / ns;
    Ok([
        face_point_to_vec(face, x0, y0),
        face_point_to_vec(face, x0 + d, y0),
        face_point_to_vec(face, x0 + d, y0 + d),
        face_point_to_vec(face, x0, y0 + d),
    ])
}

/// Pixel whose HEALPix cell contains `dir` (normalised internally).
pub fn vec2pix(level: Level, dir: Vec3) -> Result<usize> {
    let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(StmError::Domain(format!("cannot locate direction {dir:?}")));
    }
    let z = dir[2] / norm;
    let sth = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt() / norm;
    let phi = dir[1].atan2(dir[0]);
    let nside = level.nside() as i64;
    let ns = nside as f64;
    let za = z.abs();
    let tt = (phi / FRAC_PI_2).rem_euclid(4.0);

    let (ix, iy, face);
    if za <= 2.0 / 3.0 {
        let temp1 = ns * (0.5 + tt);
        let temp2 = ns * (z * 0.75);
        let jp = (temp1 - temp2) as i64;
        let jm = (temp1 + temp2) as i64;
        let ifp = jp >> level.get();
        let ifm = jm >> level.get();
        face = if ifp == ifm {
            (ifp | 4) as usize
        } else if ifp < ifm {
            ifp as usize
        } else {
            (ifm + 8) as usize
        };
        ix = jm & (nside - 1);
        iy = nside - (jp & (nside - 1)) - 1;
    } else {
        let ntt = (tt as i64).min(3);
        let tp = tt - ntt as f64;
        // sqrt(3(1-|z|)) computed from sin(theta) to keep precision near the poles
        let tmp = ns * sth * (3.0 / (1.0 + za)).sqrt();
        let jp = ((tp * tmp) as i64).min(nside - 1);
        let jm = (((1.0 - tp) * tmp) as i64).min(nside - 1);
        if z >= 0.0 {
            face = ntt as usize;
            ix = nside - jm - 1;
            iy = nside - jp - 1;
        } else {
            face = (ntt + 8) as usize;
            ix = jp;
            iy = jm;
        }
    }
    Ok(xyf_to_nest(level, ix as u32, iy as u32, face))
}

/// Parent of `pix` (a pixel at `level`) at `level - 1`.
pub fn parent(level: Level, pix: usize) -> Result<usize> {
    if level.get() == 0 {
        return Err(StmError::Domain("level-0 pixels have no parent".into()));
    }
    check_pix(level, pix)?;
    Ok(pix >> 2)
}

/// Children of `pix` (a pixel at `level`) at `level + 1`.
pub fn children(level: Level, pix: usize) -> Result<[usize; 4]> {
    if level.finer().is_none() {
        return Err(StmError::Domain(format!("level {level} is already the finest level")));
    }
    check_pix(level, pix)?;
    let base = pix << 2;
    Ok([base, base + 1, base + 2, base + 3])
}

/// The eight neighbours of `pix` in [`Direction`] order; `-1` marks a
/// missing neighbour (the 24 pixels touching the 8 three-face vertices).
pub fn neighbors(level: Level, pix: usize) -> Result<[i32; 8]> {
    check_pix(level, pix)?;
    let (ix, iy, face) = nest_to_xyf(level, pix);
    let nside = level.nside() as i64;
    let (ix, iy) = (ix as i64, iy as i64);
    let mut out = [-1i32; 8];

    if ix > 0 && ix < nside - 1 && iy > 0 && iy < nside - 1 {
        for m in 0..8 {
            let x = (ix + X_OFFSET[m]) as u32;
            let y = (iy + Y_OFFSET[m]) as u32;
            out[m] = xyf_to_nest(level, x, y, face) as i32;
        }
        return Ok(out);
    }

    for m in 0..8 {
        let mut x = ix + X_OFFSET[m];
        let mut y = iy + Y_OFFSET[m];
        let mut nb = 4i64;
        if x < 0 {
            x += nside;
            nb -= 1;
        } else if x >= nside {
            x -= nside;
            nb += 1;
        }
        if y < 0 {
            y += nside;
            nb -= 3;
        } else if y >= nside {
            y -= nside;
            nb += 3;
        }
        let f = FACE_ARRAY[nb as usize][face];
        if f < 0 {
            continue;
        }
        let bits = SWAP_ARRAY[nb as usize][face >> 2];
        if bits & 1 != 0 {
            x = nside - x - 1;
        }
        if bits & 2 != 0 {
            y = nside - y - 1;
        }
        if bits & 4 != 0 {
            std::mem::swap(&mut x, &mut y);
        }
        out[m] = xyf_to_nest(level, x as u32, y as u32, f as usize) as i32;
    }
    Ok(out)
}

fn rotate_face(face: usize, quarter_turns: u32) -> usize {
    let row = face / 4;
    row * 4 + (face % 4 + quarter_turns as usize) % 4
}

/// Pixel permutation induced by rotating the sphere by `quarter_turns * 90°`
/// about the polar axis: `pix2vec(perm[p]) = Rz * pix2vec(p)`.
///
/// Faces in each row of four map onto the next face of the same row with
/// unchanged local coordinates, so neighbour slots are preserved as well.
pub fn z_rotation_permutation(level: Level, quarter_turns: u32) -> Result<Vec<usize>> {
    if quarter_turns > 3 {
        return Err(StmError::Domain(format!(
            "quarter_turns must be in 0..4, got {quarter_turns}"
        )));
    }
    Ok((0..n_pixels(level))
        .map(|p| {
            let (ix, iy, face) = nest_to_xyf(level, p);
            xyf_to_nest(level, ix, iy, rotate_face(face, quarter_turns))
        })
        .collect())
}

/// Rotates a vector about +z by `quarter_turns * 90°`.
pub fn rotate_z_quarter(v: Vec3, quarter_turns: u32) -> Vec3 {
    let angle = FRAC_PI_2 * (quarter_turns % 4) as f64;
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
}

/// Colatitude and longitude (in `[0, 2pi)`) of a direction.
pub fn vec_to_ang(v: Vec3) -> (f64, f64) {
    let r = (v[0] * v[0] + v[1] * v[1]).sqrt();
    let theta = r.atan2(v[2]);
    let phi = v[1].atan2(v[0]).rem_euclid(2.0 * PI);
    (theta, phi)
}

/// Precomputed, immutable description of one level.
#[derive(Debug)]
pub struct GridLevel {
    level: Level,
    centers: Vec<Vec3>,
    neighbor_table: Vec<[i32; 8]>,
}

impl GridLevel {
    pub fn new(level: Level) -> Self {
        let n = n_pixels(level);
        let mut centers = Vec::with_capacity(n);
        let mut neighbor_table = Vec::with_capacity(n);
        for p in 0..n {
            centers.push(pix2vec(level, p).expect("pixel in range"));
            neighbor_table.push(neighbors(level, p).expect("pixel in range"));
        }
        GridLevel { level, centers, neighbor_table }
    }

    /// Shared, lazily built instance for `level`.
    pub fn cached(level: Level) -> Arc<GridLevel> {
        static CACHE: [OnceLock<Arc<GridLevel>>; MAX_LEVEL as usize + 1] =
            [const { OnceLock::new() }; MAX_LEVEL as usize + 1];
        CACHE[level.get() as usize]
            .get_or_init(|| Arc::new(GridLevel::new(level)))
            .clone()
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn n_pix(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[Vec3] {
        &self.centers
    }

    pub fn neighbor_table(&self) -> &[[i32; 8]] {
        &self.neighbor_table
    }

    pub fn base_region(&self, pix: usize) -> usize {
        pix >> (2 * self.level.get())
    }

    /// Number of rows with at least one missing neighbour.
    pub fn seven_neighbor_count(&self) -> usize {
        self.neighbor_table
            .iter()
            .filter(|row| row.iter().any(|&q| q < 0))
            .count()
    }
}
