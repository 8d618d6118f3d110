//! The spherical transformer: per-pixel 3x3 index grids, the gather that
//! turns a spherical signal into a convolution-ready `3 x 3n x C` layout,
//! and pooling/unpooling along the nested hierarchy.
//!
//! Slot layout of a transformer grid row (row-major 3x3):
//!
//! ```text
//! NW  N  NE
//!  W  C  E
//! SW  S  SE
//! ```
//!
//! Directions are face-local, so kernels see a consistent orientation
//! inside each base face and a seam where faces meet.

use std::sync::{Arc, OnceLock};

use crate::error::{Result, StmError};
use crate::healpix::{n_pixels, GridLevel, Level, MAX_LEVEL};
use crate::kernels::{self, Conv2dShape, CENTER_SLOT, SLOT_OF_DIRECTION};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformerGrid {
    level: Level,
    rows: Vec<[i32; 9]>,
}

impl TransformerGrid {
    pub fn build(grid: &GridLevel) -> Self {
        let rows = grid
            .neighbor_table()
            .iter()
            .enumerate()
            .map(|(p, nb)| {
                let mut row = [-1i32; 9];
                row[CENTER_SLOT] = p as i32;
                for (dir, &q) in nb.iter().enumerate() {
                    row[SLOT_OF_DIRECTION[dir]] = q;
                }
                row
            })
            .collect();
        TransformerGrid { level: grid.level(), rows }
    }

    /// Shared instance for `level`, built on first use.
    pub fn cached(level: Level) -> Arc<TransformerGrid> {
        static CACHE: [OnceLock<Arc<TransformerGrid>>; MAX_LEVEL as usize + 1] =
            [const { OnceLock::new() }; MAX_LEVEL as usize + 1];
        CACHE[level.get() as usize]
            .get_or_init(|| Arc::new(TransformerGrid::build(&GridLevel::cached(level))))
            .clone()
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn n_pix(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[[i32; 9]] {
        &self.rows
    }

    /// Total number of `-1` entries.
    pub fn missing_count(&self) -> usize {
        self.rows.iter().flatten().filter(|&&q| q < 0).count()
    }
}

/// A `C`-channel field over the pixels of one level, pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalSignal<T> {
    level: Level,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> SphericalSignal<T> {
    pub fn new(level: Level, channels: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 {
            return Err(StmError::contract("a signal needs at least one channel"));
        }
        let expected = n_pixels(level) * channels;
        if data.len() != expected {
            return Err(StmError::contract(format!(
                "signal data has {} values, level {level} with {channels} channels needs {expected}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(StmError::Numeric("signal contains non-finite values".into()));
        }
        Ok(SphericalSignal { level, channels, data })
    }

    pub fn zeros(level: Level, channels: usize) -> Self {
        SphericalSignal { level, channels, data: vec![T::zero(); n_pixels(level) * channels] }
    }

    pub fn from_fn(level: Level, channels: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let n = n_pixels(level);
        let mut data = Vec::with_capacity(n * channels);
        for p in 0..n {
            for c in 0..channels {
                data.push(f(p, c));
            }
        }
        SphericalSignal { level, channels, data }
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn n_pix(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn pixel(&self, p: usize) -> &[T] {
        &self.data[p * self.channels..(p + 1) * self.channels]
    }

    pub fn get(&self, p: usize, c: usize) -> T {
        self.data[p * self.channels + c]
    }

    /// Moves the value at pixel `p` to pixel `perm[p]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_pix() {
            return Err(StmError::contract("permutation length does not match pixel count"));
        }
        let c = self.channels;
        let mut data = vec![T::zero(); self.data.len()];
        for (p, &q) in perm.iter().enumerate() {
            data[q * c..(q + 1) * c].copy_from_slice(self.pixel(p));
        }
        Ok(SphericalSignal { level: self.level, channels: c, data })
    }

    pub fn cast<U: Real>(&self) -> SphericalSignal<U> {
        SphericalSignal {
            level: self.level,
            channels: self.channels,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Concatenates channels of signals at the same level.
    pub fn concat_channels(parts: &[&SphericalSignal<T>]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| StmError::contract("nothing to concatenate"))?;
        if parts.iter().any(|s| s.level != first.level) {
            return Err(StmError::contract("cannot concatenate signals at different levels"));
        }
        let channels = parts.iter().map(|s| s.channels).sum();
        let n = first.n_pix();
        let mut data = Vec::with_capacity(n * channels);
        for p in 0..n {
            for s in parts {
                data.extend_from_slice(s.pixel(p));
            }
        }
        Ok(SphericalSignal { level: first.level, channels, data })
    }
}

/// Gathered patches: a `3 x 3n x C` array where columns `3p..3p+3` hold
/// pixel `p`'s 3x3 neighbourhood.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTensor<T> {
    level: Level,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> PatchTensor<T> {
    pub fn level(&self) -> Level {
        self.level
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(rows, columns, channels)` = `(3, 3n, C)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (3, 3 * n_pixels(self.level), self.channels)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize, c: usize) -> T {
        let (_, w, ch) = self.shape();
        self.data[(row * w + col) * ch + c]
    }

    /// Channel vector in slot `slot` (0..9, row-major) of pixel `p`.
    pub fn slot(&self, p: usize, slot: usize) -> &[T] {
        let off = kernels::patch_offset(n_pixels(self.level), self.channels, p, slot);
        &self.data[off..off + self.channels]
    }
}

pub fn gather<T: Real>(signal: &SphericalSignal<T>, tgrid: &TransformerGrid) -> Result<PatchTensor<T>> {
    if signal.level != tgrid.level {
        return Err(StmError::contract(format!(
            "signal at level {} gathered with a level-{} grid",
            signal.level, tgrid.level
        )));
    }
    let mut data = vec![T::zero(); 9 * signal.data.len()];
    kernels::gather_forward(&signal.data, signal.channels, &tgrid.rows, &mut data);
    Ok(PatchTensor { level: signal.level, channels: signal.channels, data })
}

/// Weights of a 3x3 spherical convolution, stored `[kh][kw][cin][cout]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalKernel<T> {
    pub cin: usize,
    pub cout: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> SphericalKernel<T> {
    pub fn new(cin: usize, cout: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weights.len() != 9 * cin * cout || bias.len() != cout {
            return Err(StmError::contract(format!(
                "kernel {cin}->{cout} needs {} weights and {cout} biases, got {} and {}",
                9 * cin * cout,
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(StmError::Numeric("kernel contains non-finite values".into()));
        }
        Ok(SphericalKernel { cin, cout, weights, bias })
    }

    pub fn weight(&self, slot: usize, ci: usize, co: usize) -> T {
        self.weights[(slot * self.cin + ci) * self.cout + co]
    }
}

/// Gather followed by a standard 3x3 convolution with stride (1, 3) over the
/// patch layout, which yields exactly one output per pixel.
pub fn spherical_conv<T: Real>(
    signal: &SphericalSignal<T>,
    kernel: &SphericalKernel<T>,
    tgrid: &TransformerGrid,
) -> Result<SphericalSignal<T>> {
    if kernel.cin != signal.channels {
        return Err(StmError::contract(format!(
            "kernel expects {} input channels, signal has {}",
            kernel.cin, signal.channels
        )));
    }
    let patches = gather(signal, tgrid)?;
    let n = signal.n_pix();
    let shape = Conv2dShape {
        h: 3,
        w: 3 * n,
        cin: kernel.cin,
        kh: 3,
        kw: 3,
        cout: kernel.cout,
        stride_h: 1,
        stride_w: 3,
    };
    let mut out = vec![T::zero(); n * kernel.cout];
    kernels::conv2d_forward(&shape, &patches.data, &kernel.weights, Some(&kernel.bias), &mut out);
    Ok(SphericalSignal { level: signal.level, channels: kernel.cout, data: out })
}

/// Output of [`spherical_pool`].
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled<T> {
    pub signal: SphericalSignal<T>,
    /// Winning source pixel per output element (pixel-major, like the data).
    pub argmax: Vec<u32>,
}

/// 1x4 max pooling over nested children, one level down.
pub fn spherical_pool<T: Real>(signal: &SphericalSignal<T>) -> Result<Pooled<T>> {
    let coarse = signal
        .level
        .coarser()
        .ok_or_else(|| StmError::Domain("cannot pool a level-0 signal".into()))?;
    let c = signal.channels;
    let mut data = vec![T::zero(); signal.data.len() / 4];
    let mut argmax = vec![0u32; data.len()];
    kernels::pool1x4_forward(&signal.data, c, &mut data, &mut argmax);
    Ok(Pooled { signal: SphericalSignal { level: coarse, channels: c, data }, argmax })
}

/// Weights of a 1x4 transposed convolution, stored `[child][cin][cout]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnpoolKernel<T> {
    pub cin: usize,
    pub cout: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> UnpoolKernel<T> {
    pub fn new(cin: usize, cout: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weights.len() != 4 * cin * cout || bias.len() != cout {
            return Err(StmError::contract("unpool kernel has the wrong number of weights"));
        }
        Ok(UnpoolKernel { cin, cout, weights, bias })
    }
}

/// Child `4p + k` receives `W[k]^T in[p] + bias`, one level up.
pub fn spherical_unpool_conv<T: Real>(
    signal: &SphericalSignal<T>,
    kernel: &UnpoolKernel<T>,
) -> Result<SphericalSignal<T>> {
    if kernel.cin != signal.channels {
        return Err(StmError::contract(format!(
            "unpool kernel expects {} input channels, signal has {}",
            kernel.cin, signal.channels
        )));
    }
    let fine = signal
        .level
        .finer()
        .ok_or_else(|| StmError::Domain("cannot unpool past the finest level".into()))?;
    let mut data = vec![T::zero(); 4 * signal.n_pix() * kernel.cout];
    kernels::unpool_forward(&signal.data, kernel.cin, &kernel.weights, kernel.cout, Some(&kernel.bias), &mut data);
    Ok(SphericalSignal { level: fine, channels: kernel.cout, data })
}
