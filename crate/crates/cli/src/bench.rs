//! Gather and convolution throughput.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stm_core::kernels::{conv2d_forward, gather_forward, Conv2dShape};
use stm_core::{Level, Result, StmError, TransformerGrid};

/// Largest patch buffer the benchmark will allocate.
const MAX_PATCH_BYTES: usize = 1 << 30;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub level: Level,
    pub channels: usize,
    pub iterations: usize,
    pub gather_seconds: f64,
    pub conv_seconds: f64,
    /// Bytes read plus bytes written by one gather.
    pub gather_bytes: usize,
    /// Multiply-adds of one C -> C convolution.
    pub conv_macs: usize,
    pub checksum: f64,
}

impl BenchReport {
    pub fn pixels_per_second(&self) -> f64 {
        (self.level.n_pixels() * self.iterations) as f64 / (self.gather_seconds + self.conv_seconds)
    }
}

impl std::fmt::Display for BenchReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let it = self.iterations as f64;
        writeln!(f, "level {} ({} pixels), {} channels, {} iterations", self.level, self.level.n_pixels(), self.channels, self.iterations)?;
        writeln!(
            f,
            "gather  {:>10.3} ms/iter  {:>8.2} GB/s  bytes moved {}",
            1e3 * self.gather_seconds / it,
            self.gather_bytes as f64 * it / self.gather_seconds / 1e9,
            self.gather_bytes
        )?;
        writeln!(
            f,
            "conv    {:>10.3} ms/iter  {:>8.2} GMAC/s  macs {}",
            1e3 * self.conv_seconds / it,
            self.conv_macs as f64 * it / self.conv_seconds / 1e9,
            self.conv_macs
        )?;
        writeln!(f, "pixels/second {:.4e}", self.pixels_per_second())?;
        write!(f, "checksum {:.9e}", self.checksum)
    }
}

/// Times `iterations` gathers and 3x3 convolutions of a seeded random
/// signal with `channels` in and out.
pub fn bench_gather(level: Level, channels: usize, iterations: usize, seed: u64) -> Result<BenchReport> {
    if iterations == 0 {
        return Err(StmError::Config("iterations must be positive".into()));
    }
    if channels == 0 {
        return Err(StmError::Config("channels must be positive".into()));
    }
    let n = level.n_pixels();
    let patch_len = 9 * n * channels;
    if patch_len * 4 > MAX_PATCH_BYTES {
        return Err(StmError::Config(format!("level {level} with {channels} channels exceeds the 1 GiB patch cap")));
    }
    let tgrid = TransformerGrid::cached(level);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let src: Vec<f32> = (0..n * channels).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w: Vec<f32> = (0..9 * channels * channels).map(|_| rng.gen_range(-0.1..0.1)).collect();
    let mut patches = vec![0.0f32; patch_len];
    let mut out = vec![0.0f32; n * channels];
    let shape = Conv2dShape { h: 3, w: 3 * n, cin: channels, kh: 3, kw: 3, cout: channels, stride_h: 1, stride_w: 3 };

    let (mut gather_seconds, mut conv_seconds, mut checksum) = (0.0, 0.0, 0.0);
    for _ in 0..iterations {
        let t = Instant::now();
        gather_forward(&src, channels, tgrid.rows(), &mut patches);
        gather_seconds += t.elapsed().as_secs_f64();
        let t = Instant::now();
        conv2d_forward(&shape, &patches, &w, None, &mut out);
        conv_seconds += t.elapsed().as_secs_f64();
        checksum += out.iter().map(|&v| v as f64).sum::<f64>();
    }
    Ok(BenchReport {
        level,
        channels,
        iterations,
        gather_seconds,
        conv_seconds,
        gather_bytes: 4 * (n * channels + patch_len),
        conv_macs: n * 9 * channels * channels,
        checksum,
    })
}
