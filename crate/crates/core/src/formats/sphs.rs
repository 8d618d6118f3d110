//! `.sphs` spherical-signal container.
//!
//! 16-byte header: `b"SPHS"`, version `u8` (1), dtype `u8` (0 = f32,
//! 1 = u8 labels), reserved `u16` (0), level `u32`, channels `u32`; then
//! `n_pix * channels` little-endian values, pixel-major in nested order.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, StmError};
use crate::healpix::Level;
use crate::transformer::SphericalSignal;

const MAGIC: &[u8; 4] = b"SPHS";
const VERSION: u8 = 1;
const HEADER: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub enum Sphs {
    F32(SphericalSignal<f32>),
    /// One label per pixel; 255 marks "ignore".
    Labels { level: Level, labels: Vec<u8> },
}

impl Sphs {
    pub fn level(&self) -> Level {
        match self {
            Sphs::F32(s) => s.level(),
            Sphs::Labels { level, .. } => *level,
        }
    }
}

fn header(dtype: u8, level: Level, channels: u32) -> [u8; HEADER] {
    let mut h = [0u8; HEADER];
    h[..4].copy_from_slice(MAGIC);
    h[4] = VERSION;
    h[5] = dtype;
    h[8..12].copy_from_slice(&level.get().to_le_bytes());
    h[12..16].copy_from_slice(&channels.to_le_bytes());
    h
}

pub fn write_sphs(w: &mut impl Write, signal: &SphericalSignal<f32>) -> Result<()> {
    w.write_all(&header(0, signal.level(), signal.channels() as u32))?;
    let mut buf = Vec::with_capacity(signal.data().len() * 4);
    for v in signal.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn write_sphs_labels(w: &mut impl Write, level: Level, labels: &[u8]) -> Result<()> {
    if labels.len() != level.n_pixels() {
        return Err(StmError::contract(format!(
            "{} labels for {} pixels at level {level}",
            labels.len(),
            level.n_pixels()
        )));
    }
    w.write_all(&header(1, level, 1))?;
    w.write_all(labels)?;
    Ok(())
}

pub fn parse_sphs(bytes: &[u8]) -> Result<Sphs> {
    if bytes.len() < HEADER {
        return Err(StmError::parse_byte(bytes.len(), "truncated SPHS header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(StmError::parse_byte(0, "not an SPHS file (bad magic)"));
    }
    if bytes[4] != VERSION {
        return Err(StmError::parse_byte(4, format!("unsupported SPHS version {}", bytes[4])));
    }
    let dtype = bytes[5];
    if bytes[6..8] != [0, 0] {
        return Err(StmError::parse_byte(6, "reserved SPHS field is not zero"));
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let level = Level::new(u32_at(8)).map_err(|e| StmError::parse_byte(8, e.to_string()))?;
    let channels = u32_at(12) as usize;
    if channels == 0 {
        return Err(StmError::parse_byte(12, "zero channels"));
    }
    let width = match dtype {
        0 => 4,
        1 if channels == 1 => 1,
        1 => return Err(StmError::parse_byte(12, format!("label files have 1 channel, header says {channels}"))),
        _ => return Err(StmError::parse_byte(5, format!("unknown dtype {dtype}"))),
    };
    let want = level.n_pixels() * channels * width;
    let have = bytes.len() - HEADER;
    if have != want {
        return Err(StmError::parse_byte(
            HEADER + have.min(want),
            format!("payload is {have} bytes, level {level} x {channels} channels needs {want}"),
        ));
    }
    let payload = &bytes[HEADER..];
    Ok(if dtype == 0 {
        let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        Sphs::F32(SphericalSignal::new(level, channels, data)?)
    } else {
        Sphs::Labels { level, labels: payload.to_vec() }
    })
}

pub fn read_sphs(mut r: impl Read) -> Result<Sphs> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    parse_sphs(&bytes)
}

pub fn load_sphs(path: impl AsRef<Path>) -> Result<Sphs> {
    parse_sphs(&std::fs::read(path)?)
}

pub fn save_sphs(path: impl AsRef<Path>, signal: &SphericalSignal<f32>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_sphs(&mut f, signal)?;
    f.flush()?;
    Ok(())
}

pub fn save_sphs_labels(path: impl AsRef<Path>, level: Level, labels: &[u8]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_sphs_labels(&mut f, level, labels)?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn f32_roundtrip_is_bit_exact() {
        let l3 = Level::new(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = SphericalSignal::from_fn(l3, 6, |_, _| rng.gen_range(-1e6f32..1e6) * rng.gen::<f32>());
        let mut buf = Vec::new();
        write_sphs(&mut buf, &s).unwrap();
        assert_eq!(buf.len(), 16 + 768 * 6 * 4);
        let Sphs::F32(back) = read_sphs(&buf[..]).unwrap() else { panic!() };
        let bits = |s: &SphericalSignal<f32>| s.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&s));
        assert_eq!(back.channels(), 6);
    }

    #[test]
    fn labels_roundtrip() {
        let l1 = Level::new(1).unwrap();
        let labels: Vec<u8> = (0..48).map(|i| if i % 7 == 0 { 255 } else { (i % 5) as u8 }).collect();
        let mut buf = Vec::new();
        write_sphs_labels(&mut buf, l1, &labels).unwrap();
        assert_eq!(read_sphs(&buf[..]).unwrap(), Sphs::Labels { level: l1, labels });
    }

    #[test]
    fn header_problems() {
        let l2 = Level::new(2).unwrap();
        let s = SphericalSignal::<f32>::zeros(l2, 1);
        let mut buf = Vec::new();
        write_sphs(&mut buf, &s).unwrap();
        // claims level 3, carries level 2
        let mut lie = buf.clone();
        lie[8] = 3;
        assert!(matches!(parse_sphs(&lie), Err(StmError::Parse { .. })));
        let mut two_label_channels = buf.clone();
        two_label_channels[5] = 1;
        two_label_channels[12] = 2;
        assert!(parse_sphs(&two_label_channels).is_err());
        let mut v2 = buf.clone();
        v2[4] = 2;
        assert!(parse_sphs(&v2).is_err());
        let mut garbage = buf;
        garbage.push(1);
        assert!(parse_sphs(&garbage).is_err());
    }
}
