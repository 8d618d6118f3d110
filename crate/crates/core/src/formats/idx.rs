//! IDX files (MNIST). Header fields are big endian.

use crate::error::{Result, StmError};

#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// Pixel values scaled to `[0, 1]`, image-major then row-major.
    pub pixels: Vec<f32>,
}

impl IdxImages {
    pub fn len(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Idx {
    Images(IdxImages),
    Labels(Vec<u8>),
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| StmError::parse_byte(bytes.len(), "truncated IDX header"))
}

pub fn parse_idx(bytes: &[u8]) -> Result<Idx> {
    let magic = be_u32(bytes, 0)?;
    let (dims, header) = match magic {
        0x0000_0803 => (3, 16),
        0x0000_0801 => (1, 8),
        _ => return Err(StmError::parse_byte(0, format!("unknown IDX magic {magic:#010x}"))),
    };
    let shape: Vec<usize> = (0..dims).map(|k| be_u32(bytes, 4 + 4 * k).map(|d| d as usize)).collect::<Result<_>>()?;
    let payload = shape.iter().product::<usize>();
    let have = bytes.len() - header;
    if have < payload {
        return Err(StmError::parse_byte(bytes.len(), format!("truncated IDX payload: {have} of {payload} bytes")));
    }
    if have > payload {
        return Err(StmError::parse_byte(header + payload, "trailing bytes after IDX payload"));
    }
    let data = &bytes[header..];
    Ok(if dims == 3 {
        if shape[1] == 0 || shape[2] == 0 {
            return Err(StmError::parse_byte(8, "IDX images with a zero dimension"));
        }
        Idx::Images(IdxImages {
            rows: shape[1],
            cols: shape[2],
            pixels: data.iter().map(|&b| b as f32 / 255.0).collect(),
        })
    } else {
        Idx::Labels(data.to_vec())
    })
}

pub fn read_idx_images(path: impl AsRef<std::path::Path>) -> Result<IdxImages> {
    match parse_idx(&std::fs::read(path.as_ref())?)? {
        Idx::Images(i) => Ok(i),
        Idx::Labels(_) => Err(StmError::Config(format!("{} holds labels, not images", path.as_ref().display()))),
    }
}

pub fn read_idx_labels(path: impl AsRef<std::path::Path>) -> Result<Vec<u8>> {
    match parse_idx(&std::fs::read(path.as_ref())?)? {
        Idx::Labels(l) => Ok(l),
        Idx::Images(_) => Err(StmError::Config(format!("{} holds images, not labels", path.as_ref().display()))),
    }
}
