//! Binary PGM (P5) and PPM (P6) with maxval 255.

use std::io::Write;

use crate::error::{Result, StmError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// 1 for P5, 3 for P6.
    pub channels: usize,
    /// Row-major, channels interleaved.
    pub data: Vec<u8>,
}

/// Reads header tokens: whitespace separated, `#` comments to end of line.
struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn token(&mut self) -> Result<&'a [u8]> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b'#') => {
                    while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                        self.pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(_) => break,
                None => return Err(StmError::parse_byte(self.pos, "truncated PNM header")),
            }
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
            self.pos += 1;
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        let t = self.token()?;
        std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| StmError::parse_byte(at, format!("bad {what} in PNM header")))
    }
}

pub fn parse_pnm(bytes: &[u8]) -> Result<Image> {
    let mut h = Header { bytes, pos: 0 };
    let channels = match h.token()? {
        b"P5" => 1,
        b"P6" => 3,
        b"P2" | b"P3" => return Err(StmError::parse_byte(0, "ASCII PNM (P2/P3) is not supported")),
        _ => return Err(StmError::parse_byte(0, "not a binary PGM/PPM")),
    };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let at = h.pos;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(StmError::parse_byte(at, format!("maxval {maxval} unsupported (only 255)")));
    }
    if width == 0 || height == 0 {
        return Err(StmError::parse_byte(at, "zero image dimension"));
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(h.pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(StmError::parse_byte(h.pos, "missing whitespace after maxval"));
    }
    let start = h.pos + 1;
    let want = width * height * channels;
    let have = bytes.len() - start;
    if have != want {
        return Err(StmError::parse_byte(
            start + have.min(want),
            format!("raster is {have} bytes, {width}x{height}x{channels} needs {want}"),
        ));
    }
    Ok(Image { width, height, channels, data: bytes[start..].to_vec() })
}

pub fn read_pnm(path: impl AsRef<std::path::Path>) -> Result<Image> {
    parse_pnm(&std::fs::read(path)?)
}

pub fn write_pnm(w: &mut impl Write, img: &Image) -> Result<()> {
    let magic = match img.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(StmError::contract(format!("cannot write a {c}-channel PNM"))),
    };
    if img.data.len() != img.width * img.height * img.channels {
        return Err(StmError::contract("image data length does not match its dimensions"));
    }
    write!(w, "{magic}\n{} {}\n255\n", img.width, img.height)?;
    w.write_all(&img.data)?;
    Ok(())
}

/// Writes a gray image from values in `[0, 1]` (clamped, rounded).
pub fn write_pgm(w: &mut impl Write, width: usize, height: usize, values: &[f32]) -> Result<()> {
    let data = values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    write_pnm(w, &Image { width, height, channels: 1, data })
}
