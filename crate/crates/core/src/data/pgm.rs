//! Binary PGM (P5) with 8-bit or 16-bit big-endian samples.

use std::path::Path;

use super::{Image, ValueRange};
use crate::error::{Error, Result};

fn malformed(offset: usize, detail: impl Into<String>) -> Error {
    Error::MalformedImage {
        offset,
        detail: detail.into(),
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.buf.len() {
            match self.buf[self.pos] {
                b'#' => {
                    while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b' ' | b'\t' | b'\n' | b'\r' => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(malformed(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed(start, format!("{what} out of range")))
    }
}

/// Decoded samples scaled to `[0, 1]` by the file's maxval.
pub fn decode_pgm(buf: &[u8]) -> Result<Image> {
    if buf.len() < 2 || &buf[..2] != b"P5" {
        return Err(malformed(0, "missing P5 magic"));
    }
    let mut c = Cursor { buf, pos: 2 };
    let w = c.number("width")?;
    let h = c.number("height")?;
    let maxval = c.number("maxval")?;
    if w == 0 || h == 0 {
        return Err(malformed(c.pos, "zero image extent"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(malformed(c.pos, format!("maxval {maxval} outside 1..=65535")));
    }
    match buf.get(c.pos) {
        Some(b' ' | b'\t' | b'\n' | b'\r') => c.pos += 1,
        _ => return Err(malformed(c.pos, "expected one whitespace byte after maxval")),
    }
    let bytes = if maxval < 256 { 1 } else { 2 };
    let need = w * h * bytes;
    let avail = buf.len() - c.pos;
    if avail < need {
        return Err(malformed(buf.len(), format!("truncated raster: {avail} of {need} bytes")));
    }
    let raster = &buf[c.pos..c.pos + need];
    let scale = 1.0 / maxval as f64;
    let mut data = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let v = if bytes == 1 {
            raster[i] as usize
        } else {
            u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as usize
        };
        if v > maxval {
            return Err(malformed(c.pos + i * bytes, format!("sample {v} exceeds maxval {maxval}")));
        }
        data.push((v as f64 * scale) as f32);
    }
    Image::new(h, w, data)
}

/// Encodes `[0, 1]` samples with the given maxval (255 or 65535 typical).
pub fn encode_pgm(img: &Image, maxval: u16) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.w, img.h, maxval).into_bytes();
    let m = maxval as f64;
    for &v in &img.data {
        let q = (v as f64 * m).round().clamp(0.0, m) as u16;
        if maxval < 256 {
            out.push(q as u8);
        } else {
            out.extend_from_slice(&q.to_be_bytes());
        }
    }
    out
}

/// Reads a PGM file into `range`.
pub fn load_image(path: &Path, range: ValueRange) -> Result<Image> {
    let buf = std::fs::read(path)?;
    let unit = decode_pgm(&buf)?;
    Ok(unit.rescaled(ValueRange::Unit, range))
}

/// Writes a 16-bit PGM from an image with values in `range`.
pub fn save_image(img: &Image, range: ValueRange, path: &Path) -> Result<()> {
    let unit = img.rescaled(range, ValueRange::Unit);
    std::fs::write(path, encode_pgm(&unit, u16::MAX))?;
    Ok(())
}
