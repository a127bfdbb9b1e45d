//! Binary Netpbm I/O: P5 grayscale in and out, P6 color out.
//!
//! Canonical P5 output is `P5 <w> <h> <maxval>\n` followed by the payload,
//! where maxval is 255 when every sample fits a byte and 65535 otherwise.
//! 16-bit samples are big-endian.

use std::fs;
use std::path::Path;

use super::Raster;
use crate::error::{Error, Result};

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

pub fn write_pgm(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(raster)).map_err(|e| Error::io(path, e))
}

pub fn encode_pgm(raster: &Raster) -> Vec<u8> {
    let wide = raster.samples().iter().any(|&s| s > 255);
    let maxval = if wide { 65535 } else { 255 };
    let header = format!("P5 {} {} {}\n", raster.width(), raster.height(), maxval);
    let per = if wide { 2 } else { 1 };
    let mut out = Vec::with_capacity(header.len() + per * raster.samples().len());
    out.extend_from_slice(header.as_bytes());
    if wide {
        for &s in raster.samples() {
            out.extend_from_slice(&s.to_be_bytes());
        }
    } else {
        out.extend(raster.samples().iter().map(|&s| s as u8));
    }
    out
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self, what: &str) -> Result<&'a [u8]> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format(format!("missing {what} in header")));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self.token(what)?;
        let text = String::from_utf8_lossy(tok);
        text.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad {what} token `{text}`")))
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Raster> {
    let mut rd = HeaderReader { bytes, pos: 0 };
    let magic = rd.token("magic")?;
    if magic != b"P5" {
        return Err(Error::Format(format!(
            "bad magic token `{}`, expected `P5`",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = rd.number("width")?;
    let height = rd.number("height")?;
    let maxval = rd.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("bad dimensions token `{width} {height}`")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("bad maxval token `{maxval}`")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if rd.pos >= bytes.len() || !bytes[rd.pos].is_ascii_whitespace() {
        return Err(Error::Format("missing whitespace after maxval".into()));
    }
    let payload = &bytes[rd.pos + 1..];
    let per = if maxval > 255 { 2 } else { 1 };
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    let need = n * per;
    if payload.len() < need {
        return Err(Error::Truncated {
            expected: need,
            found: payload.len(),
        });
    }
    let samples: Vec<u16> = if per == 2 {
        payload[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        payload[..need].iter().map(|&b| u16::from(b)).collect()
    };
    if let Some(bad) = samples.iter().find(|&&s| usize::from(s) > maxval) {
        return Err(Error::Format(format!("sample {bad} exceeds maxval {maxval}")));
    }
    Raster::new(width, height, samples)
}

/// 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let header = format!("P6 {} {} 255\n", image.width, image.height);
    let mut out = Vec::with_capacity(header.len() + 3 * image.pixels.len());
    out.extend_from_slice(header.as_bytes());
    for px in &image.pixels {
        out.extend_from_slice(px);
    }
    out
}

pub fn write_ppm(image: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(image)).map_err(|e| Error::io(path, e))
}
