//! Minimal reader for plain (P2) and raw (P5) PGM files.

use crate::error::{Error, Result};

/// A decoded grayscale raster, row 0 at the top.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u16>,
}

impl GrayImage {
    pub fn get(&self, col: usize, row: usize) -> u16 {
        self.pixels[row * self.width + col]
    }
}

fn err(offset: usize, message: impl Into<String>) -> Error {
    Error::Pgm { offset, message: message.into() }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn header_uint(&mut self, what: &str) -> Result<u64> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(match self.bytes.get(self.pos) {
                None => err(self.pos, format!("unexpected end of file while reading {what}")),
                Some(&c) => err(
                    self.pos,
                    format!("expected decimal {what}, found {:?}", c as char),
                ),
            });
        }
        if let Some(&c) = self.bytes.get(self.pos) {
            if !c.is_ascii_whitespace() && c != b'#' {
                return Err(err(
                    self.pos,
                    format!("unexpected character {:?} after {what}", c as char),
                ));
            }
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| err(start, format!("{what} is out of range")))
    }
}

/// Decodes a PGM file held in memory.
pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 {
        return Err(err(0, "file too short for a magic number"));
    }
    let binary = match &bytes[..2] {
        b"P2" => false,
        b"P5" => true,
        other => {
            return Err(err(
                0,
                format!("unsupported magic {:?}, expected P2 or P5", String::from_utf8_lossy(other)),
            ))
        }
    };
    let mut cur = Cursor { bytes, pos: 2 };
    match bytes.get(2) {
        Some(c) if c.is_ascii_whitespace() || *c == b'#' => {}
        Some(_) => return Err(err(2, "magic number must be followed by whitespace")),
        None => return Err(err(2, "unexpected end of file after magic number")),
    }

    let width_at = {
        cur.skip_space_and_comments();
        cur.pos
    };
    let width = cur.header_uint("width")?;
    let height_at = {
        cur.skip_space_and_comments();
        cur.pos
    };
    let height = cur.header_uint("height")?;
    let maxval_at = {
        cur.skip_space_and_comments();
        cur.pos
    };
    let maxval = cur.header_uint("maxval")?;
    if width == 0 {
        return Err(err(width_at, "width must be positive"));
    }
    if height == 0 {
        return Err(err(height_at, "height must be positive"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(err(maxval_at, format!("maxval {maxval} outside 1..=65535")));
    }
    let count = (width as usize)
        .checked_mul(height as usize)
        .ok_or_else(|| err(width_at, "image dimensions overflow"))?;
    let maxval = maxval as u16;

    let mut pixels = Vec::with_capacity(count);
    if binary {
        // Exactly one whitespace byte separates the header from the raster.
        match bytes.get(cur.pos) {
            Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
            _ => return Err(err(cur.pos, "expected a single whitespace byte before raster")),
        }
        let sample = if maxval < 256 { 1 } else { 2 };
        let need = count * sample;
        let have = bytes.len() - cur.pos;
        if have < need {
            return Err(err(
                bytes.len(),
                format!("truncated raster: expected {need} bytes, found {have}"),
            ));
        }
        for k in 0..count {
            let at = cur.pos + k * sample;
            let v = if sample == 1 {
                bytes[at] as u16
            } else {
                u16::from_be_bytes([bytes[at], bytes[at + 1]])
            };
            if v > maxval {
                return Err(err(at, format!("sample {v} exceeds maxval {maxval}")));
            }
            pixels.push(v);
        }
    } else {
        for _ in 0..count {
            cur.skip_space_and_comments();
            if cur.pos >= bytes.len() {
                return Err(err(
                    bytes.len(),
                    format!("truncated raster: expected {count} samples, found {}", pixels.len()),
                ));
            }
            let at = cur.pos;
            let v = cur.header_uint("sample")?;
            if v > maxval as u64 {
                return Err(err(at, format!("sample {v} exceeds maxval {maxval}")));
            }
            pixels.push(v as u16);
        }
    }
    Ok(GrayImage { width: width as usize, height: height as usize, maxval, pixels })
}

/// Encodes an 8-bit raw PGM.
pub fn write_p5(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}
