//! Binary PGM (P5) and PPM (P6) images with 8- or 16-bit samples.

use std::fs;
use std::path::Path;

use super::io::write_atomic;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Raw image: `channels` is 1 (P5) or 3 (P6); samples are interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

impl Pnm {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        maxval: u16,
        samples: Vec<u16>,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Format(format!(
                "{channels} channels: only gray or RGB"
            )));
        }
        if maxval == 0 {
            return Err(Error::Format("maxval must be positive".into()));
        }
        if width == 0 || height == 0 || samples.len() != width * height * channels {
            return Err(Error::Format(format!(
                "{} samples for {width}x{height}x{channels}",
                samples.len()
            )));
        }
        if let Some(s) = samples.iter().find(|&&s| s > maxval) {
            return Err(Error::Format(format!("sample {s} exceeds maxval {maxval}")));
        }
        Ok(Self {
            width,
            height,
            channels,
            maxval,
            samples,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out =
            format!("{magic}\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        if self.maxval < 256 {
            out.extend(self.samples.iter().map(|&s| s as u8));
        } else {
            for &s in &self.samples {
                out.extend_from_slice(&s.to_be_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let channels = match bytes.get(..2) {
            Some(b"P5") => 1,
            Some(b"P6") => 3,
            _ => return Err(Error::Format("bad magic: expected P5 or P6".into())),
        };
        let mut pos = 2;
        let mut fields = [0usize; 3];
        for f in &mut fields {
            *f = header_field(bytes, &mut pos)?;
        }
        // exactly one whitespace byte separates the header from the raster
        if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(Error::Format("missing whitespace after maxval".into()));
        }
        pos += 1;
        let [width, height, maxval] = fields;
        let maxval = u16::try_from(maxval)
            .ok()
            .filter(|&m| m > 0)
            .ok_or_else(|| Error::Format(format!("maxval {maxval} outside 1..=65535")))?;
        let count = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::Format(format!("dimensions {width}x{height} overflow")))?;
        let wide = maxval > 255;
        let need = count
            .checked_mul(if wide { 2 } else { 1 })
            .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
        let raster = bytes
            .get(pos..)
            .filter(|r| r.len() >= need)
            .ok_or_else(|| Error::Format(format!("truncated raster: need {need} bytes")))?;
        let samples = if wide {
            raster[..need]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect()
        } else {
            raster[..need].iter().map(|&b| b as u16).collect()
        };
        Self::new(width, height, channels, maxval, samples)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.encode())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

fn header_field(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::Format("truncated header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad header field at offset {start}")))
}

/// Maps `[lo, hi]` linearly onto `0..=maxval`, clamping and rounding.
pub fn quantize<T: Real>(v: T, range: (f64, f64), maxval: u16) -> u16 {
    let t = ((v.to_f64_lossy() - range.0) / (range.1 - range.0)).clamp(0.0, 1.0);
    (t * maxval as f64).round() as u16
}

pub fn dequantize<T: Real>(s: u16, range: (f64, f64), maxval: u16) -> T {
    T::from_f64_lossy(range.0 + s as f64 / maxval as f64 * (range.1 - range.0))
}

/// Grayscale image from an `[H, W]` tensor.
pub fn gray_from_tensor<T: Real>(img: &Tensor<T>, range: (f64, f64), maxval: u16) -> Result<Pnm> {
    if img.ndim() != 2 {
        return Err(Error::dim("gray_from_tensor", "rank", 2, img.ndim()));
    }
    let samples = img
        .data()
        .iter()
        .map(|&v| quantize(v, range, maxval))
        .collect();
    Pnm::new(img.shape()[1], img.shape()[0], 1, maxval, samples)
}

/// RGB preview from three bands (`rgb` indices) of a `[B, H, W]` tensor.
pub fn rgb_from_bands<T: Real>(
    img: &Tensor<T>,
    rgb: [usize; 3],
    range: (f64, f64),
    maxval: u16,
) -> Result<Pnm> {
    if img.ndim() != 3 {
        return Err(Error::dim("rgb_from_bands", "rank", 3, img.ndim()));
    }
    let (b, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    if let Some(&bad) = rgb.iter().find(|&&i| i >= b) {
        return Err(Error::dim("rgb_from_bands", "band", format!("< {b}"), bad));
    }
    let mut samples = Vec::with_capacity(h * w * 3);
    for p in 0..h * w {
        for &band in &rgb {
            samples.push(quantize(img.data()[band * h * w + p], range, maxval));
        }
    }
    Pnm::new(w, h, 3, maxval, samples)
}

/// Default preview bands: first three, or the single band repeated.
pub fn preview_bands(bands: usize) -> [usize; 3] {
    match bands {
        0 | 1 => [0, 0, 0],
        2 => [1, 0, 0],
        _ => [2, 1, 0],
    }
}
