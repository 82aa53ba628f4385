//! Binary PPM (P6), 8-bit RGB.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Interleaved 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::contract(format!("degenerate image size {width}×{height}")));
        }
        Ok(RgbImage {
            width,
            height,
            pixels: vec![0; width * height * 3],
        })
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height * 3 {
            return Err(Error::shape(format!(
                "{} bytes do not form a {width}×{height} RGB image",
                pixels.len()
            )));
        }
        Ok(RgbImage { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// `3×H×W` tensor with values scaled to `[0, 1]`.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let plane = self.width * self.height;
        let mut data = vec![T::zero(); 3 * plane];
        let inv = T::lit(1.0 / 255.0);
        for (p, rgb) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + p] = T::lit(f64::from(rgb[c])) * inv;
            }
        }
        Tensor::new([3, self.height, self.width], data).expect("image dimensions are positive")
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Truncated("PPM header".into()));
            }
            fields.push(&bytes[start..pos]);
        }
        if fields[0] != b"P6" {
            return Err(Error::Format("not a binary PPM (expected P6)".into()));
        }
        let number = |f: &[u8], what: &str| -> Result<usize> {
            std::str::from_utf8(f)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Format(format!("bad PPM {what}")))
        };
        let width = number(fields[1], "width")?;
        let height = number(fields[2], "height")?;
        if number(fields[3], "maxval")? != 255 {
            return Err(Error::Format("only 8-bit PPM (maxval 255) is supported".into()));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let len = width * height * 3;
        if bytes.len() < pos + len {
            return Err(Error::Truncated(format!("PPM raster needs {len} bytes")));
        }
        Self::from_pixels(width, height, bytes[pos..pos + len].to_vec())
    }
}

pub fn write_ppm(path: impl AsRef<Path>, image: &RgbImage) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, image.encode()).map_err(|e| Error::file(path, e))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    RgbImage::decode(&bytes).map_err(|e| match e {
        Error::Format(m) | Error::Truncated(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
