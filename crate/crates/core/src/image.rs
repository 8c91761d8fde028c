//! Raster images and the netpbm formats used on disk (binary PPM for inputs, binary PGM
//! for heatmaps).

use std::fs;
use std::path::Path;

use crate::error::{Error, IoContext, Result};

/// 8-bit RGB image, row-major, interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height * 3] }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn to_tensor(&self) -> ImageTensor {
        ImageTensor {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f64::from(v) / 255.0).collect(),
        }
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode_ppm(bytes: &[u8]) -> Result<Self> {
        let (magic, w, h, maxval, body) = parse_netpbm_header(bytes)?;
        if magic != "P6" || maxval != 255 {
            return Err(Error::Format(format!("expected 8-bit binary PPM, got {magic} maxval {maxval}")));
        }
        if body.len() < w * h * 3 {
            return Err(Error::Format("truncated PPM body".into()));
        }
        Ok(Self { width: w, height: h, data: body[..w * h * 3].to_vec() })
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode_ppm()).at(path)
    }

    pub fn load_ppm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).at(path)?;
        Self::decode_ppm(&bytes)
    }
}

/// Floating point RGB image with channel values in `[0, 1]`, interleaved like [`RgbImage`].
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ImageTensor {
    #[inline]
    pub fn at(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }
}

/// 8-bit grayscale image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode_pgm(bytes: &[u8]) -> Result<Self> {
        let (magic, w, h, maxval, body) = parse_netpbm_header(bytes)?;
        if magic != "P5" || maxval != 255 {
            return Err(Error::Format(format!("expected 8-bit binary PGM, got {magic} maxval {maxval}")));
        }
        if body.len() < w * h {
            return Err(Error::Format("truncated PGM body".into()));
        }
        Ok(Self { width: w, height: h, data: body[..w * h].to_vec() })
    }
}

fn parse_netpbm_header(bytes: &[u8]) -> Result<(String, usize, usize, usize, &[u8])> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
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
            return Err(Error::Format("truncated netpbm header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad netpbm header field {s:?}")));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    Ok((fields.swap_remove(0), w, h, maxval, bytes.get(pos..).unwrap_or(&[])))
}
