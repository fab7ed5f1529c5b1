//! Binary PPM (P6) and PGM (P5) with 8-bit samples.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::path::Path;

/// Raw 8-bit raster, channel-interleaved as stored on disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image8 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

fn err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(err(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| err(start, format!("{what} out of range")))
    }
}

impl Image8 {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let channels = match bytes.get(..2) {
            Some(b"P6") => 3,
            Some(b"P5") => 1,
            _ => return Err(err(0, "expected P6 or P5 magic")),
        };
        let mut cur = Cursor { bytes, pos: 2 };
        let width = cur.number("width")?;
        let height = cur.number("height")?;
        let at = cur.pos;
        let maxval = cur.number("maxval")?;
        if width == 0 || height == 0 {
            return Err(err(at, "image dimensions must be positive"));
        }
        if maxval != 255 {
            return Err(err(at, format!("maxval {maxval} unsupported, only 255")));
        }
        match bytes.get(cur.pos) {
            Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
            _ => return Err(err(cur.pos, "expected whitespace after maxval")),
        }
        let len = channels * width * height;
        let raster = &bytes[cur.pos..];
        if raster.len() < len {
            return Err(err(bytes.len(), format!("truncated raster: need {len} bytes, found {}", raster.len())));
        }
        if raster.len() > len {
            return Err(err(cur.pos + len, "trailing bytes after raster"));
        }
        Ok(Image8 {
            channels,
            height,
            width,
            data: raster.to_vec(),
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    /// Planar C×H×W tensor with values `byte / 255`.
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.height * self.width;
        let mut data = vec![0.0; self.channels * plane];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &b) in px.iter().enumerate() {
                data[c * plane + i] = f64::from(b) / 255.0;
            }
        }
        Tensor::from_vec(&[self.channels, self.height, self.width], data).expect("positive dims")
    }

    /// Quantizes a C×H×W tensor in `[0, 1]` (clamped) to 8 bits.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (channels, height, width) = t.chw("write_image")?;
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!("cannot store {channels} channels as PPM/PGM")));
        }
        let plane = height * width;
        let mut data = vec![0u8; channels * plane];
        for i in 0..plane {
            for c in 0..channels {
                data[i * channels + c] = (t.data()[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        Ok(Image8 {
            channels,
            height,
            width,
            data,
        })
    }
}

/// Reads a PPM or PGM file as a tensor in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Tensor> {
    Ok(read_image8(path)?.to_tensor())
}

pub fn read_image8(path: &Path) -> Result<Image8> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Image8::parse(&bytes).map_err(|e| match e {
        Error::Parse { offset, message } => Error::Parse {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

pub fn write_image(path: &Path, t: &Tensor) -> Result<()> {
    write_image8(path, &Image8::from_tensor(t)?)
}

pub fn write_image8(path: &Path, img: &Image8) -> Result<()> {
    std::fs::write(path, img.encode()).map_err(|e| Error::io(path, e))
}

/// Converts a PGM raster to a 1×H×W mask: 255 → 1 (valid), 0 → 0 (missing).
pub fn mask_from_image(img: &Image8) -> Result<Tensor> {
    if img.channels != 1 {
        return Err(Error::InvalidArgument("mask must be a single-channel PGM".into()));
    }
    let data = img
        .data
        .iter()
        .enumerate()
        .map(|(i, &b)| match b {
            255 => Ok(1.0),
            0 => Ok(0.0),
            _ => Err(Error::InvalidArgument(format!(
                "mask pixel {i} is {b}; masks must be 0 (missing) or 255 (valid)"
            ))),
        })
        .collect::<Result<Vec<f64>>>()?;
    Tensor::from_vec(&[1, img.height, img.width], data)
}

/// Inverse of [`mask_from_image`]; entries must be exactly 0 or 1.
pub fn mask_to_image(mask: &Tensor) -> Result<Image8> {
    crate::metrics::mask_ratio(mask)?;
    Image8::from_tensor(mask)
}

pub fn read_mask(path: &Path) -> Result<Tensor> {
    mask_from_image(&read_image8(path)?)
}

pub fn write_mask(path: &Path, mask: &Tensor) -> Result<()> {
    write_image8(path, &mask_to_image(mask)?)
}
