//! Portable Float Map reader/writer.
//!
//! Layout: `PF` (3 channels) or `Pf` (1 channel), then `width height`, then a
//! scale line whose sign gives the byte order (negative = little endian),
//! then `width*height*channels` 32-bit floats stored bottom row first.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DepthMap, Dims, Image, UncKind, UncMap};
use crate::error::{Error, PfmError, Result};

/// Decoded PFM payload, rows ordered top to bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmRaster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl PfmRaster {
    /// Parses an in-memory PFM file.
    pub fn decode(bytes: &[u8]) -> Result<Self, PfmError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.token()?;
        let channels = match magic.as_str() {
            "PF" => 3,
            "Pf" => 1,
            other => return Err(PfmError::Header(format!("bad magic {other:?}"))),
        };
        let width = cur.dim()?;
        let height = cur.dim()?;
        let scale: f32 = cur
            .token()?
            .parse()
            .map_err(|_| PfmError::Header("bad scale".into()))?;
        if scale == 0.0 || !scale.is_finite() {
            return Err(PfmError::Header(format!("bad scale {scale}")));
        }
        // exactly one whitespace byte separates the header from the payload
        cur.skip_one_space()?;

        let count = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .filter(|n| n.checked_mul(4).is_some())
            .ok_or(PfmError::DimensionOverflow(width, height))?;
        let payload = &bytes[cur.pos..];
        if payload.len() < count * 4 {
            return Err(PfmError::UnexpectedEof);
        }
        let little = scale < 0.0;
        let row = width * channels;
        let mut data = vec![0f32; count];
        for (i, chunk) in payload[..count * 4].chunks_exact(4).enumerate() {
            let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
            let v = if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
            if !v.is_finite() {
                return Err(PfmError::NonFinite(i));
            }
            // file rows go bottom to top
            let (r, c) = (i / row, i % row);
            data[(height - 1 - r) * row + c] = v;
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Serializes as little-endian PFM.
    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "PF" } else { "Pf" };
        let mut out = format!("{magic}\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        out.reserve(self.data.len() * 4);
        let row = self.width * self.channels;
        for r in (0..self.height).rev() {
            for v in &self.data[r * row..(r + 1) * row] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    fn from_f64(width: usize, height: usize, channels: usize, data: &[f64]) -> Self {
        Self {
            width,
            height,
            channels,
            data: data.iter().map(|&v| v as f32).collect(),
        }
    }

    fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    fn expect_gray(&self) -> Result<()> {
        if self.channels != 1 {
            return Err(Error::Channels(self.channels));
        }
        Ok(())
    }

    pub fn into_image(self) -> Result<Image> {
        Image::new(self.width, self.height, self.channels, self.to_f64())
    }

    pub fn into_depth(self) -> Result<DepthMap> {
        self.expect_gray()?;
        DepthMap::new(self.width, self.height, self.to_f64())
    }

    pub fn into_unc(self, kind: UncKind) -> Result<UncMap> {
        self.expect_gray()?;
        UncMap::new(self.width, self.height, kind, self.to_f64())
    }
}

impl From<&DepthMap> for PfmRaster {
    fn from(m: &DepthMap) -> Self {
        Self::from_f64(m.width(), m.height(), 1, m.data())
    }
}

impl From<&UncMap> for PfmRaster {
    fn from(m: &UncMap) -> Self {
        Self::from_f64(m.width(), m.height(), 1, m.data())
    }
}

impl From<&Image> for PfmRaster {
    fn from(m: &Image) -> Self {
        Self::from_f64(m.width(), m.height(), m.channels(), m.data())
    }
}

impl From<&super::ScalarMap> for PfmRaster {
    fn from(m: &super::ScalarMap) -> Self {
        Self::from_f64(m.width(), m.height(), 1, m.data())
    }
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<PfmRaster> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(PfmRaster::decode(&bytes)?)
}

pub fn write_pfm(raster: impl Into<PfmRaster>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = raster.into().encode();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn token(&mut self) -> Result<String, PfmError> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PfmError::UnexpectedEof);
        }
        if self.pos - start > 32 {
            return Err(PfmError::Header("token too long".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map(str::to_owned)
            .map_err(|_| PfmError::Header("non-ascii header".into()))
    }

    fn dim(&mut self) -> Result<usize, PfmError> {
        let t = self.token()?;
        match t.parse::<usize>() {
            Ok(0) => Err(PfmError::Header("zero dimension".into())),
            Ok(v) => Ok(v),
            Err(_) if !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit()) => {
                Err(PfmError::DimensionOverflow(usize::MAX, usize::MAX))
            }
            Err(_) => Err(PfmError::Header(format!("bad dimension {t:?}"))),
        }
    }

    fn skip_one_space(&mut self) -> Result<(), PfmError> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => {
                self.pos += 1;
                Ok(())
            }
            Some(_) => Err(PfmError::Header("missing separator".into())),
            None => Err(PfmError::UnexpectedEof),
        }
    }
}
