//! Binary PPM (P6, 8-bit) previews.

use std::fs;
use std::path::Path;

use super::{Dims, Image};
use crate::error::{Error, PfmError, Result};

/// Linear `[0,1] -> [0,255]` quantization with rounding.
pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let px = img.pixel(x, y);
            for c in 0..3 {
                let v = if img.channels() == 3 { px[c] } else { px[0] };
                out.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if bytes.get(pos) == Some(&b'#') {
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
            return Err(PfmError::UnexpectedEof.into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P6" {
        return Err(PfmError::Header(format!("bad magic {:?}", fields[0])).into());
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::from(PfmError::Header(format!("bad field {s:?}"))))
    };
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(PfmError::Header(format!("unsupported maxval {maxval}")).into());
    }
    pos += 1;
    let n = w
        .checked_mul(h)
        .and_then(|v| v.checked_mul(3))
        .ok_or(PfmError::DimensionOverflow(w, h))?;
    let payload = bytes.get(pos..pos + n).ok_or(PfmError::UnexpectedEof)?;
    Image::new(
        w,
        h,
        3,
        payload.iter().map(|&b| f64::from(b) / 255.0).collect(),
    )
}

pub fn write_ppm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes)
}
