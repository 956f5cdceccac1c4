//! Raster containers and bilinear sampling.
//!
//! Pixel centers sit at integer coordinates: the center of pixel `(0, 0)` is
//! `(0.0, 0.0)` and the image domain is `[0, w-1] x [0, h-1]`. Every raster is
//! row-major and immutable after construction.

mod pfm;
mod ppm;

pub use pfm::{read_pfm, write_pfm, PfmRaster};
pub use ppm::{read_ppm, write_ppm};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Anything with a pixel grid.
pub trait Dims {
    fn width(&self) -> usize;
    fn height(&self) -> usize;

    fn len_pixels(&self) -> usize {
        self.width() * self.height()
    }
}

/// Fails unless `b` has the same grid as `a`.
pub fn ensure_same_dims(a: &impl Dims, b: &impl Dims) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::DimensionMismatch {
            expected_w: a.width(),
            expected_h: a.height(),
            got_w: b.width(),
            got_h: b.height(),
        });
    }
    Ok(())
}

fn check_len(width: usize, height: usize, channels: usize, got: usize) -> Result<()> {
    let want = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels));
    if want != Some(got) {
        return Err(Error::DataLength {
            width,
            height,
            channels,
            got,
        });
    }
    Ok(())
}

fn check_finite(data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

macro_rules! impl_dims {
    ($($t:ty),*) => {$(
        impl Dims for $t {
            fn width(&self) -> usize { self.width }
            fn height(&self) -> usize { self.height }
        }
    )*};
}

/// Color (or gray) observation with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image, clamping every value into `[0, 1]`.
    pub fn new(width: usize, height: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Channels(channels));
        }
        check_len(width, height, channels, data.len())?;
        check_finite(&data)?;
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Channel-mean intensity map.
    pub fn gray(&self) -> ScalarMap {
        let c = self.channels as f64;
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f64>() / c)
            .collect();
        ScalarMap {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Single channel `c` as a scalar map.
    pub fn channel(&self, c: usize) -> ScalarMap {
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px[c])
            .collect();
        ScalarMap {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Bilinear sample into `out` (one value per channel).
    ///
    /// Returns `false` when the 2x2 footprint leaves the image domain; `out`
    /// is then left untouched.
    pub fn sample_into(&self, x: f64, y: f64, out: &mut [f64]) -> bool {
        let Some(fp) = Footprint::new(self.width, self.height, x, y) else {
            return false;
        };
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            let (v00, v10, v01, v11) = fp.corners(&self.data, self.width, self.channels, c);
            *o = fp.interp(v00, v10, v01, v11);
        }
        true
    }

    /// Like [`Image::sample_into`] but also returns the spatial derivatives of
    /// the interpolant with respect to `x` and `y`.
    pub fn sample_with_grad(
        &self,
        x: f64,
        y: f64,
        out: &mut [f64],
        dx: &mut [f64],
        dy: &mut [f64],
    ) -> bool {
        let Some(fp) = Footprint::new(self.width, self.height, x, y) else {
            return false;
        };
        for c in 0..self.channels {
            let (v00, v10, v01, v11) = fp.corners(&self.data, self.width, self.channels, c);
            out[c] = fp.interp(v00, v10, v01, v11);
            dx[c] = (1.0 - fp.ty) * (v10 - v00) + fp.ty * (v11 - v01);
            dy[c] = (1.0 - fp.tx) * (v01 - v00) + fp.tx * (v11 - v10);
        }
        true
    }

    /// Integer cell used by the interpolant at `(x, y)`, if inside the domain.
    pub fn sample_cell(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        Footprint::new(self.width, self.height, x, y).map(|fp| (fp.x0, fp.y0))
    }

    /// Replaces the intensities by `f(value)` (clamped again).
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
        }
    }
}

/// Samples `img` at continuous `(x, y)`; `valid` is false off-domain.
pub fn bilinear_sample(img: &Image, x: f64, y: f64) -> (Vec<f64>, bool) {
    let mut out = vec![0.0; img.channels];
    let valid = img.sample_into(x, y, &mut out);
    (out, valid)
}

struct Footprint {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    tx: f64,
    ty: f64,
}

impl Footprint {
    fn new(w: usize, h: usize, x: f64, y: f64) -> Option<Self> {
        if w == 0 || h == 0 || !x.is_finite() || !y.is_finite() {
            return None;
        }
        let (wmax, hmax) = ((w - 1) as f64, (h - 1) as f64);
        if x < 0.0 || y < 0.0 || x > wmax || y > hmax {
            return None;
        }
        let (x0, x1, tx) = axis(x, w);
        let (y0, y1, ty) = axis(y, h);
        Some(Self {
            x0,
            y0,
            x1,
            y1,
            tx,
            ty,
        })
    }

    fn corners(&self, data: &[f64], w: usize, ch: usize, c: usize) -> (f64, f64, f64, f64) {
        let at = |x: usize, y: usize| data[(y * w + x) * ch + c];
        (
            at(self.x0, self.y0),
            at(self.x1, self.y0),
            at(self.x0, self.y1),
            at(self.x1, self.y1),
        )
    }

    fn interp(&self, v00: f64, v10: f64, v01: f64, v11: f64) -> f64 {
        // weighted form is exact at the nodes (t = 0 or 1)
        let top = (1.0 - self.tx) * v00 + self.tx * v10;
        let bottom = (1.0 - self.tx) * v01 + self.tx * v11;
        (1.0 - self.ty) * top + self.ty * bottom
    }
}

// Lower index, upper index and fraction along one axis. The last node reuses
// the final cell with fraction 1 so the footprint never leaves the grid.
fn axis(v: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let i0 = (v.floor() as usize).min(n - 2);
    (i0, i0 + 1, v - i0 as f64)
}

/// Plain per-pixel scalar field (residuals, gradients, SSIM maps).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ScalarMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_len(width, height, 1, data.len())?;
        check_finite(&data)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub(crate) fn from_vec_unchecked(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Per-pixel depth in millimetres; every entry strictly positive and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_len(width, height, 1, data.len())?;
        check_finite(&data)?;
        if let Some(i) = data.iter().position(|&v| v <= 0.0) {
            return Err(Error::NonPositiveDepth {
                index: i,
                value: data[i],
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, depth: f64) -> Result<Self> {
        Self::new(width, height, vec![depth; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Multiplies every depth by `s > 0`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(
            self.width,
            self.height,
            self.data.iter().map(|v| v * s).collect(),
        )
    }
}

/// Whether an [`UncMap`] holds standard deviations or variances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UncKind {
    Std,
    Variance,
}

/// Per-pixel uncertainty, nonnegative and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct UncMap {
    width: usize,
    height: usize,
    kind: UncKind,
    data: Vec<f64>,
}

impl UncMap {
    pub fn new(width: usize, height: usize, kind: UncKind, data: Vec<f64>) -> Result<Self> {
        check_len(width, height, 1, data.len())?;
        check_finite(&data)?;
        if let Some(i) = data.iter().position(|&v| v < 0.0) {
            return Err(Error::NegativeUncertainty {
                index: i,
                value: data[i],
            });
        }
        Ok(Self {
            width,
            height,
            kind,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, kind: UncKind, value: f64) -> Result<Self> {
        Self::new(width, height, kind, vec![value; width * height])
    }

    pub fn kind(&self) -> UncKind {
        self.kind
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Standard-deviation view (square root if stored as variance).
    pub fn to_std(&self) -> UncMap {
        match self.kind {
            UncKind::Std => self.clone(),
            UncKind::Variance => self.with(UncKind::Std, f64::sqrt),
        }
    }

    /// Variance view (square if stored as std).
    pub fn to_variance(&self) -> UncMap {
        match self.kind {
            UncKind::Variance => self.clone(),
            UncKind::Std => self.with(UncKind::Variance, |v| v * v),
        }
    }

    fn with(&self, kind: UncKind, f: impl Fn(f64) -> f64) -> UncMap {
        UncMap {
            width: self.width,
            height: self.height,
            kind,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Per-pixel validity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        check_len(width, height, 1, data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn all(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn none(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Logical AND of two masks of equal size.
    pub fn and(&self, other: &Mask) -> Result<Mask> {
        ensure_same_dims(self, other)?;
        Ok(Mask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a && *b)
                .collect(),
        })
    }
}

impl_dims!(Image, ScalarMap, DepthMap, UncMap, Mask);
