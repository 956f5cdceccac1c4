//! Learnable coarse parameter field standing in for a depth network.
//!
//! A [`DepthField`] holds two coarse grids, log-depth and log-scale. The
//! forward pass bilinearly upsamples both grids (corner-aligned) to the
//! image size and exponentiates, so depth and scale are always positive.

use std::path::Path;

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::{DepthMap, UncKind, UncMap};
use crate::losses::LossConfig;
use crate::photometry::PhotometricConfig;
use crate::rng;

/// Optimization settings for one ensemble member.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub grid_w: usize,
    pub grid_h: usize,
    pub depth_init_mm: f64,
    pub sigma_init: f64,
    pub jitter: f64,
    pub optimizer: Optimizer,
    pub loss: LossConfig,
    pub photometric: PhotometricConfig,
    pub seed: u64,
}

/// Update rule applied with the fixed `learning_rate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    /// `theta -= lr * g`.
    GradientDescent,
    /// Adam with beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    #[default]
    Adam,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 800,
            learning_rate: 0.02,
            grid_w: 16,
            grid_h: 16,
            depth_init_mm: 30.0,
            sigma_init: 1.0,
            jitter: 0.05,
            optimizer: Optimizer::default(),
            loss: LossConfig::default(),
            photometric: PhotometricConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidParameter("steps must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter("learning_rate must be > 0".into()));
        }
        if self.grid_w == 0 || self.grid_h == 0 {
            return Err(Error::InvalidParameter("empty grid".into()));
        }
        self.loss.validate()?;
        self.photometric.validate()
    }

    /// Freshly initialized field for this configuration.
    pub fn init_field(&self) -> Result<DepthField> {
        init_random_with_sigma(
            self.seed,
            self.grid_w,
            self.grid_h,
            self.depth_init_mm,
            self.sigma_init,
            self.jitter,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthField {
    pub grid_w: usize,
    pub grid_h: usize,
    /// Log-depth per cell (log mm), row-major.
    pub log_depth: Vec<f64>,
    /// Log-scale per cell, row-major.
    pub log_sigma: Vec<f64>,
    /// Identity of the ensemble member.
    pub seed: u64,
}

/// Gradient with respect to both grids of a [`DepthField`].
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrad {
    pub log_depth: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

impl FieldGrad {
    pub fn zeros(cells: usize) -> Self {
        Self {
            log_depth: vec![0.0; cells],
            log_sigma: vec![0.0; cells],
        }
    }

    /// Concatenated `[log_depth, log_sigma]`, matching [`DepthField::params`].
    pub fn flat(&self) -> Vec<f64> {
        self.log_depth
            .iter()
            .chain(&self.log_sigma)
            .copied()
            .collect()
    }
}

/// Random initialization around `depth_init_mm` and a unit scale.
pub fn init_random(
    seed: u64,
    grid_w: usize,
    grid_h: usize,
    depth_init_mm: f64,
    jitter: f64,
) -> Result<DepthField> {
    init_random_with_sigma(seed, grid_w, grid_h, depth_init_mm, 1.0, jitter)
}

/// Like [`init_random`] with an explicit initial scale.
pub fn init_random_with_sigma(
    seed: u64,
    grid_w: usize,
    grid_h: usize,
    depth_init_mm: f64,
    sigma_init: f64,
    jitter: f64,
) -> Result<DepthField> {
    if !(depth_init_mm > 0.0) || !(sigma_init > 0.0) || !(jitter >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "init needs depth > 0, sigma > 0, jitter >= 0 (got {depth_init_mm}, {sigma_init}, {jitter})"
        )));
    }
    if grid_w == 0 || grid_h == 0 {
        return Err(Error::InvalidParameter("empty grid".into()));
    }
    let cells = grid_w * grid_h;
    let mut r = rng::stream(seed, "init");
    let mut noise = |base: f64| -> Vec<f64> {
        (0..cells)
            .map(|_| {
                if jitter == 0.0 {
                    base
                } else {
                    base + r.random_range(-jitter..jitter)
                }
            })
            .collect()
    };
    let log_depth = noise(depth_init_mm.ln());
    let log_sigma = noise(sigma_init.ln());
    Ok(DepthField {
        grid_w,
        grid_h,
        log_depth,
        log_sigma,
        seed,
    })
}

/// Corner-aligned interpolation taps along one axis.
#[derive(Debug, Clone)]
struct Taps(Vec<(usize, usize, f64)>);

impl Taps {
    fn new(grid: usize, pixels: usize) -> Self {
        Taps(
            (0..pixels)
                .map(|p| {
                    if grid == 1 || pixels == 1 {
                        return (0, 0, 0.0);
                    }
                    let u = p as f64 * (grid - 1) as f64 / (pixels - 1) as f64;
                    let i0 = (u.floor() as usize).min(grid - 2);
                    (i0, i0 + 1, u - i0 as f64)
                })
                .collect(),
        )
    }
}

/// Precomputed upsampling from a `grid_w x grid_h` grid to `w x h` pixels.
#[derive(Debug, Clone)]
pub struct Upsampler {
    grid_w: usize,
    w: usize,
    h: usize,
    xs: Taps,
    ys: Taps,
}

impl Upsampler {
    pub fn new(grid_w: usize, grid_h: usize, w: usize, h: usize) -> Result<Self> {
        if w < grid_w || h < grid_h || grid_w == 0 || grid_h == 0 {
            return Err(Error::InvalidParameter(format!(
                "image {w}x{h} must be at least the grid {grid_w}x{grid_h}"
            )));
        }
        Ok(Self {
            grid_w,
            w,
            h,
            xs: Taps::new(grid_w, w),
            ys: Taps::new(grid_h, h),
        })
    }

    pub fn upsample(&self, grid: &[f64]) -> Vec<f64> {
        let gw = self.grid_w;
        let mut out = Vec::with_capacity(self.w * self.h);
        for &(y0, y1, ty) in &self.ys.0 {
            for &(x0, x1, tx) in &self.xs.0 {
                let top = (1.0 - tx) * grid[y0 * gw + x0] + tx * grid[y0 * gw + x1];
                let bot = (1.0 - tx) * grid[y1 * gw + x0] + tx * grid[y1 * gw + x1];
                out.push((1.0 - ty) * top + ty * bot);
            }
        }
        out
    }

    /// Transpose of [`Upsampler::upsample`].
    pub fn adjoint(&self, pixels: &[f64], cells: usize) -> Vec<f64> {
        let gw = self.grid_w;
        let mut g = vec![0.0; cells];
        let mut i = 0;
        for &(y0, y1, ty) in &self.ys.0 {
            for &(x0, x1, tx) in &self.xs.0 {
                let v = pixels[i];
                i += 1;
                if v == 0.0 {
                    continue;
                }
                g[y0 * gw + x0] += (1.0 - ty) * (1.0 - tx) * v;
                g[y0 * gw + x1] += (1.0 - ty) * tx * v;
                g[y1 * gw + x0] += ty * (1.0 - tx) * v;
                g[y1 * gw + x1] += ty * tx * v;
            }
        }
        g
    }
}

impl DepthField {
    pub fn cells(&self) -> usize {
        self.grid_w * self.grid_h
    }

    pub fn validate(&self) -> Result<()> {
        let cells = self.cells();
        if cells == 0 || self.log_depth.len() != cells || self.log_sigma.len() != cells {
            return Err(Error::InvalidParameter(format!(
                "field grids do not match {}x{}",
                self.grid_w, self.grid_h
            )));
        }
        if !self
            .log_depth
            .iter()
            .chain(&self.log_sigma)
            .all(|v| v.is_finite())
        {
            return Err(Error::InvalidParameter("non-finite field".into()));
        }
        Ok(())
    }

    /// Flattened parameter vector `[log_depth, log_sigma]`.
    pub fn params(&self) -> Vec<f64> {
        self.log_depth
            .iter()
            .chain(&self.log_sigma)
            .copied()
            .collect()
    }

    pub fn set_params(&mut self, theta: &[f64]) {
        let n = self.cells();
        self.log_depth.copy_from_slice(&theta[..n]);
        self.log_sigma.copy_from_slice(&theta[n..2 * n]);
    }

    /// Raw upsampled-and-exponentiated maps, skipping map validation.
    pub(crate) fn forward_raw(&self, up: &Upsampler) -> (Vec<f64>, Vec<f64>) {
        let d = up.upsample(&self.log_depth).into_iter().map(f64::exp).collect();
        let s = up.upsample(&self.log_sigma).into_iter().map(f64::exp).collect();
        (d, s)
    }

    /// Chain rule through `exp` and the upsampling, given per-pixel
    /// gradients and the forward outputs.
    pub(crate) fn backward_raw(
        &self,
        up: &Upsampler,
        depth: &[f64],
        sigma: &[f64],
        grad_depth: &[f64],
        grad_sigma: &[f64],
    ) -> FieldGrad {
        let gd: Vec<f64> = depth.iter().zip(grad_depth).map(|(d, g)| d * g).collect();
        let gs: Vec<f64> = sigma.iter().zip(grad_sigma).map(|(s, g)| s * g).collect();
        FieldGrad {
            log_depth: up.adjoint(&gd, self.cells()),
            log_sigma: up.adjoint(&gs, self.cells()),
        }
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: DepthField = serde_json::from_str(&s)?;
        f.validate()?;
        Ok(f)
    }
}

/// Per-pixel depth and aleatoric scale of `field` at `w x h`.
pub fn forward(field: &DepthField, w: usize, h: usize) -> Result<(DepthMap, UncMap)> {
    field.validate()?;
    let up = Upsampler::new(field.grid_w, field.grid_h, w, h)?;
    let (d, s) = field.forward_raw(&up);
    Ok((DepthMap::new(w, h, d)?, UncMap::new(w, h, UncKind::Std, s)?))
}

/// Gradient of a loss with respect to the field, given the loss gradient
/// with respect to every output pixel.
pub fn backward(
    field: &DepthField,
    grad_depth: &[f64],
    grad_sigma: &[f64],
    w: usize,
    h: usize,
) -> Result<FieldGrad> {
    field.validate()?;
    if grad_depth.len() != w * h || grad_sigma.len() != w * h {
        return Err(Error::DataLength {
            width: w,
            height: h,
            channels: 1,
            got: grad_depth.len().min(grad_sigma.len()),
        });
    }
    let up = Upsampler::new(field.grid_w, field.grid_h, w, h)?;
    let (d, s) = field.forward_raw(&up);
    Ok(field.backward_raw(&up, &d, &s, grad_depth, grad_sigma))
}
