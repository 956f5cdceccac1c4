//! SSIM, the photometric residual and the edge-aware smoothness prior.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::{ensure_same_dims, DepthMap, Dims, Image, Mask, ScalarMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhotometricConfig {
    /// Weight of the SSIM term against the L1 term.
    pub alpha: f64,
    /// Side of the square SSIM window (odd, at least 3).
    pub ssim_window: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for PhotometricConfig {
    fn default() -> Self {
        Self {
            alpha: 0.85,
            ssim_window: 3,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
        }
    }
}

impl PhotometricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in [0,1], got {}",
                self.alpha
            )));
        }
        if self.ssim_window < 3 || self.ssim_window.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "ssim_window must be odd and >= 3, got {}",
                self.ssim_window
            )));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(Error::InvalidParameter("c1 and c2 must be > 0".into()));
        }
        Ok(())
    }
}

/// Box filter with replicate padding: `out[k] = mean over the window of v`.
fn box_filter(v: &[f64], w: usize, h: usize, radius: usize) -> Vec<f64> {
    let n = ((2 * radius + 1) * (2 * radius + 1)) as f64;
    let r = radius as isize;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in -r..=r {
                let yy = clamp_idx(y as isize + dy, h);
                for dx in -r..=r {
                    acc += v[yy * w + clamp_idx(x as isize + dx, w)];
                }
            }
            out[y * w + x] = acc / n;
        }
    }
    out
}

/// Adjoint of [`box_filter`]: scatters each `g[k]` back over its window.
fn box_filter_adjoint(g: &[f64], w: usize, h: usize, radius: usize) -> Vec<f64> {
    let n = ((2 * radius + 1) * (2 * radius + 1)) as f64;
    let r = radius as isize;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let gk = g[y * w + x] / n;
            if gk == 0.0 {
                continue;
            }
            for dy in -r..=r {
                let yy = clamp_idx(y as isize + dy, h);
                for dx in -r..=r {
                    out[yy * w + clamp_idx(x as isize + dx, w)] += gk;
                }
            }
        }
    }
    out
}

fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Windowed statistics of one channel pair, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct SsimChannel {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    var_a: Vec<f64>,
    var_b: Vec<f64>,
    cov: Vec<f64>,
    pub(crate) ssim: Vec<f64>,
}

impl SsimChannel {
    fn compute(a: &[f64], b: &[f64], w: usize, h: usize, cfg: &PhotometricConfig) -> Self {
        let r = cfg.ssim_window / 2;
        let mu_a = box_filter(a, w, h, r);
        let mu_b = box_filter(b, w, h, r);
        let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();
        let ea2 = box_filter(&sq(a), w, h, r);
        let eb2 = box_filter(&sq(b), w, h, r);
        let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
        let eab = box_filter(&ab, w, h, r);
        let n = w * h;
        let mut var_a = vec![0.0; n];
        let mut var_b = vec![0.0; n];
        let mut cov = vec![0.0; n];
        let mut ssim = vec![0.0; n];
        for k in 0..n {
            var_a[k] = ea2[k] - mu_a[k] * mu_a[k];
            var_b[k] = eb2[k] - mu_b[k] * mu_b[k];
            cov[k] = eab[k] - mu_a[k] * mu_b[k];
            let num = (2.0 * mu_a[k] * mu_b[k] + cfg.c1) * (2.0 * cov[k] + cfg.c2);
            let den = (mu_a[k] * mu_a[k] + mu_b[k] * mu_b[k] + cfg.c1)
                * (var_a[k] + var_b[k] + cfg.c2);
            ssim[k] = num / den;
        }
        Self {
            mu_a,
            mu_b,
            var_a,
            var_b,
            cov,
            ssim,
        }
    }

    /// Gradient of `sum_k g[k] * ssim[k]` with respect to the second image `b`.
    fn grad_b(
        &self,
        a: &[f64],
        b: &[f64],
        g: &[f64],
        w: usize,
        h: usize,
        cfg: &PhotometricConfig,
    ) -> Vec<f64> {
        let n = w * h;
        // per-window partials with respect to E[b], E[b^2] and E[ab]
        let mut d_mu = vec![0.0; n];
        let mut d_eb2 = vec![0.0; n];
        let mut d_eab = vec![0.0; n];
        for k in 0..n {
            if g[k] == 0.0 {
                continue;
            }
            let (ma, mb) = (self.mu_a[k], self.mu_b[k]);
            let n1 = 2.0 * ma * mb + cfg.c1;
            let n2 = 2.0 * self.cov[k] + cfg.c2;
            let d1 = ma * ma + mb * mb + cfg.c1;
            let d2 = self.var_a[k] + self.var_b[k] + cfg.c2;
            let s = self.ssim[k];
            let ds_dmu_b = 2.0 * ma * n2 / (d1 * d2) - s * 2.0 * mb / d1;
            let ds_dvar_b = -s / d2;
            let ds_dcov = 2.0 * n1 / (d1 * d2);
            d_mu[k] = g[k] * (ds_dmu_b - 2.0 * mb * ds_dvar_b - ma * ds_dcov);
            d_eb2[k] = g[k] * ds_dvar_b;
            d_eab[k] = g[k] * ds_dcov;
        }
        let r = cfg.ssim_window / 2;
        let s_mu = box_filter_adjoint(&d_mu, w, h, r);
        let s_eb2 = box_filter_adjoint(&d_eb2, w, h, r);
        let s_eab = box_filter_adjoint(&d_eab, w, h, r);
        (0..n)
            .map(|i| s_mu[i] + 2.0 * b[i] * s_eb2[i] + a[i] * s_eab[i])
            .collect()
    }
}

/// Per-pixel SSIM (channel mean of per-channel SSIM), box window with
/// replicate padding.
pub fn ssim_map(a: &Image, b: &Image, cfg: &PhotometricConfig) -> Result<ScalarMap> {
    cfg.validate()?;
    check_pair(a, b)?;
    let stats = ssim_channels(a, b, cfg);
    Ok(ScalarMap::from_vec_unchecked(
        a.width(),
        a.height(),
        channel_mean(&stats, a.len_pixels()),
    ))
}

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    ensure_same_dims(a, b)?;
    if a.channels() != b.channels() {
        return Err(Error::Channels(b.channels()));
    }
    Ok(())
}

fn ssim_channels(a: &Image, b: &Image, cfg: &PhotometricConfig) -> Vec<SsimChannel> {
    (0..a.channels())
        .map(|c| {
            SsimChannel::compute(
                a.channel(c).data(),
                b.channel(c).data(),
                a.width(),
                a.height(),
                cfg,
            )
        })
        .collect()
}

fn channel_mean(stats: &[SsimChannel], n: usize) -> Vec<f64> {
    let c = stats.len() as f64;
    (0..n)
        .map(|k| stats.iter().map(|s| s.ssim[k]).sum::<f64>() / c)
        .collect()
}

/// Photometric residual of one target against several warped sources.
#[derive(Debug, Clone)]
pub struct PhotometricResidual {
    pub residual: ScalarMap,
    pub valid: Mask,
    /// Index of the source attaining the minimum (meaningless where invalid).
    pub argmin: Vec<usize>,
    sources: Vec<SourceTerms>,
}

#[derive(Debug, Clone)]
struct SourceTerms {
    ssim: Vec<SsimChannel>,
    candidate: Vec<f64>,
}

/// `F_p[j] = min_s (1-alpha) L1 + alpha/2 (1 - SSIM)` over sources valid at
/// `j`; a pixel is valid iff at least one source is.
pub fn photometric_residual(
    target: &Image,
    warps: &[(Image, Mask)],
    cfg: &PhotometricConfig,
) -> Result<PhotometricResidual> {
    cfg.validate()?;
    if warps.is_empty() {
        return Err(Error::Empty("warped sources"));
    }
    let n = target.len_pixels();
    let ch = target.channels();
    let mut sources = Vec::with_capacity(warps.len());
    for (img, mask) in warps {
        check_pair(target, img)?;
        ensure_same_dims(target, mask)?;
        let ssim = ssim_channels(target, img, cfg);
        let s = channel_mean(&ssim, n);
        let candidate = (0..n)
            .map(|k| {
                let l1 = target.data()[k * ch..(k + 1) * ch]
                    .iter()
                    .zip(&img.data()[k * ch..(k + 1) * ch])
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
                    / ch as f64;
                (1.0 - cfg.alpha) * l1 + cfg.alpha / 2.0 * (1.0 - s[k])
            })
            .collect();
        sources.push(SourceTerms { ssim, candidate });
    }
    let mut fp = vec![0.0; n];
    let mut valid = vec![false; n];
    let mut argmin = vec![0; n];
    for k in 0..n {
        let mut best = f64::INFINITY;
        for (s, ((_, mask), terms)) in warps.iter().zip(&sources).enumerate() {
            if mask.data()[k] && terms.candidate[k] < best {
                best = terms.candidate[k];
                argmin[k] = s;
            }
        }
        if best.is_finite() {
            fp[k] = best;
            valid[k] = true;
        }
    }
    Ok(PhotometricResidual {
        residual: ScalarMap::from_vec_unchecked(target.width(), target.height(), fp),
        valid: Mask::new(target.width(), target.height(), valid)?,
        argmin,
        sources,
    })
}

impl PhotometricResidual {
    /// Backpropagates `upstream = dL/dF_p` to each warped image.
    ///
    /// Returns one gradient per source, laid out like the image data. Only the
    /// argmin source of a pixel receives its gradient.
    pub fn backward(
        &self,
        target: &Image,
        warps: &[(Image, Mask)],
        upstream: &[f64],
        cfg: &PhotometricConfig,
    ) -> Vec<Vec<f64>> {
        let (w, h, ch) = (target.width(), target.height(), target.channels());
        let n = w * h;
        let mut grads = Vec::with_capacity(warps.len());
        for (s, ((img, _), terms)) in warps.iter().zip(&self.sources).enumerate() {
            let picked = |k: usize| self.valid.data()[k] && self.argmin[k] == s;
            let mut g = vec![0.0; n * ch];
            for k in (0..n).filter(|&k| picked(k) && upstream[k] != 0.0) {
                for c in 0..ch {
                    let diff = target.data()[k * ch + c] - img.data()[k * ch + c];
                    let sign = if diff > 0.0 {
                        1.0
                    } else if diff < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    g[k * ch + c] -= upstream[k] * (1.0 - cfg.alpha) * sign / ch as f64;
                }
            }
            let g_ssim: Vec<f64> = (0..n)
                .map(|k| {
                    if picked(k) {
                        -upstream[k] * cfg.alpha / 2.0 / ch as f64
                    } else {
                        0.0
                    }
                })
                .collect();
            if g_ssim.iter().any(|&v| v != 0.0) {
                for c in 0..ch {
                    let a = target.channel(c);
                    let b = img.channel(c);
                    let gb = terms.ssim[c].grad_b(a.data(), b.data(), &g_ssim, w, h, cfg);
                    for k in 0..n {
                        g[k * ch + c] += gb[k];
                    }
                }
            }
            grads.push(g);
        }
        grads
    }

    /// Per-source candidate maps (before the minimum).
    pub fn candidates(&self) -> impl Iterator<Item = &[f64]> {
        self.sources.iter().map(|s| s.candidate.as_slice())
    }
}

/// Edge-aware smoothness on mean-normalized depth with image-edge weights.
pub fn edge_aware_smoothness(depth: &DepthMap, image: &Image) -> Result<ScalarMap> {
    edge_aware_smoothness_gray(depth, &image.gray())
}

/// Same as [`edge_aware_smoothness`] with an explicit intensity map.
pub fn edge_aware_smoothness_gray(depth: &DepthMap, gray: &ScalarMap) -> Result<ScalarMap> {
    ensure_same_dims(depth, gray)?;
    let (w, h) = (depth.width(), depth.height());
    let d = depth.data();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    if !(mean > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "mean depth must be positive, got {mean}"
        )));
    }
    let weights = EdgeWeights::new(gray);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut v = 0.0;
            if x + 1 < w {
                v += ((d[i + 1] - d[i]) / mean).abs() * weights.x[i];
            }
            if y + 1 < h {
                v += ((d[i + w] - d[i]) / mean).abs() * weights.y[i];
            }
            out[i] = v;
        }
    }
    Ok(ScalarMap::from_vec_unchecked(w, h, out))
}

/// `exp(-|forward difference|)` of the intensity, per axis.
#[derive(Debug, Clone)]
pub(crate) struct EdgeWeights {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl EdgeWeights {
    pub(crate) fn new(gray: &ScalarMap) -> Self {
        let (w, h) = (gray.width(), gray.height());
        let g = gray.data();
        let mut x = vec![0.0; w * h];
        let mut y = vec![0.0; w * h];
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                if c + 1 < w {
                    x[i] = (-(g[i + 1] - g[i]).abs()).exp();
                }
                if r + 1 < h {
                    y[i] = (-(g[i + w] - g[i]).abs()).exp();
                }
            }
        }
        Self { x, y }
    }
}

/// Mean of the smoothness map and its gradient with respect to every depth.
pub(crate) fn smoothness_mean_with_grad(
    d: &[f64],
    w: usize,
    h: usize,
    weights: &EdgeWeights,
) -> (f64, Vec<f64>) {
    let n = (w * h) as f64;
    let mean = d.iter().sum::<f64>() / n;
    // T = sum of weighted absolute differences of the raw depth
    let mut t = 0.0;
    let mut dt = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if c + 1 < w {
                let diff = d[i + 1] - d[i];
                t += diff.abs() * weights.x[i];
                let s = signum0(diff) * weights.x[i];
                dt[i + 1] += s;
                dt[i] -= s;
            }
            if r + 1 < h {
                let diff = d[i + w] - d[i];
                t += diff.abs() * weights.y[i];
                let s = signum0(diff) * weights.y[i];
                dt[i + w] += s;
                dt[i] -= s;
            }
        }
    }
    let value = t / (n * mean);
    let tail = t / (n * mean * mean * n);
    let grad = dt.iter().map(|g| g / (n * mean) - tail).collect();
    (value, grad)
}

pub(crate) fn signum0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
