//! Likelihood losses with per-pixel analytic gradients.
//!
//! Every loss has the Laplace-style form `r / s + ln s` per valid pixel,
//! averaged over the valid pixels. Predicted scales are clamped from below
//! at `sigma_min` before use; below the clamp their gradient is zero.
//!
//! Gradient maps hold derivatives of the *per-pixel* term. The derivative of
//! the scalar loss is the map divided by the number of valid pixels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::{ensure_same_dims, DepthMap, Dims, Mask, ScalarMap, UncKind, UncMap};
use crate::photometry::signum0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Floor for every predicted scale.
    pub sigma_min: f64,
    /// Weight of the edge-aware smoothness prior (self-supervised regime).
    pub lambda_u: f64,
    /// Coefficient of the squared-norm parameter prior.
    pub weight_decay: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            sigma_min: 1e-3,
            lambda_u: 1.0,
            weight_decay: 1e-6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0) || !self.sigma_min.is_finite() {
            return Err(Error::InvalidParameter("sigma_min must be > 0".into()));
        }
        if !(self.lambda_u >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidParameter(
                "lambda_u and weight_decay must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    /// Mean of `per_pixel` over valid pixels.
    pub scalar: f64,
    /// Per-pixel contribution, zero where masked.
    pub per_pixel: ScalarMap,
    /// Per-pixel derivative with respect to the prediction (`d_hat`); for the
    /// self-supervised loss, with respect to the photometric residual.
    pub grad_depth: ScalarMap,
    /// Per-pixel derivative with respect to the raw predicted scale.
    pub grad_sigma: ScalarMap,
    /// Number of pixels that entered the mean.
    pub valid: usize,
}

/// Slice-level result shared by the public losses and the trainer.
#[derive(Debug, Clone)]
pub(crate) struct Terms {
    pub scalar: f64,
    pub per_pixel: Vec<f64>,
    pub grad_mean: Vec<f64>,
    pub grad_sigma: Vec<f64>,
    pub valid: usize,
}

impl Terms {
    fn into_value(self, w: usize, h: usize) -> LossValue {
        LossValue {
            scalar: self.scalar,
            per_pixel: ScalarMap::from_vec_unchecked(w, h, self.per_pixel),
            grad_depth: ScalarMap::from_vec_unchecked(w, h, self.grad_mean),
            grad_sigma: ScalarMap::from_vec_unchecked(w, h, self.grad_sigma),
            valid: self.valid,
        }
    }
}

/// Per-pixel Laplace NLL with an optional additive label variance.
///
/// `scale = sqrt(extra_var + max(sigma, sigma_min)^2)`; with `extra_var`
/// zero the scale is the clamped sigma itself.
pub(crate) fn laplace_terms(
    label: &[f64],
    pred: &[f64],
    sigma: &[f64],
    extra_var: Option<&[f64]>,
    mask: &[bool],
    sigma_min: f64,
) -> Result<Terms> {
    let n = label.len();
    let mut per_pixel = vec![0.0; n];
    let mut grad_mean = vec![0.0; n];
    let mut grad_sigma = vec![0.0; n];
    let mut valid = 0usize;
    let mut sum = 0.0;
    for j in 0..n {
        if !mask[j] {
            continue;
        }
        let clamped = sigma[j] < sigma_min;
        let s_eff = if clamped { sigma_min } else { sigma[j] };
        let tv = extra_var.map_or(0.0, |v| v[j]);
        let scale = if tv == 0.0 {
            s_eff
        } else {
            (tv + s_eff * s_eff).sqrt()
        };
        let diff = label[j] - pred[j];
        let r = diff.abs();
        let term = r / scale + scale.ln();
        per_pixel[j] = term;
        sum += term;
        valid += 1;
        grad_mean[j] = -signum0(diff) / scale;
        if !clamped {
            let d_scale = -r / (scale * scale) + 1.0 / scale;
            grad_sigma[j] = if tv == 0.0 {
                d_scale
            } else {
                d_scale * s_eff / scale
            };
        }
    }
    if valid == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok(Terms {
        scalar: sum / valid as f64,
        per_pixel,
        grad_mean,
        grad_sigma,
        valid,
    })
}

fn std_data(u: &UncMap) -> Result<&[f64]> {
    if u.kind() != UncKind::Std {
        return Err(Error::InvalidParameter(
            "expected a standard-deviation map".into(),
        ));
    }
    Ok(u.data())
}

/// `mean_valid(|d - d_hat| / sigma + ln sigma)`.
pub fn supervised_nll(
    d: &DepthMap,
    d_hat: &DepthMap,
    sigma_a: &UncMap,
    mask: &Mask,
    cfg: &LossConfig,
) -> Result<LossValue> {
    cfg.validate()?;
    ensure_same_dims(d, d_hat)?;
    ensure_same_dims(d, sigma_a)?;
    ensure_same_dims(d, mask)?;
    laplace_terms(
        d.data(),
        d_hat.data(),
        std_data(sigma_a)?,
        None,
        mask.data(),
        cfg.sigma_min,
    )
    .map(|t| t.into_value(d.width(), d.height()))
}

/// `mean_valid(F_p / u + ln u)`; `grad_depth` holds the derivative with
/// respect to `F_p`.
pub fn selfsup_nll(
    residual: &ScalarMap,
    u_hat: &UncMap,
    valid: &Mask,
    cfg: &LossConfig,
) -> Result<LossValue> {
    cfg.validate()?;
    ensure_same_dims(residual, u_hat)?;
    ensure_same_dims(residual, valid)?;
    if let Some(i) = residual.data().iter().position(|&v| v < 0.0) {
        return Err(Error::InvalidParameter(format!(
            "negative photometric residual at {i}"
        )));
    }
    let zeros = vec![0.0; residual.len_pixels()];
    let mut t = laplace_terms(
        residual.data(),
        &zeros,
        std_data(u_hat)?,
        None,
        valid.data(),
        cfg.sigma_min,
    )?;
    // residual enters as +F_p rather than |label - pred|
    for g in &mut t.grad_mean {
        *g = -*g;
    }
    Ok(t.into_value(residual.width(), residual.height()))
}

/// Teacher-student loss whose scale is `sqrt(sigma_T^2 + sigma_a^2)`;
/// `grad_sigma` is with respect to the student's `sigma_a`.
pub fn uncertain_teacher_nll(
    d_teacher: &DepthMap,
    sigma_teacher: &UncMap,
    d_hat: &DepthMap,
    sigma_a: &UncMap,
    mask: &Mask,
    cfg: &LossConfig,
) -> Result<LossValue> {
    cfg.validate()?;
    ensure_same_dims(d_teacher, sigma_teacher)?;
    ensure_same_dims(d_teacher, d_hat)?;
    ensure_same_dims(d_teacher, sigma_a)?;
    ensure_same_dims(d_teacher, mask)?;
    let teacher_var = sigma_teacher.to_variance();
    laplace_terms(
        d_teacher.data(),
        d_hat.data(),
        std_data(sigma_a)?,
        Some(teacher_var.data()),
        mask.data(),
        cfg.sigma_min,
    )
    .map(|t| t.into_value(d_hat.width(), d_hat.height()))
}

/// Baseline distillation: the supervised loss with teacher depth as label.
pub fn plain_student_nll(
    d_teacher: &DepthMap,
    d_hat: &DepthMap,
    sigma_a: &UncMap,
    mask: &Mask,
    cfg: &LossConfig,
) -> Result<LossValue> {
    supervised_nll(d_teacher, d_hat, sigma_a, mask, cfg)
}

/// `weight_decay * |theta|^2` and its gradient.
pub fn prior_loss(theta: &[f64], cfg: &LossConfig) -> (f64, Vec<f64>) {
    let value = cfg.weight_decay * theta.iter().map(|t| t * t).sum::<f64>();
    let grad = theta.iter().map(|t| 2.0 * cfg.weight_decay * t).collect();
    (value, grad)
}
