//! Training of parameter fields and the finite-difference gradient audit.
//!
//! One objective covers every regime: the mean over samples of the regime's
//! likelihood term (plus the smoothness prior for photometric samples) and
//! the squared-norm prior on the parameters. Its analytic gradient is
//! assembled per pixel and pulled back through the field upsampling.

use std::fmt;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{Unit, Vector3};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{fuse, selfsup_fuse, EnsembleOutput, Member};
use crate::error::{Error, Result};
use crate::geometry::{warp_pixel_with_grad, CameraIntrinsics, Pose};
use crate::imagery::{ensure_same_dims, DepthMap, Dims, Image, Mask, UncKind, UncMap};
use crate::losses::{laplace_terms, prior_loss, selfsup_nll};
use crate::photometry::{photometric_residual, smoothness_mean_with_grad, EdgeWeights};
use crate::predictor::{forward, DepthField, Optimizer, TrainConfig, Upsampler};
use crate::rng;
use crate::synthcolon::{relative_pose, simulate_sfm_labels, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    SupervisedGt,
    SupervisedSfm,
    SelfSupervised,
    PlainStudent,
    UncertainStudent,
}

impl Regime {
    pub const ALL: [Regime; 5] = [
        Regime::SupervisedGt,
        Regime::SupervisedSfm,
        Regime::SelfSupervised,
        Regime::PlainStudent,
        Regime::UncertainStudent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::SupervisedGt => "supervised-gt",
            Regime::SupervisedSfm => "supervised-sfm",
            Regime::SelfSupervised => "self-supervised",
            Regime::PlainStudent => "plain-student",
            Regime::UncertainStudent => "uncertain-student",
        }
    }

    fn wants(self) -> &'static str {
        match self {
            Regime::SupervisedGt | Regime::SupervisedSfm => "depth labels",
            Regime::SelfSupervised => "image triplets",
            Regime::PlainStudent | Regime::UncertainStudent => "teacher maps",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = Regime::ALL.iter().map(|r| r.name()).collect();
                Error::InvalidParameter(format!(
                    "unknown regime {s:?}; valid regimes: {}",
                    valid.join(", ")
                ))
            })
    }
}

/// A source view and the target-to-source pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    pub image: Image,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sample {
    /// Ground-truth or SfM labels.
    Labels { depth: DepthMap, mask: Mask },
    /// Target image with its previous and posterior views.
    Photometric {
        target: Image,
        sources: Vec<Source>,
        k: CameraIntrinsics,
    },
    /// Fixed teacher depth and total standard deviation.
    Teacher {
        depth: DepthMap,
        sigma: UncMap,
        mask: Mask,
    },
}

impl Sample {
    fn dims(&self) -> (usize, usize) {
        match self {
            Sample::Labels { depth, .. } | Sample::Teacher { depth, .. } => {
                (depth.width(), depth.height())
            }
            Sample::Photometric { target, .. } => (target.width(), target.height()),
        }
    }

    fn fits(&self, regime: Regime) -> bool {
        matches!(
            (self, regime),
            (Sample::Labels { .. }, Regime::SupervisedGt | Regime::SupervisedSfm)
                | (Sample::Photometric { .. }, Regime::SelfSupervised)
                | (
                    Sample::Teacher { .. },
                    Regime::PlainStudent | Regime::UncertainStudent
                )
        )
    }

    fn validate(&self) -> Result<()> {
        match self {
            Sample::Labels { depth, mask } => ensure_same_dims(depth, mask),
            Sample::Teacher { depth, sigma, mask } => {
                ensure_same_dims(depth, sigma)?;
                ensure_same_dims(depth, mask)
            }
            Sample::Photometric {
                target,
                sources,
                k,
            } => {
                k.validate()?;
                if sources.is_empty() {
                    return Err(Error::Empty("source views"));
                }
                for s in sources {
                    ensure_same_dims(target, &s.image)?;
                    if s.image.channels() != target.channels() {
                        return Err(Error::Channels(s.image.channels()));
                    }
                }
                Ok(())
            }
        }
    }
}

/// Training samples sharing one field; the loss averages over them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub samples: Vec<Sample>,
}

/// Settings for turning rendered depth into SfM-like labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SfmConfig {
    pub hole_fraction: f64,
    pub noise_rel: f64,
    pub global_scale: f64,
}

impl Default for SfmConfig {
    fn default() -> Self {
        Self {
            hole_fraction: 0.3,
            noise_rel: 0.05,
            global_scale: 0.7,
        }
    }
}

/// Perturbation applied to ground-truth relative poses.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseNoise {
    pub rotation_deg: f64,
    pub translation_mm: f64,
}

impl TrainData {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("training samples"))?;
        let dims = first.dims();
        for s in &samples {
            s.validate()?;
            if s.dims() != dims {
                return Err(Error::DimensionMismatch {
                    expected_w: dims.0,
                    expected_h: dims.1,
                    got_w: s.dims().0,
                    got_h: s.dims().1,
                });
            }
        }
        Ok(Self { samples })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.samples[0].dims()
    }

    pub fn check_regime(&self, regime: Regime) -> Result<()> {
        match self.samples.iter().position(|s| !s.fits(regime)) {
            Some(i) => Err(Error::InvalidParameter(format!(
                "regime {regime} needs {} (sample {i} does not match)",
                regime.wants()
            ))),
            None => Ok(()),
        }
    }

    /// Joins bundles of the same kind and size.
    pub fn concat(parts: impl IntoIterator<Item = TrainData>) -> Result<Self> {
        Self::new(parts.into_iter().flat_map(|d| d.samples).collect())
    }

    fn check_target(ds: &Dataset, t: usize, interior: bool) -> Result<()> {
        let n = ds.frames.len();
        let ok = if interior { t >= 1 && t + 1 < n } else { t < n };
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "target frame {t} unusable in a {n}-frame dataset"
            )));
        }
        Ok(())
    }

    /// Ground-truth labels on the rendered (hit) pixels.
    pub fn supervised_gt(ds: &Dataset, targets: &[usize]) -> Result<Self> {
        let mut samples = Vec::new();
        for &t in targets {
            Self::check_target(ds, t, false)?;
            let v = &ds.frames[t].view;
            samples.push(Sample::Labels {
                depth: v.depth.clone(),
                mask: v.valid.clone(),
            });
        }
        Self::new(samples)
    }

    /// SfM-like labels; each target draws its own holes and noise.
    pub fn supervised_sfm(
        ds: &Dataset,
        targets: &[usize],
        sfm: &SfmConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut samples = Vec::new();
        for &t in targets {
            Self::check_target(ds, t, false)?;
            let v = &ds.frames[t].view;
            let (depth, holes) = simulate_sfm_labels(
                &v.depth,
                seed.wrapping_add(t as u64),
                sfm.hole_fraction,
                sfm.noise_rel,
                sfm.global_scale,
            )?;
            samples.push(Sample::Labels {
                depth,
                mask: holes.and(&v.valid)?,
            });
        }
        Self::new(samples)
    }

    /// Target frame `t` with frames `t-1` and `t+1` as sources.
    pub fn self_supervised(
        ds: &Dataset,
        targets: &[usize],
        noise: &PoseNoise,
        seed: u64,
    ) -> Result<Self> {
        let mut r = rng::stream(seed, "pose-noise");
        let mut samples = Vec::new();
        for &t in targets {
            Self::check_target(ds, t, true)?;
            let tgt = &ds.frames[t];
            let mut sources = Vec::new();
            for s in [t - 1, t + 1] {
                let src = &ds.frames[s];
                let pose = perturb(&relative_pose(&tgt.pose, &src.pose), noise, &mut r);
                sources.push(Source {
                    image: src.view.image.clone(),
                    pose,
                });
            }
            samples.push(Sample::Photometric {
                target: tgt.view.image.clone(),
                sources,
                k: ds.intrinsics,
            });
        }
        Self::new(samples)
    }

    /// Teacher depth and total standard deviation as labels.
    pub fn student(teacher: &EnsembleOutput, mask: &Mask) -> Result<Self> {
        Self::new(vec![Sample::Teacher {
            depth: teacher.d_hat.clone(),
            sigma: teacher.var_t.to_std(),
            mask: mask.clone(),
        }])
    }
}

fn perturb(pose: &Pose, noise: &PoseNoise, r: &mut rng::Rng) -> Pose {
    if noise.rotation_deg == 0.0 && noise.translation_mm == 0.0 {
        return *pose;
    }
    let mut g = || -> f64 { StandardNormal.sample(&mut *r) };
    let axis = Vector3::new(g(), g(), g());
    let angle = noise.rotation_deg.to_radians() * g();
    let dt = Vector3::new(g(), g(), g()) * noise.translation_mm;
    let rot = match Unit::try_new(axis, 1e-12) {
        Some(a) => Pose::from_axis_angle(a.into_inner(), angle, Vector3::zeros()),
        None => Pose::identity(),
    };
    let p = rot.compose(pose);
    Pose::from_translation(dt).compose(&p)
}

/// Loss value, gradient and the discrete state it was computed in.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Hash of every branch taken (signs, argmins, clamps, interpolation
    /// cells); equal signatures mean the loss is smooth between two points.
    pub signature: u64,
}

/// Full training objective for one regime and data bundle.
pub struct Objective<'a> {
    regime: Regime,
    data: &'a TrainData,
    cfg: TrainConfig,
    up: Upsampler,
    edges: Vec<Option<EdgeWeights>>,
}

struct PixelGrads {
    loss: f64,
    depth: Vec<f64>,
    sigma: Vec<f64>,
}

impl<'a> Objective<'a> {
    pub fn new(regime: Regime, data: &'a TrainData, cfg: &TrainConfig) -> Result<Self> {
        cfg.loss.validate()?;
        cfg.photometric.validate()?;
        data.check_regime(regime)?;
        let (w, h) = data.dims();
        let up = Upsampler::new(cfg.grid_w, cfg.grid_h, w, h)?;
        let edges = data
            .samples
            .iter()
            .map(|s| match s {
                Sample::Photometric { target, .. } => Some(EdgeWeights::new(&target.gray())),
                _ => None,
            })
            .collect();
        Ok(Self {
            regime,
            data,
            cfg: *cfg,
            up,
            edges,
        })
    }

    pub fn evaluate(&self, field: &DepthField) -> Result<Evaluation> {
        if field.grid_w != self.cfg.grid_w || field.grid_h != self.cfg.grid_h {
            return Err(Error::InvalidParameter(format!(
                "field grid {}x{} does not match the configured {}x{}",
                field.grid_w, field.grid_h, self.cfg.grid_w, self.cfg.grid_h
            )));
        }
        let (d, s) = field.forward_raw(&self.up);
        let n = d.len();
        let mut hasher = DefaultHasher::new();
        let mut loss = 0.0;
        let mut gd = vec![0.0; n];
        let mut gs = vec![0.0; n];
        let weight = 1.0 / self.data.samples.len() as f64;
        for (sample, edges) in self.data.samples.iter().zip(&self.edges) {
            let px = self.sample_terms(sample, edges.as_ref(), &d, &s, &mut hasher)?;
            loss += weight * px.loss;
            for j in 0..n {
                gd[j] += weight * px.depth[j];
                gs[j] += weight * px.sigma[j];
            }
        }
        let theta = field.params();
        let (prior, prior_grad) = prior_loss(&theta, &self.cfg.loss);
        let mut grad = field.backward_raw(&self.up, &d, &s, &gd, &gs).flat();
        for (g, p) in grad.iter_mut().zip(prior_grad) {
            *g += p;
        }
        Ok(Evaluation {
            loss: loss + prior,
            grad,
            signature: hasher.finish(),
        })
    }

    fn sample_terms(
        &self,
        sample: &Sample,
        edges: Option<&EdgeWeights>,
        d: &[f64],
        s: &[f64],
        hasher: &mut DefaultHasher,
    ) -> Result<PixelGrads> {
        let smin = self.cfg.loss.sigma_min;
        let clamp_state = |mask: &[bool], hasher: &mut DefaultHasher| {
            for (j, &m) in mask.iter().enumerate() {
                if m {
                    (s[j] < smin).hash(hasher);
                }
            }
        };
        match sample {
            Sample::Labels { depth, mask } => {
                let t = laplace_terms(depth.data(), d, s, None, mask.data(), smin)?;
                hash_signs(depth.data(), d, mask.data(), hasher);
                clamp_state(mask.data(), hasher);
                Ok(per_pixel(t.scalar, &t.grad_mean, &t.grad_sigma, t.valid))
            }
            Sample::Teacher { depth, sigma, mask } => {
                let var = sigma.to_variance();
                let extra = match self.regime {
                    Regime::UncertainStudent => Some(var.data()),
                    _ => None,
                };
                let t = laplace_terms(depth.data(), d, s, extra, mask.data(), smin)?;
                hash_signs(depth.data(), d, mask.data(), hasher);
                clamp_state(mask.data(), hasher);
                Ok(per_pixel(t.scalar, &t.grad_mean, &t.grad_sigma, t.valid))
            }
            Sample::Photometric {
                target,
                sources,
                k,
            } => {
                let edges = edges.expect("edge weights are built for photometric samples");
                self.photometric_terms(target, sources, k, edges, d, s, hasher)
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn photometric_terms(
        &self,
        target: &Image,
        sources: &[Source],
        k: &CameraIntrinsics,
        edges: &EdgeWeights,
        d: &[f64],
        s: &[f64],
        hasher: &mut DefaultHasher,
    ) -> Result<PixelGrads> {
        let (w, h, ch) = (target.width(), target.height(), target.channels());
        let n = w * h;
        let pcfg = &self.cfg.photometric;
        let mut warps = Vec::with_capacity(sources.len());
        // derivative of every warped intensity with respect to the target depth
        let mut d_img_d_depth = Vec::with_capacity(sources.len());
        let (mut dx, mut dy) = (vec![0.0; ch], vec![0.0; ch]);
        for src in sources {
            let mut data = vec![0.0; n * ch];
            let mut valid = vec![false; n];
            let mut deriv = vec![0.0; n * ch];
            for j in 0..n {
                let pix = [(j % w) as f64, (j / w) as f64];
                let wp = warp_pixel_with_grad(pix, d[j], k, &src.pose, w, h);
                if !wp.valid {
                    false.hash(hasher);
                    continue;
                }
                let out = &mut data[j * ch..(j + 1) * ch];
                if !src.image.sample_with_grad(wp.coord[0], wp.coord[1], out, &mut dx, &mut dy) {
                    false.hash(hasher);
                    continue;
                }
                valid[j] = true;
                src.image.sample_cell(wp.coord[0], wp.coord[1]).hash(hasher);
                for c in 0..ch {
                    deriv[j * ch + c] =
                        dx[c] * wp.d_coord_d_depth[0] + dy[c] * wp.d_coord_d_depth[1];
                }
            }
            warps.push((Image::new(w, h, ch, data)?, Mask::new(w, h, valid)?));
            d_img_d_depth.push(deriv);
        }
        let res = photometric_residual(target, &warps, pcfg)?;
        let u = UncMap::new(w, h, UncKind::Std, s.to_vec())?;
        let nll = selfsup_nll(&res.residual, &u, &res.valid, &self.cfg.loss)?;
        let inv = 1.0 / nll.valid as f64;
        let upstream: Vec<f64> = nll.grad_depth.data().iter().map(|g| g * inv).collect();
        let img_grads = res.backward(target, &warps, &upstream, pcfg);

        let mut gd = vec![0.0; n];
        for (gi, deriv) in img_grads.iter().zip(&d_img_d_depth) {
            for j in 0..n {
                for c in 0..ch {
                    gd[j] += gi[j * ch + c] * deriv[j * ch + c];
                }
            }
        }
        for j in 0..n {
            if res.valid.data()[j] {
                res.argmin[j].hash(hasher);
                let (img, _) = &warps[res.argmin[j]];
                for c in 0..ch {
                    let diff = target.data()[j * ch + c] - img.data()[j * ch + c];
                    diff.partial_cmp(&0.0).hash(hasher);
                }
                (s[j] < self.cfg.loss.sigma_min).hash(hasher);
            }
        }
        let lambda = self.cfg.loss.lambda_u;
        let (smooth, smooth_grad) = smoothness_mean_with_grad(d, w, h, edges);
        for (g, sg) in gd.iter_mut().zip(&smooth_grad) {
            *g += lambda * sg;
        }
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                if c + 1 < w {
                    (d[i + 1] - d[i]).partial_cmp(&0.0).hash(hasher);
                }
                if r + 1 < h {
                    (d[i + w] - d[i]).partial_cmp(&0.0).hash(hasher);
                }
            }
        }
        let gs = nll.grad_sigma.data().iter().map(|g| g * inv).collect();
        Ok(PixelGrads {
            loss: nll.scalar + lambda * smooth,
            depth: gd,
            sigma: gs,
        })
    }
}

fn per_pixel(scalar: f64, grad_mean: &[f64], grad_sigma: &[f64], valid: usize) -> PixelGrads {
    let inv = 1.0 / valid as f64;
    PixelGrads {
        loss: scalar,
        depth: grad_mean.iter().map(|g| g * inv).collect(),
        sigma: grad_sigma.iter().map(|g| g * inv).collect(),
    }
}

fn hash_signs(label: &[f64], pred: &[f64], mask: &[bool], hasher: &mut DefaultHasher) {
    for j in 0..label.len() {
        if mask[j] {
            (label[j] - pred[j]).partial_cmp(&0.0).hash(hasher);
        }
    }
}

/// Per-step losses of one member.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub seed: u64,
    pub regime: Regime,
    /// Objective before each update.
    pub losses: Vec<f64>,
    pub wall_clock_s: f64,
}

impl TrainReport {
    /// `step,loss` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(["step", "loss"]).map_err(|e| csv_error(path, e))?;
        for (i, l) in self.losses.iter().enumerate() {
            w.write_record([i.to_string(), l.to_string()])
                .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidParameter(format!("csv: {other:?}")),
    }
}

/// Optimizes `field` in place for `steps` updates with a fixed step size.
/// Returns the objective before each update.
pub fn descend(
    objective: &Objective<'_>,
    field: &mut DepthField,
    steps: usize,
    learning_rate: f64,
    optimizer: Optimizer,
) -> Result<Vec<f64>> {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let mut losses = Vec::with_capacity(steps);
    let mut theta = field.params();
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    for step in 0..steps {
        let e = objective.evaluate(field)?;
        if !e.loss.is_finite() || e.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        losses.push(e.loss);
        match optimizer {
            Optimizer::GradientDescent => {
                for (t, g) in theta.iter_mut().zip(&e.grad) {
                    *t -= learning_rate * g;
                }
            }
            Optimizer::Adam => {
                let k = (step + 1) as i32;
                let (c1, c2) = (1.0 - B1.powi(k), 1.0 - B2.powi(k));
                for i in 0..theta.len() {
                    let g = e.grad[i];
                    m[i] = B1 * m[i] + (1.0 - B1) * g;
                    v[i] = B2 * v[i] + (1.0 - B2) * g * g;
                    theta[i] -= learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
                }
            }
        }
        field.set_params(&theta);
    }
    Ok(losses)
}

/// Trains one member from the initialization given by `cfg.seed`.
pub fn train_member(
    regime: Regime,
    data: &TrainData,
    cfg: &TrainConfig,
) -> Result<(DepthField, TrainReport)> {
    cfg.validate()?;
    let objective = Objective::new(regime, data, cfg)?;
    let mut field = cfg.init_field()?;
    let start = Instant::now();
    let losses = descend(&objective, &mut field, cfg.steps, cfg.learning_rate, cfg.optimizer)?;
    Ok((
        field,
        TrainReport {
            seed: cfg.seed,
            regime,
            losses,
            wall_clock_s: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Members with seeds `base_seed .. base_seed + m`, trained independently
/// (in parallel on the current rayon pool) and returned in seed order.
pub fn train_ensemble(
    regime: Regime,
    data: &TrainData,
    cfg: &TrainConfig,
    m: usize,
    base_seed: u64,
) -> Result<Vec<(DepthField, TrainReport)>> {
    if m == 0 {
        return Err(Error::Empty("ensemble members"));
    }
    (0..m)
        .into_par_iter()
        .map(|i| {
            let c = TrainConfig {
                seed: base_seed.wrapping_add(i as u64),
                ..*cfg
            };
            train_member(regime, data, &c)
        })
        .collect()
}

/// Per-pixel predictions of trained fields, ready for fusion.
pub fn predict(fields: &[DepthField], w: usize, h: usize) -> Result<Vec<Member>> {
    fields
        .iter()
        .map(|f| {
            let (d, s) = forward(f, w, h)?;
            Member::new(f.seed, d, s)
        })
        .collect()
}

/// Predictions of a trained ensemble as the regime defines them: an
/// uncertain student reports the teacher variance plus its own aleatoric
/// variance, a self-supervised member carries no aleatoric term.
pub fn regime_prediction(
    regime: Regime,
    fields: &[DepthField],
    w: usize,
    h: usize,
    teacher: Option<&EnsembleOutput>,
) -> Result<EnsembleOutput> {
    if fields.is_empty() {
        return Err(Error::Empty("ensemble members"));
    }
    let mut members = predict(fields, w, h)?;
    if regime == Regime::SelfSupervised {
        return selfsup_fuse(&members);
    }
    if regime == Regime::UncertainStudent {
        let t = teacher.ok_or(Error::InvalidParameter(
            "uncertain-student predictions need the teacher maps".into(),
        ))?;
        ensure_same_dims(&t.var_t, &members[0].depth)?;
        for m in &mut members {
            let var = m.sigma.to_variance();
            let total = var.data().iter().zip(t.var_t.data()).map(|(a, b)| a + b).collect();
            m.sigma = UncMap::new(w, h, UncKind::Variance, total)?;
        }
    }
    fuse(&members)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditReport {
    /// Worst `|fd - analytic| / max(|fd|, |analytic|, floor)` over the
    /// parameters that were compared.
    pub max_rel_err: f64,
    pub checked: usize,
    /// Parameters whose difference stencil crossed a kink.
    pub skipped: usize,
}

/// Floor on the denominator of the relative error; smaller gradients are
/// compared in absolute terms.
pub const AUDIT_FLOOR: f64 = 1e-6;

/// Central differences of the full objective against its analytic gradient.
/// `rel_step` is scaled by `max(|theta_i|, 1)`.
pub fn finite_diff_audit(
    regime: Regime,
    data: &TrainData,
    field: &DepthField,
    cfg: &TrainConfig,
    rel_step: f64,
) -> Result<AuditReport> {
    let objective = Objective::new(regime, data, cfg)?;
    let base = objective.evaluate(field)?;
    let theta = field.params();
    let mut probe = field.clone();
    let mut report = AuditReport {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
    };
    for i in 0..theta.len() {
        let h = rel_step * theta[i].abs().max(1.0);
        let mut at = |delta: f64| -> Result<Evaluation> {
            let mut t = theta.clone();
            t[i] += delta;
            probe.set_params(&t);
            objective.evaluate(&probe)
        };
        let plus = at(h)?;
        let minus = at(-h)?;
        if plus.signature != base.signature || minus.signature != base.signature {
            report.skipped += 1;
            continue;
        }
        let fd = (plus.loss - minus.loss) / (2.0 * h);
        let an = base.grad[i];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(AUDIT_FLOOR);
        report.max_rel_err = report.max_rel_err.max(rel);
        report.checked += 1;
    }
    Ok(report)
}
