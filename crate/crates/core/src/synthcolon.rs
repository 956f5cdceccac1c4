//! Procedural colon-like scenes.
//!
//! The lumen is an implicit tube around a gently curving axis that runs
//! along world `+z`. Its radius shrinks periodically along the axis to
//! form haustral rings. Views are ray cast by sphere tracing the implicit
//! surface and shaded by a point light at the camera center.
//!
//! Camera poses are camera-to-world transforms: `p_world = R p_cam + t`.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::seq::index::sample_weighted;
use rand::RngExt;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::imagery::{
    read_pfm, read_ppm, write_pfm, write_ppm, DepthMap, Dims, Image, Mask, ScalarMap,
};
use crate::rng::{self, splitmix};

/// Marching stops once the implicit function drops below this (mm).
const HIT_TOL: f64 = 1e-5;
const MAX_MARCH: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    pub radius_mm: f64,
    /// Lateral amplitude of the axis meander.
    pub curvature_amp_mm: f64,
    /// Angular frequency of the meander along the axis (rad/mm).
    pub curvature_freq: f64,
    /// Depth of the haustral folds.
    pub ridge_amp_mm: f64,
    /// Angular frequency of the folds along the axis (rad/mm).
    pub ridge_freq: f64,
    pub texture_octaves: u32,
    /// Coarsest texture wavelength on the wall.
    pub texture_scale_mm: f64,
    pub texture_contrast: f64,
    /// Rays that travel further than this z-depth count as misses.
    pub far_cap_mm: f64,
    /// Standard deviation of per-frame heading jitter (degrees).
    pub heading_noise_deg: f64,
    /// Amplitude of the smooth sideways camera sway.
    pub lateral_sway_mm: f64,
    pub seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            radius_mm: 25.0,
            curvature_amp_mm: 4.0,
            curvature_freq: 0.02,
            ridge_amp_mm: 3.0,
            ridge_freq: 0.25,
            texture_octaves: 3,
            texture_scale_mm: 12.0,
            texture_contrast: 0.6,
            far_cap_mm: 100.0,
            heading_noise_deg: 0.3,
            lateral_sway_mm: 1.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LightModel {
    /// Radiant intensity; a white wall facing the camera at distance `d`
    /// renders at `intensity / d^2`.
    pub intensity: f64,
    /// Saturated highlight where the wall faces the camera almost head on.
    pub specular: bool,
    /// Cosine threshold for the highlight.
    pub specular_cos: f64,
}

impl Default for LightModel {
    fn default() -> Self {
        Self {
            intensity: 1300.0,
            specular: true,
            specular_cos: 0.97,
        }
    }
}

/// Scene family used to build a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    /// Default source domain.
    Source,
    /// Lower contrast, dimmer light and a stronger meander.
    Shifted,
}

impl Domain {
    pub fn preset(self, seed: u64) -> (SceneParams, LightModel) {
        let p = SceneParams {
            seed,
            ..SceneParams::default()
        };
        let l = LightModel::default();
        match self {
            Domain::Source => (p, l),
            Domain::Shifted => (
                SceneParams {
                    texture_contrast: 0.3,
                    curvature_amp_mm: 8.0,
                    curvature_freq: 0.03,
                    ridge_amp_mm: 4.0,
                    ..p
                },
                LightModel {
                    intensity: 850.0,
                    ..l
                },
            ),
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.radius_mm > self.ridge_amp_mm
            && self.ridge_amp_mm >= 0.0
            && self.far_cap_mm > 0.0
            && self.curvature_amp_mm >= 0.0
            && self.curvature_freq >= 0.0
            && self.ridge_freq >= 0.0
            && self.texture_scale_mm > 0.0
            && (0.0..=1.0).contains(&self.texture_contrast)
            && self.heading_noise_deg >= 0.0
            && self.lateral_sway_mm >= 0.0;
        if !ok {
            return Err(Error::InvalidParameter(format!("invalid scene: {self:?}")));
        }
        Ok(())
    }

    fn axis(&self, z: f64) -> (f64, f64) {
        let (a, f) = (self.curvature_amp_mm, self.curvature_freq);
        (a * (f * z).sin(), 0.5 * a * (0.7 * f * z + 1.0).sin())
    }

    fn axis_slope(&self, z: f64) -> (f64, f64) {
        let (a, f) = (self.curvature_amp_mm, self.curvature_freq);
        (a * f * (f * z).cos(), 0.35 * a * f * (0.7 * f * z + 1.0).cos())
    }

    /// Wall radius at axial position `z`.
    pub fn radius_at(&self, z: f64) -> f64 {
        let c = 0.5 + 0.5 * (self.ridge_freq * z).cos();
        self.radius_mm - self.ridge_amp_mm * c * c
    }

    /// Positive inside the lumen, zero on the wall.
    pub fn implicit(&self, p: &Vector3<f64>) -> f64 {
        let (cx, cy) = self.axis(p.z);
        self.radius_at(p.z) - (p.x - cx).hypot(p.y - cy)
    }

    /// Upper bound on the gradient norm of [`SceneParams::implicit`].
    fn lipschitz(&self) -> f64 {
        let slope = self.curvature_amp_mm * self.curvature_freq * (1.0 + 0.35);
        1.0 + self.ridge_amp_mm * self.ridge_freq + slope
    }

    fn normal(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let h = 1e-4;
        let g = Vector3::new(
            self.implicit(&(p + Vector3::x() * h)) - self.implicit(&(p - Vector3::x() * h)),
            self.implicit(&(p + Vector3::y() * h)) - self.implicit(&(p - Vector3::y() * h)),
            self.implicit(&(p + Vector3::z() * h)) - self.implicit(&(p - Vector3::z() * h)),
        );
        g.normalize()
    }

    /// Wall albedo (RGB) at axial position `z` and polar angle `phi`.
    fn albedo(&self, z: f64, phi: f64) -> [f64; 3] {
        let around = 2.0 * std::f64::consts::PI * self.radius_mm;
        let u = (phi / (2.0 * std::f64::consts::PI)).rem_euclid(1.0) * around;
        let (mut t, mut norm, mut amp, mut scale) = (0.0, 0.0, 1.0, self.texture_scale_mm);
        for oct in 0..self.texture_octaves.max(1) {
            let cells_around = (around / scale).round().max(1.0) as i64;
            let cell = around / cells_around as f64;
            t += amp * value_noise(self.seed, oct, u / cell, z / scale, cells_around);
            norm += amp;
            amp *= 0.5;
            scale *= 0.5;
        }
        let t = t / norm - 0.5;
        let k = 2.0 * self.texture_contrast;
        let base = [0.85, 0.45, 0.40];
        let tint = [1.0, 1.3, 1.2];
        std::array::from_fn(|c| (base[c] * (1.0 + k * tint[c] * t)).clamp(0.02, 1.0))
    }
}

fn lattice(seed: u64, oct: u32, ix: i64, iy: i64) -> f64 {
    let h = splitmix(
        splitmix(seed ^ u64::from(oct).wrapping_mul(0x9e37_79b9))
            ^ splitmix(ix as u64)
            ^ splitmix((iy as u64).rotate_left(32)),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smoothstep value noise in `[0, 1]`, periodic in `x` with `period` cells.
fn value_noise(seed: u64, oct: u32, x: f64, y: f64, period: i64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (tx, ty) = (x - fx, y - fy);
    let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
    let (ix, iy) = (fx as i64, fy as i64);
    let v = |dx: i64, dy: i64| lattice(seed, oct, (ix + dx).rem_euclid(period), iy + dy);
    let top = v(0, 0) + sx * (v(1, 0) - v(0, 0));
    let bot = v(0, 1) + sx * (v(1, 1) - v(0, 1));
    top + sy * (bot - top)
}

/// One rendered view.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub image: Image,
    /// z-depth in the camera frame; misses hold the far-cap distance.
    pub depth: DepthMap,
    /// Rays that hit the wall before the far cap.
    pub valid: Mask,
    /// Valid rays that are not specular highlights.
    pub diffuse: Mask,
}

struct RayHit {
    zdepth: f64,
    rgb: [f64; 3],
    hit: bool,
    specular: bool,
}

fn cast(
    params: &SceneParams,
    light: &LightModel,
    pose: &Pose,
    k: &CameraIntrinsics,
    x: f64,
    y: f64,
) -> RayHit {
    let ray_cam = Vector3::new((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
    let ray_len = ray_cam.norm();
    let dir = pose.rotation() * (ray_cam / ray_len);
    let origin = *pose.translation();
    let step_scale = 1.0 / params.lipschitz();
    let max_t = params.far_cap_mm * ray_len;
    let mut t = 0.0;
    let mut hit = false;
    for _ in 0..MAX_MARCH {
        let f = params.implicit(&(origin + dir * t));
        if f < HIT_TOL {
            hit = true;
            break;
        }
        t += f * step_scale;
        if t > max_t {
            break;
        }
    }
    if !hit {
        let d = params.far_cap_mm * ray_len;
        let v = light.intensity * 0.5 / (d * d);
        return RayHit {
            zdepth: params.far_cap_mm,
            rgb: [v; 3],
            hit: false,
            specular: false,
        };
    }
    let p = origin + dir * t;
    let n = params.normal(&p);
    let cos = n.dot(&(-dir)).max(0.0);
    let (cx, cy) = params.axis(p.z);
    let albedo = params.albedo(p.z, (p.y - cy).atan2(p.x - cx));
    let fall = light.intensity * cos / (t * t);
    if light.specular && cos > light.specular_cos {
        return RayHit {
            zdepth: t / ray_len,
            rgb: [1.0; 3],
            hit: true,
            specular: true,
        };
    }
    RayHit {
        zdepth: t / ray_len,
        rgb: albedo.map(|a| a * fall),
        hit: true,
        specular: false,
    }
}

/// Ray casts one view from the camera-to-world `pose`.
pub fn render_view(
    params: &SceneParams,
    pose: &Pose,
    k: &CameraIntrinsics,
    w: usize,
    h: usize,
    light: &LightModel,
) -> Result<View> {
    params.validate()?;
    k.validate()?;
    if w == 0 || h == 0 {
        return Err(Error::InvalidParameter("empty image".into()));
    }
    if params.implicit(pose.translation()) <= 0.0 {
        return Err(Error::InvalidParameter("camera is outside the tube".into()));
    }
    let rays: Vec<RayHit> = (0..w * h)
        .into_par_iter()
        .map(|i| cast(params, light, pose, k, (i % w) as f64, (i / w) as f64))
        .collect();
    let mut rgb = Vec::with_capacity(3 * w * h);
    for r in &rays {
        rgb.extend_from_slice(&r.rgb);
    }
    Ok(View {
        image: Image::new(w, h, 3, rgb)?,
        depth: DepthMap::new(w, h, rays.iter().map(|r| r.zdepth).collect())?,
        valid: Mask::new(w, h, rays.iter().map(|r| r.hit).collect())?,
        diffuse: Mask::new(w, h, rays.iter().map(|r| r.hit && !r.specular).collect())?,
    })
}

/// Camera-to-world poses advancing `step_mm` along the tube axis per frame.
pub fn generate_trajectory(params: &SceneParams, n_frames: usize, step_mm: f64) -> Result<Vec<Pose>> {
    params.validate()?;
    if n_frames < 3 {
        return Err(Error::InvalidParameter(format!(
            "need at least 3 frames, got {n_frames}"
        )));
    }
    if !(step_mm > 0.0) {
        return Err(Error::InvalidParameter("step must be positive".into()));
    }
    let mut r = rng::stream(params.seed, "trajectory");
    let (ph1, ph2): (f64, f64) = (r.random_range(0.0..6.3), r.random_range(0.0..6.3));
    let clearance = params.radius_mm - params.ridge_amp_mm;
    let sigma = params.heading_noise_deg.to_radians();
    let mut poses = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let z = i as f64 * step_mm;
        let (ax, ay) = params.axis(z);
        let phase = i as f64 * step_mm * 0.15;
        let sway = (
            params.lateral_sway_mm * (phase + ph1).sin(),
            params.lateral_sway_mm * (0.8 * phase + ph2).sin(),
        );
        let pos = Vector3::new(ax + sway.0, ay + sway.1, z);
        if params.implicit(&pos) < 0.2 * clearance {
            return Err(Error::InvalidParameter(format!(
                "frame {i} leaves the tube; reduce the step or sway"
            )));
        }
        let (sx, sy) = params.axis_slope(z);
        let tangent = Vector3::new(sx, sy, 1.0);
        let align = Rotation3::rotation_between(&Vector3::z(), &tangent)
            .unwrap_or_else(Rotation3::identity);
        let mut rot: Matrix3<f64> = *align.matrix();
        if sigma > 0.0 {
            let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut r));
            let axis = Vector3::from(v);
            if let Some(a) = Unit::try_new(axis, 1e-12) {
                let angle = sigma * axis.norm() / 3f64.sqrt();
                rot *= Rotation3::from_axis_angle(&a, angle).matrix();
            }
        }
        poses.push(Pose::new(rot, pos)?.orthonormalized());
    }
    Ok(poses)
}

/// Relative pose mapping points in the `target` camera frame into the
/// `source` camera frame, given camera-to-world poses of both.
pub fn relative_pose(target: &Pose, source: &Pose) -> Pose {
    source.inverse().compose(target)
}

/// Simulated structure-from-motion labels: globally rescaled, noisy, with
/// holes biased toward depth discontinuities.
pub fn simulate_sfm_labels(
    d_gt: &DepthMap,
    seed: u64,
    hole_fraction: f64,
    noise_rel: f64,
    global_scale: f64,
) -> Result<(DepthMap, Mask)> {
    if !(0.0..1.0).contains(&hole_fraction) || !(noise_rel >= 0.0) || !(global_scale > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sfm labels need hole_fraction in [0,1), noise >= 0, scale > 0 (got {hole_fraction}, {noise_rel}, {global_scale})"
        )));
    }
    let (w, h) = (d_gt.width(), d_gt.height());
    let n = w * h;
    let mut keep = vec![true; n];

    let holes = (hole_fraction * n as f64).round() as usize;
    if holes > 0 {
        let g = gradient_magnitude(d_gt);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| g[a].total_cmp(&g[b]).then(a.cmp(&b)));
        let mut rank = vec![0usize; n];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = r + 1;
        }
        let mut r = rng::stream(seed, "sfm-holes");
        let picked = sample_weighted(&mut r, n, |i| rank[i] as f64, holes)
            .map_err(|e| Error::InvalidParameter(format!("hole sampling: {e}")))?;
        for i in picked.iter() {
            keep[i] = false;
        }
    }

    let mut r = rng::stream(seed, "sfm-noise");
    let mut out = Vec::with_capacity(n);
    for (j, &d) in d_gt.data().iter().enumerate() {
        let mut factor = None;
        for _ in 0..16 {
            let e: f64 = StandardNormal.sample(&mut r);
            let f = 1.0 + noise_rel * e;
            if f > 0.0 {
                factor = Some(f);
                break;
            }
        }
        match factor {
            Some(f) => out.push(global_scale * d * f),
            None => {
                keep[j] = false;
                out.push(global_scale * d);
            }
        }
    }
    Ok((DepthMap::new(w, h, out)?, Mask::new(w, h, keep)?))
}

fn gradient_magnitude(d: &DepthMap) -> Vec<f64> {
    let (w, h) = (d.width(), d.height());
    let at = |x: usize, y: usize| d.get(x, y);
    let mut g = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let gx = at((x + 1).min(w - 1), y) - at(x.saturating_sub(1), y);
            let gy = at(x, (y + 1).min(h - 1)) - at(x, y.saturating_sub(1));
            g.push(gx.hypot(gy));
        }
    }
    g
}

/// Everything needed to render a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub scene: SceneParams,
    pub light: LightModel,
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f64,
    pub frames: usize,
    pub step_mm: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            scene: SceneParams::default(),
            light: LightModel::default(),
            width: 64,
            height: 64,
            hfov_deg: 77.3,
            frames: 12,
            step_mm: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub view: View,
    /// Camera-to-world.
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<Frame>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    spec: DatasetSpec,
    frames: Vec<String>,
}

fn frame_name(kind: &str, i: usize, ext: &str) -> String {
    format!("{kind}_{i:04}.{ext}")
}

impl DatasetSpec {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::centered(self.width, self.height, self.hfov_deg)
    }

    pub fn render(&self) -> Result<Dataset> {
        let k = self.intrinsics()?;
        let poses = generate_trajectory(&self.scene, self.frames, self.step_mm)?;
        let frames = poses
            .into_iter()
            .map(|pose| {
                let view = render_view(&self.scene, &pose, &k, self.width, self.height, &self.light)?;
                Ok(Frame { view, pose })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            spec: self.clone(),
            intrinsics: k,
            frames,
        })
    }
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let s = serde_json::to_string_pretty(v)?;
    std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}

fn mask_map(m: &Mask) -> ScalarMap {
    let v = m.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    ScalarMap::from_vec_unchecked(m.width(), m.height(), v)
}

impl Dataset {
    /// Writes `frame_NNNN.ppm`, `depth_NNNN.pfm`, `valid_NNNN.pfm`,
    /// `pose_NNNN.json`, `intrinsics.json` and `manifest.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut names = Vec::new();
        for (i, f) in self.frames.iter().enumerate() {
            let name = frame_name("frame", i, "ppm");
            write_ppm(&f.view.image, dir.join(&name))?;
            write_pfm(&f.view.depth, dir.join(frame_name("depth", i, "pfm")))?;
            write_pfm(&mask_map(&f.view.valid), dir.join(frame_name("valid", i, "pfm")))?;
            write_json(&dir.join(frame_name("pose", i, "json")), &f.pose)?;
            names.push(name);
        }
        write_json(&dir.join("intrinsics.json"), &self.intrinsics)?;
        write_json(
            &dir.join("manifest.json"),
            &Manifest {
                spec: self.spec.clone(),
                frames: names,
            },
        )
    }

    /// Reads a directory written by [`Dataset::save`]. Images come back
    /// quantized to 8 bits and depths to single precision; the diffuse mask
    /// is not stored and equals the valid mask.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir: PathBuf = dir.as_ref().to_path_buf();
        let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
        let intrinsics: CameraIntrinsics = read_json(&dir.join("intrinsics.json"))?;
        intrinsics.validate()?;
        let mut frames = Vec::with_capacity(manifest.frames.len());
        for (i, name) in manifest.frames.iter().enumerate() {
            let image = read_ppm(dir.join(name))?;
            let depth = read_pfm(dir.join(frame_name("depth", i, "pfm")))?.into_depth()?;
            let valid = read_pfm(dir.join(frame_name("valid", i, "pfm")))?;
            let valid = Mask::new(
                valid.width,
                valid.height,
                valid.data.iter().map(|&v| v > 0.5).collect(),
            )?;
            let pose: Pose = read_json(&dir.join(frame_name("pose", i, "json")))?;
            frames.push(Frame {
                view: View {
                    image,
                    depth,
                    diffuse: valid.clone(),
                    valid,
                },
                pose,
            });
        }
        Ok(Self {
            spec: manifest.spec,
            intrinsics,
            frames,
        })
    }
}
