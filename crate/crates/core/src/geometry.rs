//! Pinhole camera, rigid poses and the target-to-source pixel warp.
//!
//! Camera frame is right-handed with z forward, x right and y down.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::{ensure_same_dims, DepthMap, Dims, Image, Mask};

/// Near-plane cutoff in millimetres.
pub const EPS_Z: f64 = 1e-6;

const ORTHO_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "intrinsics need finite values and positive focal lengths, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Intrinsics with the principal point at the image center and the
    /// given horizontal field of view (degrees).
    pub fn centered(width: usize, height: usize, hfov_deg: f64) -> Result<Self> {
        let f = (width as f64 - 1.0) / 2.0 / (hfov_deg.to_radians() / 2.0).tan();
        Self::new(
            f,
            f,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
        )
    }
}

/// Rigid transform `x -> R x + t` (millimetres).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseJson", into = "PoseJson")]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoseJson {
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
}

impl TryFrom<PoseJson> for Pose {
    type Error = Error;

    fn try_from(p: PoseJson) -> Result<Self> {
        Pose::new(
            Matrix3::from_row_slice(&p.r),
            Vector3::new(p.t[0], p.t[1], p.t[2]),
        )
    }
}

impl From<Pose> for PoseJson {
    fn from(p: Pose) -> Self {
        let mut r = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                r[i * 3 + j] = p.rotation[(i, j)];
            }
        }
        PoseJson {
            r,
            t: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl Pose {
    /// Validates orthonormality (`|R^T R - I|_inf < 1e-6`, `det R = +1`).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite pose".into()));
        }
        let err = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if err >= ORTHO_TOL || (rotation.determinant() - 1.0).abs() >= ORTHO_TOL {
            return Err(Error::InvalidParameter(format!(
                "rotation is not in SO(3) (orthonormality error {err:e})"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation of `angle` radians about `axis`, followed by translation `t`.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, t: Vector3<f64>) -> Self {
        let rotation = match Unit::try_new(axis, 1e-12) {
            Some(a) => *Rotation3::from_axis_angle(&a, angle).matrix(),
            None => Matrix3::identity(),
        };
        Self {
            rotation,
            translation: t,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self * other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Re-projects the rotation onto SO(3) (removes drift after long chains).
    pub fn orthonormalized(&self) -> Pose {
        let r = Rotation3::from_matrix(&self.rotation);
        Pose {
            rotation: *r.matrix(),
            translation: self.translation,
        }
    }

    /// Exactly `R = I`, `t = 0`.
    pub fn is_identity(&self) -> bool {
        self.rotation == Matrix3::identity() && self.translation == Vector3::zeros()
    }

    /// Largest absolute entry difference against `other`.
    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        (self.rotation - other.rotation)
            .amax()
            .max((self.translation - other.translation).amax())
    }
}

/// Pinhole projection of a camera-frame point.
pub fn project(k: &CameraIntrinsics, p: &Vector3<f64>) -> Result<[f64; 2]> {
    if p.z <= EPS_Z {
        return Err(Error::BehindCamera(p.z));
    }
    Ok([k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy])
}

/// Back-projection of pixel `j` at z-depth `d`.
pub fn backproject(k: &CameraIntrinsics, j: [f64; 2], d: f64) -> Result<Vector3<f64>> {
    if !(d > 0.0) {
        return Err(Error::InvalidDepth(d));
    }
    Ok(Vector3::new(
        (j[0] - k.cx) * d / k.fx,
        (j[1] - k.cy) * d / k.fy,
        d,
    ))
}

/// Result of warping one target pixel into a source view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Warp {
    pub coord: [f64; 2],
    /// Derivative of `coord` with respect to the target depth.
    pub d_coord_d_depth: [f64; 2],
    pub valid: bool,
}

/// `j' = pi(R pi^-1(j, d) + t)`; invalid when the point lands behind the
/// source camera or `j'` leaves a `width x height` source domain.
pub fn warp_pixel(
    j: [f64; 2],
    d: f64,
    k: &CameraIntrinsics,
    pose: &Pose,
    width: usize,
    height: usize,
) -> ([f64; 2], bool) {
    let w = warp_pixel_with_grad(j, d, k, pose, width, height);
    (w.coord, w.valid)
}

pub fn warp_pixel_with_grad(
    j: [f64; 2],
    d: f64,
    k: &CameraIntrinsics,
    pose: &Pose,
    width: usize,
    height: usize,
) -> Warp {
    let invalid = Warp {
        coord: [f64::NAN; 2],
        d_coord_d_depth: [0.0; 2],
        valid: false,
    };
    // unit-depth ray; the back-projected point is d * ray
    let ray = Vector3::new((j[0] - k.cx) / k.fx, (j[1] - k.cy) / k.fy, 1.0);
    if !(d > 0.0) {
        return invalid;
    }
    if pose.is_identity() {
        let inside = j[0] >= 0.0
            && j[1] >= 0.0
            && j[0] <= (width as f64 - 1.0)
            && j[1] <= (height as f64 - 1.0);
        return Warp {
            coord: j,
            d_coord_d_depth: [0.0; 2],
            valid: inside && d > EPS_Z,
        };
    }
    let dir = pose.rotation * ray;
    let p = dir * d + pose.translation;
    let Ok(coord) = project(k, &p) else {
        return invalid;
    };
    let inside = coord[0] >= 0.0
        && coord[1] >= 0.0
        && coord[0] <= (width as f64 - 1.0)
        && coord[1] <= (height as f64 - 1.0);
    let z2 = p.z * p.z;
    Warp {
        coord,
        d_coord_d_depth: [
            k.fx * (dir.x * p.z - p.x * dir.z) / z2,
            k.fy * (dir.y * p.z - p.y * dir.z) / z2,
        ],
        valid: inside,
    }
}

/// Resamples `src` into the target frame using the target depth map and the
/// target-to-source pose. Invalid pixels are zero in the returned image.
pub fn synthesize_warped_image(
    src: &Image,
    depth: &DepthMap,
    pose: &Pose,
    k: &CameraIntrinsics,
) -> Result<(Image, Mask)> {
    ensure_same_dims(src, depth)?;
    let (w, h, ch) = (src.width(), src.height(), src.channels());
    let mut data = vec![0.0; w * h * ch];
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (jp, ok) = warp_pixel([x as f64, y as f64], depth.data()[i], k, pose, w, h);
            if ok {
                valid[i] = src.sample_into(jp[0], jp[1], &mut data[i * ch..(i + 1) * ch]);
            }
        }
    }
    Ok((Image::new(w, h, ch, data)?, Mask::new(w, h, valid)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn k100() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0).unwrap()
    }

    #[test]
    fn project_examples() {
        let k1 = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(project(&k1, &Vector3::new(0.0, 0.0, 1.0)).unwrap(), [0.0, 0.0]);
        assert_eq!(
            project(&k100(), &Vector3::new(1.0, 2.0, 2.0)).unwrap(),
            [100.0, 150.0]
        );
        assert!(matches!(
            project(&k1, &Vector3::new(0.0, 0.0, -1.0)),
            Err(Error::BehindCamera(_))
        ));
        assert!(project(&k1, &Vector3::new(0.0, 0.0, 1e-7)).is_err());
    }

    #[test]
    fn backproject_examples() {
        let k1 = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(
            backproject(&k1, [0.0, 0.0], 5.0).unwrap(),
            Vector3::new(0.0, 0.0, 5.0)
        );
        assert_eq!(
            backproject(&k100(), [100.0, 150.0], 2.0).unwrap(),
            Vector3::new(1.0, 2.0, 2.0)
        );
        assert!(matches!(
            backproject(&k1, [0.0, 0.0], 0.0),
            Err(Error::InvalidDepth(_))
        ));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, -1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn warp_identity_pose() {
        let (jp, ok) = warp_pixel([12.25, 40.5], 7.0, &k100(), &Pose::identity(), 100, 100);
        assert!(ok);
        assert_eq!(jp, [12.25, 40.5]);
    }

    #[test]
    fn warp_forward_translation() {
        let pose = Pose::from_translation(Vector3::new(0.0, 0.0, -1.0));
        let (jp, ok) = warp_pixel([50.0, 50.0], 2.0, &k100(), &pose, 100, 100);
        assert!(ok);
        assert_eq!(jp, [50.0, 50.0]);
    }

    #[test]
    fn warp_behind_camera_invalid() {
        let pose = Pose::from_translation(Vector3::new(0.0, 0.0, -3.0));
        assert!(!warp_pixel([50.0, 50.0], 2.0, &k100(), &pose, 100, 100).1);
    }

    #[test]
    fn warp_depth_derivative_matches_fd() {
        let pose = Pose::from_axis_angle(
            Vector3::new(0.3, 1.0, 0.2),
            0.05,
            Vector3::new(0.4, -0.2, 0.7),
        );
        let (j, d, h) = ([30.0, 61.0], 9.0, 1e-6);
        let w = warp_pixel_with_grad(j, d, &k100(), &pose, 100, 100);
        let a = warp_pixel(j, d + h, &k100(), &pose, 100, 100).0;
        let b = warp_pixel(j, d - h, &k100(), &pose, 100, 100).0;
        for c in 0..2 {
            let fd = (a[c] - b[c]) / (2.0 * h);
            assert!((fd - w.d_coord_d_depth[c]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn synthesize_identity_and_exit() {
        let img = Image::from_fn(8, 8, 3, |x, y, c| ((x * 3 + y * 5 + c) % 7) as f64 / 7.0)
            .unwrap();
        let depth = DepthMap::filled(8, 8, 10.0).unwrap();
        let k = CameraIntrinsics::new(8.0, 8.0, 3.5, 3.5).unwrap();
        let (warped, mask) = synthesize_warped_image(&img, &depth, &Pose::identity(), &k).unwrap();
        assert_eq!(warped, img);
        assert_eq!(mask.count(), 64);

        let shift = Pose::from_translation(Vector3::new(2.0, 0.0, 0.0));
        let (_, mask) = synthesize_warped_image(&img, &depth, &shift, &k).unwrap();
        // 2 mm at 10 mm depth with f = 8 shifts by 1.6 px: the last two columns leave
        for y in 0..8 {
            assert!(!mask.get(7, y) && !mask.get(6, y));
            assert!(mask.get(5, y) && mask.get(0, y));
        }
        assert!(synthesize_warped_image(&img, &DepthMap::filled(4, 8, 1.0).unwrap(), &shift, &k)
            .is_err());
    }

    #[test]
    fn pose_json_schema() {
        let p = Pose::from_axis_angle(Vector3::z(), 0.5, Vector3::new(1.0, 2.0, 3.0));
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.starts_with("{\"R\":[") && s.contains("\"t\":[1.0,2.0,3.0]"));
        let back: Pose = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        let bad = r#"{"R":[2,0,0,0,1,0,0,0,1],"t":[0,0,0]}"#;
        assert!(serde_json::from_str::<Pose>(bad).is_err());
        let reflect = r#"{"R":[-1,0,0,0,1,0,0,0,1],"t":[0,0,0]}"#;
        assert!(serde_json::from_str::<Pose>(reflect).is_err());
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            prop::array::uniform3(-1.0f64..1.0),
            -3.0f64..3.0,
            prop::array::uniform3(-50.0f64..50.0),
        )
            .prop_map(|(a, ang, t)| {
                Pose::from_axis_angle(Vector3::from(a), ang, Vector3::from(t))
            })
    }

    proptest! {
        #[test]
        fn project_backproject_roundtrip(
            fx in 10.0f64..500.0, fy in 10.0f64..500.0,
            cx in 0.0f64..100.0, cy in 0.0f64..100.0,
            jx in -50.0f64..150.0, jy in -50.0f64..150.0,
            d in 0.01f64..500.0,
        ) {
            let k = CameraIntrinsics::new(fx, fy, cx, cy).unwrap();
            let j = project(&k, &backproject(&k, [jx, jy], d).unwrap()).unwrap();
            prop_assert!((j[0] - jx).abs() < 1e-6 && (j[1] - jy).abs() < 1e-6);
        }

        #[test]
        fn composition_is_associative(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            prop_assert!(l.max_abs_diff(&r) < 1e-9);
            prop_assert!(a.compose(&a.inverse()).max_abs_diff(&Pose::identity()) < 1e-9);
        }

        #[test]
        fn warp_there_and_back(
            axis in prop::array::uniform3(-1.0f64..1.0),
            ang in -0.2f64..0.2,
            t in prop::array::uniform3(-5.0f64..5.0),
            jx in 0.0f64..100.0, jy in 0.0f64..100.0,
            plane in 20.0f64..200.0,
        ) {
            // fronto-parallel plane z = plane in the target frame
            let k = k100();
            let pose = Pose::from_axis_angle(Vector3::from(axis), ang, Vector3::from(t));
            let p_src = pose.transform(&backproject(&k, [jx, jy], plane).unwrap());
            let (jp, ok) = warp_pixel([jx, jy], plane, &k, &pose, 1000, 1000);
            prop_assume!(ok && p_src.z > 1.0);
            // depth of the same surface point as seen from the source view
            let (back, ok2) = warp_pixel(jp, p_src.z, &k, &pose.inverse(), 1000, 1000);
            prop_assert!(ok2);
            prop_assert!((back[0] - jx).abs() < 1e-4 && (back[1] - jy).abs() < 1e-4);
        }
    }
}
