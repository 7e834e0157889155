//! Rigid-motion math, Chamfer distance, normalization, noise and
//! per-axis registration errors.
//!
//! Euler convention: fixed axes, X then Y then Z, so
//! `R(e) = Rz(e3) * Ry(e2) * Rx(e1)`. Every conversion in the crate, including
//! the error metrics, goes through [`euler_to_rotation`] and
//! [`rotation_to_euler`].

mod chamfer;
mod kdtree;

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use chamfer::{chamfer_distance, nearest_neighbors, AlignmentScorer, NN_INDEX_THRESHOLD};
pub use kdtree::KdTree;

pub type Point = Vector3<f64>;

/// Below this `|cos e2|` the Euler extraction treats the rotation as gimbal-locked.
pub const GIMBAL_EPS: f64 = 1e-8;

/// Ordered, non-empty list of finite 3-D points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::DegenerateInput("point cloud is empty".into()));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        Ok(Self { points })
    }

    pub fn from_arrays(points: &[[f64; 3]]) -> Result<Self> {
        Self::new(
            points
                .iter()
                .map(|p| Point::new(p[0], p[1], p[2]))
                .collect(),
        )
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point {
        let sum = self.points.iter().fold(Point::zeros(), |acc, p| acc + p);
        sum / self.points.len() as f64
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    pub(crate) fn from_points_unchecked(points: Vec<Point>) -> Self {
        debug_assert!(!points.is_empty());
        Self { points }
    }

    /// Coordinates as interleaved `f32` (x0, y0, z0, x1, ...), the layout the
    /// networks consume.
    pub fn to_f32_rows(&self) -> Vec<f32> {
        self.points
            .iter()
            .flat_map(|p| [p.x as f32, p.y as f32, p.z as f32])
            .collect()
    }
}

/// Wraps an angle in radians into `[-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let wrapped = angle - two_pi * (angle / two_pi).round();
    wrapped.clamp(-PI, PI)
}

/// Wraps an angle in degrees into `(-180, 180]`.
pub fn wrap_degrees(angle: f64) -> f64 {
    let r = angle.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

/// A rigid action `[e1, e2, e3, t1, t2, t3]`: Euler angles in radians followed
/// by a translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    euler: [f64; 3],
    translation: [f64; 3],
}

impl Action {
    pub const ZERO: Action = Action {
        euler: [0.0; 3],
        translation: [0.0; 3],
    };

    /// Angles are wrapped into `[-pi, pi]`.
    pub fn new(euler: [f64; 3], translation: [f64; 3]) -> Result<Self> {
        if !euler
            .iter()
            .chain(translation.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "action has a non-finite component: {euler:?} {translation:?}"
            )));
        }
        Ok(Self {
            euler: euler.map(wrap_angle),
            translation,
        })
    }

    pub fn from_array(a: [f64; 6]) -> Result<Self> {
        Self::new([a[0], a[1], a[2]], [a[3], a[4], a[5]])
    }

    pub fn translation_only(t: [f64; 3]) -> Self {
        Self {
            euler: [0.0; 3],
            translation: t,
        }
    }

    pub fn euler(&self) -> [f64; 3] {
        self.euler
    }

    pub fn translation(&self) -> [f64; 3] {
        self.translation
    }

    pub fn to_array(&self) -> [f64; 6] {
        let [a, b, c] = self.euler;
        let [x, y, z] = self.translation;
        [a, b, c, x, y, z]
    }

    pub fn rotation(&self) -> RotationMatrix {
        rotation_from_valid_euler(self.euler)
    }

    pub fn to_transform(&self) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation().into_inner(),
            translation: Vector3::from(self.translation),
        }
    }
}

/// Proper rotation matrix (orthonormal, det = +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Matrix3<f64> {
        self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Largest entry-wise deviation from `R^T R = I` and `det R = 1`.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.0.transpose() * self.0 - Matrix3::identity();
        let max_entry = gram.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        max_entry.max((self.0.determinant() - 1.0).abs())
    }
}

/// `R = Rz(e3) * Ry(e2) * Rx(e1)`.
pub fn euler_to_rotation(euler: [f64; 3]) -> Result<RotationMatrix> {
    if !euler.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite Euler angles {euler:?}"
        )));
    }
    Ok(rotation_from_valid_euler(euler))
}

fn rotation_from_valid_euler([a, b, c]: [f64; 3]) -> RotationMatrix {
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    let (sc, cc) = c.sin_cos();
    RotationMatrix(Matrix3::new(
        cc * cb,
        cc * sb * sa - sc * ca,
        cc * sb * ca + sc * sa,
        sc * cb,
        sc * sb * sa + cc * ca,
        sc * sb * ca - cc * sa,
        -sb,
        cb * sa,
        cb * ca,
    ))
}

/// Inverse of [`euler_to_rotation`]. At gimbal lock (`|cos e2| < GIMBAL_EPS`)
/// `e1` is set to zero and the coupled angle goes into `e3`.
pub fn rotation_to_euler(r: &RotationMatrix) -> [f64; 3] {
    let m = &r.0;
    let sin_b = (-m[(2, 0)]).clamp(-1.0, 1.0);
    let cos_b = m[(0, 0)].hypot(m[(1, 0)]);
    if cos_b < GIMBAL_EPS {
        let b = if sin_b > 0.0 { PI / 2.0 } else { -PI / 2.0 };
        let c = (-m[(0, 1)]).atan2(m[(1, 1)]);
        [0.0, b, c]
    } else {
        let a = m[(2, 1)].atan2(m[(2, 2)]);
        let b = sin_b.atan2(cos_b);
        let c = m[(1, 0)].atan2(m[(0, 0)]);
        [a, b, c]
    }
}

/// Rotation plus translation acting as `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    #[inline]
    pub fn apply(&self, p: &Point) -> Point {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self` after `first`: `x -> self(first(x))`.
    pub fn after(&self, first: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * first.rotation,
            translation: self.rotation * first.translation + self.translation,
        }
    }

    pub fn to_action(&self) -> Action {
        let euler = rotation_to_euler(&RotationMatrix(self.rotation));
        Action {
            euler: euler.map(wrap_angle),
            translation: self.translation.into(),
        }
    }

    pub fn apply_cloud(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud::from_points_unchecked(cloud.points.iter().map(|p| self.apply(p)).collect())
    }
}

/// Each output point is `R(a.e) x + a.t`; order preserved.
pub fn apply_action(cloud: &PointCloud, action: &Action) -> PointCloud {
    action.to_transform().apply_cloud(cloud)
}

/// Rotation `R^T`, translation `-R^T t`, Euler angles re-extracted.
pub fn inverse_action(action: &Action) -> Action {
    action.to_transform().inverse().to_action()
}

/// Centroid and scale that [`normalize_unit_sphere`] applies: `(x - centroid) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub centroid: Point,
    pub scale: f64,
}

impl Normalization {
    pub fn of(cloud: &PointCloud) -> Result<Self> {
        let centroid = cloud.centroid();
        let scale = cloud
            .points
            .iter()
            .map(|p| (p - centroid).norm())
            .fold(0.0f64, f64::max);
        let extent = cloud.points.iter().map(|p| p.amax()).fold(0.0f64, f64::max);
        if cloud.len() < 2 || scale <= 1e-12 * extent.max(1.0) {
            return Err(Error::DegenerateInput(
                "cannot normalize a cloud whose points all coincide".into(),
            ));
        }
        Ok(Self { centroid, scale })
    }

    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud::from_points_unchecked(
            cloud
                .points
                .iter()
                .map(|p| (p - self.centroid) / self.scale)
                .collect(),
        )
    }
}

/// Centers the cloud on its centroid and scales it so the farthest point has norm 1.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> Result<PointCloud> {
    Ok(Normalization::of(cloud)?.apply(cloud))
}

/// Adds i.i.d. `N(0, std^2)` noise to every coordinate, each sample clamped
/// to `[-clip, clip]`.
pub fn add_gaussian_noise(
    cloud: &PointCloud,
    std: f64,
    clip: f64,
    seed: u64,
) -> Result<PointCloud> {
    if !(std >= 0.0 && std.is_finite() && clip >= 0.0 && clip.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise needs finite std >= 0 and clip >= 0, got std={std} clip={clip}"
        )));
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = cloud
        .points
        .iter()
        .map(|p| p.map(|c| c + normal.sample(&mut rng).clamp(-clip, clip)))
        .collect();
    Ok(PointCloud::from_points_unchecked(points))
}

/// Signed per-axis differences between a predicted and a ground-truth action:
/// Euler angles in degrees wrapped into `(-180, 180]`, translations in model units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub rotation_deg: [f64; 3],
    pub translation: [f64; 3],
}

pub fn registration_errors(predicted: &Action, ground_truth: &Action) -> ErrorRecord {
    let mut rotation_deg = [0.0; 3];
    let mut translation = [0.0; 3];
    for i in 0..3 {
        rotation_deg[i] =
            wrap_degrees(predicted.euler[i].to_degrees() - ground_truth.euler[i].to_degrees());
        translation[i] = predicted.translation[i] - ground_truth.translation[i];
    }
    ErrorRecord {
        rotation_deg,
        translation,
    }
}
