//! Point clouds, rigid transforms, preprocessing filters and training-time augmentation.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Point3, Rotation3, Unit, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

use crate::error::{Error, Result};

pub type Point = Point3<f64>;

/// An ordered set of 3D points (meters) with optional per-point intensity.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
    intensity: Option<Vec<f64>>,
    id: String,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        Self::with_intensity(points, None)
    }

    pub fn with_intensity(points: Vec<Point>, intensity: Option<Vec<f64>>) -> Result<Self> {
        if let Some(bad) = points.iter().position(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid(format!("point {bad} has a non-finite coordinate")));
        }
        if let Some(ref i) = intensity {
            if i.len() != points.len() {
                return Err(Error::invalid(format!(
                    "intensity length {} != point count {}",
                    i.len(),
                    points.len()
                )));
            }
        }
        Ok(Self {
            points,
            intensity,
            id: String::new(),
        })
    }

    pub fn empty() -> Self {
        Self {
            points: Vec::new(),
            intensity: None,
            id: String::new(),
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn intensity(&self) -> Option<&[f64]> {
        self.intensity.as_deref()
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Arithmetic mean of the points.
    pub fn centroid(&self) -> Result<Point> {
        if self.points.is_empty() {
            return Err(Error::invalid("centroid of an empty cloud"));
        }
        let sum = self
            .points
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Ok(Point::from(sum / self.points.len() as f64))
    }

    /// Keeps the points at the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            intensity: self
                .intensity
                .as_ref()
                .map(|v| indices.iter().map(|&i| v[i]).collect()),
            id: self.id.clone(),
        }
    }

    fn map_points(&self, f: impl Fn(&Point) -> Point) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(f).collect(),
            intensity: self.intensity.clone(),
            id: self.id.clone(),
        }
    }
}

/// A proper rigid motion `x -> R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub const ORTHO_TOL: f64 = 1e-9;

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let t = Self {
            rotation,
            translation,
        };
        t.validate()?;
        Ok(t)
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

    /// Rotation by `angle` about +z followed by `translation`.
    pub fn from_yaw(angle: f64, translation: Vector3<f64>) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            rotation: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            translation,
        }
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = if angle == 0.0 {
            Matrix3::identity()
        } else {
            *Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).matrix()
        };
        Self {
            rotation,
            translation,
        }
    }

    /// From a unit quaternion `(w, x, y, z)`; the quaternion is renormalized.
    pub fn from_quaternion(q: [f64; 4], translation: Vector3<f64>) -> Result<Self> {
        let quat = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
        let n = quat.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::invalid("zero or non-finite quaternion"));
        }
        let uq = UnitQuaternion::from_quaternion(quat);
        Ok(Self {
            rotation: *uq.to_rotation_matrix().matrix(),
            translation,
        })
    }

    /// Unit quaternion `(w, x, y, z)` with `w >= 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        let rot = Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
        [q.w, q.i, q.j, q.k]
    }

    /// The 3x4 matrix `[R | t]` in row-major order.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ]
    }

    pub fn from_row_major(v: &[f64; 12]) -> Result<Self> {
        Self::new(
            Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]),
            Vector3::new(v[3], v[7], v[11]),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        if !r.iter().chain(self.translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("non-finite transform entry"));
        }
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        if ortho > Self::ORTHO_TOL {
            return Err(Error::invalid(format!("rotation not orthonormal (err {ortho:.3e})")));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > Self::ORTHO_TOL {
            return Err(Error::invalid(format!("rotation determinant {det} != +1")));
        }
        Ok(())
    }

    pub fn apply(&self, p: &Point) -> Point {
        Point::from(self.rotation * p.coords + self.translation)
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

pub fn apply_rigid(cloud: &PointCloud, t: &RigidTransform) -> PointCloud {
    cloud.map_points(|p| t.apply(p))
}

/// Rotates `(x, y)` by `angle` about the z-axis; z is unchanged.
pub fn rotate_z(points: &[Point], angle: f64) -> Vec<Point> {
    let (s, c) = angle.sin_cos();
    points
        .iter()
        .map(|p| Point::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z))
        .collect()
}

/// One centroid point per occupied voxel, ordered by ascending voxel index.
pub fn voxel_downsample(cloud: &PointCloud, grid: f64) -> Result<PointCloud> {
    if !(grid > 0.0) || !grid.is_finite() {
        return Err(Error::invalid(format!("voxel grid must be positive, got {grid}")));
    }
    struct Acc {
        sum: Vector3<f64>,
        intensity: f64,
        count: usize,
    }
    let mut voxels: BTreeMap<[i64; 3], Acc> = BTreeMap::new();
    let intensity = cloud.intensity();
    for (i, p) in cloud.points().iter().enumerate() {
        if !p.coords.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
        let key = [
            (p.x / grid).floor() as i64,
            (p.y / grid).floor() as i64,
            (p.z / grid).floor() as i64,
        ];
        let acc = voxels.entry(key).or_insert(Acc {
            sum: Vector3::zeros(),
            intensity: 0.0,
            count: 0,
        });
        acc.sum += p.coords;
        acc.intensity += intensity.map_or(0.0, |v| v[i]);
        acc.count += 1;
    }
    let points = voxels
        .values()
        .map(|a| Point::from(a.sum / a.count as f64))
        .collect();
    let intensity = intensity.map(|_| {
        voxels
            .values()
            .map(|a| a.intensity / a.count as f64)
            .collect()
    });
    Ok(PointCloud::with_intensity(points, intensity)?.with_id(cloud.id()))
}

/// Points with `‖x − center‖ ≤ radius`, original order preserved.
pub fn crop_ball(cloud: &PointCloud, center: &Point, radius: f64) -> Result<PointCloud> {
    if !(radius > 0.0) {
        return Err(Error::invalid(format!("crop radius must be positive, got {radius}")));
    }
    let r2 = radius * radius;
    let keep: Vec<usize> = cloud
        .points()
        .iter()
        .enumerate()
        .filter(|(_, p)| (*p - center).norm_squared() <= r2)
        .map(|(i, _)| i)
        .collect();
    Ok(cloud.select(&keep))
}

/// Euclidean distance between the centroids of two clouds.
pub fn centroid_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    Ok((a.centroid()? - b.centroid()?).norm())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    /// Standard deviation of the per-coordinate jitter (m).
    pub jitter_sigma: f64,
    /// Jitter is clipped to `[-jitter_clip, jitter_clip]` per coordinate.
    pub jitter_clip: f64,
    /// Each shift component is uniform in `[-shift_range, shift_range]`.
    pub shift_range: f64,
    /// Maximum angle (rad) of the small rotation about a random 3D axis.
    pub small_rot_max: f64,
    /// Apply a uniform rotation about z.
    pub z_rot: bool,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            jitter_sigma: 0.01,
            jitter_clip: 0.05,
            shift_range: 2.0,
            small_rot_max: 2f64.to_radians(),
            z_rot: true,
        }
    }
}

impl AugmentParams {
    pub fn none() -> Self {
        Self {
            jitter_sigma: 0.0,
            jitter_clip: 0.0,
            shift_range: 0.0,
            small_rot_max: 0.0,
            z_rot: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.jitter_sigma,
            self.jitter_clip,
            self.shift_range,
            self.small_rot_max,
        ];
        if !vals.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::invalid("augmentation parameters must be finite and nonnegative"));
        }
        if self.jitter_clip < self.jitter_sigma {
            return Err(Error::invalid("jitter_clip must be >= jitter_sigma"));
        }
        Ok(())
    }
}

/// Clipped per-point jitter followed by a random rigid motion. Returns the
/// augmented cloud and the rigid motion that was applied after jittering.
pub fn augment<R: Rng + ?Sized>(
    cloud: &PointCloud,
    params: &AugmentParams,
    rng: &mut R,
) -> Result<(PointCloud, RigidTransform)> {
    params.validate()?;
    let noise = Normal::new(0.0, params.jitter_sigma).expect("sigma validated");
    let clip = params.jitter_clip;
    let jittered: Vec<Point> = cloud
        .points()
        .iter()
        .map(|p| {
            let mut q = *p;
            for k in 0..3 {
                q[k] += noise.sample(rng).clamp(-clip, clip);
            }
            q
        })
        .collect();

    let yaw = if params.z_rot {
        rng.random_range(0.0..2.0 * PI)
    } else {
        0.0
    };
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let tilt = params.small_rot_max * rng.random::<f64>();
    let shift = Vector3::from_fn(|_, _| {
        params.shift_range * (2.0 * rng.random::<f64>() - 1.0)
    });
    let small = RigidTransform::from_axis_angle(Vector3::from(axis), tilt, Vector3::zeros());
    let motion = small.compose(&RigidTransform::from_yaw(yaw, Vector3::zeros()));
    let motion = RigidTransform {
        translation: shift,
        ..motion
    };

    let out = PointCloud {
        points: jittered.iter().map(|p| motion.apply(p)).collect(),
        intensity: cloud.intensity.clone(),
        id: cloud.id.clone(),
    };
    Ok((out, motion))
}

/// Uniform random subset of `n` points (original order kept); clouds with at
/// most `n` points are returned unchanged.
pub fn random_point_dropout<R: Rng + ?Sized>(
    cloud: &PointCloud,
    n: usize,
    rng: &mut R,
) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::invalid("dropout target must be at least 1"));
    }
    if cloud.len() <= n {
        return Ok(cloud.clone());
    }
    let mut idx = rand::seq::index::sample(rng, cloud.len(), n).into_vec();
    idx.sort_unstable();
    Ok(cloud.select(&idx))
}
