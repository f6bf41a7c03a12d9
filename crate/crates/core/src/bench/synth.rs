use std::f64::consts::TAU;

use nalgebra::{Rotation2, Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::{DatasetManifest, ManifestEntry, PairEntry};
use crate::error::{Error, Result};
use crate::geom::{crop_ball, random_point_dropout, voxel_downsample, Point, PointCloud, RigidTransform};
use crate::seeded_rng;
use crate::train::PoseTaggedCloud;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneParams {
    /// Side length of the square ground plane, centered on the origin.
    pub extent: f64,
    pub n_structures: usize,
    /// Surface samples per square meter.
    pub density: f64,
}

impl SceneParams {
    pub fn new(extent: f64, n_structures: usize) -> Self {
        Self {
            extent,
            n_structures,
            density: 50.0,
        }
    }
}

/// A surface patch `origin + u·a + v·b`, `u, v ∈ [0, 1]`.
struct Quad {
    origin: Vector3<f64>,
    a: Vector3<f64>,
    b: Vector3<f64>,
}

fn sample_count<R: Rng + ?Sized>(area: f64, density: f64, rng: &mut R) -> usize {
    let expected = area * density;
    // stochastic rounding keeps the expected density exact for small patches
    let base = expected.floor();
    base as usize + usize::from(rng.random::<f64>() < expected - base)
}

fn sample_quad<R: Rng + ?Sized>(q: &Quad, density: f64, rng: &mut R, out: &mut Vec<Point>) {
    let area = q.a.cross(&q.b).norm();
    for _ in 0..sample_count(area, density, rng) {
        let (u, v): (f64, f64) = (rng.random(), rng.random());
        out.push(Point::from(q.origin + q.a * u + q.b * v));
    }
}

fn horizontal(v: Vector2<f64>) -> Vector3<f64> {
    Vector3::new(v.x, v.y, 0.0)
}

enum Structure {
    Box { w: f64, d: f64, h: f64 },
    Cylinder { r: f64, h: f64 },
    LWall { a: f64, b: f64, h: f64 },
}

impl Structure {
    fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        match rng.random_range(0..3) {
            0 => Structure::Box {
                w: rng.random_range(2.0..8.0),
                d: rng.random_range(2.0..8.0),
                h: rng.random_range(1.5..6.0),
            },
            1 => Structure::Cylinder {
                r: rng.random_range(0.3..2.5),
                h: rng.random_range(1.0..8.0),
            },
            _ => Structure::LWall {
                a: rng.random_range(3.0..10.0),
                b: rng.random_range(3.0..10.0),
                h: rng.random_range(1.5..4.0),
            },
        }
    }

    /// Radius of a circle around the placement point covering the footprint.
    fn footprint(&self) -> f64 {
        match *self {
            Structure::Box { w, d, .. } => 0.5 * w.hypot(d),
            Structure::Cylinder { r, .. } => r,
            Structure::LWall { a, b, .. } => a.max(b),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, center: Vector2<f64>, yaw: f64, density: f64, rng: &mut R, out: &mut Vec<Point>) {
        let rot = Rotation2::new(yaw);
        let dir = |x: f64, y: f64| horizontal(rot * Vector2::new(x, y));
        let c = horizontal(center);
        let up = Vector3::z();
        match *self {
            Structure::Box { w, d, h } => {
                let corners = [(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)].map(|(x, y)| c + dir(x * w, y * d));
                for k in 0..4 {
                    let (p, q) = (corners[k], corners[(k + 1) % 4]);
                    sample_quad(&Quad { origin: p, a: q - p, b: up * h }, density, rng, out);
                }
                let top = Quad {
                    origin: corners[0] + up * h,
                    a: corners[1] - corners[0],
                    b: corners[3] - corners[0],
                };
                sample_quad(&top, density, rng, out);
            }
            Structure::Cylinder { r, h } => {
                for _ in 0..sample_count(TAU * r * h, density, rng) {
                    let phi = rng.random_range(0.0..TAU);
                    let z = rng.random_range(0.0..h);
                    out.push(Point::from(c + Vector3::new(r * phi.cos(), r * phi.sin(), z)));
                }
                for _ in 0..sample_count(std::f64::consts::PI * r * r, density, rng) {
                    let phi = rng.random_range(0.0..TAU);
                    let rho = r * rng.random::<f64>().sqrt();
                    out.push(Point::from(c + Vector3::new(rho * phi.cos(), rho * phi.sin(), h)));
                }
            }
            Structure::LWall { a, b, h } => {
                sample_quad(&Quad { origin: c, a: dir(a, 0.0), b: up * h }, density, rng, out);
                sample_quad(&Quad { origin: c, a: dir(0.0, b), b: up * h }, density, rng, out);
            }
        }
    }
}

/// Ground plane plus randomly placed, non-overlapping boxes, cylinders and
/// L-shaped walls, sampled at `params.density` points per m².
pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<PointCloud> {
    if !(params.extent > 0.0) || !(params.density > 0.0) {
        return Err(Error::invalid("scene extent and density must be positive"));
    }
    let mut rng = seeded_rng(seed);
    let half = params.extent / 2.0;
    let mut points = Vec::new();
    let ground_noise = Normal::new(0.0, 0.01).unwrap();
    let n_ground = sample_count(params.extent * params.extent, params.density, &mut rng);
    for _ in 0..n_ground {
        let x = rng.random_range(-half..half);
        let y = rng.random_range(-half..half);
        points.push(Point::new(x, y, ground_noise.sample(&mut rng)));
    }
    let mut placed: Vec<(Vector2<f64>, f64)> = Vec::new();
    let mut attempts = 0;
    while placed.len() < params.n_structures && attempts < 200 * params.n_structures.max(1) {
        attempts += 1;
        let s = Structure::random(&mut rng);
        let r = s.footprint();
        if r >= half {
            continue;
        }
        let center = Vector2::new(rng.random_range(-half + r..half - r), rng.random_range(-half + r..half - r));
        if placed.iter().any(|(c, rc)| (c - center).norm() < r + rc + 1.0) {
            continue;
        }
        let yaw = rng.random_range(0.0..TAU);
        s.sample(center, yaw, params.density, &mut rng, &mut points);
        placed.push((center, r));
    }
    if placed.len() < params.n_structures {
        log::warn!("placed {} of {} structures", placed.len(), params.n_structures);
    }
    PointCloud::new(points)
}

pub fn generate_synthetic_scene(seed: u64, extent: f64, n_structures: usize) -> Result<PointCloud> {
    generate_scene(seed, &SceneParams::new(extent, n_structures))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanParams {
    pub radius: f64,
    /// Maximum horizontal distance between the two scans of a pair.
    pub max_offset: f64,
    /// Per-scan fraction of points kept after cropping.
    pub keep_fraction: f64,
    /// Isotropic Gaussian noise per scan point, given as the RMS length of
    /// the 3D displacement (each axis gets `jitter_sigma / √3`).
    pub jitter_sigma: f64,
    pub sensor_height: f64,
    /// Voxel size applied to each scan before dropout (0 = off).
    pub voxel: f64,
    /// Random heading per scan; otherwise every scan faces +x.
    pub random_yaw: bool,
    /// Distance travelled along the path between consecutive pairs.
    pub path_step: f64,
}

impl Default for ScanParams {
    fn default() -> Self {
        Self {
            radius: 20.0,
            max_offset: 5.0,
            keep_fraction: 0.8,
            jitter_sigma: 0.01,
            sensor_height: 1.5,
            voxel: 0.0,
            random_yaw: true,
            path_step: 10.0,
        }
    }
}

impl ScanParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !(self.max_offset >= 0.0) || !(self.path_step >= 0.0) {
            return Err(Error::invalid("scan radius must be > 0, offsets and steps >= 0"));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(Error::invalid("keep_fraction must lie in (0, 1]"));
        }
        if !(self.jitter_sigma >= 0.0) || !(self.voxel >= 0.0) || !self.sensor_height.is_finite() {
            return Err(Error::invalid("jitter_sigma and voxel must be >= 0"));
        }
        Ok(())
    }
}

/// Scan of `world` seen from `pose`, in the sensor frame.
pub fn take_scan<R: Rng + ?Sized>(world: &PointCloud, pose: &RigidTransform, params: &ScanParams, rng: &mut R) -> Result<PointCloud> {
    let center = Point::from(pose.translation);
    let crop = crop_ball(world, &center, params.radius)?;
    let inv = pose.inverse();
    let local = PointCloud::new(crop.points().iter().map(|p| inv.apply(p)).collect())?;
    let local = if params.voxel > 0.0 && !local.is_empty() {
        voxel_downsample(&local, params.voxel)?
    } else {
        local
    };
    let keep = ((local.len() as f64) * params.keep_fraction).round().max(1.0) as usize;
    let mut cloud = if local.is_empty() {
        local
    } else {
        random_point_dropout(&local, keep, rng)?
    };
    if params.jitter_sigma > 0.0 {
        let noise = Normal::new(0.0, params.jitter_sigma / 3f64.sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
        let pts = cloud
            .points()
            .iter()
            .map(|p| p + Vector3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng)))
            .collect();
        cloud = PointCloud::new(pts)?;
    }
    Ok(cloud)
}

fn world_bounds(world: &PointCloud) -> (Vector2<f64>, Vector2<f64>) {
    let mut lo = Vector2::repeat(f64::INFINITY);
    let mut hi = Vector2::repeat(f64::NEG_INFINITY);
    for p in world.points() {
        lo = lo.inf(&p.xy().coords);
        hi = hi.sup(&p.xy().coords);
    }
    (lo, hi)
}

/// `n_pairs` scan pairs along a random path through `world`. Scans are named
/// `{prefix}{index:05}`; pair `k` is scans `2k` and `2k + 1`, and its
/// relative transform maps scan `2k` coordinates into scan `2k + 1`.
pub fn make_scan_pairs<R: Rng + ?Sized>(
    world: &PointCloud,
    n_pairs: usize,
    params: &ScanParams,
    prefix: &str,
    rng: &mut R,
) -> Result<(Vec<PoseTaggedCloud>, DatasetManifest)> {
    params.validate()?;
    if world.is_empty() {
        return Err(Error::invalid("cannot scan an empty world"));
    }
    let mut scans = Vec::with_capacity(2 * n_pairs);
    let mut manifest = DatasetManifest::default();
    if n_pairs == 0 {
        return Ok((scans, manifest));
    }
    let (lo, hi) = world_bounds(world);
    // keep scan centers away from the world's edge where possible
    let margin = (0.5 * params.radius).min(0.25 * (hi - lo).min());
    let (lo, hi) = (lo.add_scalar(margin), hi.add_scalar(-margin));
    let clamp = |v: Vector2<f64>| Vector2::new(v.x.clamp(lo.x, hi.x), v.y.clamp(lo.y, hi.y));
    let mut here = Vector2::new(rng.random_range(lo.x..=hi.x), rng.random_range(lo.y..=hi.y));
    let mut heading = rng.random_range(0.0..TAU);
    let yaw = |rng: &mut R| if params.random_yaw { rng.random_range(0.0..TAU) } else { 0.0 };

    for k in 0..n_pairs {
        let phi = rng.random_range(0.0..TAU);
        let dist = params.max_offset * rng.random::<f64>().sqrt();
        let there = here + Vector2::new(dist * phi.cos(), dist * phi.sin());
        let poses = [here, there].map(|c| {
            RigidTransform::from_yaw(yaw(rng), Vector3::new(c.x, c.y, params.sensor_height))
        });
        let base = manifest.entries.len();
        for (j, pose) in poses.iter().enumerate() {
            let id = format!("{prefix}{:05}", 2 * k + j);
            let cloud = take_scan(world, pose, params, rng)?.with_id(id.clone());
            manifest.entries.push(ManifestEntry {
                id: id.clone(),
                path: format!("{id}.bin").into(),
                pose: *pose,
            });
            scans.push(PoseTaggedCloud {
                cloud,
                pose: *pose,
                traversal_id: prefix.to_string(),
            });
        }
        manifest.pairs.push(PairEntry {
            a: base,
            b: base + 1,
            relative: poses[1].inverse().compose(&poses[0]),
        });

        heading += rng.random_range(-0.6..0.6);
        let next = here + Vector2::new(heading.cos(), heading.sin()) * params.path_step;
        if next != clamp(next) {
            heading += std::f64::consts::PI;
        }
        here = clamp(next);
    }
    Ok((scans, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::apply_rigid;
    use crate::net::GridIndex;

    #[test]
    fn scene_is_deterministic() {
        let a = generate_synthetic_scene(5, 40.0, 6).unwrap();
        let b = generate_synthetic_scene(5, 40.0, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_synthetic_scene(6, 40.0, 6).unwrap());
        assert!(generate_synthetic_scene(1, 0.0, 1).is_err());
    }

    #[test]
    fn empty_scene_is_ground() {
        let c = generate_synthetic_scene(1, 20.0, 0).unwrap();
        assert!(c.points().iter().all(|p| p.z.abs() < 0.1));
        let density = c.len() as f64 / 400.0;
        assert!((density - 50.0).abs() < 1.0, "{density}");
    }

    #[test]
    fn structures_rise_above_ground() {
        let c = generate_synthetic_scene(2, 60.0, 10).unwrap();
        assert!(c.points().iter().filter(|p| p.z > 1.0).count() > 500);
    }

    #[test]
    fn crop_overlap() {
        let world = generate_synthetic_scene(3, 150.0, 20).unwrap();
        let r = 20.0;
        let share = |a: Point, b: Point| {
            let in_a: Vec<&Point> = world.points().iter().filter(|p| (*p - a).norm() <= r).collect();
            let both = in_a.iter().filter(|p| (**p - b).norm() <= r).count();
            both as f64 / in_a.len() as f64
        };
        assert!(share(Point::new(0.0, 0.0, 1.5), Point::new(3.0, 0.0, 1.5)) >= 0.5);
        assert_eq!(share(Point::new(-30.0, 0.0, 1.5), Point::new(30.0, 0.0, 1.5)), 0.0);
    }

    #[test]
    fn scan_pairs() {
        let world = generate_synthetic_scene(4, 100.0, 12).unwrap();
        let mut rng = seeded_rng(0);
        let (scans, m) = make_scan_pairs(&world, 0, &ScanParams::default(), "s", &mut rng).unwrap();
        assert!(scans.is_empty() && m.pairs.is_empty());

        let zero = ScanParams {
            max_offset: 0.0,
            random_yaw: false,
            ..ScanParams::default()
        };
        let (_, m) = make_scan_pairs(&world, 2, &zero, "s", &mut rng).unwrap();
        for p in &m.pairs {
            assert!((p.relative.rotation - nalgebra::Matrix3::identity()).norm() < 1e-12);
            assert!(p.relative.translation.norm() < 1e-12);
        }
    }

    #[test]
    fn relative_transform_aligns_scans() {
        let world = generate_synthetic_scene(7, 100.0, 15).unwrap();
        let params = ScanParams {
            keep_fraction: 0.9,
            jitter_sigma: 0.05,
            ..ScanParams::default()
        };
        let mut rng = seeded_rng(1);
        let (scans, m) = make_scan_pairs(&world, 3, &params, "s", &mut rng).unwrap();
        assert_eq!(scans.len(), 6);
        for p in &m.pairs {
            let (a, b) = (&scans[p.a].cloud, &scans[p.b].cloud);
            let moved = apply_rigid(a, &p.relative);
            let grid = GridIndex::new(b.points(), 0.5);
            // points of A well inside B's footprint
            let mut sq = Vec::new();
            for q in moved.points() {
                if q.coords.norm() > params.radius - 2.0 {
                    continue;
                }
                let nn = grid
                    .within(q, 0.5)
                    .into_iter()
                    .map(|j| (b.points()[j] - q).norm_squared())
                    .fold(f64::INFINITY, f64::min);
                sq.push(nn);
            }
            let rms = (sq.iter().sum::<f64>() / sq.len() as f64).sqrt();
            assert!(rms < 2.0 * params.jitter_sigma, "rms {rms}");
        }
    }
}
