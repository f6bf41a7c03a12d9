//! Keypoint detection, descriptor matching, RANSAC registration and pose errors.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::geom::{Point, PointCloud, RigidTransform};
use crate::net::{ball_group_seeded, describe_clusters, detect_clusters, GridIndex, KeypointFeature, ModelWeights, DEFAULT_TILE};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InferenceConfig {
    pub r_nms: f64,
    /// Keep keypoints with attention ≥ `beta · max attention`.
    pub beta: f64,
    pub max_keypoints: usize,
    pub r_cluster: f64,
    pub cluster_cap: usize,
    /// Clusters per network pass.
    pub tile: usize,
    /// Seed of the grouping subsample for over-full clusters.
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            r_nms: 0.5,
            beta: 0.01,
            max_keypoints: 512,
            r_cluster: 2.0,
            cluster_cap: 64,
            tile: DEFAULT_TILE,
            seed: 0,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_nms > 0.0) {
            return Err(Error::Config("r_nms must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config("beta must lie in [0, 1]".into()));
        }
        if self.max_keypoints == 0 || self.cluster_cap == 0 || self.tile == 0 {
            return Err(Error::Config("max_keypoints, cluster_cap and tile must be >= 1".into()));
        }
        if !(self.r_cluster > 0.0) {
            return Err(Error::Config("r_cluster must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    /// Index into the source cloud.
    pub index: usize,
    pub position: Point,
    pub attention: f64,
}

/// Local-maximum suppression. Point `i` survives iff every other point within
/// `r_nms` has lower attention, or equal attention and a higher index. Then
/// attentions below `beta · max` are dropped and the best `max_keypoints`
/// kept. Returns indices by descending attention (ties by index).
pub fn nms_select(points: &[Point], attention: &[f64], r_nms: f64, beta: f64, max_keypoints: usize) -> Result<Vec<usize>> {
    if points.len() != attention.len() {
        return Err(Error::invalid("one attention per point required"));
    }
    if attention.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("attention".into()));
    }
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let grid = GridIndex::new(points, r_nms);
    let beats = |i: usize, j: usize| attention[i] > attention[j] || (attention[i] == attention[j] && i < j);
    let max = attention.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor = beta * max;
    let mut kept: Vec<usize> = (0..points.len())
        .filter(|&i| attention[i] >= floor)
        .filter(|&i| grid.within(&points[i], r_nms).into_iter().all(|j| j == i || beats(i, j)))
        .collect();
    kept.sort_by(|&a, &b| attention[b].total_cmp(&attention[a]).then(a.cmp(&b)));
    kept.truncate(max_keypoints);
    Ok(kept)
}

/// Attention of every point, each treated as a cluster center.
pub fn point_attention(cloud: &PointCloud, w: &ModelWeights, cfg: &InferenceConfig) -> Result<Vec<f64>> {
    let all: Vec<usize> = (0..cloud.len()).collect();
    let clusters = ball_group_seeded(cloud, &all, cfg.r_cluster, cfg.cluster_cap, cfg.seed)?;
    Ok(detect_clusters(&clusters, w, cfg.tile)?.into_iter().map(|d| d.attention).collect())
}

pub fn detect_keypoints(cloud: &PointCloud, w: &ModelWeights, cfg: &InferenceConfig) -> Result<Vec<Keypoint>> {
    cfg.validate()?;
    if cloud.is_empty() {
        return Ok(Vec::new());
    }
    let attention = point_attention(cloud, w, cfg)?;
    let kept = nms_select(cloud.points(), &attention, cfg.r_nms, cfg.beta, cfg.max_keypoints)?;
    Ok(kept
        .into_iter()
        .map(|i| Keypoint {
            index: i,
            position: cloud.points()[i],
            attention: attention[i],
        })
        .collect())
}

/// Orientation then descriptor for each keypoint; attention is carried over.
pub fn compute_descriptors(
    cloud: &PointCloud,
    keypoints: &[Keypoint],
    w: &ModelWeights,
    cfg: &InferenceConfig,
) -> Result<Vec<KeypointFeature>> {
    if keypoints.is_empty() {
        return Ok(Vec::new());
    }
    let idx: Vec<usize> = keypoints.iter().map(|k| k.index).collect();
    let clusters = ball_group_seeded(cloud, &idx, cfg.r_cluster, cfg.cluster_cap, cfg.seed)?;
    let det = detect_clusters(&clusters, w, cfg.tile)?;
    let pairs: Vec<(f64, f64)> = det.iter().map(|d| (d.sin, d.cos)).collect();
    let desc = describe_clusters(&clusters, &pairs, w, cfg.tile)?;
    Ok(keypoints
        .iter()
        .zip(det)
        .zip(desc)
        .map(|((k, d), descriptor)| KeypointFeature {
            position: k.position,
            theta: d.theta(),
            attention: k.attention,
            descriptor,
        })
        .collect())
}

/// Keypoints and descriptors of one cloud.
pub fn extract_features(cloud: &PointCloud, w: &ModelWeights, cfg: &InferenceConfig) -> Result<Vec<KeypointFeature>> {
    let kp = detect_keypoints(cloud, w, cfg)?;
    compute_descriptors(cloud, &kp, w, cfg)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub p: Point,
    pub q: Point,
    pub descriptor_distance: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest descriptor in `b` (lowest index on ties) and its distance.
pub fn nearest_descriptor(f: &[f64], b: &[KeypointFeature]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, fb) in b.iter().enumerate() {
        let d = sq_dist(f, &fb.descriptor);
        if d < best.1 {
            best = (j, d);
        }
    }
    (best.0, best.1.sqrt())
}

/// One correspondence per feature of `a`: its nearest neighbour in `b`.
pub fn match_descriptors(a: &[KeypointFeature], b: &[KeypointFeature]) -> Result<Vec<Correspondence>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("matching needs features on both sides"));
    }
    Ok(a.iter()
        .map(|fa| {
            let (j, d) = nearest_descriptor(&fa.descriptor, b);
            Correspondence {
                p: fa.position,
                q: b[j].position,
                descriptor_distance: d,
            }
        })
        .collect())
}

/// Least-squares rigid fit of `q ≈ R·p + t` by centroid subtraction and SVD,
/// with the reflection corrected so `det R = +1`.
pub fn fit_rigid(p: &[Point], q: &[Point]) -> Result<RigidTransform> {
    if p.len() != q.len() {
        return Err(Error::invalid("point sets differ in size"));
    }
    if p.len() < 3 {
        return Err(Error::Degenerate(format!("rigid fit needs >= 3 points, got {}", p.len())));
    }
    let n = p.len() as f64;
    let cp = p.iter().fold(Vector3::zeros(), |a, x| a + x.coords) / n;
    let cq = q.iter().fold(Vector3::zeros(), |a, x| a + x.coords) / n;
    let mut scatter = Matrix3::zeros();
    let mut h = Matrix3::zeros();
    for (a, b) in p.iter().zip(q) {
        let da = a.coords - cp;
        let db = b.coords - cq;
        scatter += da * da.transpose();
        h += da * db.transpose();
    }
    let mut eig = SymmetricEigen::new(scatter).eigenvalues.as_slice().to_vec();
    eig.sort_by(|a, b| b.total_cmp(a));
    if !(eig[0] > 0.0) || eig[1] <= 1e-12 * eig[0] {
        return Err(Error::Degenerate("source points are collinear or coincident".into()));
    }
    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Degenerate("SVD did not converge".into())),
    };
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let translation = cq - rotation * cp;
    RigidTransform::new(rotation, translation)
}

pub fn estimate_rigid_svd(corr: &[Correspondence]) -> Result<RigidTransform> {
    let p: Vec<Point> = corr.iter().map(|c| c.p).collect();
    let q: Vec<Point> = corr.iter().map(|c| c.q).collect();
    fit_rigid(&p, &q)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacConfig {
    pub inlier_thresh: f64,
    pub confidence: f64,
    pub max_iter: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            inlier_thresh: 1.0,
            confidence: 0.99,
            max_iter: 10_000,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inlier_thresh > 0.0) {
            return Err(Error::Config("inlier threshold must be > 0".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Config("confidence must lie in (0, 1)".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// `ceil(ln(1 − confidence) / ln(1 − w³))` clamped to `[1, max_iter]`.
pub fn adaptive_iterations(inlier_ratio: f64, confidence: f64, max_iter: usize) -> usize {
    let miss = 1.0 - inlier_ratio.clamp(0.0, 1.0).powi(3);
    if miss <= 0.0 {
        return 1;
    }
    if miss >= 1.0 {
        return max_iter;
    }
    let n = ((1.0 - confidence).ln() / miss.ln()).ceil();
    if n >= max_iter as f64 {
        max_iter
    } else {
        (n as usize).max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationResult {
    pub transform: RigidTransform,
    pub inlier_count: usize,
    pub iterations: usize,
    pub success: bool,
}

fn inliers(corr: &[Correspondence], t: &RigidTransform, thresh: f64) -> Vec<usize> {
    let t2 = thresh * thresh;
    corr.iter()
        .enumerate()
        .filter(|(_, c)| (t.apply(&c.p) - c.q).norm_squared() <= t2)
        .map(|(i, _)| i)
        .collect()
}

/// Three-point RANSAC with an adaptive iteration bound, refit on the best
/// consensus set.
pub fn ransac_register<R: Rng + ?Sized>(corr: &[Correspondence], cfg: &RansacConfig, rng: &mut R) -> Result<RegistrationResult> {
    cfg.validate()?;
    if corr.len() < 3 {
        return Err(Error::invalid(format!("RANSAC needs >= 3 correspondences, got {}", corr.len())));
    }
    let mut best: Option<(RigidTransform, Vec<usize>)> = None;
    let mut bound = cfg.max_iter;
    let mut iterations = 0;
    while iterations < bound {
        iterations += 1;
        let sample = rand::seq::index::sample(rng, corr.len(), 3);
        let p: Vec<Point> = sample.iter().map(|i| corr[i].p).collect();
        let q: Vec<Point> = sample.iter().map(|i| corr[i].q).collect();
        let Ok(t) = fit_rigid(&p, &q) else { continue };
        let set = inliers(corr, &t, cfg.inlier_thresh);
        if best.as_ref().is_none_or(|(_, b)| set.len() > b.len()) {
            let ratio = set.len() as f64 / corr.len() as f64;
            bound = bound.min(adaptive_iterations(ratio, cfg.confidence, cfg.max_iter));
            best = Some((t, set));
        }
    }
    let Some((hypothesis, set)) = best else {
        return Ok(RegistrationResult {
            transform: RigidTransform::identity(),
            inlier_count: 0,
            iterations,
            success: false,
        });
    };
    let subset: Vec<Correspondence> = set.iter().map(|&i| corr[i]).collect();
    let transform = estimate_rigid_svd(&subset).unwrap_or(hypothesis);
    Ok(RegistrationResult {
        transform,
        inlier_count: set.len(),
        iterations,
        success: set.len() >= 3,
    })
}

/// Relative translational error (m) and rotation error (degrees) of `est`
/// against `gt`. The angle uses `‖R_est − R_gt‖_F = 2√2·sin(θ/2)`, which equals
/// the trace form but stays accurate near zero and is exactly 0 for `est = gt`.
pub fn rte_rre(est: &RigidTransform, gt: &RigidTransform) -> (f64, f64) {
    let rte = (est.translation - gt.translation).norm();
    let chord = (est.rotation - gt.rotation).norm() / (2.0 * std::f64::consts::SQRT_2);
    let rre = 2.0 * chord.min(1.0).asin();
    (rte, rre.to_degrees())
}

/// Success criterion for a registered pair.
pub fn is_successful(rte: f64, rre_deg: f64) -> bool {
    rte < 2.0 && rre_deg < 5.0
}

/// Full pipeline on two clouds: features, matching, RANSAC. The result maps
/// `source` coordinates into `target` coordinates.
pub fn register_clouds(
    source: &PointCloud,
    target: &PointCloud,
    w: &ModelWeights,
    icfg: &InferenceConfig,
    rcfg: &RansacConfig,
    seed: u64,
) -> Result<RegistrationResult> {
    let fa = extract_features(source, w, icfg)?;
    let fb = extract_features(target, w, icfg)?;
    if fa.is_empty() || fb.is_empty() {
        return Err(Error::Degenerate("no keypoints detected".into()));
    }
    let corr = match_descriptors(&fa, &fb)?;
    ransac_register(&corr, rcfg, &mut crate::seeded_rng(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{features_for_clusters, Architecture};
    use crate::seeded_rng;
    use nalgebra::Rotation3;
    use rand_distr::{Distribution, Normal};

    fn small_weights(seed: u64) -> ModelWeights {
        let arch = Architecture {
            detector_point: vec![8, 16],
            detector_pooled: vec![8],
            descriptor_point: vec![8, 16],
            context_dim: 16,
            descriptor_dim: 8,
        };
        ModelWeights::init(&arch, &mut seeded_rng(seed)).unwrap()
    }

    fn random_points(n: usize, extent: f64, rng: &mut impl Rng) -> Vec<Point> {
        (0..n)
            .map(|_| Point::new(rng.random_range(0.0..extent), rng.random_range(0.0..extent), rng.random_range(0.0..extent / 4.0)))
            .collect()
    }

    fn random_transform(rng: &mut impl Rng) -> RigidTransform {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        RigidTransform::from_axis_angle(
            axis,
            rng.random_range(-3.0..3.0),
            Vector3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-2.0..2.0)),
        )
    }

    /// All-pairs NMS followed by the threshold and top-M steps.
    pub(crate) fn nms_oracle(points: &[Point], att: &[f64], r: f64, beta: f64, m: usize) -> Vec<usize> {
        let max = att.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut out = Vec::new();
        for i in 0..points.len() {
            let mut ok = att[i] >= beta * max;
            for j in 0..points.len() {
                if j != i && (points[i] - points[j]).norm() <= r && !(att[i] > att[j] || (att[i] == att[j] && i < j)) {
                    ok = false;
                }
            }
            if ok {
                out.push(i);
            }
        }
        out.sort_by(|&a, &b| att[b].partial_cmp(&att[a]).unwrap().then(a.cmp(&b)));
        out.truncate(m);
        out
    }

    #[test]
    fn nms_matches_oracle_on_random_fields() {
        let mut rng = seeded_rng(1);
        for _ in 0..30 {
            let pts = random_points(300, 8.0, &mut rng);
            // quantized attention forces ties
            let att: Vec<f64> = (0..300).map(|_| (rng.random_range(0.0..20.0) as f64).floor()).collect();
            let got = nms_select(&pts, &att, 0.7, 0.3, 40).unwrap();
            assert_eq!(got, nms_oracle(&pts, &att, 0.7, 0.3, 40));
        }
    }

    #[test]
    fn detect_single_and_close_points() {
        let w = small_weights(2);
        let cfg = InferenceConfig::default();
        let one = PointCloud::new(vec![Point::new(1.0, 2.0, 3.0)]).unwrap();
        let kp = detect_keypoints(&one, &w, &cfg).unwrap();
        assert_eq!(kp.len(), 1);
        assert_eq!(kp[0].position, one.points()[0]);

        let two = PointCloud::new(vec![Point::new(0.0, 0.0, 0.0), Point::new(0.1, 0.0, 0.0)]).unwrap();
        let att = point_attention(&two, &w, &cfg).unwrap();
        let kp = detect_keypoints(&two, &w, &cfg).unwrap();
        assert_eq!(kp.len(), 1);
        let want = if att[1] > att[0] { 1 } else { 0 };
        assert_eq!(kp[0].index, want);
        assert!(detect_keypoints(&PointCloud::empty(), &w, &cfg).unwrap().is_empty());
    }

    #[test]
    fn descriptors_agree_with_branch_path() {
        let w = small_weights(3);
        let mut rng = seeded_rng(3);
        let cloud = PointCloud::new(random_points(200, 6.0, &mut rng)).unwrap();
        let cfg = InferenceConfig {
            cluster_cap: 16,
            ..InferenceConfig::default()
        };
        let kp = detect_keypoints(&cloud, &w, &cfg).unwrap();
        assert!(!kp.is_empty());
        let feats = compute_descriptors(&cloud, &kp, &w, &cfg).unwrap();
        let idx: Vec<usize> = kp.iter().map(|k| k.index).collect();
        let clusters = ball_group_seeded(&cloud, &idx, cfg.r_cluster, cfg.cluster_cap, cfg.seed).unwrap();
        let branch = features_for_clusters(&clusters, &w, cfg.tile).unwrap();
        for (a, b) in feats.iter().zip(&branch) {
            assert_eq!(a.descriptor, b.descriptor);
            assert_eq!(a.attention, b.attention);
            let n: f64 = a.descriptor.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        assert!(compute_descriptors(&cloud, &[], &w, &cfg).unwrap().is_empty());
    }

    fn feature(pos: f64, desc: Vec<f64>) -> KeypointFeature {
        KeypointFeature {
            position: Point::new(pos, 0.0, 0.0),
            theta: 0.0,
            attention: 1.0,
            descriptor: desc,
        }
    }

    #[test]
    fn matching_cases() {
        let mut rng = seeded_rng(4);
        let mut rand_set = |n: usize| -> Vec<KeypointFeature> {
            (0..n)
                .map(|i| feature(i as f64, (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()))
                .collect()
        };
        let a = rand_set(6);
        for (i, c) in match_descriptors(&a, &a).unwrap().iter().enumerate() {
            assert_eq!(c.descriptor_distance, 0.0);
            assert_eq!(c.q, a[i].position);
        }
        let (a3, b5) = (rand_set(3), rand_set(5));
        assert_eq!(match_descriptors(&a3, &b5).unwrap().len(), 3);
        assert!(match_descriptors(&a3, &[]).is_err());

        let (a, b) = (rand_set(20), rand_set(30));
        for (fa, c) in a.iter().zip(match_descriptors(&a, &b).unwrap()) {
            let mut best = (f64::INFINITY, 0);
            for (j, fb) in b.iter().enumerate() {
                let d = fa.descriptor.iter().zip(&fb.descriptor).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                if d < best.0 {
                    best = (d, j);
                }
            }
            assert_eq!(c.q, b[best.1].position);
            assert!((c.descriptor_distance - best.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rigid_fit_cases() {
        let mut rng = seeded_rng(5);
        let p = random_points(10, 5.0, &mut rng);
        let id = fit_rigid(&p, &p).unwrap();
        assert!((id.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(id.translation.norm() < 1e-12);

        let shift = Vector3::new(1.0, 2.0, 3.0);
        let q: Vec<Point> = p.iter().map(|x| x + shift).collect();
        let t = fit_rigid(&p, &q).unwrap();
        assert!((t.translation - shift).norm() < 1e-12);

        for _ in 0..20 {
            let gt = random_transform(&mut rng);
            let q: Vec<Point> = p.iter().map(|x| gt.apply(x)).collect();
            let t = fit_rigid(&p, &q).unwrap();
            assert!((t.rotation - gt.rotation).norm() < 1e-9);
            assert!((t.translation - gt.translation).norm() < 1e-9);
        }

        let line: Vec<Point> = (0..5).map(|i| Point::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(fit_rigid(&line, &line), Err(Error::Degenerate(_))));
        assert!(fit_rigid(&p[..2], &p[..2]).is_err());
    }

    #[test]
    fn rigid_fit_noise_residual_tracks_sigma() {
        let mut rng = seeded_rng(6);
        let sigma = 0.05;
        let noise = Normal::new(0.0, sigma).unwrap();
        let p = random_points(2000, 20.0, &mut rng);
        let gt = random_transform(&mut rng);
        let q: Vec<Point> = p
            .iter()
            .map(|x| gt.apply(x) + Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)))
            .collect();
        let t = fit_rigid(&p, &q).unwrap();
        let rms = (p.iter().zip(&q).map(|(a, b)| (t.apply(a) - b).norm_squared()).sum::<f64>() / p.len() as f64).sqrt();
        // per-axis sigma, three axes
        let expected = sigma * 3f64.sqrt();
        assert!((rms / expected - 1.0).abs() < 0.05, "rms {rms} vs {expected}");
    }

    #[test]
    fn planar_input_keeps_proper_rotation() {
        let mut rng = seeded_rng(7);
        let p: Vec<Point> = (0..12).map(|_| Point::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 0.0)).collect();
        for _ in 0..20 {
            let gt = random_transform(&mut rng);
            let q: Vec<Point> = p.iter().map(|x| gt.apply(x)).collect();
            let t = fit_rigid(&p, &q).unwrap();
            assert!((t.rotation.determinant() - 1.0).abs() < 1e-9);
            assert!((t.rotation - gt.rotation).norm() < 1e-9);
        }
    }

    #[test]
    fn adaptive_bound_closed_form() {
        assert_eq!(adaptive_iterations(0.4, 0.99, 10_000), 70);
        assert_eq!(adaptive_iterations(0.2, 0.99, 10_000), 574);
        assert_eq!(adaptive_iterations(0.8, 0.99, 10_000), 7);
        assert_eq!(adaptive_iterations(0.0, 0.99, 10_000), 10_000);
        assert_eq!(adaptive_iterations(1.0, 0.99, 10_000), 1);
        assert_eq!(adaptive_iterations(0.01, 0.99, 10_000), 10_000);
    }

    #[test]
    fn ransac_exact_correspondences() {
        let mut rng = seeded_rng(8);
        let gt = random_transform(&mut rng);
        let corr: Vec<Correspondence> = random_points(30, 10.0, &mut rng)
            .into_iter()
            .map(|p| Correspondence {
                p,
                q: gt.apply(&p),
                descriptor_distance: 0.0,
            })
            .collect();
        let r = ransac_register(&corr, &RansacConfig::default(), &mut rng).unwrap();
        assert_eq!(r.inlier_count, 30);
        assert!(r.iterations <= 2);
        let (rte, rre) = rte_rre(&r.transform, &gt);
        assert!(rte < 1e-9 && rre < 1e-7);
        assert!(ransac_register(&corr[..2], &RansacConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn ransac_is_deterministic() {
        let mut rng = seeded_rng(9);
        let corr: Vec<Correspondence> = (0..50)
            .map(|_| Correspondence {
                p: random_points(1, 10.0, &mut rng)[0],
                q: random_points(1, 10.0, &mut rng)[0],
                descriptor_distance: 1.0,
            })
            .collect();
        let a = ransac_register(&corr, &RansacConfig::default(), &mut seeded_rng(1)).unwrap();
        let b = ransac_register(&corr, &RansacConfig::default(), &mut seeded_rng(1)).unwrap();
        assert_eq!(a, b);
        assert!(a.iterations <= 10_000);
    }

    #[test]
    fn pose_errors() {
        let mut rng = seeded_rng(10);
        for _ in 0..20 {
            let gt = random_transform(&mut rng);
            assert_eq!(rte_rre(&gt, &gt), (0.0, 0.0));
            let shifted = gt.compose(&RigidTransform::from_translation(Vector3::new(2.0, 0.0, 0.0)));
            let (rte, rre) = rte_rre(&shifted, &gt);
            assert!((rte - 2.0).abs() < 1e-12 && rre < 1e-6);
            let turned = gt.compose(&RigidTransform::from_yaw(5f64.to_radians(), Vector3::zeros()));
            let (_, rre) = rte_rre(&turned, &gt);
            assert!((rre - 5.0).abs() < 1e-9, "{rre}");
        }
        // agrees with the trace formula away from zero
        let r = Rotation3::from_euler_angles(0.3, -0.2, 1.1).into_inner();
        let t = RigidTransform::new(r, Vector3::zeros()).unwrap();
        let (_, rre) = rte_rre(&t, &RigidTransform::identity());
        let trace = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees();
        assert!((rre - trace).abs() < 1e-9);
    }
}
