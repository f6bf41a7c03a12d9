use super::cluster::{ball_group, farthest_point_sample, Cluster, ClusterBatch};
use super::weights::{Architecture, ModelWeights};
use crate::autodiff::{Graph, Segments, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::{Point, PointCloud};
use crate::seeded_rng;

/// Guards normalization of a degenerate (zero) vector.
pub const NORM_EPS: f64 = 1e-8;

/// Clusters per forward pass when evaluating many clusters without gradients.
pub const DEFAULT_TILE: usize = 256;

#[derive(Clone, Copy, Debug)]
pub struct Layer {
    pub w: Var,
    pub b: Var,
}

/// Graph handles of every network tensor.
#[derive(Clone, Debug)]
pub struct NetVars {
    pub detector_point: Vec<Layer>,
    pub detector_pooled: Vec<Layer>,
    pub orient: Layer,
    pub attention: Layer,
    pub descriptor_point: Vec<Layer>,
    pub context: Layer,
    pub out: Layer,
}

impl NetVars {
    /// `vars` holds one handle per tensor, in [`ModelWeights::tensors`] order.
    pub fn from_vars(arch: &Architecture, vars: &[Var]) -> Result<Self> {
        let expected = 2 * arch.layers().len();
        if vars.len() != expected {
            return Err(Error::shape("NetVars", format!("{} handles for {expected} tensors", vars.len())));
        }
        let mut layers = vars.chunks_exact(2).map(|c| Layer { w: c[0], b: c[1] });
        let mut take = |n: usize| (&mut layers).take(n).collect::<Vec<_>>();
        let detector_point = take(arch.detector_point.len());
        let detector_pooled = take(arch.detector_pooled.len());
        let heads = take(2);
        let descriptor_point = take(arch.descriptor_point.len());
        let tail = take(2);
        Ok(Self {
            detector_point,
            detector_pooled,
            orient: heads[0],
            attention: heads[1],
            descriptor_point,
            context: tail[0],
            out: tail[1],
        })
    }

    /// Inserts all weights into `g`; tensors selected by `trainable` become
    /// gradient-requiring leaves, the rest constants. Returns the handles in
    /// tensor order as well.
    pub fn bind(g: &mut Graph, w: &ModelWeights, trainable: impl Fn(&str) -> bool) -> Result<(Self, Vec<Var>)> {
        let vars: Vec<Var> = w
            .tensors()
            .iter()
            .map(|(name, t)| {
                if trainable(name) {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        Ok((Self::from_vars(w.architecture(), &vars)?, vars))
    }
}

fn mlp(g: &mut Graph, mut x: Var, layers: &[Layer]) -> Result<Var> {
    for l in layers {
        let y = g.linear(x, l.w, l.b)?;
        x = g.relu(y);
    }
    Ok(x)
}

/// Detector on a batch of clusters. Returns the normalized `(sin θ, cos θ)`
/// pairs `[K, 2]` and the softplus attentions `[K, 1]`.
pub fn detector_forward(g: &mut Graph, net: &NetVars, points: Var, segments: &Segments) -> Result<(Var, Var)> {
    let h = mlp(g, points, &net.detector_point)?;
    let pooled = g.segment_max(h, segments)?;
    let f = mlp(g, pooled, &net.detector_pooled)?;
    let raw_orient = g.linear(f, net.orient.w, net.orient.b)?;
    let pair = g.l2_normalize(raw_orient, NORM_EPS);
    let raw_att = g.linear(f, net.attention.w, net.attention.b)?;
    let attention = g.softplus(raw_att);
    Ok((pair, attention))
}

/// Descriptor on a batch of clusters, each first rotated by `-θ` when a pair
/// tensor is given. Returns unit descriptors `[K, d]`.
pub fn descriptor_forward(
    g: &mut Graph,
    net: &NetVars,
    points: Var,
    pair: Option<Var>,
    segments: &Segments,
) -> Result<Var> {
    let canonical = match pair {
        Some(p) => g.rotate_z_pair(points, p, segments)?,
        None => points,
    };
    let h = mlp(g, canonical, &net.descriptor_point)?;
    let cluster_feat = g.segment_max(h, segments)?;
    let spread = g.expand_segments(cluster_feat, segments)?;
    let joined = g.concat(h, spread, 1)?;
    let ctx = g.linear(joined, net.context.w, net.context.b)?;
    let ctx = g.relu(ctx);
    let pooled = g.segment_max(ctx, segments)?;
    let out = g.linear(pooled, net.out.w, net.out.b)?;
    Ok(g.l2_normalize(out, NORM_EPS))
}

/// Detector output for one cluster.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub sin: f64,
    pub cos: f64,
    pub attention: f64,
}

impl Detection {
    /// Orientation in `(-π, π]`.
    pub fn theta(&self) -> f64 {
        self.sin.atan2(self.cos)
    }
}

/// A detected point with orientation, attention and unit descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointFeature {
    pub position: Point,
    pub theta: f64,
    pub attention: f64,
    pub descriptor: Vec<f64>,
}

fn inference_graph(w: &ModelWeights) -> Result<(Graph, NetVars)> {
    let mut g = Graph::new();
    let (net, _) = NetVars::bind(&mut g, w, |_| false)?;
    Ok((g, net))
}

#[cfg(feature = "parallel")]
fn map_tiles<T: Send>(
    clusters: &[Cluster],
    tile: usize,
    f: impl Fn(&[Cluster]) -> Result<Vec<T>> + Sync + Send,
) -> Result<Vec<T>> {
    use rayon::prelude::*;
    let parts: Result<Vec<Vec<T>>> = clusters.par_chunks(tile.max(1)).map(f).collect();
    Ok(parts?.into_iter().flatten().collect())
}

#[cfg(not(feature = "parallel"))]
fn map_tiles<T: Send>(
    clusters: &[Cluster],
    tile: usize,
    f: impl Fn(&[Cluster]) -> Result<Vec<T>>,
) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(clusters.len());
    for chunk in clusters.chunks(tile.max(1)) {
        out.extend(f(chunk)?);
    }
    Ok(out)
}

/// Runs the detector on every cluster, `tile` clusters per pass.
pub fn detect_clusters(clusters: &[Cluster], w: &ModelWeights, tile: usize) -> Result<Vec<Detection>> {
    if clusters.is_empty() {
        return Ok(Vec::new());
    }
    map_tiles(clusters, tile, |chunk| {
        let (mut g, net) = inference_graph(w)?;
        let batch = ClusterBatch::new(chunk)?;
        let pts = g.constant(batch.points);
        let (pair, att) = detector_forward(&mut g, &net, pts, &batch.segments)?;
        let (pair, att) = (g.value(pair), g.value(att));
        Ok((0..chunk.len())
            .map(|k| Detection {
                sin: pair.at(k, 0),
                cos: pair.at(k, 1),
                attention: att.at(k, 0),
            })
            .collect())
    })
}

/// Descriptors for clusters whose orientations are given as `(sin θ, cos θ)`.
pub fn describe_clusters(
    clusters: &[Cluster],
    orientations: &[(f64, f64)],
    w: &ModelWeights,
    tile: usize,
) -> Result<Vec<Vec<f64>>> {
    if clusters.len() != orientations.len() {
        return Err(Error::invalid("one orientation per cluster required"));
    }
    if clusters.is_empty() {
        return Ok(Vec::new());
    }
    let tile = tile.max(1);
    let mut out = Vec::with_capacity(clusters.len());
    for (chunk, pairs) in clusters.chunks(tile).zip(orientations.chunks(tile)) {
        let (mut g, net) = inference_graph(w)?;
        let batch = ClusterBatch::new(chunk)?;
        let pts = g.constant(batch.points);
        let pair_rows: Vec<[f64; 2]> = pairs.iter().map(|&(s, c)| [s, c]).collect();
        let pair = g.constant(Tensor::from_rows(&pair_rows)?);
        let d = descriptor_forward(&mut g, &net, pts, Some(pair), &batch.segments)?;
        let d = g.value(d);
        out.extend((0..chunk.len()).map(|k| d.row(k).to_vec()));
    }
    Ok(out)
}

/// Orientation `θ ∈ (-π, π]` and attention of one cluster.
pub fn detect(cluster: &Cluster, w: &ModelWeights) -> Result<(f64, f64)> {
    let d = detect_clusters(std::slice::from_ref(cluster), w, 1)?[0];
    Ok((d.theta(), d.attention))
}

/// Unit descriptor of `cluster` after rotating it by `-theta` about z.
pub fn describe(cluster: &Cluster, theta: f64, w: &ModelWeights) -> Result<Vec<f64>> {
    let (s, c) = theta.sin_cos();
    Ok(describe_clusters(std::slice::from_ref(cluster), &[(s, c)], w, 1)?.remove(0))
}

/// Detector then descriptor on already-grouped clusters.
pub fn features_for_clusters(clusters: &[Cluster], w: &ModelWeights, tile: usize) -> Result<Vec<KeypointFeature>> {
    let det = detect_clusters(clusters, w, tile)?;
    let pairs: Vec<(f64, f64)> = det.iter().map(|d| (d.sin, d.cos)).collect();
    let desc = describe_clusters(clusters, &pairs, w, tile)?;
    Ok(clusters
        .iter()
        .zip(det)
        .zip(desc)
        .map(|((c, d), descriptor)| KeypointFeature {
            position: c.center,
            theta: d.theta(),
            attention: d.attention,
            descriptor,
        })
        .collect())
}

/// Sampling and grouping parameters of one network branch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BranchConfig {
    pub clusters: usize,
    pub r_cluster: f64,
    pub cap: usize,
}

impl Default for BranchConfig {
    fn default() -> Self {
        Self {
            clusters: 512,
            r_cluster: 2.0,
            cap: 64,
        }
    }
}

/// FPS centers and their clusters, with the grouping stream derived from `seed`.
pub fn sample_clusters(cloud: &PointCloud, cfg: &BranchConfig, seed: u64) -> Result<(Vec<usize>, Vec<Cluster>)> {
    let centers = farthest_point_sample(cloud, cfg.clusters, seed)?;
    let mut rng = seeded_rng(seed ^ 0x9E37_79B9_7F4A_7C15);
    let clusters = ball_group(cloud, &centers, cfg.r_cluster, cfg.cap, &mut rng)?;
    Ok((centers, clusters))
}

/// One branch: FPS → grouping → detector → descriptor.
pub fn forward_branch(cloud: &PointCloud, w: &ModelWeights, cfg: &BranchConfig, seed: u64) -> Result<Vec<KeypointFeature>> {
    let (_, clusters) = sample_clusters(cloud, cfg, seed)?;
    features_for_clusters(&clusters, w, DEFAULT_TILE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::rotate_z;
    use rand::Rng;

    fn small_arch() -> Architecture {
        Architecture {
            detector_point: vec![16, 32],
            detector_pooled: vec![16],
            descriptor_point: vec![16, 32],
            context_dim: 24,
            descriptor_dim: 8,
        }
    }

    fn random_cluster(n: usize, rng: &mut impl Rng) -> Cluster {
        Cluster {
            center: Point::new(rng.random(), rng.random(), rng.random()),
            local_points: (0..n)
                .map(|_| Point::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.0)))
                .collect(),
        }
    }

    #[test]
    fn detect_codomain_and_permutation() {
        let mut rng = seeded_rng(4);
        let w = ModelWeights::init(&small_arch(), &mut rng).unwrap();
        for _ in 0..20 {
            let c = random_cluster(12, &mut rng);
            let (theta, att) = detect(&c, &w).unwrap();
            assert!(att > 0.0);
            assert!(theta > -std::f64::consts::PI && theta <= std::f64::consts::PI);
            let d = detect_clusters(std::slice::from_ref(&c), &w, 1).unwrap()[0];
            assert!((d.sin * d.sin + d.cos * d.cos - 1.0).abs() < 1e-6);

            let mut shuffled = c.clone();
            shuffled.local_points.reverse();
            let (t2, a2) = detect(&shuffled, &w).unwrap();
            assert!((t2 - theta).abs() < 1e-6 && (a2 - att).abs() < 1e-6);
        }
    }

    #[test]
    fn describe_canonicalization_identity() {
        let mut rng = seeded_rng(5);
        let w = ModelWeights::init(&small_arch(), &mut rng).unwrap();
        for _ in 0..20 {
            let c = random_cluster(10, &mut rng);
            let theta = rng.random_range(-3.0..3.0);
            let phi = rng.random_range(-3.0..3.0);
            let base = describe(&c, theta, &w).unwrap();
            let norm: f64 = base.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
            let rotated = Cluster {
                center: c.center,
                local_points: rotate_z(&c.local_points, phi),
            };
            let again = describe(&rotated, theta + phi, &w).unwrap();
            for (a, b) in base.iter().zip(&again) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn branch_single_cluster_and_determinism() {
        let mut rng = seeded_rng(6);
        let w = ModelWeights::init(&small_arch(), &mut rng).unwrap();
        let cloud = PointCloud::new((0..10).map(|_| Point::new(rng.random(), rng.random(), rng.random())).collect()).unwrap();
        let cfg = BranchConfig {
            clusters: 1,
            r_cluster: 2.0,
            cap: 64,
        };
        let f = forward_branch(&cloud, &w, &cfg, 1).unwrap();
        assert_eq!(f.len(), 1);
        let n: f64 = f[0].descriptor.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);

        let cfg = BranchConfig { clusters: 4, ..cfg };
        assert_eq!(forward_branch(&cloud, &w, &cfg, 9).unwrap(), forward_branch(&cloud, &w, &cfg, 9).unwrap());
    }

    #[test]
    fn tiling_does_not_change_results() {
        let mut rng = seeded_rng(7);
        let w = ModelWeights::init(&small_arch(), &mut rng).unwrap();
        let clusters: Vec<Cluster> = (0..9).map(|i| random_cluster(3 + i, &mut rng)).collect();
        let a = detect_clusters(&clusters, &w, 2).unwrap();
        let b = detect_clusters(&clusters, &w, 100).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x.attention - y.attention).abs() < 1e-12);
        }
    }
}
