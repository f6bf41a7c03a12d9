//! Triplet construction from pose-tagged clouds and the two-phase training loop.

mod config;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::Rng;

pub use config::TrainConfig;

use crate::autodiff::{adam_step, grad_check, AdamConfig, AdamState, GradCheckReport, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::{augment, crop_ball, random_point_dropout, Point, PointCloud, RigidTransform};
use crate::loss::{triplet_loss_node, TripletLossConfig};
use crate::net::{
    descriptor_forward, detector_forward, sample_clusters, Architecture, BranchConfig, Cluster, ClusterBatch,
    ModelWeights, NetVars,
};
use crate::seeded_rng;

/// A cloud with its world-frame pose; the cloud is in its own (sensor) frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseTaggedCloud {
    pub cloud: PointCloud,
    pub pose: RigidTransform,
    pub traversal_id: String,
}

impl PoseTaggedCloud {
    pub fn world_centroid(&self) -> Result<Point> {
        Ok(self.pose.apply(&self.cloud.centroid()?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TripletSet {
    pub triplets: Vec<Triplet>,
    /// Anchors without a valid positive or negative.
    pub skipped: usize,
}

fn world_centroids(dataset: &[PoseTaggedCloud]) -> Result<Vec<Point>> {
    dataset.iter().map(|c| c.world_centroid()).collect()
}

fn triplets_from_centroids<R: Rng + ?Sized>(centroids: &[Point], tau_p: f64, tau_n: f64, rng: &mut R) -> TripletSet {
    let mut triplets = Vec::new();
    let mut skipped = 0;
    for (i, ci) in centroids.iter().enumerate() {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (j, cj) in centroids.iter().enumerate() {
            let d = (ci - cj).norm();
            if j != i && d < tau_p {
                pos.push(j);
            }
            if d > tau_n {
                neg.push(j);
            }
        }
        if pos.is_empty() || neg.is_empty() {
            skipped += 1;
            continue;
        }
        let positive = pos[rng.random_range(0..pos.len())];
        let negative = neg[rng.random_range(0..neg.len())];
        triplets.push(Triplet {
            anchor: i,
            positive,
            negative,
        });
    }
    TripletSet { triplets, skipped }
}

/// One triplet per anchor that has a positive (centroid distance `< tau_p`)
/// and a negative (`> tau_n`), both drawn uniformly.
pub fn build_triplets<R: Rng + ?Sized>(dataset: &[PoseTaggedCloud], cfg: &TrainConfig, rng: &mut R) -> Result<TripletSet> {
    if !(cfg.tau_p < cfg.tau_n) {
        return Err(Error::Config("tau_p must be < tau_n".into()));
    }
    let centroids = world_centroids(dataset)?;
    let set = triplets_from_centroids(&centroids, cfg.tau_p, cfg.tau_n, rng);
    if set.skipped > 0 {
        debug!("{} anchors lack a positive or negative", set.skipped);
    }
    Ok(set)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Descriptor only: no rotation, uniform attention.
    Pretrain,
    /// Detector and descriptor jointly.
    Full,
}

impl Phase {
    pub fn number(self) -> u8 {
        match self {
            Phase::Pretrain => 1,
            Phase::Full => 2,
        }
    }

    fn trainable(self, name: &str) -> bool {
        match self {
            Phase::Pretrain => !ModelWeights::is_detector(name),
            Phase::Full => true,
        }
    }
}

/// Network outputs for one branch: descriptors `[K, d]` and attentions `[K, 1]`.
pub fn branch_graph(g: &mut Graph, net: &NetVars, clusters: &[Cluster], phase: Phase) -> Result<(Var, Var)> {
    let batch = ClusterBatch::new(clusters)?;
    let pts = g.constant(batch.points);
    match phase {
        Phase::Pretrain => {
            let desc = descriptor_forward(g, net, pts, None, &batch.segments)?;
            let att = g.constant(Tensor::filled(&[clusters.len(), 1], 1.0));
            Ok((desc, att))
        }
        Phase::Full => {
            let (pair, att) = detector_forward(g, net, pts, &batch.segments)?;
            let desc = descriptor_forward(g, net, pts, Some(pair), &batch.segments)?;
            Ok((desc, att))
        }
    }
}

/// Triplet loss node over three branches of clusters.
pub fn triplet_graph(
    g: &mut Graph,
    net: &NetVars,
    branches: [&[Cluster]; 3],
    phase: Phase,
    loss_cfg: &TripletLossConfig,
) -> Result<Var> {
    let (fa, wa) = branch_graph(g, net, branches[0], phase)?;
    let (fp, _) = branch_graph(g, net, branches[1], phase)?;
    let (fn_, _) = branch_graph(g, net, branches[2], phase)?;
    triplet_loss_node(g, (fa, wa), fp, fn_, loss_cfg)
}

/// Gradient check of the full detector + descriptor + triplet loss graph on
/// random clusters of `points_per_cluster` points, `clusters` per branch.
pub fn full_network_grad_check(
    arch: &Architecture,
    clusters: usize,
    points_per_cluster: usize,
    margin: f64,
    seed: u64,
    h: f64,
) -> Result<GradCheckReport> {
    let mut rng = seeded_rng(seed);
    let weights = ModelWeights::init(arch, &mut rng)?;
    // biases start at zero; perturb them so every block has a generic value
    let params: Vec<(String, Tensor)> = weights
        .tensors()
        .iter()
        .map(|(n, t)| {
            let mut t = t.clone();
            if n.ends_with(".b") {
                t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
            }
            (n.clone(), t)
        })
        .collect();
    let mut branch = || -> Vec<Cluster> {
        (0..clusters)
            .map(|_| Cluster {
                center: Point::origin(),
                local_points: (0..points_per_cluster)
                    .map(|_| Point::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0)))
                    .collect(),
            })
            .collect()
    };
    let (a, p, n) = (branch(), branch(), branch());
    let loss_cfg = TripletLossConfig { margin };
    let arch = arch.clone();
    grad_check(
        |g, vars| {
            let net = NetVars::from_vars(&arch, vars)?;
            triplet_graph(g, &net, [&a, &p, &n], Phase::Full, &loss_cfg)
        },
        &params,
        h,
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub phase: Phase,
    pub loss: f64,
}

/// Writes the loss history as CSV `step,phase,loss`.
pub fn loss_history_csv(history: &[LossRecord]) -> String {
    let mut s = String::from("step,phase,loss\n");
    for r in history {
        s.push_str(&format!("{},{},{:.9}\n", r.step, r.phase.number(), r.loss));
    }
    s
}

pub struct TrainOutcome {
    pub weights: ModelWeights,
    pub history: Vec<LossRecord>,
}

/// Clouds cropped to `crop_r` around their centroid, built once.
fn prepare(dataset: &[PoseTaggedCloud], crop_r: f64) -> Result<Vec<PointCloud>> {
    dataset
        .iter()
        .map(|c| {
            let center = c.cloud.centroid()?;
            crop_ball(&c.cloud, &center, crop_r)
        })
        .collect()
}

fn branch_clusters(cloud: &PointCloud, cfg: &TrainConfig, branch: &BranchConfig, phase: Phase, seed: u64) -> Result<Vec<Cluster>> {
    let mut rng = seeded_rng(seed);
    let dropped = random_point_dropout(cloud, cfg.dropout_n, &mut rng)?;
    let (augmented, _) = augment(&dropped, &cfg.augment(phase == Phase::Full), &mut rng)?;
    let (_, clusters) = sample_clusters(&augmented, branch, rng.random())?;
    Ok(clusters)
}

/// Loss and per-tensor gradients of one triplet.
fn triplet_step(
    clouds: &[PointCloud],
    t: Triplet,
    weights: &ModelWeights,
    cfg: &TrainConfig,
    phase: Phase,
    seed: u64,
) -> Result<(f64, Vec<Option<Tensor>>)> {
    let branch = cfg.branch();
    let mut rng = seeded_rng(seed);
    let seeds: [u64; 3] = [rng.random(), rng.random(), rng.random()];
    let a = branch_clusters(&clouds[t.anchor], cfg, &branch, phase, seeds[0])?;
    let p = branch_clusters(&clouds[t.positive], cfg, &branch, phase, seeds[1])?;
    let n = branch_clusters(&clouds[t.negative], cfg, &branch, phase, seeds[2])?;

    let mut g = Graph::new();
    let (net, vars) = NetVars::bind(&mut g, weights, |name| phase.trainable(name))?;
    let loss = triplet_graph(&mut g, &net, [&a, &p, &n], phase, &TripletLossConfig { margin: cfg.margin })?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!(
            "triplet ({}, {}, {}) produced loss {value}",
            t.anchor, t.positive, t.negative
        )));
    }
    let mut grads = g.backward(loss)?;
    let out = weights
        .tensors()
        .iter()
        .zip(&vars)
        .map(|((name, _), v)| phase.trainable(name).then(|| grads.take(&g, *v)))
        .collect();
    Ok((value, out))
}

#[cfg(feature = "parallel")]
fn run_batch(
    clouds: &[PointCloud],
    batch: &[(Triplet, u64)],
    weights: &ModelWeights,
    cfg: &TrainConfig,
    phase: Phase,
) -> Result<Vec<(f64, Vec<Option<Tensor>>)>> {
    use rayon::prelude::*;
    batch
        .par_iter()
        .map(|&(t, s)| triplet_step(clouds, t, weights, cfg, phase, s))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn run_batch(
    clouds: &[PointCloud],
    batch: &[(Triplet, u64)],
    weights: &ModelWeights,
    cfg: &TrainConfig,
    phase: Phase,
) -> Result<Vec<(f64, Vec<Option<Tensor>>)>> {
    batch
        .iter()
        .map(|&(t, s)| triplet_step(clouds, t, weights, cfg, phase, s))
        .collect()
}

/// Progress passed to the per-step observer of [`train_with`].
pub struct StepInfo {
    pub step: usize,
    pub phase: Phase,
    pub epoch: usize,
    pub loss: f64,
}

pub fn train(dataset: &[PoseTaggedCloud], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(dataset, cfg, None, |_, _| Ok(()))
}

/// Two-phase training. Phase 1 updates only the descriptor; phase 2 updates
/// everything with a fresh Adam state. `observe` runs after every step.
pub fn train_with(
    dataset: &[PoseTaggedCloud],
    cfg: &TrainConfig,
    init: Option<ModelWeights>,
    mut observe: impl FnMut(&StepInfo, &ModelWeights) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut rng = seeded_rng(cfg.seed);
    let mut weights = match init {
        Some(w) => w,
        None => ModelWeights::init(&cfg.architecture(), &mut rng)?,
    };
    let centroids = world_centroids(dataset)?;
    let probe = triplets_from_centroids(&centroids, cfg.tau_p, cfg.tau_n, &mut seeded_rng(0));
    if probe.triplets.is_empty() {
        return Err(Error::Config(format!(
            "no valid triplets: all {} anchors lack a positive within {} m or a negative beyond {} m",
            probe.skipped, cfg.tau_p, cfg.tau_n
        )));
    }
    info!(
        "training on {} clouds, {} usable anchors ({} skipped)",
        dataset.len(),
        probe.triplets.len(),
        probe.skipped
    );
    let clouds = prepare(dataset, cfg.crop_r)?;
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut history = Vec::new();
    let mut step = 0;

    for (phase, epochs) in [(Phase::Pretrain, cfg.pretrain_epochs), (Phase::Full, cfg.main_epochs)] {
        if epochs == 0 {
            continue;
        }
        let trainable: Vec<usize> = weights
            .tensors()
            .iter()
            .enumerate()
            .filter(|(_, (n, _))| phase.trainable(n))
            .map(|(i, _)| i)
            .collect();
        let mut adam = AdamState::new(adam_cfg, trainable.iter().map(|&i| &weights.tensors()[i].1));
        for epoch in 0..epochs {
            let mut set = triplets_from_centroids(&centroids, cfg.tau_p, cfg.tau_n, &mut rng);
            set.triplets.shuffle(&mut rng);
            let seeded: Vec<(Triplet, u64)> = set.triplets.iter().map(|&t| (t, rng.random())).collect();
            for batch in seeded.chunks(cfg.batch_triplets) {
                let results = run_batch(&clouds, batch, &weights, cfg, phase)?;
                let scale = 1.0 / results.len() as f64;
                let mut loss = 0.0;
                let mut grads: Vec<Tensor> = trainable.iter().map(|&i| weights.tensors()[i].1.zeros_like()).collect();
                for (l, g) in &results {
                    loss += l * scale;
                    for (acc, &i) in grads.iter_mut().zip(&trainable) {
                        let gi = g[i].as_ref().expect("trainable tensors have gradients");
                        for (a, v) in acc.data_mut().iter_mut().zip(gi.data()) {
                            *a += v * scale;
                        }
                    }
                }
                {
                    let mut params: Vec<&mut Tensor> = weights
                        .tensors_mut()
                        .enumerate()
                        .filter(|(i, _)| trainable.binary_search(i).is_ok())
                        .map(|(_, t)| t)
                        .collect();
                    adam_step(&mut params, &grads, &mut adam)?;
                }
                weights.round_to_f32();
                step += 1;
                history.push(LossRecord { step, phase, loss });
                debug!("phase {} epoch {epoch} step {step}: loss {loss:.6}", phase.number());
                observe(
                    &StepInfo {
                        step,
                        phase,
                        epoch,
                        loss,
                    },
                    &weights,
                )?;
            }
        }
    }
    Ok(TrainOutcome { weights, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn at(x: f64, y: f64) -> PoseTaggedCloud {
        let cloud = PointCloud::new(vec![Point::new(-1.0, 0.0, 0.0), Point::new(1.0, 0.0, 0.0)]).unwrap();
        PoseTaggedCloud {
            cloud,
            pose: RigidTransform::from_translation(Vector3::new(x, y, 0.0)),
            traversal_id: "t".into(),
        }
    }

    #[test]
    fn forced_triplet() {
        let data = vec![at(0.0, 0.0), at(3.0, 0.0), at(60.0, 0.0)];
        let cfg = TrainConfig::default();
        let set = build_triplets(&data, &cfg, &mut seeded_rng(0)).unwrap();
        assert_eq!(
            set.triplets[0],
            Triplet {
                anchor: 0,
                positive: 1,
                negative: 2
            }
        );
    }

    #[test]
    fn dead_zone_yields_nothing() {
        let data = vec![at(0.0, 0.0), at(20.0, 0.0)];
        let set = build_triplets(&data, &TrainConfig::default(), &mut seeded_rng(0)).unwrap();
        assert!(set.triplets.is_empty());
        assert_eq!(set.skipped, 2);
        let err = train(&data, &TrainConfig::default());
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn grid_matches_threshold_oracle() {
        let data: Vec<PoseTaggedCloud> = (0..25).map(|i| at((i % 5) as f64 * 10.0, (i / 5) as f64 * 10.0)).collect();
        let cfg = TrainConfig {
            tau_p: 12.0,
            tau_n: 30.0,
            ..TrainConfig::default()
        };
        let set = build_triplets(&data, &cfg, &mut seeded_rng(4)).unwrap();
        let pos_of = |i: usize, j: usize| {
            let (xi, yi) = ((i % 5) as f64 * 10.0, (i / 5) as f64 * 10.0);
            let (xj, yj) = ((j % 5) as f64 * 10.0, (j / 5) as f64 * 10.0);
            ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt()
        };
        let mut expected_anchors = 0;
        for i in 0..25 {
            let has_pos = (0..25).any(|j| j != i && pos_of(i, j) < 12.0);
            let has_neg = (0..25).any(|j| pos_of(i, j) > 30.0);
            if has_pos && has_neg {
                expected_anchors += 1;
            }
        }
        assert_eq!(set.triplets.len(), expected_anchors);
        assert_eq!(set.skipped, 25 - expected_anchors);
        for t in &set.triplets {
            assert!(t.positive != t.anchor && pos_of(t.anchor, t.positive) < 12.0);
            assert!(pos_of(t.anchor, t.negative) > 30.0);
        }
    }

    #[test]
    fn small_network_gradients_match() {
        let arch = Architecture {
            detector_point: vec![6, 8],
            detector_pooled: vec![6],
            descriptor_point: vec![6, 8],
            context_dim: 8,
            descriptor_dim: 8,
        };
        let report = full_network_grad_check(&arch, 3, 5, 2.0, 1, 1e-5).unwrap();
        assert!(report.passes(1e-4), "{report:#?}");
    }
}
