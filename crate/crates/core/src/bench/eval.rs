use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::Serialize;

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geom::{voxel_downsample, Point, PointCloud, RigidTransform};
use crate::net::{ball_group_at, features_for_clusters, GridIndex, ModelWeights, DEFAULT_TILE};
use crate::register::{
    extract_features, is_successful, match_descriptors, nearest_descriptor, ransac_register, rte_rre, InferenceConfig,
    RansacConfig,
};
use crate::seeded_rng;
use crate::train::PoseTaggedCloud;

/// Two scans of the same place; `relative` maps `a` coordinates into `b`.
#[derive(Clone, Copy, Debug)]
pub struct ScanPair<'a> {
    pub a: &'a PoseTaggedCloud,
    pub b: &'a PoseTaggedCloud,
    pub relative: RigidTransform,
}

impl Dataset {
    pub fn scan_pairs(&self) -> Vec<ScanPair<'_>> {
        self.manifest
            .pairs
            .iter()
            .map(|p| ScanPair {
                a: &self.clouds[p.a],
                b: &self.clouds[p.b],
                relative: p.relative,
            })
            .collect()
    }
}

/// Pairs `(2k, 2k + 1)` with relative transforms from the world poses.
pub fn consecutive_pairs(scans: &[PoseTaggedCloud]) -> Vec<ScanPair<'_>> {
    scans
        .chunks_exact(2)
        .map(|c| ScanPair {
            a: &c[0],
            b: &c[1],
            relative: c[1].pose.inverse().compose(&c[0].pose),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DescriptorEvalConfig {
    /// Total cluster pairs, split evenly between matching and non-matching.
    pub n_pairs_total: usize,
    pub r_cluster: f64,
    pub cluster_cap: usize,
    /// Both sides of a sampled location need this many points within `r_cluster`.
    pub min_points: usize,
    /// Non-matching locations are at least this far apart in the world.
    pub min_separation: f64,
    pub recall: f64,
    pub seed: u64,
}

impl Default for DescriptorEvalConfig {
    fn default() -> Self {
        Self {
            n_pairs_total: 1000,
            r_cluster: 2.0,
            cluster_cap: 64,
            min_points: 10,
            min_separation: 20.0,
            recall: 0.95,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorEvalResult {
    pub fp_rate: f64,
    pub threshold: f64,
    pub match_distances: Vec<f64>,
    pub nonmatch_distances: Vec<f64>,
}

/// Smallest descriptor-distance threshold reaching `recall` on `matches` and
/// the fraction of `nonmatches` accepted at it.
pub fn fp_rate_at_recall(matches: &[f64], nonmatches: &[f64], recall: f64) -> Result<(f64, f64)> {
    if matches.is_empty() || nonmatches.is_empty() {
        return Err(Error::invalid("need matching and non-matching distances"));
    }
    if !(recall > 0.0 && recall <= 1.0) {
        return Err(Error::invalid("recall must lie in (0, 1]"));
    }
    let mut sorted = matches.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = ((recall * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let threshold = sorted[k - 1];
    let fp = nonmatches.iter().filter(|&&d| d <= threshold).count() as f64 / nonmatches.len() as f64;
    Ok((threshold, fp))
}

struct Side<'a> {
    cloud: &'a PointCloud,
    grid: GridIndex<'a>,
}

impl<'a> Side<'a> {
    fn new(cloud: &'a PointCloud, r: f64) -> Self {
        Self {
            cloud,
            grid: GridIndex::new(cloud.points(), r),
        }
    }

    fn support(&self, at: &Point, r: f64) -> usize {
        self.grid.within(at, r).len()
    }

    fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Point> {
        (!self.cloud.is_empty()).then(|| self.cloud.points()[rng.random_range(0..self.cloud.len())])
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Matching clusters are the same physical spot seen in both scans of a pair;
/// non-matching clusters are spots at least `min_separation` apart (or from
/// different traversals). Returns the false-positive rate at `recall`.
pub fn eval_descriptor_matching(pairs: &[ScanPair<'_>], w: &ModelWeights, cfg: &DescriptorEvalConfig) -> Result<DescriptorEvalResult> {
    if pairs.is_empty() || cfg.n_pairs_total < 2 {
        return Err(Error::invalid("descriptor evaluation needs at least one scan pair and two cluster pairs"));
    }
    let n_match = cfg.n_pairs_total / 2;
    let n_non = cfg.n_pairs_total - n_match;
    let sides: Vec<(Side, Side)> = pairs
        .iter()
        .map(|p| (Side::new(&p.a.cloud, cfg.r_cluster), Side::new(&p.b.cloud, cfg.r_cluster)))
        .collect();
    let mut rng = seeded_rng(cfg.seed);
    let budget = 1000 * cfg.n_pairs_total.max(10);

    // (pair index for side a, location in a, pair index for side b, location in b)
    let mut matching = Vec::with_capacity(n_match);
    let mut tries = 0;
    while matching.len() < n_match {
        tries += 1;
        if tries > budget {
            return Err(Error::invalid(format!(
                "found only {} of {n_match} matching locations; pairs overlap too little",
                matching.len()
            )));
        }
        let i = rng.random_range(0..pairs.len());
        let Some(x) = sides[i].0.random_point(&mut rng) else { continue };
        let y = pairs[i].relative.apply(&x);
        if sides[i].0.support(&x, cfg.r_cluster) >= cfg.min_points && sides[i].1.support(&y, cfg.r_cluster) >= cfg.min_points {
            matching.push((i, x, i, y));
        }
    }
    let mut non = Vec::with_capacity(n_non);
    tries = 0;
    while non.len() < n_non {
        tries += 1;
        if tries > budget {
            return Err(Error::invalid(format!(
                "found only {} of {n_non} non-matching locations",
                non.len()
            )));
        }
        let i = rng.random_range(0..pairs.len());
        let j = rng.random_range(0..pairs.len());
        let (Some(x), Some(y)) = (sides[i].0.random_point(&mut rng), sides[j].1.random_point(&mut rng)) else {
            continue;
        };
        let far = pairs[i].a.traversal_id != pairs[j].b.traversal_id
            || (pairs[i].a.pose.apply(&x) - pairs[j].b.pose.apply(&y)).norm() >= cfg.min_separation;
        if far && sides[i].0.support(&x, cfg.r_cluster) >= cfg.min_points && sides[j].1.support(&y, cfg.r_cluster) >= cfg.min_points {
            non.push((i, x, j, y));
        }
    }

    let distances = |set: &[(usize, Point, usize, Point)], salt: u64| -> Result<Vec<f64>> {
        let mut ca = Vec::with_capacity(set.len());
        let mut cb = Vec::with_capacity(set.len());
        for (k, &(i, x, j, y)) in set.iter().enumerate() {
            // same grouping stream on both sides
            let seed = cfg.seed ^ salt ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            ca.extend(ball_group_at(&pairs[i].a.cloud, &[x], cfg.r_cluster, cfg.cluster_cap, &mut seeded_rng(seed))?);
            cb.extend(ball_group_at(&pairs[j].b.cloud, &[y], cfg.r_cluster, cfg.cluster_cap, &mut seeded_rng(seed))?);
        }
        let fa = features_for_clusters(&ca, w, DEFAULT_TILE)?;
        let fb = features_for_clusters(&cb, w, DEFAULT_TILE)?;
        Ok(fa.iter().zip(&fb).map(|(a, b)| distance(&a.descriptor, &b.descriptor)).collect())
    };
    let match_distances = distances(&matching, 0x1111)?;
    let nonmatch_distances = distances(&non, 0x2222)?;
    let (threshold, fp_rate) = fp_rate_at_recall(&match_distances, &nonmatch_distances, cfg.recall)?;
    Ok(DescriptorEvalResult {
        fp_rate,
        threshold,
        match_distances,
        nonmatch_distances,
    })
}

/// Optional voxel pre-filter applied to every cloud before inference.
fn prepare(cloud: &PointCloud, voxel: f64) -> Result<PointCloud> {
    if voxel > 0.0 && !cloud.is_empty() {
        voxel_downsample(cloud, voxel)
    } else {
        Ok(cloud.clone())
    }
}

/// Precision of nearest-neighbour descriptor matches at each distance
/// threshold. A match is correct at `x` if it lands within `x` of the true
/// position of its query keypoint.
pub fn eval_precision_curve(
    pairs: &[ScanPair<'_>],
    w: &ModelWeights,
    cfg: &InferenceConfig,
    voxel: f64,
    thresholds: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let mut errors = Vec::new();
    for p in pairs {
        let fa = extract_features(&prepare(&p.a.cloud, voxel)?, w, cfg)?;
        let fb = extract_features(&prepare(&p.b.cloud, voxel)?, w, cfg)?;
        if fb.is_empty() {
            continue;
        }
        for f in &fa {
            let (j, _) = nearest_descriptor(&f.descriptor, &fb);
            errors.push((fb[j].position - p.relative.apply(&f.position)).norm());
        }
    }
    Ok(thresholds
        .iter()
        .map(|&x| {
            let precision = if errors.is_empty() {
                0.0
            } else {
                errors.iter().filter(|&&e| e <= x).count() as f64 / errors.len() as f64
            };
            (x, precision)
        })
        .collect())
}

pub fn precision_curve_csv(curve: &[(f64, f64)]) -> String {
    let mut s = String::from("threshold,precision\n");
    for (x, p) in curve {
        writeln!(s, "{x},{p}").unwrap();
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub inference: InferenceConfig,
    pub ransac: RansacConfig,
    /// Voxel pre-filter size (0 = off).
    pub voxel: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            inference: InferenceConfig::default(),
            ransac: RansacConfig::default(),
            voxel: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairRow {
    pub id_a: String,
    pub id_b: String,
    pub rte: Option<f64>,
    pub rre: Option<f64>,
    pub success: bool,
    pub iterations: usize,
    pub inliers: usize,
    pub error: Option<String>,
}

/// Means and standard deviations are over successful pairs; iterations are
/// averaged over every pair that ran.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregates {
    pub pairs: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub rte_mean: Option<f64>,
    pub rte_std: Option<f64>,
    pub rre_mean: Option<f64>,
    pub rre_std: Option<f64>,
    pub mean_iterations: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub rows: Vec<PairRow>,
    pub aggregates: Aggregates,
}

fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

impl Aggregates {
    pub fn from_rows(rows: &[PairRow]) -> Self {
        let ok: Vec<&PairRow> = rows.iter().filter(|r| r.success).collect();
        let rte: Vec<f64> = ok.iter().filter_map(|r| r.rte).collect();
        let rre: Vec<f64> = ok.iter().filter_map(|r| r.rre).collect();
        let ran: Vec<f64> = rows.iter().filter(|r| r.error.is_none()).map(|r| r.iterations as f64).collect();
        let (rte_mean, rte_std) = mean_std(&rte);
        let (rre_mean, rre_std) = mean_std(&rre);
        Self {
            pairs: rows.len(),
            successes: ok.len(),
            success_rate: if rows.is_empty() { 0.0 } else { ok.len() as f64 / rows.len() as f64 },
            rte_mean,
            rte_std,
            rre_mean,
            rre_std,
            mean_iterations: mean_std(&ran).0,
        }
    }
}

impl EvalReport {
    pub fn from_rows(rows: Vec<PairRow>) -> Self {
        let aggregates = Aggregates::from_rows(&rows);
        Self { rows, aggregates }
    }

    pub fn rows_csv(&self) -> String {
        let mut s = String::from("id_a,id_b,rte,rre,success,iterations,inliers,error\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.id_a,
                r.id_b,
                opt(r.rte),
                opt(r.rre),
                u8::from(r.success),
                r.iterations,
                r.inliers,
                r.error.as_deref().unwrap_or("").replace([',', '\n'], ";")
            )
            .unwrap();
        }
        s
    }

    pub fn aggregates_json(&self) -> String {
        serde_json::to_string_pretty(&self.aggregates).expect("aggregates serialize")
    }

    /// Writes `{stem}.csv` (per pair) and `{stem}.json` (aggregates).
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.rows_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, self.aggregates_json() + "\n").map_err(|e| Error::io(&json, e))
    }
}

fn evaluate_pair(k: usize, p: &ScanPair<'_>, w: &ModelWeights, cfg: &EvalConfig) -> PairRow {
    let mut row = PairRow {
        id_a: p.a.cloud.id().to_string(),
        id_b: p.b.cloud.id().to_string(),
        rte: None,
        rre: None,
        success: false,
        iterations: 0,
        inliers: 0,
        error: None,
    };
    let seed = cfg.seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let run = || -> Result<_> {
        let a = prepare(&p.a.cloud, cfg.voxel)?;
        let b = prepare(&p.b.cloud, cfg.voxel)?;
        let fa = extract_features(&a, w, &cfg.inference)?;
        let fb = extract_features(&b, w, &cfg.inference)?;
        if fa.len() < 3 || fb.is_empty() {
            return Err(Error::Degenerate(format!("too few keypoints ({} / {})", fa.len(), fb.len())));
        }
        let corr = match_descriptors(&fa, &fb)?;
        ransac_register(&corr, &cfg.ransac, &mut seeded_rng(seed))
    };
    match run() {
        Ok(r) => {
            let (rte, rre) = rte_rre(&r.transform, &p.relative);
            row.rte = Some(rte);
            row.rre = Some(rre);
            row.success = r.success && is_successful(rte, rre);
            row.iterations = r.iterations;
            row.inliers = r.inlier_count;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Detect, describe, match, RANSAC and score every pair. Per-pair failures
/// are recorded in the report rather than aborting the sweep.
pub fn eval_registration(pairs: &[ScanPair<'_>], w: &ModelWeights, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.inference.validate()?;
    cfg.ransac.validate()?;
    #[cfg(feature = "parallel")]
    let rows = {
        use rayon::prelude::*;
        pairs.par_iter().enumerate().map(|(k, p)| evaluate_pair(k, p, w, cfg)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows = pairs.iter().enumerate().map(|(k, p)| evaluate_pair(k, p, w, cfg)).collect();
    Ok(EvalReport::from_rows(rows))
}
