//! Browser demo: a synthetic scan pair, attention keypoints and RANSAC
//! registration, exported through wasm-bindgen.

use nalgebra::Vector3;
use rand::Rng;
use serde_json::json;
use wasm_bindgen::prelude::*;

use f3dn::bench::{generate_scene, make_scan_pairs, ScanParams, SceneParams};
use f3dn::geom::{Point, PointCloud, RigidTransform};
use f3dn::net::{Architecture, ModelWeights};
use f3dn::register::{
    compute_descriptors, detect_keypoints, is_successful, match_descriptors, ransac_register, rte_rre, Correspondence,
    InferenceConfig, Keypoint, RansacConfig,
};
use f3dn::seeded_rng;

fn js(e: f3dn::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Untrained weights small enough for interactive use.
pub fn demo_weights(seed: u64) -> ModelWeights {
    let arch = Architecture {
        detector_point: vec![16, 32],
        detector_pooled: vec![16],
        descriptor_point: vec![16, 32],
        context_dim: 32,
        descriptor_dim: 16,
    };
    ModelWeights::init(&arch, &mut seeded_rng(seed)).expect("valid architecture")
}

pub struct Scene {
    pub source: PointCloud,
    pub target: PointCloud,
    /// Maps source coordinates into target coordinates.
    pub truth: RigidTransform,
}

pub fn make_scene(seed: u64, structures: usize) -> f3dn::Result<Scene> {
    let world = generate_scene(
        seed,
        &SceneParams {
            extent: 80.0,
            n_structures: structures,
            density: 12.0,
        },
    )?;
    let scan = ScanParams {
        radius: 12.0,
        max_offset: 3.0,
        voxel: 0.4,
        ..ScanParams::default()
    };
    let (scans, manifest) = make_scan_pairs(&world, 1, &scan, "demo", &mut seeded_rng(seed))?;
    let mut it = scans.into_iter();
    Ok(Scene {
        source: it.next().expect("pair").cloud,
        target: it.next().expect("pair").cloud,
        truth: manifest.pairs[0].relative,
    })
}

fn inference(r_nms: f64, max_keypoints: usize) -> InferenceConfig {
    InferenceConfig {
        r_nms,
        max_keypoints,
        cluster_cap: 16,
        ..InferenceConfig::default()
    }
}

pub fn registration_report(scene: &Scene, w: &ModelWeights, r_nms: f64, max_keypoints: usize, thresh: f64) -> f3dn::Result<serde_json::Value> {
    let cfg = inference(r_nms, max_keypoints);
    let features = |c: &PointCloud| compute_descriptors(c, &detect_keypoints(c, w, &cfg)?, w, &cfg);
    let (fa, fb) = (features(&scene.source)?, features(&scene.target)?);
    let corr = match_descriptors(&fa, &fb)?;
    let rcfg = RansacConfig {
        inlier_thresh: thresh,
        ..RansacConfig::default()
    };
    let r = ransac_register(&corr, &rcfg, &mut seeded_rng(0))?;
    let (rte, rre) = rte_rre(&r.transform, &scene.truth);
    Ok(json!({
        "keypoints": [fa.len(), fb.len()],
        "inliers": r.inlier_count,
        "iterations": r.iterations,
        "rte": rte,
        "rre": rre,
        "success": r.success && is_successful(rte, rre),
        "row_major": r.transform.to_row_major().to_vec(),
    }))
}

/// RANSAC on `n` synthetic correspondences of which a fraction are outliers.
pub fn ransac_experiment(n: usize, outlier_fraction: f64, seed: u64) -> f3dn::Result<serde_json::Value> {
    let mut rng = seeded_rng(seed);
    let truth = RigidTransform::from_yaw(rng.random_range(-3.0..3.0), Vector3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), 0.0));
    let n_out = ((n as f64) * outlier_fraction.clamp(0.0, 1.0)).round() as usize;
    let cube = |rng: &mut f3dn::SeededRng| Point::new(rng.random_range(0.0..50.0), rng.random_range(0.0..50.0), rng.random_range(0.0..10.0));
    let corr: Vec<Correspondence> = (0..n)
        .map(|i| {
            let p = cube(&mut rng);
            let q = if i < n_out { cube(&mut rng) } else { truth.apply(&p) };
            Correspondence { p, q, descriptor_distance: 0.0 }
        })
        .collect();
    let rcfg = RansacConfig {
        inlier_thresh: 0.5,
        ..RansacConfig::default()
    };
    let r = ransac_register(&corr, &rcfg, &mut rng)?;
    let (rte, rre) = rte_rre(&r.transform, &truth);
    Ok(json!({
        "outliers": n_out,
        "inliers": r.inlier_count,
        "iterations": r.iterations,
        "rte": rte,
        "rre": rre,
        "success": r.success,
    }))
}

fn flat(points: &[Point]) -> Vec<f32> {
    points.iter().flat_map(|p| [p.x as f32, p.y as f32, p.z as f32]).collect()
}

#[wasm_bindgen]
pub struct Demo {
    scene: Scene,
    weights: ModelWeights,
    trained: bool,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, structures: u32) -> Result<Demo, JsError> {
        Ok(Demo {
            scene: make_scene(seed as u64, structures as usize).map_err(js)?,
            weights: demo_weights(seed as u64),
            trained: false,
        })
    }

    /// Source points in target coordinates, flattened xyz.
    pub fn source_xyz(&self) -> Vec<f32> {
        let pts: Vec<Point> = self.scene.source.points().iter().map(|p| self.scene.truth.apply(p)).collect();
        flat(&pts)
    }

    pub fn target_xyz(&self) -> Vec<f32> {
        flat(self.scene.target.points())
    }

    /// Replaces the untrained weights with a checkpoint written by `f3dn train`.
    pub fn load_weights(&mut self, bytes: &[u8]) -> Result<(), JsError> {
        self.weights = ModelWeights::from_bytes(bytes).map_err(js)?;
        self.trained = true;
        Ok(())
    }

    pub fn trained(&self) -> bool {
        self.trained
    }

    /// Target keypoints as flattened `x, y, z, attention`.
    pub fn keypoints(&self, r_nms: f64, max_keypoints: u32) -> Result<Vec<f32>, JsError> {
        let kps: Vec<Keypoint> = detect_keypoints(&self.scene.target, &self.weights, &inference(r_nms, max_keypoints as usize)).map_err(js)?;
        Ok(kps
            .iter()
            .flat_map(|k| [k.position.x as f32, k.position.y as f32, k.position.z as f32, k.attention as f32])
            .collect())
    }

    /// Full registration of the pair; JSON with the estimate and its errors.
    pub fn register(&self, r_nms: f64, max_keypoints: u32, inlier_thresh: f64) -> Result<String, JsError> {
        let v = registration_report(&self.scene, &self.weights, r_nms, max_keypoints as usize, inlier_thresh).map_err(js)?;
        Ok(v.to_string())
    }
}

#[wasm_bindgen]
pub fn ransac_trial(n: u32, outlier_fraction: f64, seed: u32) -> Result<String, JsError> {
    Ok(ransac_experiment(n as usize, outlier_fraction, seed as u64).map_err(js)?.to_string())
}
