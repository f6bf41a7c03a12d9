use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use f3dn::bench::{
    configure_threads, eval_descriptor_matching, eval_precision_curve, eval_registration, generate_scene, load_cloud,
    make_scan_pairs, precision_curve_csv, CloudFormat, Dataset, DescriptorEvalConfig, EvalConfig, ScanParams,
    SceneParams,
};
use f3dn::geom::{voxel_downsample, PointCloud};
use f3dn::net::{Architecture, ModelWeights};
use f3dn::register::{
    compute_descriptors, detect_keypoints, match_descriptors, ransac_register, InferenceConfig, RansacConfig,
    RegistrationResult,
};
use f3dn::train::{full_network_grad_check, loss_history_csv, train_with, TrainConfig};
use f3dn::{seeded_rng, Error};

#[derive(Parser)]
#[command(name = "f3dn", version, about = "Learned 3D keypoints, descriptors and point cloud registration")]
struct Cli {
    /// Training configuration file (key=value lines)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed; overrides the configuration file
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Model weights file
    #[arg(long, global = true)]
    weights: Option<PathBuf>,
    /// Point cloud encoding: xyz-bin, xyzi-bin or ascii-ply (.ply paths are always PLY)
    #[arg(long, global = true, default_value = "xyz-bin")]
    format: String,
    /// Log progress to stderr
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct InferenceArgs {
    #[arg(long, default_value_t = 0.5)]
    r_nms: f64,
    #[arg(long, default_value_t = 0.01)]
    beta: f64,
    #[arg(long, default_value_t = 512)]
    max_keypoints: usize,
    #[arg(long, default_value_t = 2.0)]
    r_cluster: f64,
    #[arg(long, default_value_t = 64)]
    cluster_cap: usize,
    /// Voxel pre-filter applied to input clouds (0 = off)
    #[arg(long, default_value_t = 0.0)]
    voxel: f64,
}

#[derive(Args, Clone)]
struct RansacArgs {
    #[arg(long, default_value_t = 1.0)]
    inlier_thresh: f64,
    #[arg(long, default_value_t = 0.99)]
    confidence: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world and a dataset of scan pairs
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        pairs: usize,
        #[arg(long, default_value_t = 120.0)]
        extent: f64,
        #[arg(long, default_value_t = 40)]
        structures: usize,
        #[arg(long, default_value_t = 50.0)]
        density: f64,
        #[arg(long, default_value_t = 20.0)]
        radius: f64,
        #[arg(long, default_value_t = 5.0)]
        max_offset: f64,
        #[arg(long, default_value_t = 0.8)]
        keep_fraction: f64,
        #[arg(long, default_value_t = 0.01)]
        jitter: f64,
        #[arg(long, default_value_t = 0.0)]
        voxel: f64,
        #[arg(long, default_value_t = 10.0)]
        path_step: f64,
        /// Keep every scan facing +x
        #[arg(long)]
        no_yaw: bool,
    },
    /// Train a model on a dataset directory
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Output weights file
        #[arg(long)]
        out: PathBuf,
        /// Loss history CSV (step,phase,loss)
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        /// Directory for periodic checkpoints (see checkpoint_every)
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
    },
    /// Detect keypoints in one cloud
    Detect {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        inference: InferenceArgs,
    },
    /// Detect keypoints and compute their descriptors
    Describe {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        inference: InferenceArgs,
    },
    /// Register a source cloud onto a target cloud; prints the transform as JSON
    Register {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        inference: InferenceArgs,
        #[command(flatten)]
        ransac: RansacArgs,
    },
    /// False-positive rate of descriptor matching at 95% recall
    EvalDesc {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1000)]
        cluster_pairs: usize,
        #[arg(long, default_value_t = 2.0)]
        r_cluster: f64,
        #[arg(long, default_value_t = 64)]
        cluster_cap: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Keypoint matching precision against a distance threshold
    EvalPrec {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated thresholds in meters
        #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1,1.5,2,3,4,5")]
        thresholds: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        inference: InferenceArgs,
    },
    /// Registration success, RTE, RRE and iterations over all dataset pairs
    EvalReg {
        #[arg(long)]
        data: PathBuf,
        /// Directory receiving <stem>.csv and <stem>.json
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "registration")]
        stem: String,
        #[command(flatten)]
        inference: InferenceArgs,
        #[command(flatten)]
        ransac: RansacArgs,
    },
    /// Finite-difference check of the full network gradient
    Gradcheck {
        #[arg(long, default_value_t = 4)]
        clusters: usize,
        #[arg(long, default_value_t = 6)]
        points: usize,
        #[arg(long, default_value_t = 8)]
        descriptor_dim: usize,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

/// Exit status of a failed run.
enum Failure {
    Usage(String),
    Evaluation(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } | Error::Config(_) | Error::InvalidInput(_) | Error::Format { .. } => Failure::Usage(e.to_string()),
            other => Failure::Evaluation(other.to_string()),
        }
    }
}

type CliResult = Result<(), Failure>;

struct Context {
    seed: Option<u64>,
    config: Option<PathBuf>,
    weights: Option<PathBuf>,
    format: CloudFormat,
}

impl Context {
    fn train_config(&self) -> Result<TrainConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                TrainConfig::from_kv_str(&text)?
            }
            None => TrainConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    fn seed(&self) -> Result<u64, Failure> {
        Ok(self.train_config()?.seed)
    }

    fn weights(&self) -> Result<ModelWeights, Failure> {
        let path = self
            .weights
            .as_ref()
            .ok_or_else(|| Failure::Usage("--weights is required for this command".into()))?;
        if !path.is_file() {
            return Err(Failure::Usage(format!("weights file not found: {}", path.display())));
        }
        Ok(ModelWeights::load(path)?)
    }

    fn cloud(&self, path: &Path, voxel: f64) -> Result<PointCloud, Failure> {
        let cloud = load_cloud(path, CloudFormat::from_path(path, self.format))?;
        Ok(if voxel > 0.0 && !cloud.is_empty() {
            voxel_downsample(&cloud, voxel)?
        } else {
            cloud
        })
    }

    fn inference(&self, a: &InferenceArgs) -> Result<InferenceConfig, Failure> {
        let cfg = InferenceConfig {
            r_nms: a.r_nms,
            beta: a.beta,
            max_keypoints: a.max_keypoints,
            r_cluster: a.r_cluster,
            cluster_cap: a.cluster_cap,
            seed: self.seed()?,
            ..InferenceConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn ransac_config(a: &RansacArgs) -> Result<RansacConfig, Failure> {
    let cfg = RansacConfig {
        inlier_thresh: a.inlier_thresh,
        confidence: a.confidence,
        max_iter: a.max_iter,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e).into()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct TransformJson {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    row_major: [f64; 12],
    inlier_count: usize,
    iterations: usize,
    success: bool,
}

impl From<&RegistrationResult> for TransformJson {
    fn from(r: &RegistrationResult) -> Self {
        let m = r.transform.to_row_major();
        Self {
            rotation: [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]],
            translation: [m[3], m[7], m[11]],
            row_major: m,
            inlier_count: r.inlier_count,
            iterations: r.iterations,
            success: r.success,
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let ctx = Context {
        seed: cli.seed,
        config: cli.config,
        weights: cli.weights,
        format: cli.format.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?,
    };
    configure_threads()?;
    match cli.command {
        Command::Synth {
            out,
            pairs,
            extent,
            structures,
            density,
            radius,
            max_offset,
            keep_fraction,
            jitter,
            voxel,
            path_step,
            no_yaw,
        } => {
            let seed = ctx.seed()?;
            let scene = SceneParams {
                extent,
                n_structures: structures,
                density,
            };
            let scan = ScanParams {
                radius,
                max_offset,
                keep_fraction,
                jitter_sigma: jitter,
                voxel,
                random_yaw: !no_yaw,
                path_step,
                ..ScanParams::default()
            };
            let world = generate_scene(seed, &scene)?;
            let prefix = out.file_name().and_then(|s| s.to_str()).unwrap_or("scan").to_string();
            let (clouds, manifest) = make_scan_pairs(&world, pairs, &scan, &format!("{prefix}_"), &mut seeded_rng(seed))?;
            Dataset { manifest, clouds }.save_dir(&out, ctx.format)?;
            info!("wrote {} scans to {}", 2 * pairs, out.display());
            Ok(())
        }
        Command::Train {
            data,
            out,
            loss_csv,
            checkpoint_dir,
        } => {
            let cfg = ctx.train_config()?;
            let ds = Dataset::load_dir(&data, ctx.format)?;
            let init = match &ctx.weights {
                Some(p) if p.is_file() => Some(ModelWeights::load(p)?),
                Some(p) => return Err(Failure::Usage(format!("weights file not found: {}", p.display()))),
                None => None,
            };
            if let Some(dir) = &checkpoint_dir {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let outcome = train_with(&ds.clouds, &cfg, init, |s, w| {
                if s.step % 10 == 0 {
                    info!("step {} phase {} loss {:.6}", s.step, s.phase.number(), s.loss);
                }
                match &checkpoint_dir {
                    Some(dir) if cfg.checkpoint_every > 0 && s.step % cfg.checkpoint_every == 0 => {
                        w.save(dir.join(format!("step_{:06}.f3dn", s.step)))
                    }
                    _ => Ok(()),
                }
            })?;
            outcome.weights.save(&out)?;
            if let Some(p) = loss_csv {
                emit(Some(&p), &loss_history_csv(&outcome.history))?;
            }
            Ok(())
        }
        Command::Detect { input, out, inference } => {
            let w = ctx.weights()?;
            let cfg = ctx.inference(&inference)?;
            let cloud = ctx.cloud(&input, inference.voxel)?;
            let mut s = String::from("index,x,y,z,attention\n");
            for k in detect_keypoints(&cloud, &w, &cfg)? {
                let p = k.position;
                writeln!(s, "{},{},{},{},{}", k.index, p.x, p.y, p.z, k.attention).unwrap();
            }
            emit(out.as_deref(), &s)
        }
        Command::Describe { input, out, inference } => {
            let w = ctx.weights()?;
            let cfg = ctx.inference(&inference)?;
            let cloud = ctx.cloud(&input, inference.voxel)?;
            let kp = detect_keypoints(&cloud, &w, &cfg)?;
            let feats = compute_descriptors(&cloud, &kp, &w, &cfg)?;
            let dim = w.architecture().descriptor_dim;
            let mut s = String::from("x,y,z,theta,attention");
            for k in 0..dim {
                write!(s, ",d{k}").unwrap();
            }
            s.push('\n');
            for f in feats {
                let p = f.position;
                write!(s, "{},{},{},{},{}", p.x, p.y, p.z, f.theta, f.attention).unwrap();
                for v in &f.descriptor {
                    write!(s, ",{v}").unwrap();
                }
                s.push('\n');
            }
            emit(out.as_deref(), &s)
        }
        Command::Register {
            source,
            target,
            out,
            inference,
            ransac,
        } => {
            let w = ctx.weights()?;
            let icfg = ctx.inference(&inference)?;
            let rcfg = ransac_config(&ransac)?;
            let a = ctx.cloud(&source, inference.voxel)?;
            let b = ctx.cloud(&target, inference.voxel)?;
            let fa = compute_descriptors(&a, &detect_keypoints(&a, &w, &icfg)?, &w, &icfg)?;
            let fb = compute_descriptors(&b, &detect_keypoints(&b, &w, &icfg)?, &w, &icfg)?;
            if fa.is_empty() || fb.is_empty() {
                return Err(Failure::Evaluation("no keypoints detected".into()));
            }
            let corr = match_descriptors(&fa, &fb)?;
            let result = ransac_register(&corr, &rcfg, &mut seeded_rng(ctx.seed()?))?;
            let json = serde_json::to_string_pretty(&TransformJson::from(&result)).expect("transform serializes");
            emit(out.as_deref(), &(json + "\n"))?;
            if result.success {
                Ok(())
            } else {
                Err(Failure::Evaluation("registration found fewer than 3 inliers".into()))
            }
        }
        Command::EvalDesc {
            data,
            cluster_pairs,
            r_cluster,
            cluster_cap,
            out,
        } => {
            let w = ctx.weights()?;
            let ds = Dataset::load_dir(&data, ctx.format)?;
            let cfg = DescriptorEvalConfig {
                n_pairs_total: cluster_pairs,
                r_cluster,
                cluster_cap,
                seed: ctx.seed()?,
                ..DescriptorEvalConfig::default()
            };
            let r = eval_descriptor_matching(&ds.scan_pairs(), &w, &cfg).map_err(|e| Failure::Evaluation(e.to_string()))?;
            let json = serde_json::json!({
                "fp_rate_at_95_recall": r.fp_rate,
                "threshold": r.threshold,
                "matching_pairs": r.match_distances.len(),
                "non_matching_pairs": r.nonmatch_distances.len(),
            });
            emit(out.as_deref(), &(serde_json::to_string_pretty(&json).unwrap() + "\n"))
        }
        Command::EvalPrec {
            data,
            thresholds,
            out,
            inference,
        } => {
            let w = ctx.weights()?;
            let cfg = ctx.inference(&inference)?;
            let ds = Dataset::load_dir(&data, ctx.format)?;
            let curve = eval_precision_curve(&ds.scan_pairs(), &w, &cfg, inference.voxel, &thresholds)
                .map_err(|e| Failure::Evaluation(e.to_string()))?;
            emit(out.as_deref(), &precision_curve_csv(&curve))
        }
        Command::EvalReg {
            data,
            out_dir,
            stem,
            inference,
            ransac,
        } => {
            let w = ctx.weights()?;
            let cfg = EvalConfig {
                inference: ctx.inference(&inference)?,
                ransac: ransac_config(&ransac)?,
                voxel: inference.voxel,
                seed: ctx.seed()?,
            };
            let ds = Dataset::load_dir(&data, ctx.format)?;
            let report = eval_registration(&ds.scan_pairs(), &w, &cfg)?;
            report.write(&out_dir, &stem)?;
            println!("{}", report.aggregates_json());
            Ok(())
        }
        Command::Gradcheck {
            clusters,
            points,
            descriptor_dim,
            step,
            tolerance,
        } => {
            let arch = Architecture {
                detector_point: vec![16, 32],
                detector_pooled: vec![16],
                descriptor_point: vec![16, 32],
                context_dim: 16,
                descriptor_dim,
            };
            let report = full_network_grad_check(&arch, clusters, points, 1.0, ctx.seed()?, step)?;
            for b in &report.blocks {
                println!("{:<16} {:>6} rel_err {:.3e}", b.name, b.len, b.rel_error);
            }
            println!("max relative error {:.3e} (tolerance {tolerance:.0e})", report.max_rel_error());
            if report.passes(tolerance) {
                Ok(())
            } else {
                Err(Failure::Evaluation("gradient check exceeded tolerance".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.verbose { "info" } else { "warn" }))
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Evaluation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
