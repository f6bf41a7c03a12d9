//! Cloud I/O, synthetic data, evaluation protocols and reports.

mod dataset;
mod eval;
mod io;
mod synth;

pub use dataset::{Dataset, DatasetManifest, ManifestEntry, PairEntry};
pub use eval::{
    consecutive_pairs, eval_descriptor_matching, eval_precision_curve, eval_registration, fp_rate_at_recall,
    precision_curve_csv, Aggregates, DescriptorEvalConfig, DescriptorEvalResult, EvalConfig, EvalReport, PairRow,
    ScanPair,
};
pub use io::{decode_cloud, encode_cloud, load_cloud, save_cloud, CloudFormat};
pub use synth::{generate_scene, generate_synthetic_scene, make_scan_pairs, take_scan, ScanParams, SceneParams};

use crate::error::{Error, Result};

/// Environment variable bounding the worker pool.
pub const THREADS_ENV: &str = "F3DN_THREADS";

/// Sizes the global worker pool from `F3DN_THREADS` if set. Returns the
/// requested count, or `None` when the variable is absent.
pub fn configure_threads() -> Result<Option<usize>> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    #[cfg(feature = "parallel")]
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
        log::debug!("worker pool already initialized: {e}");
    }
    Ok(Some(n))
}
