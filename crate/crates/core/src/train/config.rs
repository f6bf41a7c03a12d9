use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geom::AugmentParams;
use crate::net::{Architecture, BranchConfig};

/// Training hyper-parameters; serialized as flat `key=value` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub tau_p: f64,
    pub tau_n: f64,
    pub batch_triplets: usize,
    pub lr: f64,
    pub clusters: usize,
    pub r_cluster: f64,
    pub cluster_cap: usize,
    pub crop_r: f64,
    pub dropout_n: usize,
    pub pretrain_epochs: usize,
    pub main_epochs: usize,
    pub seed: u64,
    pub margin: f64,
    pub context_dim: usize,
    pub descriptor_dim: usize,
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
    pub shift_range: f64,
    pub small_rot_deg: f64,
    /// Write a checkpoint every this many optimizer steps (0 = never).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let aug = AugmentParams::default();
        Self {
            tau_p: 5.0,
            tau_n: 50.0,
            batch_triplets: 6,
            lr: 1e-5,
            clusters: 512,
            r_cluster: 2.0,
            cluster_cap: 64,
            crop_r: 20.0,
            dropout_n: 4096,
            pretrain_epochs: 2,
            main_epochs: 10,
            seed: 0,
            margin: 0.2,
            context_dim: 128,
            descriptor_dim: 32,
            jitter_sigma: aug.jitter_sigma,
            jitter_clip: aug.jitter_clip,
            shift_range: aug.shift_range,
            small_rot_deg: aug.small_rot_max.to_degrees(),
            checkpoint_every: 0,
        }
    }
}

macro_rules! kv_fields {
    ($m:ident) => {
        $m!(tau_p, tau_n, batch_triplets, lr, clusters, r_cluster, cluster_cap, crop_r, dropout_n,
            pretrain_epochs, main_epochs, seed, margin, context_dim, descriptor_dim, jitter_sigma,
            jitter_clip, shift_range, small_rot_deg, checkpoint_every)
    };
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.tau_p < self.tau_n) {
            return bad("tau_p must be < tau_n");
        }
        if self.batch_triplets == 0
            || self.clusters == 0
            || self.cluster_cap == 0
            || self.dropout_n == 0
            || self.context_dim == 0
            || self.descriptor_dim == 0
        {
            return bad("counts must be >= 1");
        }
        if !(self.lr > 0.0) || !(self.r_cluster > 0.0) || !(self.crop_r > 0.0) || !(self.margin >= 0.0) {
            return bad("lr, r_cluster, crop_r must be positive and margin nonnegative");
        }
        self.augment(true).validate()
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::with_dims(self.context_dim, self.descriptor_dim)
    }

    pub fn branch(&self) -> BranchConfig {
        BranchConfig {
            clusters: self.clusters,
            r_cluster: self.r_cluster,
            cap: self.cluster_cap,
        }
    }

    pub fn augment(&self, z_rot: bool) -> AugmentParams {
        AugmentParams {
            jitter_sigma: self.jitter_sigma,
            jitter_clip: self.jitter_clip,
            shift_range: self.shift_range,
            small_rot_max: self.small_rot_deg.to_radians(),
            z_rot,
        }
    }

    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        macro_rules! emit {
            ($($f:ident),*) => {
                $( writeln!(s, "{}={}", stringify!($f), self.$f).unwrap(); )*
            };
        }
        kv_fields!(emit);
        s
    }

    /// Parses `key=value` lines over the defaults. Blank lines and lines
    /// starting with `#` are ignored; unknown keys are an error.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        macro_rules! assign {
            ($($f:ident),*) => {
                match key {
                    $( stringify!($f) => {
                        self.$f = value.parse().map_err(|e| format!("bad value for {key}: {e}"))?;
                        Ok(())
                    } )*
                    _ => Err(format!("unknown key {key}")),
                }
            };
        }
        kv_fields!(assign)
    }
}
