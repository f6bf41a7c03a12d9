//! Attention-weighted alignment distance and the alignment triplet loss.

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Descriptors and attentions of one branch.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchOutput {
    descriptors: Vec<Vec<f64>>,
    attentions: Vec<f64>,
}

impl BranchOutput {
    pub fn new(descriptors: Vec<Vec<f64>>, attentions: Vec<f64>) -> Result<Self> {
        if descriptors.is_empty() {
            return Err(Error::invalid("branch output has no descriptors"));
        }
        if descriptors.len() != attentions.len() {
            return Err(Error::invalid("one attention per descriptor required"));
        }
        let d = descriptors[0].len();
        if descriptors.iter().any(|f| f.len() != d) {
            return Err(Error::invalid("descriptors differ in dimension"));
        }
        if attentions.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid("attentions must be positive and finite"));
        }
        Ok(Self {
            descriptors,
            attentions,
        })
    }

    /// Equal attention for every descriptor.
    pub fn uniform(descriptors: Vec<Vec<f64>>) -> Result<Self> {
        let n = descriptors.len();
        Self::new(descriptors, vec![1.0; n])
    }

    pub fn descriptors(&self) -> &[Vec<f64>] {
        &self.descriptors
    }

    pub fn attentions(&self) -> &[f64] {
        &self.attentions
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    fn descriptor_tensor(&self) -> Tensor {
        Tensor::from_rows(&self.descriptors).expect("validated rows")
    }

    fn attention_tensor(&self) -> Tensor {
        Tensor::new(vec![self.len(), 1], self.attentions.clone()).expect("validated length")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TripletLossConfig {
    pub margin: f64,
}

impl Default for TripletLossConfig {
    fn default() -> Self {
        Self { margin: 0.2 }
    }
}

impl TripletLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) || !self.margin.is_finite() {
            return Err(Error::Config(format!("margin must be >= 0, got {}", self.margin)));
        }
        Ok(())
    }
}

/// `[D(anchor, pos) − D(anchor, neg) + margin]₊` as a graph node. The anchor
/// attentions weight both distances.
pub fn triplet_loss_node(
    g: &mut Graph,
    anchor: (Var, Var),
    positive: Var,
    negative: Var,
    cfg: &TripletLossConfig,
) -> Result<Var> {
    cfg.validate()?;
    let d_pos = g.alignment_distance(anchor.0, anchor.1, positive)?;
    let d_neg = g.alignment_distance(anchor.0, anchor.1, negative)?;
    let diff = g.sub(d_pos, d_neg)?;
    let shifted = g.add_scalar(diff, cfg.margin);
    Ok(g.relu(shifted))
}

/// Alignment distance from `a` to `b`: every descriptor of `a` is aligned to
/// its nearest descriptor of `b`, weighted by `a`'s normalized attention.
pub fn alignment_distance(a: &BranchOutput, b: &BranchOutput) -> Result<f64> {
    let mut g = Graph::new();
    let fa = g.constant(a.descriptor_tensor());
    let wa = g.constant(a.attention_tensor());
    let fb = g.constant(b.descriptor_tensor());
    let d = g.alignment_distance(fa, wa, fb)?;
    Ok(g.value(d).item())
}

pub fn triplet_loss(
    anchor: &BranchOutput,
    positive: &BranchOutput,
    negative: &BranchOutput,
    cfg: &TripletLossConfig,
) -> Result<f64> {
    let mut g = Graph::new();
    let fa = g.constant(anchor.descriptor_tensor());
    let wa = g.constant(anchor.attention_tensor());
    let fp = g.constant(positive.descriptor_tensor());
    let fnn = g.constant(negative.descriptor_tensor());
    let l = triplet_loss_node(&mut g, (fa, wa), fp, fnn, cfg)?;
    Ok(g.value(l).item())
}

/// Index in `b` each descriptor of `a` aligns to (lowest index on ties).
pub fn alignment_targets(a: &BranchOutput, b: &BranchOutput) -> Vec<usize> {
    a.descriptors
        .iter()
        .map(|fa| {
            let mut best = (f64::INFINITY, 0);
            for (j, fb) in b.descriptors.iter().enumerate() {
                let d2: f64 = fa.iter().zip(fb).map(|(x, y)| (x - y) * (x - y)).sum();
                if d2 < best.0 {
                    best = (d2, j);
                }
            }
            best.1
        })
        .collect()
}
