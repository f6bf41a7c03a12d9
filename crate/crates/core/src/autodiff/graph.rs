use std::sync::Arc;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Contiguous row ranges of a rank-2 tensor; segment `s` covers rows
/// `offsets[s]..offsets[s + 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    offsets: Arc<[usize]>,
}

impl Segments {
    pub fn from_lengths(lengths: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut offsets = vec![0];
        for l in lengths {
            if l == 0 {
                return Err(Error::invalid("empty segment"));
            }
            offsets.push(offsets.last().unwrap() + l);
        }
        Ok(Self {
            offsets: offsets.into(),
        })
    }

    pub fn count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total_rows(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, s: usize) -> std::ops::Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }
}

enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    Relu(Var),
    Softplus(Var),
    L2Normalize { x: Var, eps: f64, norms: Vec<f64> },
    ConcatCols { a: Var, b: Var },
    ConcatRows { a: Var, b: Var },
    /// `out[s, f] = x[argmax[s * cols + f], f]`
    RowMax { x: Var, argmax: Vec<usize> },
    ExpandSegments { x: Var, segments: Segments },
    RotateZPair { points: Var, pair: Var, segments: Segments },
    AlignmentDistance(Box<AlignSaved>),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
}

struct AlignSaved {
    a: Var,
    weights: Var,
    b: Var,
    argmin: Vec<usize>,
    dist: Vec<f64>,
    weight_sum: f64,
    value: f64,
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// list is already topologically sorted.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros when the loss does not depend on it.
    pub fn wrt(&self, graph: &Graph, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| graph.value(v).zeros_like())
    }

    pub fn take(&mut self, graph: &Graph, v: Var) -> Tensor {
        self.grads
            .get_mut(v.0)
            .and_then(|g| g.take())
            .unwrap_or_else(|| graph.value(v).zeros_like())
    }
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{op} produced a non-finite value")))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Gradient-requiring leaf (a parameter).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf (data).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    /// `x · W + b` for `x: [n, in]`, `W: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, fin) = self.dims2(x);
        let wt = self.value(w);
        if wt.shape().len() != 2 || wt.shape()[0] != fin {
            return Err(Error::shape(
                "linear",
                format!("x has {fin} columns, W has shape {:?}", wt.shape()),
            ));
        }
        let fout = wt.shape()[1];
        let bt = self.value(b);
        if bt.len() != fout {
            return Err(Error::shape(
                "linear",
                format!("bias has {} values, expected {fout}", bt.len()),
            ));
        }
        let mut out = vec![0.0; n * fout];
        for r in 0..n {
            out[r * fout..(r + 1) * fout].copy_from_slice(bt.data());
        }
        gemm(n, fin, fout, self.value(x).data(), false, wt.data(), false, 1.0, &mut out);
        let value = Tensor::new(vec![n, fout], out)?;
        check_finite("linear", &value)?;
        Ok(self.push(value, Op::Linear { x, w, b }, &[x, w, b]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).unwrap();
        self.push(value, Op::Relu(x), &[x])
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t
            .data()
            .iter()
            .map(|&v| v.max(0.0) + (-v.abs()).exp().ln_1p())
            .collect();
        let value = Tensor::new(t.shape().to_vec(), data).unwrap();
        self.push(value, Op::Softplus(x), &[x])
    }

    /// Row-wise `x / max(‖x‖, eps)`.
    pub fn l2_normalize(&mut self, x: Var, eps: f64) -> Var {
        let t = self.value(x);
        let (rows, cols) = (t.rows(), t.cols());
        let mut norms = Vec::with_capacity(rows);
        let mut data = t.data().to_vec();
        for r in 0..rows {
            let row = &mut data[r * cols..(r + 1) * cols];
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let d = n.max(eps);
            row.iter_mut().for_each(|v| *v /= d);
            norms.push(n);
        }
        let value = Tensor::new(t.shape().to_vec(), data).unwrap();
        self.push(value, Op::L2Normalize { x, eps, norms }, &[x])
    }

    /// Concatenation of two rank-2 tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (ra, ca) = self.dims2(a);
        let (rb, cb) = self.dims2(b);
        match axis {
            0 => {
                if ca != cb {
                    return Err(Error::shape("concat", format!("columns {ca} vs {cb}")));
                }
                let mut data = self.value(a).data().to_vec();
                data.extend_from_slice(self.value(b).data());
                let value = Tensor::new(vec![ra + rb, ca], data)?;
                Ok(self.push(value, Op::ConcatRows { a, b }, &[a, b]))
            }
            1 => {
                if ra != rb {
                    return Err(Error::shape("concat", format!("rows {ra} vs {rb}")));
                }
                let mut data = Vec::with_capacity(ra * (ca + cb));
                for r in 0..ra {
                    data.extend_from_slice(self.value(a).row(r));
                    data.extend_from_slice(self.value(b).row(r));
                }
                let value = Tensor::new(vec![ra, ca + cb], data)?;
                Ok(self.push(value, Op::ConcatCols { a, b }, &[a, b]))
            }
            _ => Err(Error::shape("concat", format!("axis {axis} out of range"))),
        }
    }

    fn row_max(&mut self, x: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let t = self.value(x);
        let cols = t.cols();
        let mut out = Vec::with_capacity(groups.len() * cols);
        let mut argmax = Vec::with_capacity(groups.len() * cols);
        for rows in groups {
            let first = *rows
                .first()
                .ok_or_else(|| Error::invalid("max pool over an empty set"))?;
            let mut best: Vec<f64> = t.row(first).to_vec();
            let mut arg = vec![first; cols];
            for &r in &rows[1..] {
                for (f, v) in t.row(r).iter().enumerate() {
                    if *v > best[f] {
                        best[f] = *v;
                        arg[f] = r;
                    }
                }
            }
            out.extend(best);
            argmax.extend(arg);
        }
        let value = Tensor::new(vec![groups.len(), cols], out)?;
        Ok(self.push(value, Op::RowMax { x, argmax }, &[x]))
    }

    /// Max over the unmasked rows (`mask[r] == true` keeps row `r`), giving `[1, f]`.
    /// Ties resolve to the lowest row index.
    pub fn max_pool_over_set(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let rows = self.value(x).rows();
        if mask.len() != rows {
            return Err(Error::shape("max_pool_over_set", "mask length != rows"));
        }
        let keep: Vec<usize> = (0..rows).filter(|&r| mask[r]).collect();
        if keep.is_empty() {
            return Err(Error::invalid("max pool over a fully masked set"));
        }
        self.row_max(x, &[keep])
    }

    /// Per-segment max, giving `[segments, f]`.
    pub fn segment_max(&mut self, x: Var, segments: &Segments) -> Result<Var> {
        if segments.total_rows() != self.value(x).rows() {
            return Err(Error::shape("segment_max", "segments do not cover the rows"));
        }
        let groups: Vec<Vec<usize>> = (0..segments.count())
            .map(|s| segments.range(s).collect())
            .collect();
        self.row_max(x, &groups)
    }

    /// Repeats row `s` of `x: [segments, f]` over every row of segment `s`.
    pub fn expand_segments(&mut self, x: Var, segments: &Segments) -> Result<Var> {
        let t = self.value(x);
        if t.rows() != segments.count() {
            return Err(Error::shape("expand_segments", "one row per segment required"));
        }
        let cols = t.cols();
        let mut data = Vec::with_capacity(segments.total_rows() * cols);
        for s in 0..segments.count() {
            for _ in segments.range(s) {
                data.extend_from_slice(t.row(s));
            }
        }
        let value = Tensor::new(vec![segments.total_rows(), cols], data)?;
        Ok(self.push(
            value,
            Op::ExpandSegments {
                x,
                segments: segments.clone(),
            },
            &[x],
        ))
    }

    /// Rotates each segment of `points: [n, 3]` by `-θ_s` about z, where row `s`
    /// of `pair: [segments, 2]` holds `(sin θ_s, cos θ_s)`.
    pub fn rotate_z_pair(&mut self, points: Var, pair: Var, segments: &Segments) -> Result<Var> {
        let p = self.value(points);
        let q = self.value(pair);
        if p.cols() != 3 || p.rows() != segments.total_rows() {
            return Err(Error::shape("rotate_z_pair", "points must be [n, 3] covered by segments"));
        }
        if q.cols() != 2 || q.rows() != segments.count() {
            return Err(Error::shape("rotate_z_pair", "pair must be [segments, 2]"));
        }
        let mut data = p.data().to_vec();
        for s in 0..segments.count() {
            let (sn, cs) = (q.at(s, 0), q.at(s, 1));
            for r in segments.range(s) {
                let (x, y) = (data[3 * r], data[3 * r + 1]);
                data[3 * r] = cs * x + sn * y;
                data[3 * r + 1] = -sn * x + cs * y;
            }
        }
        let value = Tensor::new(p.shape().to_vec(), data)?;
        Ok(self.push(
            value,
            Op::RotateZPair {
                points,
                pair,
                segments: segments.clone(),
            },
            &[points, pair],
        ))
    }

    /// Attention-weighted alignment distance
    /// `Σ_i (w_i / Σ_k w_k) · min_j ‖a_i − b_j‖₂` for `a: [Ka, d]`,
    /// `weights: [Ka]` or `[Ka, 1]`, `b: [Kb, d]`. Ties in the min go to the
    /// lowest `j`.
    pub fn alignment_distance(&mut self, a: Var, weights: Var, b: Var) -> Result<Var> {
        let (ta, tw, tb) = (self.value(a), self.value(weights), self.value(b));
        let (ka, d) = (ta.rows(), ta.cols());
        let kb = tb.rows();
        if ta.is_empty() || tb.is_empty() {
            return Err(Error::invalid("alignment distance needs non-empty descriptor sets"));
        }
        if tb.cols() != d {
            return Err(Error::shape("alignment_distance", format!("dims {d} vs {}", tb.cols())));
        }
        if tw.len() != ka {
            return Err(Error::shape("alignment_distance", "one weight per descriptor of a"));
        }
        let weight_sum: f64 = tw.data().iter().sum();
        if !(weight_sum > 0.0) {
            return Err(Error::invalid("attention weights must have a positive sum"));
        }
        let mut argmin = Vec::with_capacity(ka);
        let mut dist = Vec::with_capacity(ka);
        let mut value = 0.0;
        for i in 0..ka {
            let ai = ta.row(i);
            let mut best = (f64::INFINITY, 0);
            for j in 0..kb {
                let d2: f64 = ai.iter().zip(tb.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
                if d2 < best.0 {
                    best = (d2, j);
                }
            }
            let di = best.0.sqrt();
            argmin.push(best.1);
            dist.push(di);
            value += tw.data()[i] / weight_sum * di;
        }
        let out = Tensor::scalar(value);
        check_finite("alignment_distance", &out)?;
        Ok(self.push(
            out,
            Op::AlignmentDistance(Box::new(AlignSaved {
                a,
                weights,
                b,
                argmin,
                dist,
                weight_sum,
                value,
            })),
            &[a, weights, b],
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data).unwrap();
        self.push(value, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * k).collect()).unwrap();
        self.push(value, Op::Scale(x, k), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v + c).collect()).unwrap();
        self.push(value, Op::AddScalar(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape().to_vec(), vec![1.0])?);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            // only leaf gradients are kept
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let acc = |v: Var, grads: &mut [Option<Tensor>], delta: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let shaped = |v: Var, data: Vec<f64>| Tensor::new(self.value(v).shape().to_vec(), data).unwrap();

        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (n, fin) = self.dims2(*x);
                let fout = g.cols();
                if needs(*x) {
                    let mut dx = vec![0.0; n * fin];
                    gemm(n, fout, fin, g.data(), false, self.value(*w).data(), true, 0.0, &mut dx);
                    acc(*x, grads, shaped(*x, dx));
                }
                if needs(*w) {
                    let mut dw = vec![0.0; fin * fout];
                    gemm(fin, n, fout, self.value(*x).data(), true, g.data(), false, 0.0, &mut dw);
                    acc(*w, grads, shaped(*w, dw));
                }
                if needs(*b) {
                    let mut db = vec![0.0; fout];
                    for r in 0..n {
                        for (d, v) in db.iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    acc(*b, grads, shaped(*b, db));
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let d = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(v, gv)| if *v > 0.0 { *gv } else { 0.0 })
                    .collect();
                acc(*x, grads, shaped(*x, d));
            }
            Op::Softplus(x) => {
                let xv = self.value(*x);
                let d = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(v, gv)| gv * sigmoid(*v))
                    .collect();
                acc(*x, grads, shaped(*x, d));
            }
            Op::L2Normalize { x, eps, norms } => {
                let y = &node.value;
                let cols = y.cols();
                let mut d = vec![0.0; y.len()];
                for (r, &n) in norms.iter().enumerate() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let out = &mut d[r * cols..(r + 1) * cols];
                    if n > *eps {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            out[c] = (gr[c] - yr[c] * dot) / n;
                        }
                    } else {
                        for c in 0..cols {
                            out[c] = gr[c] / eps;
                        }
                    }
                }
                acc(*x, grads, shaped(*x, d));
            }
            Op::ConcatCols { a, b } => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let rows = g.rows();
                let mut da = Vec::with_capacity(rows * ca);
                let mut db = Vec::with_capacity(rows * cb);
                for r in 0..rows {
                    let gr = g.row(r);
                    da.extend_from_slice(&gr[..ca]);
                    db.extend_from_slice(&gr[ca..]);
                }
                acc(*a, grads, shaped(*a, da));
                acc(*b, grads, shaped(*b, db));
            }
            Op::ConcatRows { a, b } => {
                let na = self.value(*a).len();
                acc(*a, grads, shaped(*a, g.data()[..na].to_vec()));
                acc(*b, grads, shaped(*b, g.data()[na..].to_vec()));
            }
            Op::RowMax { x, argmax } => {
                let cols = g.cols();
                let mut d = vec![0.0; self.value(*x).len()];
                for (k, (&r, gv)) in argmax.iter().zip(g.data()).enumerate() {
                    d[r * cols + k % cols] += gv;
                }
                acc(*x, grads, shaped(*x, d));
            }
            Op::ExpandSegments { x, segments } => {
                let cols = g.cols();
                let mut d = vec![0.0; segments.count() * cols];
                for s in 0..segments.count() {
                    let out = &mut d[s * cols..(s + 1) * cols];
                    for r in segments.range(s) {
                        for (o, v) in out.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
                acc(*x, grads, shaped(*x, d));
            }
            Op::RotateZPair {
                points,
                pair,
                segments,
            } => {
                let p = self.value(*points);
                let q = self.value(*pair);
                let mut dp = vec![0.0; p.len()];
                let mut dq = vec![0.0; q.len()];
                for s in 0..segments.count() {
                    let (sn, cs) = (q.at(s, 0), q.at(s, 1));
                    for r in segments.range(s) {
                        let (x, y) = (p.at(r, 0), p.at(r, 1));
                        let (gx, gy, gz) = (g.at(r, 0), g.at(r, 1), g.at(r, 2));
                        dp[3 * r] = cs * gx - sn * gy;
                        dp[3 * r + 1] = sn * gx + cs * gy;
                        dp[3 * r + 2] = gz;
                        dq[2 * s] += gx * y - gy * x;
                        dq[2 * s + 1] += gx * x + gy * y;
                    }
                }
                acc(*points, grads, shaped(*points, dp));
                acc(*pair, grads, shaped(*pair, dq));
            }
            Op::AlignmentDistance(saved) => {
                let gv = g.item();
                let ta = self.value(saved.a);
                let tb = self.value(saved.b);
                let tw = self.value(saved.weights);
                let d = ta.cols();
                let mut da = vec![0.0; ta.len()];
                let mut db = vec![0.0; tb.len()];
                let mut dw = vec![0.0; tw.len()];
                for i in 0..ta.rows() {
                    let j = saved.argmin[i];
                    let di = saved.dist[i];
                    let wn = tw.data()[i] / saved.weight_sum;
                    dw[i] = gv * (di - saved.value) / saved.weight_sum;
                    if di > 0.0 {
                        let k = gv * wn / di;
                        for c in 0..d {
                            let diff = ta.at(i, c) - tb.at(j, c);
                            da[i * d + c] += k * diff;
                            db[j * d + c] -= k * diff;
                        }
                    }
                }
                acc(saved.a, grads, shaped(saved.a, da));
                acc(saved.b, grads, shaped(saved.b, db));
                acc(saved.weights, grads, shaped(saved.weights, dw));
            }
            Op::Add(a, b) => {
                acc(*a, grads, g.clone());
                acc(*b, grads, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, grads, g.clone());
                let neg = g.data().iter().map(|v| -v).collect();
                acc(*b, grads, shaped(*b, neg));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let da = g.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
                let db = g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect();
                acc(*a, grads, shaped(*a, da));
                acc(*b, grads, shaped(*b, db));
            }
            Op::Scale(x, k) => {
                let d = g.data().iter().map(|v| v * k).collect();
                acc(*x, grads, shaped(*x, d));
            }
            Op::AddScalar(x) => acc(*x, grads, shaped(*x, g.data().to_vec())),
            Op::Sum(x) => {
                let n = self.value(*x).len();
                acc(*x, grads, shaped(*x, vec![g.item(); n]));
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
