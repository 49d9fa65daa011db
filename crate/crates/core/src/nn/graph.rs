//! Recording graph for reverse-mode differentiation.
//!
//! Every op computes its output eagerly and appends a node to the tape.
//! `backward` walks the tape in reverse. Ops are coarse (a whole
//! convolution, a whole loss) so the tape stays short.

use super::params::{ParamId, ParamStore};
use super::kernels::{axpy, dot, matmul_rows, tap_range, transpose};
use super::tensor::Tensor1D;
use super::NnError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BCE_CLAMP: f64 = 1e-7;
pub const DICE_SMOOTH: f64 = 1.0;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

/// How the masked smooth-L1 loss is normalized.
#[derive(Debug, Clone, PartialEq)]
pub enum L1Reduction {
    /// Mean over every contributing element.
    Mean,
    /// Per batch element, the sum over contributing elements divided by the
    /// given divisor; elements with divisor 0 contribute 0. The result is
    /// the mean over the batch.
    PerSample(Vec<f64>),
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Depthwise { x: NodeId, w: NodeId, kernel: usize },
    Pointwise { x: NodeId, w: NodeId, b: Option<NodeId> },
    Relu(NodeId),
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Dropout { x: NodeId, mask: Vec<f64> },
    MaxPool { x: NodeId, argmax: Vec<usize> },
    Upsample { x: NodeId, factor: usize },
    Concat(Vec<NodeId>),
    GlobalMaxConcat { x: NodeId, argmax: Vec<usize> },
    Add(NodeId, NodeId),
    Sigmoid(NodeId),
    Scale(NodeId, f64),
    Bce { p: NodeId, target: Vec<f64> },
    Dice { p: NodeId, target: Vec<f64> },
    SmoothL1 { y: NodeId, target: Vec<f64>, weights: Vec<f64> },
    SelectChannels { x: NodeId, channels: Vec<usize> },
    WeightedSum { x: NodeId, coeffs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor1D,
    op: Op,
}

/// Running-statistics update recorded by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct StatUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub mean: Vec<f64>,
    /// Unbiased batch variance.
    pub var: Vec<f64>,
}

#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    training: bool,
    rng: ChaCha8Rng,
    stat_updates: Vec<StatUpdate>,
}

/// Gradients from one backward pass.
#[derive(Debug)]
pub struct Gradients {
    node_grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Vec<f64>)>,
}

impl Gradients {
    /// Gradient with respect to any recorded node (inputs included).
    pub fn node(&self, id: NodeId) -> Option<&[f64]> {
        self.node_grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Accumulated gradient per parameter, ordered by id.
    pub fn params(&self) -> &[(ParamId, Vec<f64>)] {
        &self.params
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g.as_slice())
    }
}

fn shape_err(msg: String) -> NnError {
    NnError::Shape(msg)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    /// Inference graph: batch norm uses running statistics, dropout is off.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
            stat_updates: Vec::new(),
        }
    }

    /// Training graph; `seed` drives the dropout masks.
    pub fn training(seed: u64) -> Self {
        Self {
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ..Self::inference()
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor1D {
        &self.nodes[id.0].value
    }

    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate> {
        std::mem::take(&mut self.stat_updates)
    }

    fn push(&mut self, value: Tensor1D, op: Op, name: &str) -> Result<NodeId, NnError> {
        if !value.all_finite() {
            return Err(NnError::NonFinite(name.to_string()));
        }
        self.nodes.push(Node { value, op });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn input(&mut self, value: Tensor1D) -> Result<NodeId, NnError> {
        self.push(value, Op::Input, "input")
    }

    /// Records a parameter as a `(1, 1, n)` node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let values = store.values(id).to_vec();
        let n = values.len();
        self.nodes.push(Node {
            value: Tensor1D {
                batch: 1,
                channels: 1,
                len: n,
                data: values,
            },
            op: Op::Param(id),
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Per-channel 1D convolution with a `(channels, kernel)` weight, odd
    /// kernel, zero "same" padding, no bias.
    pub fn depthwise(&mut self, x: NodeId, w: NodeId, kernel: usize) -> Result<NodeId, NnError> {
        let xv = self.value(x);
        let (b, c, l) = xv.shape();
        if kernel.is_multiple_of(2) || self.value(w).numel() != c * kernel {
            return Err(shape_err(format!(
                "depthwise weight of {} values does not match {c} channels with kernel {kernel}",
                self.value(w).numel()
            )));
        }
        let wv = &self.value(w).data;
        let pad = kernel / 2;
        let mut out = Tensor1D::zeros(b, c, l);
        for bi in 0..b {
            for ci in 0..c {
                let src = xv.row(bi, ci);
                let dst = out.row_mut(bi, ci);
                let wk = &wv[ci * kernel..(ci + 1) * kernel];
                for (j, &wj) in wk.iter().enumerate() {
                    // dst[i] += wj * src[i + j - pad] for valid indices
                    if let Some((lo, hi, s0)) = tap_range(j, pad, l) {
                        axpy(wj, &src[s0..s0 + (hi - lo)], &mut dst[lo..hi]);
                    }
                }
            }
        }
        self.push(out, Op::Depthwise { x, w, kernel }, "depthwise")
    }

    /// 1x1 convolution with an `(out, in)` weight and optional bias.
    pub fn pointwise(&mut self, x: NodeId, w: NodeId, bias: Option<NodeId>) -> Result<NodeId, NnError> {
        let xv = self.value(x);
        let (b, cin, l) = xv.shape();
        let wn = self.value(w).numel();
        if cin == 0 || !wn.is_multiple_of(cin) {
            return Err(shape_err(format!("pointwise weight of {wn} values for {cin} input channels")));
        }
        let cout = wn / cin;
        if let Some(bn) = bias {
            if self.value(bn).numel() != cout {
                return Err(shape_err(format!("bias of {} for {cout} outputs", self.value(bn).numel())));
            }
        }
        let wv = &self.value(w).data;
        let mut out = Tensor1D::zeros(b, cout, l);
        for bi in 0..b {
            let dst = &mut out.data[bi * cout * l..(bi + 1) * cout * l];
            if let Some(bn) = bias {
                for (row, &bv) in dst.chunks_mut(l).zip(&self.nodes[bn.0].value.data) {
                    row.fill(bv);
                }
            }
            matmul_rows(wv, cin, xv.sample(bi), dst, l);
        }
        self.push(out, Op::Pointwise { x, w, b: bias }, "pointwise")
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, NnError> {
        let mut out = self.value(x).clone();
        out.data.iter_mut().for_each(|v| *v = v.max(0.0));
        self.push(out, Op::Relu(x), "relu")
    }

    /// Batch norm over `(batch, position)` per channel. In a training
    /// graph it normalizes with batch statistics and records a
    /// [`StatUpdate`]; otherwise it uses the running statistics.
    pub fn batch_norm(
        &mut self,
        store: &ParamStore,
        x: NodeId,
        gamma: ParamId,
        beta: ParamId,
        running_mean: ParamId,
        running_var: ParamId,
    ) -> Result<NodeId, NnError> {
        let g = self.param(store, gamma);
        let bt = self.param(store, beta);
        let xv = self.value(x);
        let (b, c, l) = xv.shape();
        if store.values(gamma).len() != c {
            return Err(shape_err(format!("batch norm over {} channels, input has {c}", store.values(gamma).len())));
        }
        let n = (b * l) as f64;
        let (mean, var) = if self.training {
            if b * l < 2 {
                return Err(shape_err("batch norm needs at least two values per channel in training".into()));
            }
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ci in 0..c {
                let s: f64 = (0..b).map(|bi| xv.row(bi, ci).iter().sum::<f64>()).sum();
                let m = s / n;
                let ss: f64 = (0..b)
                    .map(|bi| xv.row(bi, ci).iter().map(|v| (v - m) * (v - m)).sum::<f64>())
                    .sum();
                mean[ci] = m;
                var[ci] = ss / n;
            }
            (mean, var)
        } else {
            (store.values(running_mean).to_vec(), store.values(running_var).to_vec())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let gv = store.values(gamma);
        let bv = store.values(beta);
        let mut xhat = vec![0.0; xv.numel()];
        let mut out = Tensor1D::zeros(b, c, l);
        for bi in 0..b {
            for ci in 0..c {
                let start = (bi * c + ci) * l;
                for (k, &v) in xv.row(bi, ci).iter().enumerate() {
                    let h = (v - mean[ci]) * inv_std[ci];
                    xhat[start + k] = h;
                    out.data[start + k] = gv[ci] * h + bv[ci];
                }
            }
        }
        let batch_stats = self.training;
        if batch_stats {
            self.stat_updates.push(StatUpdate {
                running_mean,
                running_var,
                mean,
                var: var.iter().map(|v| v * n / (n - 1.0)).collect(),
            });
        }
        self.push(
            out,
            Op::BatchNorm {
                x,
                gamma: g,
                beta: bt,
                xhat,
                inv_std,
                batch_stats,
            },
            "batch_norm",
        )
    }

    /// Inverted dropout; the identity outside training.
    pub fn dropout(&mut self, x: NodeId, rate: f64) -> Result<NodeId, NnError> {
        if !self.training || rate <= 0.0 {
            return Ok(x);
        }
        if rate >= 1.0 {
            return Err(shape_err(format!("dropout rate {rate} must be below 1")));
        }
        let keep = 1.0 - rate;
        let n = self.value(x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mut out = self.value(x).clone();
        out.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        self.push(out, Op::Dropout { x, mask }, "dropout")
    }

    /// Non-overlapping max pooling; the length must be divisible by `factor`.
    pub fn max_pool(&mut self, x: NodeId, factor: usize) -> Result<NodeId, NnError> {
        let xv = self.value(x);
        let (b, c, l) = xv.shape();
        if factor == 0 || l % factor != 0 {
            return Err(shape_err(format!("length {l} is not divisible by pool factor {factor}")));
        }
        let lo = l / factor;
        let mut out = Tensor1D::zeros(b, c, lo);
        let mut argmax = vec![0; b * c * lo];
        for row in 0..b * c {
            let src = &xv.data[row * l..(row + 1) * l];
            for k in 0..lo {
                let mut best = k * factor;
                for i in k * factor + 1..(k + 1) * factor {
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                out.data[row * lo + k] = src[best];
                argmax[row * lo + k] = row * l + best;
            }
        }
        self.push(out, Op::MaxPool { x, argmax }, "max_pool")
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample(&mut self, x: NodeId, factor: usize) -> Result<NodeId, NnError> {
        let xv = self.value(x);
        let (b, c, l) = xv.shape();
        if factor == 0 {
            return Err(shape_err("upsample factor 0".into()));
        }
        let mut out = Tensor1D::zeros(b, c, l * factor);
        for (row, chunk) in out.data.chunks_mut(l * factor).enumerate() {
            let src = &xv.data[row * l..(row + 1) * l];
            for (i, v) in chunk.iter_mut().enumerate() {
                *v = src[i / factor];
            }
        }
        self.push(out, Op::Upsample { x, factor }, "upsample")
    }

    /// Channel concatenation.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, NnError> {
        let first = self.value(*parts.first().ok_or_else(|| shape_err("empty concat".into()))?);
        let (b, l) = (first.batch, first.len);
        let mut c = 0;
        for &p in parts {
            let v = self.value(p);
            if v.batch != b || v.len != l {
                return Err(shape_err(format!(
                    "concat of ({}, _, {}) with ({b}, _, {l})",
                    v.batch, v.len
                )));
            }
            c += v.channels;
        }
        let mut out = Tensor1D::zeros(b, c, l);
        for bi in 0..b {
            let mut offset = 0;
            for &p in parts {
                let v = self.value(p);
                let n = v.channels * l;
                let dst = (bi * c) * l + offset;
                out.data[dst..dst + n].copy_from_slice(v.sample(bi));
                offset += n;
            }
        }
        self.push(out, Op::Concat(parts.to_vec()), "concat")
    }

    /// Appends, for each channel, its maximum over all positions broadcast
    /// back along the length: `(B, C, L) -> (B, 2C, L)`.
    pub fn global_max_concat(&mut self, x: NodeId) -> Result<NodeId, NnError> {
        let xv = self.value(x);
        let (b, c, l) = xv.shape();
        let mut out = Tensor1D::zeros(b, 2 * c, l);
        let mut argmax = vec![0; b * c];
        for bi in 0..b {
            for ci in 0..c {
                let src = xv.row(bi, ci);
                let mut best = 0;
                for (i, &v) in src.iter().enumerate() {
                    if v > src[best] {
                        best = i;
                    }
                }
                argmax[bi * c + ci] = best;
                out.row_mut(bi, ci).copy_from_slice(src);
                out.row_mut(bi, c + ci).fill(src[best]);
            }
        }
        self.push(out, Op::GlobalMaxConcat { x, argmax }, "global_max_concat")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(format!("add of {:?} and {:?}", av.shape(), bv.shape())));
        }
        let mut out = av.clone();
        out.data.iter_mut().zip(&bv.data).for_each(|(o, v)| *o += v);
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId, NnError> {
        let mut out = self.value(x).clone();
        out.data.iter_mut().for_each(|v| *v = sigmoid(*v));
        self.push(out, Op::Sigmoid(x), "sigmoid")
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId, NnError> {
        let mut out = self.value(x).clone();
        out.data.iter_mut().for_each(|v| *v *= factor);
        self.push(out, Op::Scale(x, factor), "scale")
    }

    /// Gathers the listed channels, in order.
    pub fn select_channels(&mut self, x: NodeId, channels: &[usize]) -> Result<NodeId, NnError> {
        let xv = self.value(x);
        let (b, c, l) = xv.shape();
        if let Some(&bad) = channels.iter().find(|&&ch| ch >= c) {
            return Err(shape_err(format!("channel {bad} out of {c}")));
        }
        let mut out = Tensor1D::zeros(b, channels.len(), l);
        for bi in 0..b {
            for (k, &ch) in channels.iter().enumerate() {
                out.row_mut(bi, k).copy_from_slice(xv.row(bi, ch));
            }
        }
        self.push(
            out,
            Op::SelectChannels {
                x,
                channels: channels.to_vec(),
            },
            "select_channels",
        )
    }

    /// Scalar `sum(coeffs * x)`.
    pub fn weighted_sum(&mut self, x: NodeId, coeffs: &[f64]) -> Result<NodeId, NnError> {
        self.check_target(x, coeffs, "weighted_sum")?;
        let total = self.value(x).data.iter().zip(coeffs).map(|(a, b)| a * b).sum();
        self.push(
            Tensor1D::scalar(total),
            Op::WeightedSum {
                x,
                coeffs: coeffs.to_vec(),
            },
            "weighted_sum",
        )
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, NnError> {
        let ones = vec![1.0; self.value(x).numel()];
        self.weighted_sum(x, &ones)
    }

    fn check_target(&self, x: NodeId, target: &[f64], what: &str) -> Result<(), NnError> {
        if self.value(x).numel() != target.len() {
            return Err(shape_err(format!(
                "{what}: {} predictions, {} targets",
                self.value(x).numel(),
                target.len()
            )));
        }
        Ok(())
    }

    /// Mean binary cross-entropy of probabilities `p`, clamped to
    /// `[1e-7, 1 - 1e-7]`.
    pub fn bce(&mut self, p: NodeId, target: &[f64]) -> Result<NodeId, NnError> {
        self.check_target(p, target, "bce")?;
        let pv = &self.value(p).data;
        let n = pv.len() as f64;
        let total: f64 = pv
            .iter()
            .zip(target)
            .map(|(&p, &t)| {
                let q = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(t * q.ln() + (1.0 - t) * (1.0 - q).ln())
            })
            .sum();
        self.push(
            Tensor1D::scalar(total / n),
            Op::Bce {
                p,
                target: target.to_vec(),
            },
            "bce",
        )
    }

    /// Soft dice loss `1 - (2 sum(p t) + 1) / (sum p + sum t + 1)` per batch
    /// element, averaged over the batch.
    pub fn dice(&mut self, p: NodeId, target: &[f64]) -> Result<NodeId, NnError> {
        self.check_target(p, target, "dice")?;
        let pv = self.value(p);
        let b = pv.batch;
        let per = pv.numel() / b;
        let mut total = 0.0;
        for bi in 0..b {
            let ps = &pv.data[bi * per..(bi + 1) * per];
            let ts = &target[bi * per..(bi + 1) * per];
            let inter: f64 = ps.iter().zip(ts).map(|(a, b)| a * b).sum();
            let union: f64 = ps.iter().sum::<f64>() + ts.iter().sum::<f64>();
            total += 1.0 - (2.0 * inter + DICE_SMOOTH) / (union + DICE_SMOOTH);
        }
        self.push(
            Tensor1D::scalar(total / b as f64),
            Op::Dice {
                p,
                target: target.to_vec(),
            },
            "dice",
        )
    }

    /// Smooth-L1 (beta 1) over elements where `mask` is true.
    pub fn smooth_l1(
        &mut self,
        y: NodeId,
        target: &[f64],
        mask: &[bool],
        reduction: L1Reduction,
    ) -> Result<NodeId, NnError> {
        self.check_target(y, target, "smooth_l1")?;
        let yv = self.value(y);
        if mask.len() != target.len() {
            return Err(shape_err("smooth_l1 mask length".into()));
        }
        let b = yv.batch;
        let per = yv.numel() / b;
        // per-element weight so that loss = sum w_i * sl1(y_i - t_i)
        let mut weights = vec![0.0; mask.len()];
        match &reduction {
            L1Reduction::Mean => {
                let count = mask.iter().filter(|&&m| m).count();
                if count > 0 {
                    for (w, &m) in weights.iter_mut().zip(mask) {
                        if m {
                            *w = 1.0 / count as f64;
                        }
                    }
                }
            }
            L1Reduction::PerSample(div) => {
                if div.len() != b {
                    return Err(shape_err(format!("{} divisors for batch {b}", div.len())));
                }
                for bi in 0..b {
                    if div[bi] > 0.0 {
                        for k in bi * per..(bi + 1) * per {
                            if mask[k] {
                                weights[k] = 1.0 / (div[bi] * b as f64);
                            }
                        }
                    }
                }
            }
        }
        let total: f64 = yv
            .data
            .iter()
            .zip(target)
            .zip(&weights)
            .filter(|(_, &w)| w != 0.0)
            .map(|((&y, &t), &w)| {
                let u = (y - t).abs();
                w * if u < 1.0 { 0.5 * u * u } else { u - 0.5 }
            })
            .sum();
        self.push(
            Tensor1D::scalar(total),
            Op::SmoothL1 {
                y,
                target: target.to_vec(),
                weights,
            },
            "smooth_l1",
        )
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, NnError> {
        if loss.0 >= self.nodes.len() {
            return Err(NnError::NotRecorded);
        }
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(NnError::NonScalarLoss(self.nodes[loss.0].value.shape()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(dy) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            self.propagate(node, &dy, &mut grads);
            grads[id] = Some(dy);
        }

        let mut params: Vec<(ParamId, Vec<f64>)> = Vec::new();
        for (node, g) in self.nodes.iter().zip(&grads) {
            if let (Op::Param(pid), Some(g)) = (&node.op, g) {
                match params.iter_mut().find(|(p, _)| p == pid) {
                    Some((_, acc)) => acc.iter_mut().zip(g).for_each(|(a, v)| *a += v),
                    None => params.push((*pid, g.clone())),
                }
            }
        }
        params.sort_by_key(|(p, _)| *p);
        Ok(Gradients {
            node_grads: grads,
            params,
        })
    }

    fn propagate(&self, node: &Node, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        fn acc<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], id: NodeId) -> &'a mut Vec<f64> {
            grads[id.0].get_or_insert_with(|| vec![0.0; nodes[id.0].value.numel()])
        }
        let nodes = &self.nodes;
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Depthwise { x, w, kernel } => {
                let xv = &nodes[x.0].value;
                let wv = &nodes[w.0].value.data;
                let (b, c, l) = xv.shape();
                let k = *kernel;
                let pad = k / 2;
                let mut dw = vec![0.0; c * k];
                {
                    let dx = acc(grads, nodes, *x);
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * l;
                            let dyr = &dy[base..base + l];
                            let src = xv.row(bi, ci);
                            let dxr = &mut dx[base..base + l];
                            for j in 0..k {
                                if let Some((lo, hi, s0)) = tap_range(j, pad, l) {
                                    let n = hi - lo;
                                    dw[ci * k + j] += dot(&dyr[lo..hi], &src[s0..s0 + n]);
                                    axpy(wv[ci * k + j], &dyr[lo..hi], &mut dxr[s0..s0 + n]);
                                }
                            }
                        }
                    }
                }
                acc(grads, nodes, *w).iter_mut().zip(&dw).for_each(|(a, v)| *a += v);
            }
            Op::Pointwise { x, w, b: bias } => {
                let xv = &nodes[x.0].value;
                let wv = &nodes[w.0].value.data;
                let (b, cin, l) = xv.shape();
                let cout = wv.len() / cin;
                let mut dw = vec![0.0; cout * cin];
                let mut db = vec![0.0; cout];
                let wt = transpose(wv, cout, cin);
                {
                    let dx = acc(grads, nodes, *x);
                    for bi in 0..b {
                        let dys = &dy[bi * cout * l..(bi + 1) * cout * l];
                        let xs = xv.sample(bi);
                        for o in 0..cout {
                            let dyr = &dys[o * l..(o + 1) * l];
                            db[o] += dyr.iter().sum::<f64>();
                            for i in 0..cin {
                                dw[o * cin + i] += dot(dyr, &xs[i * l..(i + 1) * l]);
                            }
                        }
                        matmul_rows(&wt, cout, dys, &mut dx[bi * cin * l..(bi + 1) * cin * l], l);
                    }
                }
                acc(grads, nodes, *w).iter_mut().zip(&dw).for_each(|(a, v)| *a += v);
                if let Some(bn) = bias {
                    acc(grads, nodes, *bn).iter_mut().zip(&db).for_each(|(a, v)| *a += v);
                }
            }
            Op::Relu(x) => {
                let out = &node.value.data;
                let dx = acc(grads, nodes, *x);
                for ((d, &g), &o) in dx.iter_mut().zip(dy).zip(out) {
                    if o > 0.0 {
                        *d += g;
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (b, c, l) = nodes[x.0].value.shape();
                let gv = &nodes[gamma.0].value.data;
                let n = (b * l) as f64;
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * l;
                        for t in base..base + l {
                            dgamma[ci] += dy[t] * xhat[t];
                            dbeta[ci] += dy[t];
                        }
                    }
                }
                {
                    let dx = acc(grads, nodes, *x);
                    for ci in 0..c {
                        let scale = gv[ci] * inv_std[ci];
                        if *batch_stats {
                            let mean_dy = dbeta[ci] / n;
                            let mean_dy_xhat = dgamma[ci] / n;
                            for bi in 0..b {
                                let base = (bi * c + ci) * l;
                                for t in base..base + l {
                                    dx[t] += scale * (dy[t] - mean_dy - xhat[t] * mean_dy_xhat);
                                }
                            }
                        } else {
                            for bi in 0..b {
                                let base = (bi * c + ci) * l;
                                for t in base..base + l {
                                    dx[t] += scale * dy[t];
                                }
                            }
                        }
                    }
                }
                acc(grads, nodes, *gamma).iter_mut().zip(&dgamma).for_each(|(a, v)| *a += v);
                acc(grads, nodes, *beta).iter_mut().zip(&dbeta).for_each(|(a, v)| *a += v);
            }
            Op::Dropout { x, mask } => {
                let dx = acc(grads, nodes, *x);
                for ((d, &g), &m) in dx.iter_mut().zip(dy).zip(mask) {
                    *d += g * m;
                }
            }
            Op::MaxPool { x, argmax } => {
                let dx = acc(grads, nodes, *x);
                for (&src, &g) in argmax.iter().zip(dy) {
                    dx[src] += g;
                }
            }
            Op::Upsample { x, factor } => {
                let l = nodes[x.0].value.len;
                let dx = acc(grads, nodes, *x);
                for (row, chunk) in dy.chunks(l * factor).enumerate() {
                    for (i, &g) in chunk.iter().enumerate() {
                        dx[row * l + i / factor] += g;
                    }
                }
            }
            Op::Concat(parts) => {
                let (b, c, l) = node.value.shape();
                let mut offset = 0;
                for p in parts {
                    let pc = nodes[p.0].value.channels;
                    let n = pc * l;
                    let dx = acc(grads, nodes, *p);
                    for bi in 0..b {
                        let src = bi * c * l + offset;
                        for (d, &g) in dx[bi * n..(bi + 1) * n].iter_mut().zip(&dy[src..src + n]) {
                            *d += g;
                        }
                    }
                    offset += n;
                }
            }
            Op::GlobalMaxConcat { x, argmax } => {
                let (b, c, l) = nodes[x.0].value.shape();
                let dx = acc(grads, nodes, *x);
                for bi in 0..b {
                    for ci in 0..c {
                        let xb = (bi * c + ci) * l;
                        let direct = (bi * 2 * c + ci) * l;
                        let pooled = (bi * 2 * c + c + ci) * l;
                        for t in 0..l {
                            dx[xb + t] += dy[direct + t];
                        }
                        dx[xb + argmax[bi * c + ci]] += dy[pooled..pooled + l].iter().sum::<f64>();
                    }
                }
            }
            Op::Add(a, b) => {
                for id in [a, b] {
                    let dx = acc(grads, nodes, *id);
                    dx.iter_mut().zip(dy).for_each(|(d, g)| *d += g);
                }
            }
            Op::Sigmoid(x) => {
                let out = &node.value.data;
                let dx = acc(grads, nodes, *x);
                for ((d, &g), &s) in dx.iter_mut().zip(dy).zip(out) {
                    *d += g * s * (1.0 - s);
                }
            }
            Op::Scale(x, f) => {
                let dx = acc(grads, nodes, *x);
                dx.iter_mut().zip(dy).for_each(|(d, g)| *d += g * f);
            }
            Op::SelectChannels { x, channels } => {
                let (b, c, l) = nodes[x.0].value.shape();
                let k = channels.len();
                let dx = acc(grads, nodes, *x);
                for bi in 0..b {
                    for (j, &ch) in channels.iter().enumerate() {
                        let src = (bi * k + j) * l;
                        let dst = (bi * c + ch) * l;
                        for t in 0..l {
                            dx[dst + t] += dy[src + t];
                        }
                    }
                }
            }
            Op::WeightedSum { x, coeffs } => {
                let dx = acc(grads, nodes, *x);
                dx.iter_mut().zip(coeffs).for_each(|(d, c)| *d += dy[0] * c);
            }
            Op::Bce { p, target } => {
                let pv = &nodes[p.0].value.data;
                let n = pv.len() as f64;
                let g0 = dy[0] / n;
                let dx = acc(grads, nodes, *p);
                for ((d, &p), &t) in dx.iter_mut().zip(pv).zip(target) {
                    if p > BCE_CLAMP && p < 1.0 - BCE_CLAMP {
                        *d += g0 * (p - t) / (p * (1.0 - p));
                    }
                }
            }
            Op::Dice { p, target } => {
                let pv = &nodes[p.0].value;
                let b = pv.batch;
                let per = pv.numel() / b;
                let g0 = dy[0] / b as f64;
                let mut local = vec![0.0; pv.numel()];
                for bi in 0..b {
                    let r = bi * per..(bi + 1) * per;
                    let ps = &pv.data[r.clone()];
                    let ts = &target[r.clone()];
                    let inter: f64 = ps.iter().zip(ts).map(|(a, b)| a * b).sum();
                    let u = ps.iter().sum::<f64>() + ts.iter().sum::<f64>() + DICE_SMOOTH;
                    let num = 2.0 * inter + DICE_SMOOTH;
                    for (k, &t) in ts.iter().enumerate() {
                        local[bi * per + k] = -g0 * (2.0 * t * u - num) / (u * u);
                    }
                }
                let dx = acc(grads, nodes, *p);
                dx.iter_mut().zip(&local).for_each(|(d, g)| *d += g);
            }
            Op::SmoothL1 { y, target, weights } => {
                let yv = &nodes[y.0].value.data;
                let dx = acc(grads, nodes, *y);
                for (k, &w) in weights.iter().enumerate() {
                    if w != 0.0 {
                        let u = yv[k] - target[k];
                        let g = if u.abs() < 1.0 { u } else { u.signum() };
                        dx[k] += dy[0] * w * g;
                    }
                }
            }
        }
    }
}

/// Folds recorded running-statistic updates into the store with the given
/// momentum (`running = (1 - m) running + m batch`).
pub fn apply_stat_updates(store: &mut ParamStore, updates: &[StatUpdate], momentum: f64) {
    for u in updates {
        for (r, &m) in store.values_mut(u.running_mean).iter_mut().zip(&u.mean) {
            *r = (1.0 - momentum) * *r + momentum * m;
        }
        for (r, &v) in store.values_mut(u.running_var).iter_mut().zip(&u.var) {
            *r = (1.0 - momentum) * *r + momentum * v;
        }
    }
}
