//! Define-by-run reverse-mode differentiation over [`Tensor`]s.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the node
//! list is a valid topological order for backpropagation.

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Add(NodeId, NodeId),
    Scale(NodeId, f32),
    Relu(NodeId),
    Sigmoid(NodeId),
    ChannelScale {
        x: NodeId,
        s: NodeId,
    },
    GlobalAvgPool(NodeId),
    PixelShuffle(NodeId),
    MaxPool2 {
        x: NodeId,
        argmax: Vec<u32>,
    },
    Concat(Vec<NodeId>),
    Reshape(NodeId),
    Dropout {
        x: NodeId,
        mask: Vec<f32>,
    },
    Clamp {
        x: NodeId,
        lo: f32,
        hi: f32,
    },
    RepeatChannels(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of leaf nodes after a backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

/// `c = alpha·a·b + beta·c` for strided row/column-major operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (a_rs, a_cs): (usize, usize),
    b: &[f32],
    (b_rs, b_cs): (usize, usize),
    beta: f32,
    c: &mut [f32],
    c_rs: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() > (m - 1) * a_rs + k.saturating_sub(1) * a_cs || k == 0);
    assert!(b.len() > k.saturating_sub(1) * b_rs + (n - 1) * b_cs || k == 0);
    assert!(c.len() >= (m - 1) * c_rs + n);
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_rs as isize,
            a_cs as isize,
            b.as_ptr(),
            b_rs as isize,
            b_cs as isize,
            beta,
            c.as_mut_ptr(),
            c_rs as isize,
            1,
        );
    }
}

/// Unfolds one `c×h×w` image into a `(c·k·k) × (h·w)` patch matrix with zero
/// padding `k/2`.
fn im2col(src: &[f32], c: usize, h: usize, w: usize, k: usize, col: &mut [f32]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &src[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * hw..][..hw];
                let dx = kx as isize - pad;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        dst.fill(0.0);
                        continue;
                    }
                    let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
                    dst[..x_lo].fill(0.0);
                    dst[x_hi..].fill(0.0);
                    let s0 = (x_lo as isize + dx) as usize;
                    dst[x_lo..x_hi].copy_from_slice(&srow[s0..s0 + (x_hi - x_lo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
fn col2im(col: &[f32], c: usize, h: usize, w: usize, k: usize, dst: &mut [f32]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dst[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                let dx = kx as isize - pad;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = (x_lo as isize + dx) as usize;
                    let drow = &mut plane[sy as usize * w + s0..][..x_hi - x_lo];
                    drow.iter_mut()
                        .zip(&row[y * w + x_lo..y * w + x_hi])
                        .for_each(|(d, g)| *d += g);
                }
            }
        }
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[NodeId]) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Stride-1 convolution with "same" zero padding; `w` is `[out, in, k, k]`
    /// with odd `k`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (n, c, h, wd) = self.value(x).dims4()?;
        let (co, ci, k, k2) = self.value(w).dims4()?;
        if ci != c || k != k2 || k % 2 == 0 {
            return shape_err(format!(
                "conv2d: input {:?} incompatible with kernel {:?}",
                self.value(x).shape(),
                self.value(w).shape()
            ));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [co] {
                return shape_err(format!("conv2d: bias shape {:?}", self.value(b).shape()));
            }
        }
        let hw = h * wd;
        let kk = c * k * k;
        let mut out = vec![0.0f32; n * co * hw];
        let mut col = if k > 1 {
            vec![0.0f32; kk * hw]
        } else {
            Vec::new()
        };
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for i in 0..n {
                let xi = &xv[i * c * hw..(i + 1) * c * hw];
                let src: &[f32] = if k > 1 {
                    im2col(xi, c, h, wd, k, &mut col);
                    &col
                } else {
                    xi
                };
                let dst = &mut out[i * co * hw..(i + 1) * co * hw];
                gemm(co, kk, hw, wv, (kk, 1), src, (hw, 1), 0.0, dst, hw);
            }
            if let Some(b) = b {
                let bv = self.value(b).data();
                for i in 0..n {
                    for (o, bias) in bv.iter().enumerate() {
                        out[(i * co + o) * hw..(i * co + o + 1) * hw]
                            .iter_mut()
                            .for_each(|v| *v += bias);
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, co, h, wd], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, Op::Conv2d { x, w, b }, &inputs))
    }

    /// `x·wᵀ + b` with `x: [n, in]`, `w: [out, in]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (n, f) = self.value(x).dims2()?;
        let (o, f2) = self.value(w).dims2()?;
        if f != f2 {
            return shape_err(format!(
                "linear: input {:?} incompatible with weight {:?}",
                self.value(x).shape(),
                self.value(w).shape()
            ));
        }
        let mut out = vec![0.0f32; n * o];
        gemm(
            n,
            f,
            o,
            self.value(x).data(),
            (f, 1),
            self.value(w).data(),
            (1, f),
            0.0,
            &mut out,
            o,
        );
        if let Some(b) = b {
            let bv = self.value(b).data();
            if bv.len() != o {
                return shape_err(format!("linear: bias length {} for {o} outputs", bv.len()));
            }
            for row in out.chunks_mut(o) {
                row.iter_mut().zip(bv).for_each(|(v, b)| *v += b);
            }
        }
        let value = Tensor::new(vec![n, o], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, Op::Linear { x, w, b }, &inputs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return shape_err(format!("add: {:?} vs {:?}", va.shape(), vb.shape()));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: NodeId, factor: f32) -> NodeId {
        let v = self.value(x);
        let value = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|a| a * factor).collect(),
        )
        .expect("same shape");
        self.push(value, Op::Scale(x, factor), &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let value = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|a| a.max(0.0)).collect(),
        )
        .expect("same shape");
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let value = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|a| 1.0 / (1.0 + (-a).exp())).collect(),
        )
        .expect("same shape");
        self.push(value, Op::Sigmoid(x), &[x])
    }

    /// Multiplies each `[h, w]` plane of `x: [n, c, h, w]` by `s: [n, c]`.
    pub fn channel_scale(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if self.value(s).shape() != [n, c] {
            return shape_err(format!(
                "channel_scale: scales {:?} for input {:?}",
                self.value(s).shape(),
                self.value(x).shape()
            ));
        }
        let hw = h * w;
        let sv = self.value(s).data();
        let mut out = self.value(x).data().to_vec();
        for (plane, s) in out.chunks_mut(hw).zip(sv) {
            plane.iter_mut().for_each(|v| *v *= s);
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        Ok(self.push(value, Op::ChannelScale { x, s }, &[x, s]))
    }

    /// Spatial mean: `[n, c, h, w] → [n, c]`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let hw = (h * w) as f32;
        let data = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().sum::<f32>() / hw)
            .collect();
        let value = Tensor::new(vec![n, c], data)?;
        Ok(self.push(value, Op::GlobalAvgPool(x), &[x]))
    }

    /// Depth-to-space with factor 2: `[n, 4c, h, w] → [n, c, 2h, 2w]`.
    pub fn pixel_shuffle(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, c4, h, w) = self.value(x).dims4()?;
        if c4 % 4 != 0 {
            return shape_err(format!("pixel_shuffle: {c4} channels not divisible by 4"));
        }
        let c = c4 / 4;
        let src = self.value(x).data();
        let mut out = vec![0.0f32; src.len()];
        for (i, o) in shuffle_indices(n, c, h, w).enumerate() {
            out[o] = src[i];
        }
        let value = Tensor::new(vec![n, c, 2 * h, 2 * w], out)?;
        Ok(self.push(value, Op::PixelShuffle(x), &[x]))
    }

    /// 2×2 max pooling with stride 2.
    pub fn max_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return shape_err(format!("max_pool2: odd spatial size {h}x{w}"));
        }
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            let base = p * h * w;
            for y in 0..oh {
                for xx in 0..ow {
                    let i0 = base + 2 * y * w + 2 * xx;
                    let mut best = i0;
                    for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                        if src[cand] > src[best] {
                            best = cand;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        Ok(self.push(value, Op::MaxPool2 { x, argmax }, &[x]))
    }

    /// Concatenates rank-4 tensors along the channel axis.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(first) = parts.first() else {
            return shape_err("concat of nothing");
        };
        let (n, _, h, w) = self.value(*first).dims4()?;
        let mut channels = Vec::with_capacity(parts.len());
        for p in parts {
            let (pn, pc, ph, pw) = self.value(*p).dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return shape_err("concat: mismatched batch or spatial size");
            }
            channels.push(pc);
        }
        let total: usize = channels.iter().sum();
        let hw = h * w;
        let mut out = Vec::with_capacity(n * total * hw);
        for i in 0..n {
            for (p, &pc) in parts.iter().zip(&channels) {
                out.extend_from_slice(&self.value(*p).data()[i * pc * hw..(i + 1) * pc * hw]);
            }
        }
        let value = Tensor::new(vec![n, total, h, w], out)?;
        Ok(self.push(value, Op::Concat(parts.to_vec()), parts))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Inverted dropout: kept activations are scaled by `1/(1-p)`.
    pub fn dropout(&mut self, x: NodeId, p: f32, rng: &mut impl Rng) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
        }
        let keep = 1.0 / (1.0 - p);
        let v = self.value(x);
        let mask: Vec<f32> = (0..v.numel())
            .map(|_| if rng.random::<f32>() < p { 0.0 } else { keep })
            .collect();
        let data = v.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Dropout { x, mask }, &[x]))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside that range.
    pub fn clamp(&mut self, x: NodeId, lo: f32, hi: f32) -> NodeId {
        let v = self.value(x);
        let value = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|a| a.clamp(lo, hi)).collect(),
        )
        .expect("same shape");
        self.push(value, Op::Clamp { x, lo, hi }, &[x])
    }

    /// Replicates a single-channel batch `[n, 1, h, w]` to `[n, times, h, w]`.
    pub fn repeat_channels(&mut self, x: NodeId, times: usize) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if c != 1 {
            return shape_err(format!("repeat_channels expects one channel, got {c}"));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * times * h * w);
        for plane in src.chunks(h * w) {
            for _ in 0..times {
                out.extend_from_slice(plane);
            }
        }
        let value = Tensor::new(vec![n, times, h, w], out)?;
        Ok(self.push(value, Op::RepeatChannels(x), &[x]))
    }

    /// Propagates the given output gradients back to every leaf that requires
    /// a gradient.
    pub fn backward(&self, seeds: Vec<(NodeId, Tensor)>) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (id, g) in seeds {
            if g.shape() != self.value(id).shape() {
                return shape_err(format!(
                    "seed gradient {:?} for node of shape {:?}",
                    g.shape(),
                    self.value(id).shape()
                ));
            }
            accumulate(&mut grads[id.0], g);
        }
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (n, c, h, wd) = xv.dims4()?;
                let (co, _, k, _) = wv.dims4()?;
                let hw = h * wd;
                let kk = c * k * k;
                let mut col = if k > 1 {
                    vec![0.0f32; kk * hw]
                } else {
                    Vec::new()
                };
                let mut dcol = vec![0.0f32; kk * hw];
                let mut dw = self.wants(*w).then(|| vec![0.0f32; co * kk]);
                let mut dx = self.wants(*x).then(|| vec![0.0f32; n * c * hw]);
                for i in 0..n {
                    let gi = &gd[i * co * hw..(i + 1) * co * hw];
                    if let Some(dw) = dw.as_mut() {
                        let xi = &xv.data()[i * c * hw..(i + 1) * c * hw];
                        let src: &[f32] = if k > 1 {
                            im2col(xi, c, h, wd, k, &mut col);
                            &col
                        } else {
                            xi
                        };
                        // dW += dY · colᵀ
                        gemm(co, hw, kk, gi, (hw, 1), src, (1, hw), 1.0, dw, kk);
                    }
                    if let Some(dx) = dx.as_mut() {
                        // dcol = Wᵀ · dY
                        gemm(
                            kk,
                            co,
                            hw,
                            wv.data(),
                            (1, kk),
                            gi,
                            (hw, 1),
                            0.0,
                            &mut dcol,
                            hw,
                        );
                        let dxi = &mut dx[i * c * hw..(i + 1) * c * hw];
                        if k > 1 {
                            col2im(&dcol, c, h, wd, k, dxi);
                        } else {
                            dxi.iter_mut().zip(&dcol).for_each(|(d, s)| *d += s);
                        }
                    }
                }
                if let Some(dw) = dw {
                    accumulate(&mut grads[w.0], Tensor::new(wv.shape().to_vec(), dw)?);
                }
                if let Some(dx) = dx {
                    accumulate(&mut grads[x.0], Tensor::new(xv.shape().to_vec(), dx)?);
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    let mut db = vec![0.0f32; co];
                    for (j, plane) in gd.chunks(hw).enumerate() {
                        db[j % co] += plane.iter().sum::<f32>();
                    }
                    accumulate(&mut grads[b.0], Tensor::new(vec![co], db)?);
                }
            }
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (n, f) = xv.dims2()?;
                let (o, _) = wv.dims2()?;
                if self.wants(*x) {
                    let mut dx = vec![0.0f32; n * f];
                    gemm(n, o, f, gd, (o, 1), wv.data(), (f, 1), 0.0, &mut dx, f);
                    accumulate(&mut grads[x.0], Tensor::new(vec![n, f], dx)?);
                }
                if self.wants(*w) {
                    let mut dw = vec![0.0f32; o * f];
                    gemm(o, n, f, gd, (1, o), xv.data(), (f, 1), 0.0, &mut dw, f);
                    accumulate(&mut grads[w.0], Tensor::new(vec![o, f], dw)?);
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    let mut db = vec![0.0f32; o];
                    for row in gd.chunks(o) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    accumulate(&mut grads[b.0], Tensor::new(vec![o], db)?);
                }
            }
            Op::Add(a, b) => {
                for id in [a, b] {
                    if self.wants(*id) {
                        accumulate(&mut grads[id.0], g.clone());
                    }
                }
            }
            Op::Scale(x, f) => {
                let d = gd.iter().map(|v| v * f).collect();
                accumulate(&mut grads[x.0], Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Relu(x) => {
                let d = gd
                    .iter()
                    .zip(node.value.data())
                    .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(&mut grads[x.0], Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Sigmoid(x) => {
                let d = gd
                    .iter()
                    .zip(node.value.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                accumulate(&mut grads[x.0], Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::ChannelScale { x, s } => {
                let xv = self.value(*x);
                let sv = self.value(*s);
                let (_, _, h, w) = xv.dims4()?;
                let hw = h * w;
                if self.wants(*x) {
                    let mut d = gd.to_vec();
                    for (plane, s) in d.chunks_mut(hw).zip(sv.data()) {
                        plane.iter_mut().for_each(|v| *v *= s);
                    }
                    accumulate(&mut grads[x.0], Tensor::new(xv.shape().to_vec(), d)?);
                }
                if self.wants(*s) {
                    let d = gd
                        .chunks(hw)
                        .zip(xv.data().chunks(hw))
                        .map(|(gp, xp)| gp.iter().zip(xp).map(|(a, b)| a * b).sum())
                        .collect();
                    accumulate(&mut grads[s.0], Tensor::new(sv.shape().to_vec(), d)?);
                }
            }
            Op::GlobalAvgPool(x) => {
                let xv = self.value(*x);
                let (_, _, h, w) = xv.dims4()?;
                let hw = h * w;
                let mut d = Vec::with_capacity(xv.numel());
                for gv in gd {
                    d.extend(std::iter::repeat_n(gv / hw as f32, hw));
                }
                accumulate(&mut grads[x.0], Tensor::new(xv.shape().to_vec(), d)?);
            }
            Op::PixelShuffle(x) => {
                let xv = self.value(*x);
                let (n, c4, h, w) = xv.dims4()?;
                let mut d = vec![0.0f32; xv.numel()];
                for (i, o) in shuffle_indices(n, c4 / 4, h, w).enumerate() {
                    d[i] = gd[o];
                }
                accumulate(&mut grads[x.0], Tensor::new(xv.shape().to_vec(), d)?);
            }
            Op::MaxPool2 { x, argmax } => {
                let xv = self.value(*x);
                let mut d = vec![0.0f32; xv.numel()];
                for (gv, &src) in gd.iter().zip(argmax) {
                    d[src as usize] += gv;
                }
                accumulate(&mut grads[x.0], Tensor::new(xv.shape().to_vec(), d)?);
            }
            Op::Concat(parts) => {
                let (n, total, h, w) = g.dims4()?;
                let hw = h * w;
                let mut offset = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let pc = pv.shape()[1];
                    if self.wants(*p) {
                        let mut d = Vec::with_capacity(pv.numel());
                        for i in 0..n {
                            let start = (i * total + offset) * hw;
                            d.extend_from_slice(&gd[start..start + pc * hw]);
                        }
                        accumulate(&mut grads[p.0], Tensor::new(pv.shape().to_vec(), d)?);
                    }
                    offset += pc;
                }
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                accumulate(&mut grads[x.0], g.clone().reshaped(&shape)?);
            }
            Op::Dropout { x, mask } => {
                let d = gd.iter().zip(mask).map(|(a, m)| a * m).collect();
                accumulate(&mut grads[x.0], Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Clamp { x, lo, hi } => {
                let d = gd
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(g, v)| if *v >= *lo && *v <= *hi { *g } else { 0.0 })
                    .collect();
                accumulate(&mut grads[x.0], Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::RepeatChannels(x) => {
                let xv = self.value(*x);
                let (_, times, h, w) = g.dims4()?;
                let hw = h * w;
                let d = gd
                    .chunks(times * hw)
                    .flat_map(|block| {
                        (0..hw).map(move |p| (0..times).map(|t| block[t * hw + p]).sum::<f32>())
                    })
                    .collect();
                accumulate(&mut grads[x.0], Tensor::new(xv.shape().to_vec(), d)?);
            }
        }
        Ok(())
    }
}

/// Yields, in input order, the output offset of every element of a
/// `[n, 4c, h, w]` tensor under depth-to-space.
fn shuffle_indices(n: usize, c: usize, h: usize, w: usize) -> impl Iterator<Item = usize> {
    let (oh, ow) = (2 * h, 2 * w);
    (0..n).flat_map(move |b| {
        (0..4 * c).flat_map(move |ch| {
            let (oc, i, j) = (ch / 4, (ch % 4) / 2, ch % 2);
            (0..h).flat_map(move |y| {
                (0..w).map(move |x| ((b * c + oc) * oh + 2 * y + i) * ow + 2 * x + j)
            })
        })
    })
}
