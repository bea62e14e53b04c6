//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation in evaluation order. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and
//! accumulates `∂loss/∂leaf` into the gradient slot of every leaf that
//! requires a gradient. Repeated calls accumulate; nothing is zeroed
//! implicitly.
//!
//! Convolutions use the cross-correlation convention (no kernel flip).
//! Broadcasting exists only for the two bias patterns (`[N,k] + [k]` and
//! per-channel affine on `[N,C,H,W]`); every other shape mismatch is an error.

mod container;
pub mod kernels;
mod tensor;

pub use container::{read_container, read_container_bytes, write_container, write_container_bytes, Container, CONTAINER_MAGIC, CONTAINER_VERSION};
pub use tensor::Tensor;

use rayon::prelude::*;

use crate::error::{structural, Error, Result};
use kernels::{col2im, gemm_nn, gemm_nt, gemm_tn, im2col, ConvGeometry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// A user-defined differentiable operation with an externally computed
/// vector–Jacobian product.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &str;

    /// Given the cotangent of the output, returns one gradient per input
    /// (`None` for inputs that need none).
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &[f64]) -> Result<Vec<Option<Vec<f64>>>>;
}

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    AddBias(NodeId, NodeId),
    ChannelAffine { x: NodeId, scale: NodeId, shift: NodeId },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Conv2d { input: NodeId, kernel: NodeId, stride: usize, padding: usize },
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    GlobalAvgPool(NodeId),
    Concat(NodeId, NodeId),
    Sum(NodeId),
    Reshape(NodeId),
    BceWithLogits { logits: NodeId, labels: Vec<f64> },
    Custom { inputs: Vec<NodeId>, op: Box<dyn CustomOp> },
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// The tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src.to_vec()),
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

/// `ln(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
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

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> NodeId {
        self.nodes.push(Node { value, op, tracked });
        NodeId(self.nodes.len() - 1)
    }

    fn tracked(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].tracked)
    }

    /// Records a leaf. It is differentiated iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> NodeId {
        let tracked = tensor.requires_grad();
        self.push(tensor, Op::Leaf, tracked)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> NodeId {
        let mut t = tensor;
        t.set_requires_grad(false);
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of a leaf, if any.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].value.grad()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(structural!("matmul of {sa:?} by {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), tracked))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).shape();
        if s.len() != 2 {
            return Err(structural!("transpose of rank-{} tensor", s.len()));
        }
        let (r, c) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let value = Tensor::new(vec![c, r], out)?;
        let tracked = self.tracked(&[a]);
        Ok(self.push(value, Op::Transpose(a), tracked))
    }

    /// `x[N,k] + b[k]` broadcast over rows.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (sx, sb) = (self.value(x).shape(), self.value(b).shape());
        if sx.len() != 2 || sb != [sx[1]] {
            return Err(structural!("bias {sb:?} does not fit {sx:?}"));
        }
        let k = sx[1];
        let bias = self.value(b).data();
        let out: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bias[i % k])
            .collect();
        let value = Tensor::new(sx.to_vec(), out)?;
        let tracked = self.tracked(&[x, b]);
        Ok(self.push(value, Op::AddBias(x, b), tracked))
    }

    /// `x·scale[c] + shift[c]` per channel of an `[N,C,H,W]` tensor.
    pub fn channel_affine(&mut self, x: NodeId, scale: NodeId, shift: NodeId) -> Result<NodeId> {
        let sx = self.value(x).shape();
        if sx.len() != 4 || self.value(scale).shape() != [sx[1]] || self.value(shift).shape() != [sx[1]] {
            return Err(structural!(
                "channel affine {:?}/{:?} does not fit {sx:?}",
                self.value(scale).shape(),
                self.value(shift).shape()
            ));
        }
        let (c, hw) = (sx[1], sx[2] * sx[3]);
        let (sc, sh) = (self.value(scale).data(), self.value(shift).data());
        let out: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let ch = (i / hw) % c;
                v * sc[ch] + sh[ch]
            })
            .collect();
        let value = Tensor::new(sx.to_vec(), out)?;
        let tracked = self.tracked(&[x, scale, shift]);
        Ok(self.push(value, Op::ChannelAffine { x, scale, shift }, tracked))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(structural!(
                "{what} of {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), out)?;
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), tracked))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), out)?;
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), tracked))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        let out = self.value(a).data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), out)?;
        let tracked = self.tracked(&[a]);
        Ok(self.push(value, Op::Scale(a, factor), tracked))
    }

    fn conv_geometry(&self, input: NodeId, kernel: NodeId, stride: usize, padding: usize) -> Result<(usize, usize, ConvGeometry)> {
        let (si, sk) = (self.value(input).shape(), self.value(kernel).shape());
        if si.len() != 4 || sk.len() != 4 || si[1] != sk[1] {
            return Err(structural!("conv2d of input {si:?} with kernel {sk:?}"));
        }
        if stride == 0 {
            return Err(structural!("conv2d stride must be positive"));
        }
        let (h, w, kh, kw) = (si[2], si[3], sk[2], sk[3]);
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(structural!(
                "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            ));
        }
        let geom = ConvGeometry {
            channels: si[1],
            height: h,
            width: w,
            kh,
            kw,
            stride,
            padding,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        };
        Ok((si[0], sk[0], geom))
    }

    /// Cross-correlation of `[N,C,H,W]` with `[F,C,kh,kw]`, no bias.
    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, stride: usize, padding: usize) -> Result<NodeId> {
        let (batch, filters, g) = self.conv_geometry(input, kernel, stride, padding)?;
        let x = self.value(input).data();
        let k = self.value(kernel).data();
        let in_len = g.channels * g.height * g.width;
        let out_len = filters * g.col_cols();
        let mut out = vec![0.0; batch * out_len];
        out.par_chunks_mut(out_len.max(1)).enumerate().for_each(|(n, o)| {
            let mut cols = vec![0.0; g.col_rows() * g.col_cols()];
            im2col(&g, &x[n * in_len..(n + 1) * in_len], &mut cols);
            gemm_nn(filters, g.col_rows(), g.col_cols(), k, &cols, o);
        });
        let value = Tensor::new(vec![batch, filters, g.out_h, g.out_w], out)?;
        let tracked = self.tracked(&[input, kernel]);
        Ok(self.push(value, Op::Conv2d { input, kernel, stride, padding }, tracked))
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> Result<NodeId> {
        let out = self.value(a).data().iter().map(|v| f(*v)).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), out)?;
        let tracked = self.tracked(&[a]);
        Ok(self.push(value, op, tracked))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, |v| v.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// Spatial mean of `[N,C,H,W]` into `[N,C]`.
    pub fn global_avg_pool(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).shape();
        if s.len() != 4 || s[2] * s[3] == 0 {
            return Err(structural!("global average pool of {s:?}"));
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let out = self
            .value(a)
            .data()
            .chunks(hw)
            .map(|plane| plane.iter().sum::<f64>() / hw as f64)
            .collect();
        let value = Tensor::new(vec![n, c], out)?;
        let tracked = self.tracked(&[a]);
        Ok(self.push(value, Op::GlobalAvgPool(a), tracked))
    }

    /// Feature-axis concatenation of `[N,da]` and `[N,db]`.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(structural!("concat of {sa:?} and {sb:?}"));
        }
        let (n, da, db) = (sa[0], sa[1], sb[1]);
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * (da + db));
        for i in 0..n {
            out.extend_from_slice(&xa[i * da..(i + 1) * da]);
            out.extend_from_slice(&xb[i * db..(i + 1) * db]);
        }
        let value = Tensor::new(vec![n, da + db], out)?;
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(value, Op::Concat(a, b), tracked))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let total = self.value(a).data().iter().sum();
        let tracked = self.tracked(&[a]);
        Ok(self.push(Tensor::scalar(total), Op::Sum(a), tracked))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let value = self.value(a).detached().reshaped(shape)?;
        let tracked = self.tracked(&[a]);
        Ok(self.push(value, Op::Reshape(a), tracked))
    }

    /// Mean binary cross-entropy on logits. `labels` must be 0 or 1.
    pub fn bce_with_logits(&mut self, logits: NodeId, labels: &[f64]) -> Result<NodeId> {
        let x = self.value(logits);
        if x.shape().len() != 1 || x.len() != labels.len() || labels.is_empty() {
            return Err(structural!("bce on logits {:?} with {} labels", x.shape(), labels.len()));
        }
        if let Some(bad) = labels.iter().find(|y| **y != 0.0 && **y != 1.0) {
            return Err(Error::Data(format!("label {bad} is not binary")));
        }
        let total: f64 = x
            .data()
            .iter()
            .zip(labels)
            .map(|(z, y)| softplus(-(2.0 * y - 1.0) * z))
            .sum();
        let value = Tensor::scalar(total / labels.len() as f64);
        let tracked = self.tracked(&[logits]);
        Ok(self.push(
            value,
            Op::BceWithLogits {
                logits,
                labels: labels.to_vec(),
            },
            tracked,
        ))
    }

    /// Records an externally computed op whose output was produced by the caller.
    pub fn custom(&mut self, inputs: Vec<NodeId>, output: Tensor, op: Box<dyn CustomOp>) -> NodeId {
        let tracked = self.tracked(&inputs);
        let mut output = output;
        output.set_requires_grad(false);
        self.push(output, Op::Custom { inputs, op }, tracked)
    }

    /// Reverse sweep from a scalar `loss`, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if let Op::Leaf = self.nodes[idx].op {
                self.nodes[idx].value.accumulate_grad(&g);
                continue;
            }
            for (input, grad) in self.local_backward(idx, &g)? {
                if self.nodes[input.0].tracked {
                    add_into(&mut grads[input.0], &grad);
                }
            }
        }
        Ok(())
    }

    fn local_backward(&self, idx: usize, g: &[f64]) -> Result<Vec<(NodeId, Vec<f64>)>> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let v = |id: NodeId| &self.nodes[id.0].value;
        let res = match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (m, k) = (v(*a).shape()[0], v(*a).shape()[1]);
                let n = v(*b).shape()[1];
                let mut da = vec![0.0; m * k];
                gemm_nt(m, n, k, g, v(*b).data(), &mut da);
                let mut db = vec![0.0; k * n];
                gemm_tn(k, m, n, v(*a).data(), g, &mut db);
                vec![(*a, da), (*b, db)]
            }
            Op::Transpose(a) => {
                let (r, c) = (v(*a).shape()[0], v(*a).shape()[1]);
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] = g[j * r + i];
                    }
                }
                vec![(*a, da)]
            }
            Op::AddBias(x, b) => {
                let k = v(*b).len();
                let mut db = vec![0.0; k];
                for (i, gv) in g.iter().enumerate() {
                    db[i % k] += gv;
                }
                vec![(*x, g.to_vec()), (*b, db)]
            }
            Op::ChannelAffine { x, scale, shift } => {
                let s = v(*x).shape();
                let (c, hw) = (s[1], s[2] * s[3]);
                let sc = v(*scale).data();
                let xd = v(*x).data();
                let mut dx = vec![0.0; g.len()];
                let mut dscale = vec![0.0; c];
                let mut dshift = vec![0.0; c];
                for (i, gv) in g.iter().enumerate() {
                    let ch = (i / hw) % c;
                    dx[i] = gv * sc[ch];
                    dscale[ch] += gv * xd[i];
                    dshift[ch] += gv;
                }
                vec![(*x, dx), (*scale, dscale), (*shift, dshift)]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Mul(a, b) => {
                let da = g.iter().zip(v(*b).data()).map(|(x, y)| x * y).collect();
                let db = g.iter().zip(v(*a).data()).map(|(x, y)| x * y).collect();
                vec![(*a, da), (*b, db)]
            }
            Op::Scale(a, f) => vec![(*a, g.iter().map(|x| x * f).collect())],
            Op::Conv2d { input, kernel, stride, padding } => {
                let (batch, filters, geom) = self.conv_geometry(*input, *kernel, *stride, *padding)?;
                let x = v(*input).data();
                let k = v(*kernel).data();
                let in_len = geom.channels * geom.height * geom.width;
                let out_len = filters * geom.col_cols();
                let rows = geom.col_rows();
                let want_dx = self.nodes[input.0].tracked;
                let want_dk = self.nodes[kernel.0].tracked;
                let mut dx = vec![0.0; if want_dx { batch * in_len } else { 0 }];
                // per-sample kernel partials, reduced in sample order below
                let partials: Vec<Vec<f64>> = if want_dx {
                    dx.par_chunks_mut(in_len.max(1))
                        .enumerate()
                        .map(|(n, dxn)| {
                            conv_sample_backward(&geom, filters, k, &x[n * in_len..(n + 1) * in_len], &g[n * out_len..(n + 1) * out_len], Some(dxn), want_dk)
                        })
                        .collect()
                } else {
                    (0..batch)
                        .into_par_iter()
                        .map(|n| {
                            conv_sample_backward(&geom, filters, k, &x[n * in_len..(n + 1) * in_len], &g[n * out_len..(n + 1) * out_len], None, want_dk)
                        })
                        .collect()
                };
                let mut res = Vec::new();
                if want_dk {
                    let mut dk = vec![0.0; filters * rows];
                    for p in &partials {
                        dk.iter_mut().zip(p).for_each(|(a, b)| *a += b);
                    }
                    res.push((*kernel, dk));
                }
                if want_dx {
                    res.push((*input, dx));
                }
                res
            }
            Op::Relu(a) => {
                let da = g.iter().zip(v(*a).data()).map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 }).collect();
                vec![(*a, da)]
            }
            Op::Tanh(a) => {
                let da = g.iter().zip(out.data()).map(|(gv, t)| gv * (1.0 - t * t)).collect();
                vec![(*a, da)]
            }
            Op::Sigmoid(a) => {
                let da = g.iter().zip(out.data()).map(|(gv, s)| gv * s * (1.0 - s)).collect();
                vec![(*a, da)]
            }
            Op::GlobalAvgPool(a) => {
                let s = v(*a).shape();
                let hw = s[2] * s[3];
                let inv = 1.0 / hw as f64;
                let da = g.iter().flat_map(|gv| std::iter::repeat(gv * inv).take(hw)).collect();
                vec![(*a, da)]
            }
            Op::Concat(a, b) => {
                let (da_w, db_w) = (v(*a).shape()[1], v(*b).shape()[1]);
                let w = da_w + db_w;
                let mut da = Vec::with_capacity(v(*a).len());
                let mut db = Vec::with_capacity(v(*b).len());
                for row in g.chunks(w) {
                    da.extend_from_slice(&row[..da_w]);
                    db.extend_from_slice(&row[da_w..]);
                }
                vec![(*a, da), (*b, db)]
            }
            Op::Sum(a) => vec![(*a, vec![g[0]; v(*a).len()])],
            Op::Reshape(a) => vec![(*a, g.to_vec())],
            Op::BceWithLogits { logits, labels } => {
                let n = labels.len() as f64;
                let da = v(*logits)
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(z, y)| g[0] * (sigmoid(*z) - y) / n)
                    .collect();
                vec![(*logits, da)]
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor> = inputs.iter().map(|id| v(*id)).collect();
                let grads = op.backward(&ins, out, g)?;
                if grads.len() != inputs.len() {
                    return Err(structural!(
                        "custom op `{}` returned {} gradients for {} inputs",
                        op.name(),
                        grads.len(),
                        inputs.len()
                    ));
                }
                inputs
                    .iter()
                    .zip(grads)
                    .filter_map(|(id, gr)| gr.map(|gr| (*id, gr)))
                    .collect()
            }
        };
        Ok(res)
    }
}

fn conv_sample_backward(
    geom: &ConvGeometry,
    filters: usize,
    kernel: &[f64],
    x: &[f64],
    gy: &[f64],
    dx: Option<&mut [f64]>,
    want_dk: bool,
) -> Vec<f64> {
    let (rows, ncols) = (geom.col_rows(), geom.col_cols());
    let mut dk = Vec::new();
    if want_dk {
        let mut cols = vec![0.0; rows * ncols];
        im2col(geom, x, &mut cols);
        dk = vec![0.0; filters * rows];
        gemm_nt(filters, ncols, rows, gy, &cols, &mut dk);
    }
    if let Some(dx) = dx {
        let mut dcols = vec![0.0; rows * ncols];
        gemm_tn(rows, filters, ncols, kernel, gy, &mut dcols);
        col2im(geom, &dcols, dx);
    }
    dk
}
