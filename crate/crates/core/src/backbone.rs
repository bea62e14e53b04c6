//! The hybrid model: residual CNN backbone, classical→quantum projection,
//! angle squashing, circuit layer and fusion head.
//!
//! ```text
//! x ─ stem(conv3×3 → affine → relu) ─ stages of residual blocks ─ relu ─ GAP ─ f [N,d]
//! f ─ z = f·Wᵀ + b ─ a = π·tanh(z) ─ circuit ─ q [N,n]
//! [f, q] ─ head ─ logit [N]
//! ```
//!
//! A residual block is `shortcut(x) + conv2(relu(affine(conv1(x))))`, where the
//! shortcut is the identity or a strided 1×1 convolution when the shape
//! changes. With both convolutions zeroed the block is exactly its shortcut.
//! There is no batch normalisation; inputs are standardised per image and
//! channel before they reach the stem.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{read_container, read_container_bytes, write_container, write_container_bytes, CustomOp, Graph, NodeId, Tensor};
use crate::error::{structural, Error, Result};
use crate::params::{ParamGroup, ParamStore};
use crate::pqc::{self, PqcConfig, PqcParams, ShiftRule};

/// Largest `f64` strictly below π. Scaling `tanh` by it keeps every encoding
/// angle inside the open interval (−π, π) even where `tanh` rounds to ±1.
pub const ANGLE_SCALE: f64 = 3.141_592_653_589_792_7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    /// Square input side in pixels.
    pub input_size: usize,
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stem_stride: usize,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    /// Must equal the last stage width.
    pub feature_dim: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            in_channels: 1,
            stem_channels: 16,
            stem_stride: 2,
            stage_widths: vec![16, 32, 64],
            blocks_per_stage: vec![1, 1, 1],
            feature_dim: 64,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_size == 0 || self.in_channels == 0 || self.stem_channels == 0 || self.stem_stride == 0 {
            return bad("model.backbone sizes must be positive".into());
        }
        if self.stage_widths.is_empty() || self.stage_widths.len() != self.blocks_per_stage.len() {
            return bad(format!(
                "model.backbone.stage_widths ({}) and blocks_per_stage ({}) must be non-empty and equally long",
                self.stage_widths.len(),
                self.blocks_per_stage.len()
            ));
        }
        if self.stage_widths.iter().chain(&self.blocks_per_stage).any(|v| *v == 0) {
            return bad("model.backbone widths and block counts must be ≥ 1".into());
        }
        if Some(&self.feature_dim) != self.stage_widths.last() {
            return bad(format!(
                "model.backbone.feature_dim ({}) must equal the last stage width ({})",
                self.feature_dim,
                self.stage_widths.last().unwrap()
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Full hybrid model.
    #[default]
    None,
    /// Circuit path disabled: `q` is replaced by zeros and the projection and
    /// circuit parameters are frozen.
    ClassicalOnly,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub pqc: PqcConfig,
    pub ablation: Ablation,
}

impl ModelConfig {
    /// 1-channel 8×8 input, widths [4, 8], d = 8, two qubits, one layer.
    /// Small enough for exhaustive finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            backbone: BackboneConfig {
                input_size: 8,
                in_channels: 1,
                stem_channels: 4,
                stem_stride: 1,
                stage_widths: vec![4, 8],
                blocks_per_stage: vec![1, 1],
                feature_dim: 8,
            },
            pqc: PqcConfig {
                n_qubits: 2,
                depth: 1,
                ..PqcConfig::default()
            },
            ablation: Ablation::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.pqc.validate()
    }
}

#[derive(Clone, Copy, Debug)]
struct BlockLayout {
    stage: usize,
    block: usize,
    in_ch: usize,
    out_ch: usize,
    stride: usize,
}

fn block_layout(cfg: &BackboneConfig) -> Vec<BlockLayout> {
    let mut out = Vec::new();
    let mut in_ch = cfg.stem_channels;
    for (stage, (&width, &blocks)) in cfg.stage_widths.iter().zip(&cfg.blocks_per_stage).enumerate() {
        for block in 0..blocks {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            out.push(BlockLayout {
                stage,
                block,
                in_ch,
                out_ch: width,
                stride,
            });
            in_ch = width;
        }
    }
    out
}

fn block_name(b: &BlockLayout, part: &str) -> String {
    format!("stage{}.block{}.{part}", b.stage, b.block)
}

fn needs_projection_shortcut(b: &BlockLayout) -> bool {
    b.in_ch != b.out_ch || b.stride != 1
}

pub const STEM_CONV: &str = "stem.conv";
pub const STEM_SCALE: &str = "stem.scale";
pub const STEM_SHIFT: &str = "stem.shift";
pub const PROJ_WEIGHT: &str = "projection.weight";
pub const PROJ_BIAS: &str = "projection.bias";
pub const THETA: &str = "pqc.theta";
pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

/// The circuit as a tape operation: inputs `[angles [N,n], theta]`, output `q [N,n]`.
struct CircuitOp {
    cfg: PqcConfig,
    rule: ShiftRule,
}

impl CustomOp for CircuitOp {
    fn name(&self) -> &str {
        "pqc"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &[f64]) -> Result<Vec<Option<Vec<f64>>>> {
        let (angles, theta) = (inputs[0], inputs[1]);
        let n = self.cfg.n_qubits;
        let params = PqcParams {
            theta: theta.data().to_vec(),
        };
        let per_sample: Vec<(Vec<f64>, Vec<f64>)> = angles
            .data()
            .par_chunks(n)
            .zip(grad_out.par_chunks(n))
            .map(|(z, c)| {
                let gi = pqc::grad_inputs_with_rule(z, &params, &self.cfg, c, self.rule)?;
                let gp = if theta.requires_grad() {
                    pqc::grad_params_with_rule(z, &params, &self.cfg, c, self.rule)?
                } else {
                    Vec::new()
                };
                Ok((gi, gp))
            })
            .collect::<Result<_>>()?;
        let mut d_angles = Vec::with_capacity(angles.len());
        let mut d_theta = vec![0.0; theta.len()];
        for (gi, gp) in &per_sample {
            d_angles.extend_from_slice(gi);
            d_theta.iter_mut().zip(gp).for_each(|(a, b)| *a += b);
        }
        Ok(vec![Some(d_angles), theta.requires_grad().then_some(d_theta)])
    }
}

#[derive(Clone, Debug, Default)]
pub struct ForwardOptions {
    /// Record gradients for non-frozen parameters.
    pub track_grads: bool,
    /// Groups treated as constants for this pass (in addition to frozen params).
    pub freeze: Vec<ParamGroup>,
    /// Replaces `q` with zeros regardless of the configured ablation.
    pub classical_only: bool,
}

impl ForwardOptions {
    pub fn training() -> Self {
        Self {
            track_grads: true,
            ..Self::default()
        }
    }
}

/// One recorded forward pass.
pub struct Pass {
    pub graph: Graph,
    bindings: Vec<(usize, NodeId)>,
    pub features: NodeId,
    pub projected: NodeId,
    pub angles: NodeId,
    pub quantum: NodeId,
    pub logits: NodeId,
    loss: Option<NodeId>,
}

impl Pass {
    pub fn logits(&self) -> &[f64] {
        self.graph.value(self.logits).data()
    }

    pub fn angles(&self) -> &Tensor {
        self.graph.value(self.angles)
    }

    pub fn quantum_features(&self) -> &Tensor {
        self.graph.value(self.quantum)
    }

    pub fn features(&self) -> &Tensor {
        self.graph.value(self.features)
    }

    /// Mean BCE against `labels`; recorded as the root for [`HybridModel::backward`].
    pub fn bce_loss(&mut self, labels: &[f64]) -> Result<f64> {
        let loss = self.graph.bce_with_logits(self.logits, labels)?;
        self.loss = Some(loss);
        Ok(self.graph.value(loss).item())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HybridModel {
    config: ModelConfig,
    params: ParamStore,
    shift_rule: ShiftRule,
}

impl HybridModel {
    /// Random initialisation: He-normal convolutions, unit affine scales,
    /// uniform circuit angles in (−π/2, π/2).
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let names: Vec<String> = model.params.iter().map(|p| p.name.clone()).collect();
        for name in names {
            let p = model.params.get_mut(&name).unwrap();
            let shape = p.tensor.shape().to_vec();
            let data = p.tensor.data_mut();
            if name.ends_with("conv") || name.ends_with("conv1") || name.ends_with("conv2") || name.ends_with("shortcut") {
                let fan_in: usize = shape[1..].iter().product();
                let mut std = (2.0 / fan_in as f64).sqrt();
                if name.ends_with("conv2") {
                    // keeps the residual sum near the shortcut's scale without normalisation
                    std *= 0.5;
                }
                let normal = Normal::new(0.0, std).unwrap();
                data.iter_mut().for_each(|v| *v = normal.sample(rng));
            } else if name.ends_with("scale") || name.ends_with("scale1") {
                data.fill(1.0);
            } else if name == PROJ_WEIGHT || name == HEAD_WEIGHT {
                let normal = Normal::new(0.0, (1.0 / shape[1] as f64).sqrt()).unwrap();
                data.iter_mut().for_each(|v| *v = normal.sample(rng));
            } else if name == THETA {
                data.iter_mut().for_each(|v| *v = rng.gen_range(-PI / 2.0..PI / 2.0));
            }
        }
        model.apply_ablation();
        Ok(model)
    }

    /// All parameters zero except affine scales (1).
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let b = &config.backbone;
        let mut params = ParamStore::new();
        let bb = ParamGroup::Backbone;
        params.push(STEM_CONV, bb, Tensor::zeros(&[b.stem_channels, b.in_channels, 3, 3]));
        params.push(STEM_SCALE, bb, Tensor::full(&[b.stem_channels], 1.0));
        params.push(STEM_SHIFT, bb, Tensor::zeros(&[b.stem_channels]));
        for blk in block_layout(b) {
            params.push(block_name(&blk, "conv1"), bb, Tensor::zeros(&[blk.out_ch, blk.in_ch, 3, 3]));
            params.push(block_name(&blk, "scale1"), bb, Tensor::full(&[blk.out_ch], 1.0));
            params.push(block_name(&blk, "shift1"), bb, Tensor::zeros(&[blk.out_ch]));
            params.push(block_name(&blk, "conv2"), bb, Tensor::zeros(&[blk.out_ch, blk.out_ch, 3, 3]));
            if needs_projection_shortcut(&blk) {
                params.push(block_name(&blk, "shortcut"), bb, Tensor::zeros(&[blk.out_ch, blk.in_ch, 1, 1]));
            }
        }
        let (n, d, l) = (config.pqc.n_qubits, b.feature_dim, config.pqc.depth);
        let qh = ParamGroup::QuantumAndHead;
        params.push(PROJ_WEIGHT, qh, Tensor::zeros(&[n, d]));
        params.push(PROJ_BIAS, qh, Tensor::zeros(&[n]));
        params.push(THETA, qh, Tensor::zeros(&[l, n, 3]));
        params.push(HEAD_WEIGHT, qh, Tensor::zeros(&[1, d + n]));
        params.push(HEAD_BIAS, qh, Tensor::zeros(&[1]));
        let mut model = Self {
            config,
            params,
            shift_rule: ShiftRule::default(),
        };
        model.apply_ablation();
        Ok(model)
    }

    fn apply_ablation(&mut self) {
        if self.config.ablation == Ablation::ClassicalOnly {
            let d = self.config.backbone.feature_dim;
            let head = self.params.get_mut(HEAD_WEIGHT).unwrap();
            head.tensor.data_mut()[d..].fill(0.0);
            for name in [PROJ_WEIGHT, PROJ_BIAS, THETA] {
                self.params.get_mut(name).unwrap().frozen = true;
            }
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn pqc_params(&self) -> PqcParams {
        PqcParams {
            theta: self.params.get(THETA).unwrap().tensor.data().to_vec(),
        }
    }

    /// Replaces the shift rule used by the circuit's backward pass (fault injection).
    pub fn set_shift_rule(&mut self, rule: ShiftRule) {
        self.shift_rule = rule;
    }

    /// Zero the q-columns of the head weight (the built-in classical ablation).
    pub fn zero_quantum_head_columns(&mut self) {
        let d = self.config.backbone.feature_dim;
        self.params.get_mut(HEAD_WEIGHT).unwrap().tensor.data_mut()[d..].fill(0.0);
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let b = &self.config.backbone;
        let s = x.shape();
        if s.len() != 4 || s[1] != b.in_channels || s[2] != b.input_size || s[3] != b.input_size {
            return Err(structural!(
                "model expects [N, {}, {}, {}] input, got {s:?}",
                b.in_channels,
                b.input_size,
                b.input_size
            ));
        }
        if s[0] == 0 {
            return Err(structural!("empty batch"));
        }
        Ok(())
    }

    fn bind(&self, g: &mut Graph, bindings: &mut Vec<(usize, NodeId)>, name: &str, opts: &ForwardOptions) -> NodeId {
        let idx = self.params.index_of(name).unwrap_or_else(|| panic!("missing parameter {name}"));
        let p = self.params.at(idx);
        let trainable = opts.track_grads && !p.frozen && !opts.freeze.contains(&p.group);
        let id = if trainable {
            g.leaf(p.tensor.detached().requiring_grad())
        } else {
            g.constant(p.tensor.detached())
        };
        bindings.push((idx, id));
        id
    }

    fn backbone_nodes(&self, g: &mut Graph, bindings: &mut Vec<(usize, NodeId)>, x: NodeId, opts: &ForwardOptions) -> Result<NodeId> {
        let b = &self.config.backbone;
        let w = self.bind(g, bindings, STEM_CONV, opts);
        let s = self.bind(g, bindings, STEM_SCALE, opts);
        let t = self.bind(g, bindings, STEM_SHIFT, opts);
        let h = g.conv2d(x, w, b.stem_stride, 1)?;
        let h = g.channel_affine(h, s, t)?;
        let mut h = g.relu(h)?;
        for blk in block_layout(b) {
            let w1 = self.bind(g, bindings, &block_name(&blk, "conv1"), opts);
            let s1 = self.bind(g, bindings, &block_name(&blk, "scale1"), opts);
            let t1 = self.bind(g, bindings, &block_name(&blk, "shift1"), opts);
            let w2 = self.bind(g, bindings, &block_name(&blk, "conv2"), opts);
            let r = g.conv2d(h, w1, blk.stride, 1)?;
            let r = g.channel_affine(r, s1, t1)?;
            let r = g.relu(r)?;
            let r = g.conv2d(r, w2, 1, 1)?;
            let shortcut = if needs_projection_shortcut(&blk) {
                let ws = self.bind(g, bindings, &block_name(&blk, "shortcut"), opts);
                g.conv2d(h, ws, blk.stride, 0)?
            } else {
                h
            };
            h = g.add(shortcut, r)?;
        }
        let h = g.relu(h)?;
        g.global_avg_pool(h)
    }

    /// Records the full forward pass for a standardised `[N,C,H,W]` batch.
    pub fn forward_pass(&self, x: &Tensor, opts: &ForwardOptions) -> Result<Pass> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let mut bindings = Vec::new();
        let xin = g.constant(x.detached());
        let features = self.backbone_nodes(&mut g, &mut bindings, xin, opts)?;

        let w = self.bind(&mut g, &mut bindings, PROJ_WEIGHT, opts);
        let bias = self.bind(&mut g, &mut bindings, PROJ_BIAS, opts);
        let wt = g.transpose(w)?;
        let z = g.matmul(features, wt)?;
        let projected = g.add_bias(z, bias)?;
        let squashed = g.tanh(projected)?;
        let angles = g.scale(squashed, ANGLE_SCALE)?;
        let theta = self.bind(&mut g, &mut bindings, THETA, opts);

        let cfg = &self.config.pqc;
        let batch = x.shape()[0];
        let classical = opts.classical_only || self.config.ablation == Ablation::ClassicalOnly;
        let quantum = if classical {
            g.constant(Tensor::zeros(&[batch, cfg.n_qubits]))
        } else {
            let params = PqcParams {
                theta: g.value(theta).data().to_vec(),
            };
            let rows: Vec<Vec<f64>> = g
                .value(angles)
                .data()
                .par_chunks(cfg.n_qubits)
                .map(|a| pqc::forward(a, &params, cfg).map(|q| q.0))
                .collect::<Result<_>>()?;
            let q = Tensor::new(vec![batch, cfg.n_qubits], rows.concat())?;
            g.custom(
                vec![angles, theta],
                q,
                Box::new(CircuitOp {
                    cfg: cfg.clone(),
                    rule: self.shift_rule,
                }),
            )
        };

        let fused = g.concat(features, quantum)?;
        let hw = self.bind(&mut g, &mut bindings, HEAD_WEIGHT, opts);
        let hb = self.bind(&mut g, &mut bindings, HEAD_BIAS, opts);
        let hwt = g.transpose(hw)?;
        let out = g.matmul(fused, hwt)?;
        let out = g.add_bias(out, hb)?;
        let logits = g.reshape(out, vec![batch])?;
        Ok(Pass {
            graph: g,
            bindings,
            features,
            projected,
            angles,
            quantum,
            logits,
            loss: None,
        })
    }

    /// Backbone features only.
    pub fn backbone_forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let mut bindings = Vec::new();
        let xin = g.constant(x.detached());
        let f = self.backbone_nodes(&mut g, &mut bindings, xin, &ForwardOptions::default())?;
        Ok(g.value(f).detached())
    }

    /// Inference logits in chunks of `chunk` samples.
    pub fn logits(&self, x: &Tensor, chunk: usize) -> Result<Vec<f64>> {
        Ok(self.infer(x, chunk)?.0)
    }

    /// Inference logits and quantum features, in chunks.
    pub fn infer(&self, x: &Tensor, chunk: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(x)?;
        let s = x.shape();
        let per = s[1] * s[2] * s[3];
        let mut logits = Vec::with_capacity(s[0]);
        let mut q = Vec::with_capacity(s[0] * self.config.pqc.n_qubits);
        for start in (0..s[0]).step_by(chunk.max(1)) {
            let end = (start + chunk.max(1)).min(s[0]);
            let xb = Tensor::new(vec![end - start, s[1], s[2], s[3]], x.data()[start * per..end * per].to_vec())?;
            let pass = self.forward_pass(&xb, &ForwardOptions::default())?;
            logits.extend_from_slice(pass.logits());
            q.extend_from_slice(pass.quantum_features().data());
        }
        Ok((logits, q))
    }

    /// Reverse sweep of a pass whose loss has been recorded; accumulates into parameter grads.
    pub fn backward(&mut self, pass: &mut Pass) -> Result<()> {
        let loss = pass
            .loss
            .ok_or_else(|| Error::Usage("backward called before a loss was computed on this pass".into()))?;
        if pass.bindings.iter().any(|(idx, _)| *idx >= self.params.len()) {
            return Err(Error::Usage("pass was recorded by a different model".into()));
        }
        pass.graph.backward(loss)?;
        for (idx, node) in &pass.bindings {
            if let Some(g) = pass.graph.grad(*node) {
                self.params.at_mut(*idx).tensor.accumulate_grad(g);
            }
        }
        Ok(())
    }

    /// Checkpoint metadata: the model config as JSON.
    fn metadata(&self, extra: &serde_json::Value) -> String {
        serde_json::json!({
            "format": "qfuse-checkpoint",
            "model": self.config,
            "extra": extra,
        })
        .to_string()
    }

    pub fn to_checkpoint_bytes(&self, extra: &serde_json::Value) -> Vec<u8> {
        let tensors: Vec<(&str, &Tensor)> = self.params.iter().map(|p| (p.name.as_str(), &p.tensor)).collect();
        write_container_bytes(&self.metadata(extra), &tensors)
    }

    pub fn save(&self, path: &Path, extra: &serde_json::Value) -> Result<()> {
        let tensors: Vec<(&str, &Tensor)> = self.params.iter().map(|p| (p.name.as_str(), &p.tensor)).collect();
        write_container(path, &self.metadata(extra), &tensors)
    }

    pub fn load(path: &Path, expected: Option<&ModelConfig>) -> Result<(Self, serde_json::Value)> {
        Self::from_container(read_container(path)?, expected)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<(Self, serde_json::Value)> {
        Self::from_container(read_container_bytes(bytes)?, expected)
    }

    fn from_container(c: crate::autodiff::Container, expected: Option<&ModelConfig>) -> Result<(Self, serde_json::Value)> {
        let meta: serde_json::Value =
            serde_json::from_str(&c.metadata).map_err(|e| Error::Checkpoint(format!("unreadable header: {e}")))?;
        if meta.get("format").and_then(|v| v.as_str()) != Some("qfuse-checkpoint") {
            return Err(Error::Checkpoint("header is not a model checkpoint".into()));
        }
        let model_json = meta.get("model").cloned().unwrap_or(serde_json::Value::Null);
        if let Some(exp) = expected {
            let exp_json = serde_json::to_value(exp).expect("config serialises");
            if let Some((field, want, found)) = first_difference("model", &exp_json, &model_json) {
                return Err(Error::Incompatible {
                    field,
                    expected: want,
                    found,
                });
            }
        }
        let config: ModelConfig =
            serde_json::from_value(model_json).map_err(|e| Error::Checkpoint(format!("bad model header: {e}")))?;
        let mut model = Self::zeros(config)?;
        for p in model.params.iter_mut() {
            let t = c
                .get(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{}` missing", p.name)))?;
            if t.shape() != p.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` has shape {:?}, architecture needs {:?}",
                    p.name,
                    t.shape(),
                    p.tensor.shape()
                )));
            }
            p.tensor.data_mut().copy_from_slice(t.data());
        }
        if c.tensors.len() != model.params.len() {
            return Err(Error::Checkpoint("checkpoint holds unexpected tensors".into()));
        }
        Ok((model, meta.get("extra").cloned().unwrap_or(serde_json::Value::Null)))
    }
}

fn first_difference(path: &str, a: &serde_json::Value, b: &serde_json::Value) -> Option<(String, String, String)> {
    use serde_json::Value;
    match (a, b) {
        (Value::Object(ma), Value::Object(mb)) => {
            for (k, va) in ma {
                let sub = format!("{path}.{k}");
                match mb.get(k) {
                    Some(vb) => {
                        if let Some(d) = first_difference(&sub, va, vb) {
                            return Some(d);
                        }
                    }
                    None => return Some((sub, va.to_string(), "absent".into())),
                }
            }
            None
        }
        _ if a == b => None,
        _ => Some((path.to_string(), a.to_string(), b.to_string())),
    }
}

/// Registry sizes by component, for reporting.
pub fn parameter_summary(params: &ParamStore) -> Vec<(&'static str, usize)> {
    let count = |pred: &dyn Fn(&str) -> bool| params.iter().filter(|p| pred(&p.name)).map(|p| p.tensor.len()).sum();
    vec![
        ("stem", count(&|n| n.starts_with("stem."))),
        ("blocks", count(&|n| n.starts_with("stage"))),
        ("projection", count(&|n| n.starts_with("projection."))),
        ("theta", count(&|n| n == THETA)),
        ("head", count(&|n| n.starts_with("head."))),
    ]
}

#[cfg(test)]
mod tests;
