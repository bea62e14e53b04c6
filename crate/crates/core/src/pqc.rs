//! Data re-uploading variational circuit and its parameter-shift gradients.
//!
//! Layer `l` of the ansatz is
//!
//! ```text
//! RY(z_i) on every qubit           (encoding; every layer when re-uploading, else layer 0 only)
//! RZ(θ[l,i,0]) RY(θ[l,i,1]) RZ(θ[l,i,2]) on every qubit
//! entangler (CNOT ring by default)
//! ```
//!
//! and the readout is `q_i = ⟨Z_i⟩` on `|0…0⟩` pushed through the circuit.
//! Every angle-carrying gate is generated by a Pauli operator, so the exact
//! derivative with respect to any single angle occurrence is
//! `[f(α + π/2) − f(α − π/2)] / 2`. Gradients are returned already contracted
//! with an upstream cotangent (a vector–Jacobian product).

use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{structural, Error, Result};
use crate::qsim::{Gate, StateVector, MAX_QUBITS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Entangler {
    CnotRing,
    CzRing,
    CnotLinear,
}

impl Entangler {
    fn gates(self, n_qubits: usize) -> Vec<Gate> {
        let pairs: Vec<(usize, usize)> = match self {
            Entangler::CnotRing | Entangler::CzRing if n_qubits == 2 => vec![(0, 1), (1, 0)],
            Entangler::CnotRing | Entangler::CzRing if n_qubits > 2 => {
                (0..n_qubits).map(|i| (i, (i + 1) % n_qubits)).collect()
            }
            Entangler::CnotLinear => (0..n_qubits.saturating_sub(1)).map(|i| (i, i + 1)).collect(),
            _ => Vec::new(),
        };
        pairs
            .into_iter()
            .map(|(control, target)| match self {
                Entangler::CzRing => Gate::Cz { control, target },
                _ => Gate::Cnot { control, target },
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PqcConfig {
    pub n_qubits: usize,
    pub depth: usize,
    pub entangler: Entangler,
    pub reupload: bool,
}

impl Default for PqcConfig {
    fn default() -> Self {
        Self {
            n_qubits: 4,
            depth: 2,
            entangler: Entangler::CnotRing,
            reupload: true,
        }
    }
}

impl PqcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_qubits == 0 || self.n_qubits > MAX_QUBITS {
            return Err(Error::Config(format!(
                "pqc.n_qubits must be in 1..={MAX_QUBITS}, got {}",
                self.n_qubits
            )));
        }
        if self.depth == 0 {
            return Err(Error::Config("pqc.depth must be at least 1".into()));
        }
        Ok(())
    }

    /// `3 · n · L`
    pub fn param_count(&self) -> usize {
        3 * self.n_qubits * self.depth
    }

    pub fn gate_count(&self) -> usize {
        let encodings = if self.reupload { self.depth } else { 1 } * self.n_qubits;
        encodings + self.param_count() + self.depth * self.entangler.gates(self.n_qubits).len()
    }
}

/// Trainable angles, laid out `[depth, n_qubits, 3]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PqcParams {
    pub theta: Vec<f64>,
}

impl PqcParams {
    pub fn zeros(cfg: &PqcConfig) -> Self {
        Self {
            theta: vec![0.0; cfg.param_count()],
        }
    }

    pub fn index(cfg: &PqcConfig, layer: usize, qubit: usize, k: usize) -> usize {
        (layer * cfg.n_qubits + qubit) * 3 + k
    }
}

/// `q_i = ⟨Z_i⟩`, each in [−1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct QuantumFeatures(pub Vec<f64>);

impl QuantumFeatures {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Which input an angle-carrying gate reads from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    Input(usize),
    Param(usize),
    Fixed,
}

/// Shift and scale of the two-point derivative formula. The exact rule for
/// Pauli-generated rotations is `shift = π/2`, `scale = 1/2`; other values
/// exist so the self-check can prove it notices a broken rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShiftRule {
    pub shift: f64,
    pub scale: f64,
}

impl Default for ShiftRule {
    fn default() -> Self {
        Self {
            shift: FRAC_PI_2,
            scale: 0.5,
        }
    }
}

fn validate(z: &[f64], params: &PqcParams, cfg: &PqcConfig) -> Result<()> {
    cfg.validate()?;
    if z.len() != cfg.n_qubits {
        return Err(structural!("pqc input has {} angles, circuit has {} qubits", z.len(), cfg.n_qubits));
    }
    if params.theta.len() != cfg.param_count() {
        return Err(structural!(
            "pqc expects {} trainable angles, got {}",
            cfg.param_count(),
            params.theta.len()
        ));
    }
    if z.iter().chain(&params.theta).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite circuit angle".into()));
    }
    Ok(())
}

fn annotated_circuit(z: &[f64], params: &PqcParams, cfg: &PqcConfig) -> Vec<(Gate, Slot)> {
    let n = cfg.n_qubits;
    let entanglers = cfg.entangler.gates(n);
    let mut out = Vec::with_capacity(cfg.gate_count());
    for layer in 0..cfg.depth {
        if layer == 0 || cfg.reupload {
            for (i, &angle) in z.iter().enumerate() {
                out.push((Gate::Ry { target: i, angle }, Slot::Input(i)));
            }
        }
        for i in 0..n {
            let base = PqcParams::index(cfg, layer, i, 0);
            let t = &params.theta[base..base + 3];
            out.push((Gate::Rz { target: i, angle: t[0] }, Slot::Param(base)));
            out.push((Gate::Ry { target: i, angle: t[1] }, Slot::Param(base + 1)));
            out.push((Gate::Rz { target: i, angle: t[2] }, Slot::Param(base + 2)));
        }
        out.extend(entanglers.iter().map(|g| (*g, Slot::Fixed)));
    }
    out
}

pub fn build_circuit(z: &[f64], params: &PqcParams, cfg: &PqcConfig) -> Result<Vec<Gate>> {
    validate(z, params, cfg)?;
    Ok(annotated_circuit(z, params, cfg).into_iter().map(|(g, _)| g).collect())
}

fn run(n_qubits: usize, gates: &[(Gate, Slot)]) -> Vec<f64> {
    let mut state = StateVector::zero(n_qubits).expect("validated register size");
    state
        .apply_all(gates.iter().map(|(g, _)| g))
        .expect("gates built against this register");
    state.z_expectations()
}

pub fn forward(z: &[f64], params: &PqcParams, cfg: &PqcConfig) -> Result<QuantumFeatures> {
    validate(z, params, cfg)?;
    Ok(QuantumFeatures(run(cfg.n_qubits, &annotated_circuit(z, params, cfg))))
}

/// Cotangent-weighted shift derivative for each gate position in `positions`, summed.
fn shifted_sum(
    n_qubits: usize,
    circuit: &mut [(Gate, Slot)],
    positions: impl Iterator<Item = usize>,
    cotangent: &[f64],
    rule: ShiftRule,
) -> f64 {
    let mut total = 0.0;
    for pos in positions {
        let (gate, _) = circuit[pos];
        let angle = gate.angle().expect("only rotations carry slots");
        circuit[pos].0 = gate.with_angle(angle + rule.shift);
        let plus = run(n_qubits, circuit);
        circuit[pos].0 = gate.with_angle(angle - rule.shift);
        let minus = run(n_qubits, circuit);
        circuit[pos].0 = gate;
        total += rule.scale
            * plus
                .iter()
                .zip(&minus)
                .zip(cotangent)
                .map(|((p, m), c)| c * (p - m))
                .sum::<f64>();
    }
    total
}

fn check_cotangent(cotangent: &[f64], cfg: &PqcConfig) -> Result<()> {
    if cotangent.len() != cfg.n_qubits {
        return Err(structural!(
            "cotangent has {} entries, circuit has {} outputs",
            cotangent.len(),
            cfg.n_qubits
        ));
    }
    Ok(())
}

/// `Σ_j c_j ∂q_j/∂θ_k` for every trainable angle `k`.
pub fn grad_params(z: &[f64], params: &PqcParams, cfg: &PqcConfig, cotangent: &[f64]) -> Result<Vec<f64>> {
    grad_params_with_rule(z, params, cfg, cotangent, ShiftRule::default())
}

pub fn grad_params_with_rule(
    z: &[f64],
    params: &PqcParams,
    cfg: &PqcConfig,
    cotangent: &[f64],
    rule: ShiftRule,
) -> Result<Vec<f64>> {
    validate(z, params, cfg)?;
    check_cotangent(cotangent, cfg)?;
    let mut circuit = annotated_circuit(z, params, cfg);
    let mut slot_pos = vec![usize::MAX; cfg.param_count()];
    for (pos, (_, slot)) in circuit.iter().enumerate() {
        if let Slot::Param(k) = slot {
            slot_pos[*k] = pos;
        }
    }
    Ok(slot_pos
        .into_iter()
        .map(|pos| shifted_sum(cfg.n_qubits, &mut circuit, std::iter::once(pos), cotangent, rule))
        .collect())
}

/// `Σ_j c_j ∂q_j/∂z_i` for every input angle. With re-uploading each `z_i`
/// occurs once per layer; every occurrence is shifted on its own and the
/// contributions are summed.
pub fn grad_inputs(z: &[f64], params: &PqcParams, cfg: &PqcConfig, cotangent: &[f64]) -> Result<Vec<f64>> {
    grad_inputs_with_rule(z, params, cfg, cotangent, ShiftRule::default())
}

pub fn grad_inputs_with_rule(
    z: &[f64],
    params: &PqcParams,
    cfg: &PqcConfig,
    cotangent: &[f64],
    rule: ShiftRule,
) -> Result<Vec<f64>> {
    validate(z, params, cfg)?;
    check_cotangent(cotangent, cfg)?;
    let mut circuit = annotated_circuit(z, params, cfg);
    let mut occurrences: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_qubits];
    for (pos, (_, slot)) in circuit.iter().enumerate() {
        if let Slot::Input(i) = slot {
            occurrences[*i].push(pos);
        }
    }
    Ok(occurrences
        .into_iter()
        .map(|positions| shifted_sum(cfg.n_qubits, &mut circuit, positions.into_iter(), cotangent, rule))
        .collect())
}

/// Human-readable gate listing grouped by layer.
pub fn describe_circuit(z: &[f64], params: &PqcParams, cfg: &PqcConfig) -> Result<String> {
    validate(z, params, cfg)?;
    let circuit = annotated_circuit(z, params, cfg);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# {} qubits, depth {}, entangler {:?}, reupload {}, {} gates",
        cfg.n_qubits,
        cfg.depth,
        cfg.entangler,
        cfg.reupload,
        circuit.len()
    );
    let entanglers = cfg.entangler.gates(cfg.n_qubits).len();
    let mut pos = 0;
    for layer in 0..cfg.depth {
        let len = if layer == 0 || cfg.reupload { cfg.n_qubits } else { 0 } + 3 * cfg.n_qubits + entanglers;
        let _ = writeln!(out, "layer {layer}:");
        for (gate, slot) in &circuit[pos..pos + len] {
            let tag = match slot {
                Slot::Input(i) => format!("z[{i}]"),
                Slot::Param(k) => format!("theta[{k}]"),
                Slot::Fixed => "fixed".to_string(),
            };
            let _ = writeln!(out, "  {gate:<24} {tag}");
        }
        pos += len;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_4, PI};

    fn cfg(n: usize, depth: usize, reupload: bool) -> PqcConfig {
        PqcConfig {
            n_qubits: n,
            depth,
            entangler: Entangler::CnotRing,
            reupload,
        }
    }

    #[test]
    fn default_gate_count() {
        let c = PqcConfig::default();
        let gates = build_circuit(&[0.1; 4], &PqcParams::zeros(&c), &c).unwrap();
        assert_eq!(gates.len(), 40);
        assert_eq!(c.gate_count(), 40);
        assert_eq!(c.param_count(), 24);
        let encodings = gates.iter().filter(|g| matches!(g, Gate::Ry { angle, .. } if *angle == 0.1)).count();
        assert_eq!(encodings, 8);
        assert_eq!(gates.iter().filter(|g| matches!(g, Gate::Cnot { .. })).count(), 8);
    }

    #[test]
    fn first_layer_always_encodes() {
        let z = [0.3];
        let p = PqcParams { theta: vec![0.1, 0.2, 0.3] };
        let a = build_circuit(&z, &p, &cfg(1, 1, false)).unwrap();
        let b = build_circuit(&z, &p, &cfg(1, 1, true)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_angles_leave_all_zero_state() {
        let c = PqcConfig::default();
        let q = forward(&[0.0; 4], &PqcParams::zeros(&c), &c).unwrap();
        assert_eq!(q.0, vec![1.0; 4]);
    }

    #[test]
    fn single_qubit_closed_form() {
        let c = cfg(1, 1, true);
        for t in [-2.0, -0.3, 0.0, 0.7, 1.9] {
            let q = forward(&[t], &PqcParams::zeros(&c), &c).unwrap();
            assert!((q.0[0] - f64::cos(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn param_gradient_of_single_ry() {
        let c = cfg(1, 1, true);
        // θ = (0, t, 0) puts a single effective RY(t) after RY(z=0).
        let at = |t: f64| grad_params(&[0.0], &PqcParams { theta: vec![0.0, t, 0.0] }, &c, &[1.0]).unwrap()[1];
        assert_eq!(at(0.0), 0.0);
        assert!((at(FRAC_PI_2) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn input_gradient_sums_occurrences() {
        let c = cfg(1, 1, true);
        assert_eq!(grad_inputs(&[0.0], &PqcParams::zeros(&c), &c, &[1.0]).unwrap()[0], 0.0);
        let c2 = cfg(1, 2, true);
        let g = grad_inputs(&[FRAC_PI_4], &PqcParams::zeros(&c2), &c2, &[1.0]).unwrap();
        assert!((g[0] + 2.0).abs() < 1e-12, "got {}", g[0]);
    }

    #[test]
    fn constant_region_has_exact_zero_gradient() {
        let c = PqcConfig::default();
        let p = PqcParams::zeros(&c);
        let gp = grad_params(&[0.0; 4], &p, &c, &[1.0, -0.5, 0.25, 2.0]).unwrap();
        let gi = grad_inputs(&[0.0; 4], &p, &c, &[1.0, -0.5, 0.25, 2.0]).unwrap();
        assert!(gi.iter().all(|v| *v == 0.0), "{gi:?}");
        // RZ gates about |0⟩ and RY(0) are stationary too
        assert!(gp.iter().all(|v| v.abs() < 1e-15), "{gp:?}");
    }

    #[test]
    fn dimension_errors() {
        let c = PqcConfig::default();
        assert!(matches!(
            forward(&[0.0; 3], &PqcParams::zeros(&c), &c),
            Err(Error::Structural(_))
        ));
        assert!(forward(&[0.0; 4], &PqcParams { theta: vec![0.0; 5] }, &c).is_err());
        assert!(grad_params(&[0.0; 4], &PqcParams::zeros(&c), &c, &[1.0]).is_err());
        assert!(forward(&[f64::NAN, 0.0, 0.0, 0.0], &PqcParams::zeros(&c), &c).is_err());
    }

    #[test]
    fn entangler_variants() {
        assert_eq!(Entangler::CnotLinear.gates(4).len(), 3);
        assert_eq!(Entangler::CzRing.gates(4).len(), 4);
        assert!(Entangler::CnotRing.gates(1).is_empty());
        let c = PqcConfig { entangler: Entangler::CzRing, ..PqcConfig::default() };
        let q = forward(&[0.4, -1.0, 2.0, PI / 3.0], &PqcParams { theta: vec![0.3; 24] }, &c).unwrap();
        assert!(q.0.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn description_lists_layers() {
        let c = PqcConfig::default();
        let text = describe_circuit(&[0.0; 4], &PqcParams::zeros(&c), &c).unwrap();
        assert!(text.contains("layer 0:"));
        assert!(text.contains("layer 1:"));
        assert_eq!(text.lines().filter(|l| l.starts_with("  ")).count(), 40);
    }
}
