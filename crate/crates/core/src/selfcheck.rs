//! Gradient and simulator health checks against the independent oracles.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::Tensor;
use crate::backbone::{ForwardOptions, HybridModel, ModelConfig};
use crate::error::Result;
use crate::oracle::{central_difference, circuit_unitary, pairwise_auc, random_circuit};
use crate::pqc::{self, PqcConfig, PqcParams, ShiftRule};
use crate::qsim::StateVector;
use crate::train::auc;

pub const QSIM_TOL: f64 = 1e-10;
pub const PQC_TOL: f64 = 1e-6;
pub const END_TO_END_REL_TOL: f64 = 1e-4;
pub const AUC_TOL: f64 = 1e-12;
pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub cases: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub seconds: f64,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<12} {} cases={:<4} max_dev={:.3e} tol={:.0e} ({:.1}s)",
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.cases,
            self.max_deviation,
            self.tolerance,
            self.seconds
        )
    }
}

fn finish(name: &'static str, cases: usize, max_deviation: f64, tolerance: f64, start: Instant) -> CheckResult {
    CheckResult {
        name,
        cases,
        max_deviation,
        tolerance,
        passed: max_deviation <= tolerance,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Statevector gate application vs. the dense Kronecker-product unitary.
pub fn check_qsim(circuits: usize, seed: u64) -> Result<CheckResult> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..circuits {
        let n = rng.gen_range(1..=4);
        let len = rng.gen_range(1..=30);
        let gates = random_circuit(n, len, &mut rng);
        let basis = rng.gen_range(0..1usize << n);
        let mut sv = StateVector::basis(n, basis)?;
        sv.apply_all(&gates)?;
        let u = circuit_unitary(n, &gates);
        for (row, amp) in sv.amplitudes().iter().enumerate() {
            worst = worst.max((amp - u.at(row, basis)).norm());
        }
    }
    Ok(finish("qsim", circuits, worst, QSIM_TOL, start))
}

/// Parameter-shift gradients (θ and inputs) vs. central differences on
/// random re-uploading circuits with the default layout.
pub fn check_pqc(circuits: usize, seed: u64, rule: ShiftRule) -> Result<CheckResult> {
    let start = Instant::now();
    let cfg = PqcConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..circuits {
        let z: Vec<f64> = (0..cfg.n_qubits).map(|_| rng.gen_range(-3.1..3.1)).collect();
        let theta: Vec<f64> = (0..cfg.param_count()).map(|_| rng.gen_range(-3.1..3.1)).collect();
        let cot: Vec<f64> = (0..cfg.n_qubits).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let params = PqcParams { theta: theta.clone() };
        let contract = |q: Vec<f64>| q.iter().zip(&cot).map(|(a, b)| a * b).sum::<f64>();
        let gt = pqc::grad_params_with_rule(&z, &params, &cfg, &cot, rule)?;
        let gz = pqc::grad_inputs_with_rule(&z, &params, &cfg, &cot, rule)?;
        let ft = central_difference(&theta, FD_STEP, |t| {
            contract(pqc::forward(&z, &PqcParams { theta: t.to_vec() }, &cfg).unwrap().0)
        });
        let fz = central_difference(&z, FD_STEP, |zz| contract(pqc::forward(zz, &params, &cfg).unwrap().0));
        for (a, b) in gt.iter().chain(&gz).zip(ft.iter().chain(&fz)) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(finish("pqc-shift", circuits, worst, PQC_TOL, start))
}

fn loss_of(model: &HybridModel, x: &Tensor, labels: &[f64]) -> Result<f64> {
    let mut pass = model.forward_pass(x, &ForwardOptions::default())?;
    pass.bce_loss(labels)
}

/// Largest `|analytic − numeric| / max(|numeric|, 1e-4)` over every
/// parameter of a small model. The floor keeps near-zero entries from
/// dominating the relative measure.
pub fn end_to_end_deviation(model: &mut HybridModel, x: &Tensor, labels: &[f64]) -> Result<(f64, usize)> {
    model.params_mut().zero_grads();
    let mut pass = model.forward_pass(x, &ForwardOptions::training())?;
    pass.bce_loss(labels)?;
    model.backward(&mut pass)?;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
    for name in names {
        let p = model.params().get(&name).expect("registered");
        let analytic = p.tensor.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.tensor.len()]);
        let base = p.tensor.data().to_vec();
        let mut probe = model.clone();
        let mut failure = None;
        let numeric = central_difference(&base, FD_STEP, |v| {
            probe.params_mut().get_mut(&name).expect("registered").tensor.data_mut().copy_from_slice(v);
            loss_of(&probe, x, labels).unwrap_or_else(|e| {
                failure = Some(e);
                f64::NAN
            })
        });
        if let Some(e) = failure {
            return Err(e);
        }
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max((a - n).abs() / n.abs().max(1e-4));
            count += 1;
        }
    }
    model.params_mut().zero_grads();
    Ok((worst, count))
}

/// Full-model BCE gradient vs. central differences on the tiny configuration.
pub fn check_end_to_end(seed: u64, rule: ShiftRule) -> Result<CheckResult> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = HybridModel::new(ModelConfig::tiny(), &mut rng)?;
    model.set_shift_rule(rule);
    for p in model.params_mut().iter_mut() {
        if p.name.contains("shift") || p.name.contains("scale") {
            p.tensor.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.2..0.2));
        }
    }
    let n = 2 * 8 * 8;
    let x = Tensor::new(vec![2, 1, 8, 8], (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect())?;
    let (worst, count) = end_to_end_deviation(&mut model, &x, &[1.0, 0.0])?;
    Ok(finish("end-to-end", count, worst, END_TO_END_REL_TOL, start))
}

/// Trapezoidal AUC vs. pairwise concordance, half of the cases tie-heavy.
pub fn check_auc(sets: usize, seed: u64) -> Result<CheckResult> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for case in 0..sets {
        let n = rng.gen_range(2..200);
        let levels = if case % 2 == 0 { rng.gen_range(1..6) } else { 1_000_000 };
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..levels)) / f64::from(levels)).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let a = auc(&scores, &labels).expect("both classes present");
        let b = pairwise_auc(&scores, &labels).expect("both classes present");
        worst = worst.max((a - b).abs());
    }
    Ok(finish("auc", sets, worst, AUC_TOL, start))
}

#[derive(Clone, Copy, Debug)]
pub struct SelfcheckOptions {
    pub seed: u64,
    pub circuits: usize,
    /// Shift rule used by the circuit gradients (altered only for fault injection).
    pub rule: ShiftRule,
}

impl Default for SelfcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            circuits: 100,
            rule: ShiftRule::default(),
        }
    }
}

pub fn run_all(opts: &SelfcheckOptions) -> Result<Vec<CheckResult>> {
    Ok(vec![
        check_qsim(opts.circuits, opts.seed)?,
        check_pqc(opts.circuits, opts.seed.wrapping_add(1), opts.rule)?,
        check_end_to_end(opts.seed.wrapping_add(2), opts.rule)?,
        check_auc(200, opts.seed.wrapping_add(3))?,
    ])
}
