//! Dense statevector simulator for small registers.
//!
//! Basis ordering: qubit 0 is the least-significant bit of the basis index, so
//! `|q3 q2 q1 q0⟩` lives at index `q0 + 2·q1 + 4·q2 + 8·q3`. Gates are applied
//! in place with one strided pass over the amplitudes; no full unitary is ever
//! built on this path.

use std::fmt;

use num_complex::Complex64;

use crate::error::{structural, Error, Result};

pub const MAX_QUBITS: usize = 8;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// A single-qubit 2×2 matrix in row-major order.
pub type Mat2 = [[Complex64; 2]; 2];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Gate {
    Rx { target: usize, angle: f64 },
    Ry { target: usize, angle: f64 },
    Rz { target: usize, angle: f64 },
    Cnot { control: usize, target: usize },
    Cz { control: usize, target: usize },
}

impl Gate {
    pub fn target(&self) -> usize {
        match *self {
            Gate::Rx { target, .. }
            | Gate::Ry { target, .. }
            | Gate::Rz { target, .. }
            | Gate::Cnot { target, .. }
            | Gate::Cz { target, .. } => target,
        }
    }

    pub fn control(&self) -> Option<usize> {
        match *self {
            Gate::Cnot { control, .. } | Gate::Cz { control, .. } => Some(control),
            _ => None,
        }
    }

    pub fn angle(&self) -> Option<f64> {
        match *self {
            Gate::Rx { angle, .. } | Gate::Ry { angle, .. } | Gate::Rz { angle, .. } => Some(angle),
            _ => None,
        }
    }

    /// Same gate with its rotation angle replaced. Entanglers are returned unchanged.
    pub fn with_angle(self, new_angle: f64) -> Gate {
        match self {
            Gate::Rx { target, .. } => Gate::Rx { target, angle: new_angle },
            Gate::Ry { target, .. } => Gate::Ry { target, angle: new_angle },
            Gate::Rz { target, .. } => Gate::Rz { target, angle: new_angle },
            other => other,
        }
    }

    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        let target = self.target();
        if target >= n_qubits {
            return Err(structural!("{self}: target {target} out of range for {n_qubits} qubits"));
        }
        if let Some(control) = self.control() {
            if control >= n_qubits {
                return Err(structural!("{self}: control {control} out of range for {n_qubits} qubits"));
            }
            if control == target {
                return Err(structural!("{self}: control equals target"));
            }
        }
        if let Some(angle) = self.angle() {
            if !angle.is_finite() {
                return Err(structural!("{self}: non-finite angle"));
            }
        }
        Ok(())
    }

    /// The 2×2 unitary of a rotation gate; `None` for entanglers.
    pub fn rotation_matrix(&self) -> Option<Mat2> {
        let half = self.angle()? / 2.0;
        let (s, c) = half.sin_cos();
        let m = match self {
            Gate::Rx { .. } => [
                [Complex64::new(c, 0.0), Complex64::new(0.0, -s)],
                [Complex64::new(0.0, -s), Complex64::new(c, 0.0)],
            ],
            Gate::Ry { .. } => [
                [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
                [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
            ],
            Gate::Rz { .. } => [
                [Complex64::new(c, -s), ZERO],
                [ZERO, Complex64::new(c, s)],
            ],
            _ => unreachable!(),
        };
        Some(m)
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Gate::Rx { target, angle } => write!(f, "RX({angle:+.6}) q{target}"),
            Gate::Ry { target, angle } => write!(f, "RY({angle:+.6}) q{target}"),
            Gate::Rz { target, angle } => write!(f, "RZ({angle:+.6}) q{target}"),
            Gate::Cnot { control, target } => write!(f, "CNOT q{control} -> q{target}"),
            Gate::Cz { control, target } => write!(f, "CZ q{control} - q{target}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observable {
    PauliZ(usize),
}

impl Observable {
    pub fn qubit(&self) -> usize {
        match *self {
            Observable::PauliZ(q) => q,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amplitudes: Vec<Complex64>,
}

fn check_qubit_count(n_qubits: usize) -> Result<()> {
    if n_qubits == 0 || n_qubits > MAX_QUBITS {
        return Err(Error::Config(format!(
            "register size must be in 1..={MAX_QUBITS}, got {n_qubits}"
        )));
    }
    Ok(())
}

impl StateVector {
    /// `|0…0⟩` on `n_qubits` qubits.
    pub fn zero(n_qubits: usize) -> Result<Self> {
        check_qubit_count(n_qubits)?;
        let mut amplitudes = vec![ZERO; 1 << n_qubits];
        amplitudes[0] = ONE;
        Ok(Self { n_qubits, amplitudes })
    }

    /// Computational basis state `|index⟩`.
    pub fn basis(n_qubits: usize, index: usize) -> Result<Self> {
        check_qubit_count(n_qubits)?;
        if index >= 1 << n_qubits {
            return Err(structural!("basis index {index} out of range for {n_qubits} qubits"));
        }
        let mut amplitudes = vec![ZERO; 1 << n_qubits];
        amplitudes[index] = ONE;
        Ok(Self { n_qubits, amplitudes })
    }

    /// Wraps caller-supplied amplitudes. The vector must have length `2^n` and unit norm (1e-10).
    pub fn from_amplitudes(n_qubits: usize, amplitudes: Vec<Complex64>) -> Result<Self> {
        check_qubit_count(n_qubits)?;
        if amplitudes.len() != 1 << n_qubits {
            return Err(structural!(
                "expected {} amplitudes for {n_qubits} qubits, got {}",
                1usize << n_qubits,
                amplitudes.len()
            ));
        }
        let norm = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(structural!("amplitudes are not normalised (Σ|a|² = {norm})"));
        }
        Ok(Self { n_qubits, amplitudes })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `⟨self|other⟩`
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn apply(&mut self, gate: &Gate) -> Result<()> {
        gate.validate(self.n_qubits)?;
        apply_to_amplitudes(&mut self.amplitudes, gate);
        Ok(())
    }

    pub fn apply_all<'a>(&mut self, gates: impl IntoIterator<Item = &'a Gate>) -> Result<()> {
        for gate in gates {
            self.apply(gate)?;
        }
        Ok(())
    }

    pub fn expectation(&self, obs: Observable) -> Result<f64> {
        let q = obs.qubit();
        if q >= self.n_qubits {
            return Err(structural!("observable on qubit {q} for a {}-qubit state", self.n_qubits));
        }
        let mask = 1usize << q;
        let value: f64 = self
            .amplitudes
            .iter()
            .enumerate()
            .map(|(i, a)| if i & mask == 0 { a.norm_sqr() } else { -a.norm_sqr() })
            .sum();
        Ok(value.clamp(-1.0, 1.0))
    }

    /// `⟨Z_i⟩` for every qubit, in one pass.
    pub fn z_expectations(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_qubits];
        for (i, a) in self.amplitudes.iter().enumerate() {
            let p = a.norm_sqr();
            for (q, acc) in out.iter_mut().enumerate() {
                if i >> q & 1 == 0 {
                    *acc += p;
                } else {
                    *acc -= p;
                }
            }
        }
        for v in &mut out {
            *v = v.clamp(-1.0, 1.0);
        }
        out
    }
}

/// Applies `gate` to a raw amplitude buffer of length `2^n`. No validation;
/// the buffer need not be normalised, which makes this usable for linearity checks.
pub fn apply_to_amplitudes(amps: &mut [Complex64], gate: &Gate) {
    match *gate {
        Gate::Rx { target, .. } | Gate::Ry { target, .. } | Gate::Rz { target, .. } => {
            let m = gate.rotation_matrix().expect("rotation gate");
            apply_single(amps, target, &m);
        }
        Gate::Cnot { control, target } => {
            let (c, t) = (1usize << control, 1usize << target);
            for i in 0..amps.len() {
                if i & c != 0 && i & t == 0 {
                    amps.swap(i, i | t);
                }
            }
        }
        Gate::Cz { control, target } => {
            let both = (1usize << control) | (1usize << target);
            for (i, a) in amps.iter_mut().enumerate() {
                if i & both == both {
                    *a = -*a;
                }
            }
        }
    }
}

fn apply_single(amps: &mut [Complex64], target: usize, m: &Mat2) {
    let stride = 1usize << target;
    for block in (0..amps.len()).step_by(stride << 1) {
        for i in block..block + stride {
            let j = i + stride;
            let (a0, a1) = (amps[i], amps[j]);
            amps[i] = m[0][0] * a0 + m[0][1] * a1;
            amps[j] = m[1][0] * a0 + m[1][1] * a1;
        }
    }
}

pub fn zero_state(n_qubits: usize) -> Result<StateVector> {
    StateVector::zero(n_qubits)
}

pub fn apply_gate(mut state: StateVector, gate: &Gate) -> Result<StateVector> {
    state.apply(gate)?;
    Ok(state)
}

/// Left-to-right application of `gates`.
pub fn apply_circuit(mut state: StateVector, gates: &[Gate]) -> Result<StateVector> {
    state.apply_all(gates)?;
    Ok(state)
}

pub fn expectation(state: &StateVector, obs: Observable) -> Result<f64> {
    state.expectation(obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn approx(a: Complex64, re: f64, im: f64) -> bool {
        (a.re - re).abs() < 1e-12 && (a.im - im).abs() < 1e-12
    }

    #[test]
    fn zero_state_layout() {
        let s = zero_state(1).unwrap();
        assert_eq!(s.amplitudes(), &[ONE, ZERO]);
        let s = zero_state(4).unwrap();
        assert_eq!(s.amplitudes().len(), 16);
        assert_eq!(s.amplitudes()[0], ONE);
        assert!(s.amplitudes()[1..].iter().all(|a| *a == ZERO));
        assert_eq!(s.norm_sqr(), 1.0);
    }

    #[test]
    fn register_size_is_bounded() {
        assert!(matches!(zero_state(0), Err(Error::Config(_))));
        assert!(matches!(zero_state(9), Err(Error::Config(_))));
        assert!(zero_state(8).is_ok());
    }

    #[test]
    fn ry_pi_flips() {
        let s = apply_gate(zero_state(1).unwrap(), &Gate::Ry { target: 0, angle: PI }).unwrap();
        assert!(approx(s.amplitudes()[0], 0.0, 0.0));
        assert!(approx(s.amplitudes()[1], 1.0, 0.0));
    }

    #[test]
    fn cnot_truth_table() {
        // |10⟩ with qubit 0 as the leftmost label means qubit 0 set: index 1.
        let s = StateVector::basis(2, 0b01).unwrap();
        let s = apply_gate(s, &Gate::Cnot { control: 0, target: 1 }).unwrap();
        assert_eq!(s.amplitudes()[0b11], ONE);
        // control clear: nothing happens
        let s = StateVector::basis(2, 0b10).unwrap();
        let s = apply_gate(s, &Gate::Cnot { control: 0, target: 1 }).unwrap();
        assert_eq!(s.amplitudes()[0b10], ONE);
    }

    #[test]
    fn ry_expectation_is_cos() {
        let s = apply_gate(zero_state(1).unwrap(), &Gate::Ry { target: 0, angle: 1.0 }).unwrap();
        let z = s.expectation(Observable::PauliZ(0)).unwrap();
        assert!((z - 0.540_302_305_868_139_8).abs() < 1e-12);
    }

    #[test]
    fn z_expectations_of_basis_states() {
        assert_eq!(zero_state(1).unwrap().expectation(Observable::PauliZ(0)).unwrap(), 1.0);
        let one = StateVector::basis(1, 1).unwrap();
        assert_eq!(one.expectation(Observable::PauliZ(0)).unwrap(), -1.0);
        let h = (0.5f64).sqrt();
        let plus = StateVector::from_amplitudes(1, vec![Complex64::new(h, 0.0); 2]).unwrap();
        assert!(plus.expectation(Observable::PauliZ(0)).unwrap().abs() < 1e-15);
        let s = StateVector::basis(3, 0b101).unwrap();
        assert_eq!(s.z_expectations(), vec![-1.0, 1.0, -1.0]);
    }

    #[test]
    fn circuit_edge_cases() {
        let s0 = zero_state(2).unwrap();
        assert_eq!(apply_circuit(s0.clone(), &[]).unwrap(), s0);
        let s = apply_circuit(
            zero_state(1).unwrap(),
            &[Gate::Ry { target: 0, angle: PI }, Gate::Ry { target: 0, angle: -PI }],
        )
        .unwrap();
        assert!(approx(s.amplitudes()[0], 1.0, 0.0));
        assert!(approx(s.amplitudes()[1], 0.0, 0.0));
    }

    #[test]
    fn invalid_gates_are_rejected() {
        let s = zero_state(2).unwrap();
        assert!(matches!(
            apply_gate(s.clone(), &Gate::Rx { target: 2, angle: 0.1 }),
            Err(Error::Structural(_))
        ));
        assert!(apply_gate(s.clone(), &Gate::Cnot { control: 1, target: 1 }).is_err());
        assert!(apply_gate(s.clone(), &Gate::Cz { control: 5, target: 0 }).is_err());
        assert!(apply_gate(s.clone(), &Gate::Rz { target: 0, angle: f64::NAN }).is_err());
        assert!(s.expectation(Observable::PauliZ(2)).is_err());
    }

    #[test]
    fn from_amplitudes_checks() {
        assert!(StateVector::from_amplitudes(1, vec![ONE]).is_err());
        assert!(StateVector::from_amplitudes(1, vec![ONE, ONE]).is_err());
    }

    #[test]
    fn display_is_readable() {
        assert_eq!(Gate::Cnot { control: 0, target: 3 }.to_string(), "CNOT q0 -> q3");
        assert_eq!(Gate::Ry { target: 1, angle: 0.5 }.to_string(), "RY(+0.500000) q1");
    }
}
