//! Independent reference computations used by the self-check and the test
//! suites: dense Kronecker-product unitaries, central finite differences and
//! the pairwise (Mann–Whitney) AUC. None of these share code with the
//! production paths they are meant to verify.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::qsim::Gate;

/// Dense square complex matrix, row-major.
#[derive(Clone, Debug)]
pub struct DenseMatrix {
    pub dim: usize,
    pub data: Vec<Complex64>,
}

impl DenseMatrix {
    pub fn identity(dim: usize) -> Self {
        let mut data = vec![Complex64::new(0.0, 0.0); dim * dim];
        for i in 0..dim {
            data[i * dim + i] = Complex64::new(1.0, 0.0);
        }
        Self { dim, data }
    }

    pub fn from_rows(rows: &[&[Complex64]]) -> Self {
        let dim = rows.len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self { dim, data }
    }

    pub fn at(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.dim + c]
    }

    /// `self ⊗ other`
    pub fn kron(&self, other: &DenseMatrix) -> DenseMatrix {
        let dim = self.dim * other.dim;
        let mut data = vec![Complex64::new(0.0, 0.0); dim * dim];
        for i in 0..self.dim {
            for j in 0..self.dim {
                let a = self.at(i, j);
                for k in 0..other.dim {
                    for l in 0..other.dim {
                        data[(i * other.dim + k) * dim + j * other.dim + l] = a * other.at(k, l);
                    }
                }
            }
        }
        DenseMatrix { dim, data }
    }

    pub fn add(&self, other: &DenseMatrix) -> DenseMatrix {
        DenseMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn mul(&self, other: &DenseMatrix) -> DenseMatrix {
        let n = self.dim;
        let mut data = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.at(i, k);
                for j in 0..n {
                    data[i * n + j] += a * other.at(k, j);
                }
            }
        }
        DenseMatrix { dim: n, data }
    }

    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.at(i, j) * v[j]).sum())
            .collect()
    }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn single_qubit_matrix(gate: &Gate) -> DenseMatrix {
    // Written out from the textbook definitions rather than reusing the simulator's.
    match *gate {
        Gate::Rx { angle, .. } => {
            let (s, co) = ((angle / 2.0).sin(), (angle / 2.0).cos());
            DenseMatrix::from_rows(&[&[c(co, 0.0), c(0.0, -s)], &[c(0.0, -s), c(co, 0.0)]])
        }
        Gate::Ry { angle, .. } => {
            let (s, co) = ((angle / 2.0).sin(), (angle / 2.0).cos());
            DenseMatrix::from_rows(&[&[c(co, 0.0), c(-s, 0.0)], &[c(s, 0.0), c(co, 0.0)]])
        }
        Gate::Rz { angle, .. } => {
            let e_minus = Complex64::from_polar(1.0, -angle / 2.0);
            let e_plus = Complex64::from_polar(1.0, angle / 2.0);
            DenseMatrix::from_rows(&[&[e_minus, c(0.0, 0.0)], &[c(0.0, 0.0), e_plus]])
        }
        _ => unreachable!("not a single-qubit gate"),
    }
}

/// Embeds per-qubit 2×2 factors into the full register. Qubit 0 is the
/// least-significant bit, so it is the right-most Kronecker factor.
fn embed(n_qubits: usize, factors: &[(usize, DenseMatrix)]) -> DenseMatrix {
    let mut full = DenseMatrix::identity(1);
    for q in (0..n_qubits).rev() {
        let f = factors
            .iter()
            .find(|(idx, _)| *idx == q)
            .map(|(_, m)| m.clone())
            .unwrap_or_else(|| DenseMatrix::identity(2));
        full = full.kron(&f);
    }
    full
}

/// Full `2^n × 2^n` unitary of one gate.
pub fn gate_unitary(n_qubits: usize, gate: &Gate) -> DenseMatrix {
    let p0 = DenseMatrix::from_rows(&[&[c(1.0, 0.0), c(0.0, 0.0)], &[c(0.0, 0.0), c(0.0, 0.0)]]);
    let p1 = DenseMatrix::from_rows(&[&[c(0.0, 0.0), c(0.0, 0.0)], &[c(0.0, 0.0), c(1.0, 0.0)]]);
    let x = DenseMatrix::from_rows(&[&[c(0.0, 0.0), c(1.0, 0.0)], &[c(1.0, 0.0), c(0.0, 0.0)]]);
    let z = DenseMatrix::from_rows(&[&[c(1.0, 0.0), c(0.0, 0.0)], &[c(0.0, 0.0), c(-1.0, 0.0)]]);
    match *gate {
        Gate::Rx { target, .. } | Gate::Ry { target, .. } | Gate::Rz { target, .. } => {
            embed(n_qubits, &[(target, single_qubit_matrix(gate))])
        }
        Gate::Cnot { control, target } => embed(n_qubits, &[(control, p0)])
            .add(&embed(n_qubits, &[(control, p1), (target, x)])),
        Gate::Cz { control, target } => embed(n_qubits, &[(control, p0.clone())])
            .add(&embed(n_qubits, &[(control, p1), (target, z)])),
    }
}

/// Product of gate unitaries, later gates on the left.
pub fn circuit_unitary(n_qubits: usize, gates: &[Gate]) -> DenseMatrix {
    gates
        .iter()
        .fold(DenseMatrix::identity(1 << n_qubits), |acc, g| gate_unitary(n_qubits, g).mul(&acc))
}

/// Uniformly random gate sequence on `n_qubits` (two-qubit gates need ≥ 2).
pub fn random_circuit<R: Rng>(n_qubits: usize, len: usize, rng: &mut R) -> Vec<Gate> {
    (0..len)
        .map(|_| {
            let target = rng.gen_range(0..n_qubits);
            let angle = rng.gen_range(-2.0 * PI..2.0 * PI);
            let kinds = if n_qubits > 1 { 5 } else { 3 };
            match rng.gen_range(0..kinds) {
                0 => Gate::Rx { target, angle },
                1 => Gate::Ry { target, angle },
                2 => Gate::Rz { target, angle },
                k => {
                    let control = (target + rng.gen_range(1..n_qubits)) % n_qubits;
                    if k == 3 {
                        Gate::Cnot { control, target }
                    } else {
                        Gate::Cz { control, target }
                    }
                }
            }
        })
        .collect()
}

/// Central finite-difference gradient of a scalar function.
pub fn central_difference<F>(x: &[f64], h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let plus = f(&probe);
            probe[i] = orig - h;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Probability that a random positive outscores a random negative, ties ½.
/// Returns `None` when either class is empty.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(s, _)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Some(wins / (pos.len() as f64 * neg.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cnot_matrix_is_permutation() {
        let u = gate_unitary(2, &Gate::Cnot { control: 0, target: 1 });
        // index 1 (q0=1) maps to index 3
        assert_eq!(u.at(3, 1), c(1.0, 0.0));
        assert_eq!(u.at(0, 0), c(1.0, 0.0));
        assert_eq!(u.at(2, 2), c(1.0, 0.0));
        assert_eq!(u.at(1, 3), c(1.0, 0.0));
    }

    #[test]
    fn fd_of_square() {
        let g = central_difference(&[3.0], 1e-5, |x| x[0] * x[0]);
        assert!((g[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn pairwise_auc_ties() {
        assert_eq!(pairwise_auc(&[0.5, 0.5], &[true, false]), Some(0.5));
        assert_eq!(pairwise_auc(&[0.5], &[true]), None);
    }
}
