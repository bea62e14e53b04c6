//! Randomised invariants across module boundaries.

use std::collections::BTreeSet;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qfuse::autodiff::Tensor;
use qfuse::data::{augment, split, standardize, AugmentPolicy, Sample, SplitSpec, Source};
use qfuse::oracle::{central_difference, circuit_unitary, random_circuit};
use qfuse::pqc::{self, Entangler, PqcConfig, PqcParams};
use qfuse::qsim::{apply_to_amplitudes, StateVector};

fn random_state(n: usize, seed: u64) -> Vec<Complex64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<Complex64> = (0..1 << n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let norm = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|a| a / norm).collect()
}

fn entangler() -> impl Strategy<Value = Entangler> {
    prop_oneof![Just(Entangler::CnotRing), Just(Entangler::CzRing), Just(Entangler::CnotLinear)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gates_preserve_norm_and_inner_products(n in 1usize..=5, len in 1usize..40, seed in any::<u64>()) {
        let gates = random_circuit(n, len, &mut ChaCha8Rng::seed_from_u64(seed));
        let (mut a, mut b) = (random_state(n, seed ^ 1), random_state(n, seed ^ 2));
        let before: Complex64 = a.iter().zip(&b).map(|(x, y)| x.conj() * y).sum();
        for g in &gates {
            apply_to_amplitudes(&mut a, g);
            apply_to_amplitudes(&mut b, g);
        }
        let after: Complex64 = a.iter().zip(&b).map(|(x, y)| x.conj() * y).sum();
        prop_assert!((before - after).norm() < 1e-12);
        prop_assert!((a.iter().map(|x| x.norm_sqr()).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gate_application_is_linear(n in 1usize..=4, len in 1usize..20, seed in any::<u64>(), re in -2.0f64..2.0, im in -2.0f64..2.0) {
        let gates = random_circuit(n, len, &mut ChaCha8Rng::seed_from_u64(seed));
        let (x, y) = (random_state(n, seed ^ 3), random_state(n, seed ^ 4));
        let alpha = Complex64::new(re, im);
        let mut combo: Vec<Complex64> = x.iter().zip(&y).map(|(a, b)| alpha * a + b).collect();
        let (mut ux, mut uy) = (x.clone(), y.clone());
        for g in &gates {
            apply_to_amplitudes(&mut combo, g);
            apply_to_amplitudes(&mut ux, g);
            apply_to_amplitudes(&mut uy, g);
        }
        for i in 0..combo.len() {
            prop_assert!((combo[i] - (alpha * ux[i] + uy[i])).norm() < 1e-12);
        }
    }

    #[test]
    fn simulator_matches_kronecker_oracle(n in 1usize..=4, len in 1usize..25, seed in any::<u64>()) {
        let gates = random_circuit(n, len, &mut ChaCha8Rng::seed_from_u64(seed));
        let init = random_state(n, seed ^ 5);
        let mut sv = StateVector::from_amplitudes(n, init.clone()).unwrap();
        sv.apply_all(&gates).unwrap();
        let expected = circuit_unitary(n, &gates).apply(&init);
        for (a, b) in sv.amplitudes().iter().zip(&expected) {
            prop_assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn shift_rule_matches_fd_for_any_layout(
        n in 1usize..=4, depth in 1usize..=3, ent in entangler(), reupload in any::<bool>(), seed in any::<u64>()
    ) {
        use rand::Rng;
        let cfg = PqcConfig { n_qubits: n, depth, entangler: ent, reupload };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let theta: Vec<f64> = (0..cfg.param_count()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let cot: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let params = PqcParams { theta: theta.clone() };
        let q = pqc::forward(&z, &params, &cfg).unwrap();
        prop_assert!(q.0.iter().all(|v| (-1.0..=1.0).contains(v)));
        let f = |zz: &[f64], t: &[f64]| {
            let q = pqc::forward(zz, &PqcParams { theta: t.to_vec() }, &cfg).unwrap();
            q.0.iter().zip(&cot).map(|(a, b)| a * b).sum::<f64>()
        };
        let gt = pqc::grad_params(&z, &params, &cfg, &cot).unwrap();
        let gz = pqc::grad_inputs(&z, &params, &cfg, &cot).unwrap();
        let ft = central_difference(&theta, 1e-5, |t| f(&z, t));
        let fz = central_difference(&z, 1e-5, |zz| f(zz, &theta));
        for (a, b) in gt.iter().chain(&gz).zip(ft.iter().chain(&fz)) {
            prop_assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn augmentation_keeps_label_patient_and_range(seed in any::<u64>(), label in 0u8..=1, side in 4usize..24) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let image = Tensor::new(vec![1, side, side], (0..side * side).map(|_| rng.gen_range(0.0..=1.0)).collect()).unwrap();
        let s = Sample { image, label, patient_id: "p9".into(), source: Source::Synthetic };
        let policy = AugmentPolicy { rotate_max_deg: 30.0, brightness_delta: 0.3, color_jitter: 0.5, ..AugmentPolicy::default() };
        let out = augment(&s, &policy, &mut rng).unwrap();
        prop_assert_eq!(out.label, label);
        prop_assert_eq!(out.patient_id.as_str(), "p9");
        prop_assert!(out.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(standardize(&out.image).data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn grouped_split_never_leaks(sizes in proptest::collection::vec(1usize..30, 2..25), seed in any::<u64>(), frac in 0.05f64..0.95) {
        let samples: Vec<Sample> = sizes.iter().enumerate().flat_map(|(p, &n)| {
            (0..n).map(move |i| Sample {
                image: Tensor::zeros(&[1, 1, 1]),
                label: (i % 2) as u8,
                patient_id: format!("p{p}"),
                source: Source::Directory,
            })
        }).collect();
        let spec = SplitSpec { train_fraction: frac, seed, group_by_patient: true };
        let (train, test) = split(&samples, &spec).unwrap();
        let a: BTreeSet<_> = train.iter().map(|s| s.patient_id.clone()).collect();
        let b: BTreeSet<_> = test.iter().map(|s| s.patient_id.clone()).collect();
        prop_assert!(a.is_disjoint(&b));
        prop_assert!(!a.is_empty() && !b.is_empty());
        prop_assert_eq!(train.len() + test.len(), samples.len());
        let target = frac * sizes.len() as f64;
        prop_assert!((a.len() as f64 - target).abs() <= 1.0);
    }
}
