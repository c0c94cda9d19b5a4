use num_complex::Complex64;
use num_rational::Rational64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use branchlab::born::{self, AuxProbe, ProbabilityLaw};
use branchlab::collapse::{self, CollapseParams, LinearEvolutionFamily};
use branchlab::finegrain;
use branchlab::largen;
use branchlab::tensor::{self, Factor, StateVector};
use branchlab::{branching, runner};

fn factor(name: &str, dim: usize) -> Factor {
    Factor::new(name, (0..dim).map(|i| i.to_string()))
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn amps(n: usize, seed: u64) -> Vec<f64> {
    tensor::random::positive_sphere_point(n, &mut rng(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unitaries_preserve_norm(dim in 1usize..12, seed in any::<u64>()) {
        let mut r = rng(seed);
        let psi = tensor::random::state(vec![factor("a", dim)], &mut r);
        let u = tensor::random::unitary(dim, &mut r);
        let out = tensor::apply(&u, &psi).unwrap();
        prop_assert!((out.norm() - psi.norm()).abs() <= 1e-12 * psi.norm().max(1.0));
    }

    #[test]
    fn inner_product_is_sesquilinear(dim in 1usize..10, seed in any::<u64>(), cr in -3.0..3.0f64, ci in -3.0..3.0f64) {
        let mut r = rng(seed);
        let f = vec![factor("a", dim)];
        let (u, v, w) = (
            tensor::random::state(f.clone(), &mut r),
            tensor::random::state(f.clone(), &mut r),
            tensor::random::state(f, &mut r),
        );
        let c = Complex64::new(cr, ci);
        let lhs = tensor::inner_product(&u, &v.add_scaled(c, &w).unwrap()).unwrap();
        let rhs = tensor::inner_product(&u, &v).unwrap() + c * tensor::inner_product(&u, &w).unwrap();
        prop_assert!((lhs - rhs).norm() <= 1e-10 * (1.0 + rhs.norm()));
        let anti = tensor::inner_product(&u.scale(c), &v).unwrap();
        let expect = c.conj() * tensor::inner_product(&u, &v).unwrap();
        prop_assert!((anti - expect).norm() <= 1e-10 * (1.0 + expect.norm()));
        let swapped = tensor::inner_product(&v, &u).unwrap().conj();
        prop_assert!((swapped - tensor::inner_product(&u, &v).unwrap()).norm() <= 1e-12 * (1.0 + swapped.norm()));
    }

    #[test]
    fn product_norm_is_multiplicative(d1 in 1usize..8, d2 in 1usize..8, seed in any::<u64>()) {
        let mut r = rng(seed);
        let u = tensor::random::state(vec![factor("a", d1)], &mut r);
        let v = tensor::random::state(vec![factor("b", d2)], &mut r);
        let uv = tensor::tensor_product(&u, &v).unwrap();
        let expect = u.norm() * v.norm();
        prop_assert!((uv.norm() - expect).abs() <= 1e-12 * expect.max(1.0));
    }

    #[test]
    fn branch_weights_add_up(n in 2usize..5, seed in any::<u64>()) {
        let a = amps(n, seed);
        let s = branching::full_chain(&collapse::real_amplitudes(&a)).unwrap();
        let w = s.branch_weights().unwrap();
        prop_assert!((w.iter().sum::<f64>() - s.state().norm_sqr()).abs() <= 1e-12);
        for (wk, ak) in w.iter().zip(&a) {
            prop_assert!((wk - ak * ak).abs() <= 1e-12);
        }
    }

    #[test]
    fn observer_representation_is_irrelevant(n in 2usize..4, seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = amps(n, seed ^ 1);
        let observed = branching::couple_observer(
            &branching::couple_detectors(&branching::premeasurement_real(&a).unwrap()).unwrap(),
        ).unwrap();
        let written = branching::couple_writer(&observed).unwrap();
        let u = branching::random_observer_rotation(n, &mut r);
        let re = written.reexpress_observer(&u).unwrap();
        prop_assert!(branching::nonclassical_weight(&re).unwrap() <= 1e-12);
        let rotated = branching::couple_writer(&observed.rotate_observer(&u).unwrap()).unwrap();
        prop_assert!(branching::nonclassical_weight(&rotated).unwrap() <= 1e-12);
        let before = written.branch_weights().unwrap();
        for (x, y) in before.iter().zip(re.branch_weights().unwrap()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn born_is_a_fixed_point(n in 2usize..9, seed in any::<u64>()) {
        let law = ProbabilityLaw::born();
        let a = amps(n, seed);
        prop_assert!(born::sum_violation(&law, &a).abs() <= 1e-12);
        if a.iter().all(|x| x * x > 0.01) {
            let lag = born::lagrange_residual(&law, &a, born::DEFAULT_FD_STEP).unwrap();
            for v in lag.values.iter().flatten() {
                prop_assert!((v - 2.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn derived_law_is_unique(seed in any::<u64>(), n in 2usize..5, m in 2usize..5) {
        let mut r = rng(seed);
        let probes: Vec<_> = (0..6).map(|_| AuxProbe::random(n, m, &mut r)).collect();
        let d = born::derive_born(&probes).unwrap();
        prop_assert!((d.lambda - 2.0).abs() <= 1e-9);
        for c in &d.c {
            prop_assert!(c.abs() <= 1e-9);
        }
    }

    #[test]
    fn macro_distribution_is_normalized(big_n in 1u64..3000, p in 0.01..0.99f64) {
        let d = largen::induced_macro_distribution(&ProbabilityLaw::born(), big_n, p).unwrap();
        prop_assert!((d.total_weight() - 1.0).abs() <= 1e-10);
        let m = d.mode() as f64;
        prop_assert!((m - big_n as f64 * p).abs() <= 1.0);
    }

    #[test]
    fn fine_graining_is_exact(n1 in 0i64..12, n2 in 0i64..12, n3 in 1i64..12) {
        let total = n1 + n2 + n3;
        let w = [Rational64::new(n1, total), Rational64::new(n2, total), Rational64::new(n3, total)];
        let psi = finegrain::fine_grain(&w).unwrap();
        prop_assert_eq!(finegrain::coarse_probabilities(&psi).unwrap(), w.to_vec());
        let plan = finegrain::FineGrainPlan::new(&w).unwrap();
        prop_assert_eq!(finegrain::branch_count_probability(&plan), w.to_vec());
        let b = finegrain::branches(&psi).unwrap();
        prop_assert_eq!(b.len() as i64, plan.m_total);
        let amp = (1.0 / plan.m_total as f64).sqrt();
        prop_assert!(psi.amps().iter().all(|z| z.norm_sqr() == 0.0 || z.re == amp));
    }

    #[test]
    fn padding_keeps_coarse_weights(n1 in 1i64..15, n2 in 1i64..15) {
        let w = [Rational64::new(n1, n1 + n2), Rational64::new(n2, n1 + n2)];
        let padded = finegrain::uniformize_workaround(&w).unwrap();
        let coarse = finegrain::coarse_probabilities(&padded).unwrap();
        prop_assert_eq!(coarse, w.to_vec());
    }

    #[test]
    fn state_json_round_trip_is_exact(dim in 1usize..9, seed in any::<u64>()) {
        let psi = tensor::random::state(vec![factor("a", dim), factor("b", 2)], &mut rng(seed));
        let text = serde_json::to_string(&psi).unwrap();
        let back: StateVector = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, psi);
    }

    #[test]
    fn seeds_are_deterministic(master in any::<u64>(), i in 0u64..1000, j in 0u64..1000) {
        prop_assert_eq!(runner::derive_seed(master, i), runner::derive_seed(master, i));
        if i != j {
            prop_assert_ne!(runner::derive_seed(master, i), runner::derive_seed(master, j));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn linear_collapse_ignores_amplitudes(n in 2usize..5, seed in any::<u64>()) {
        let fam = LinearEvolutionFamily::random_block(n, 2, &[0.0, 0.5, 1.0], seed).unwrap();
        let a = collapse::real_amplitudes(&amps(n, seed ^ 2));
        let b = collapse::real_amplitudes(&amps(n, seed ^ 3));
        for run in 0..fam.runs() {
            let xa = collapse::linear_x(&fam, &a, run).unwrap();
            let xb = collapse::linear_x(&fam, &b, run).unwrap();
            prop_assert_eq!(xa.weights, xb.weights);
            prop_assert!(xa.linearity_residual <= 1e-10);
        }
    }

    #[test]
    fn surrogate_stays_on_the_simplex(n in 2usize..5, seed in any::<u64>()) {
        let a = amps(n, seed);
        let x0: Vec<f64> = a.iter().map(|x| x * x).collect();
        let params = CollapseParams { max_steps: 2_000, ..CollapseParams::default() };
        let out = collapse::stochastic_collapse_outcome(&x0, &params, seed);
        prop_assert!(out.max_simplex_defect <= 1e-9);
        for snap in collapse::stochastic_snapshots(&x0, &params, seed, &[10, 100, 1000]) {
            prop_assert!(snap.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((snap.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}
