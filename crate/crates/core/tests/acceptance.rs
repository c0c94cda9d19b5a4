//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use num_bigint::BigUint;
use num_complex::Complex64;
use num_rational::{BigRational, Rational64};
use num_traits::ToPrimitive;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use branchlab::born::{self, AuxProbe, ProbabilityLaw};
use branchlab::bohm::{self, InitialDensity, PacketPair};
use branchlab::collapse::{self, CollapseParams, LinearEvolutionFamily};
use branchlab::finegrain::{self, SwapVerdict};
use branchlab::runner::{self, ExperimentConfig, ExperimentId};
use branchlab::{branching, largen, tensor};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn sqrt_amps(w: &[f64]) -> Vec<Complex64> {
    w.iter().map(|x| Complex64::new(x.sqrt(), 0.0)).collect()
}

fn criterion_1() -> Outcome {
    let w = [Rational64::new(3, 5), Rational64::new(2, 5)];
    let psi = finegrain::fine_grain(&w).map_err(e)?;
    let branches = finegrain::branches(&psi).map_err(e)?;
    ensure(branches.len() == 5, format!("{} branches", branches.len()))?;
    let plan = finegrain::FineGrainPlan::new(&w).map_err(e)?;
    let branch_weight = Rational64::new(1, plan.m_total);
    ensure(branch_weight == Rational64::new(1, 5), "branch weight is not 1/5")?;
    let amp = (1.0f64 / 5.0).sqrt();
    let populated: Vec<_> = psi.amps().iter().filter(|z| z.norm_sqr() > 0.0).collect();
    ensure(populated.len() == 5 && populated.iter().all(|z| z.re == amp && z.im == 0.0), "amplitudes are not √(1/5)")?;
    let coarse = finegrain::branch_count_probability(&plan);
    ensure(coarse == w.to_vec(), "coarse probabilities differ")?;
    ensure(finegrain::coarse_probabilities(&psi).map_err(e)? == w.to_vec(), "branch counting differs")?;
    // coarse amplitudes √(3/5), √(2/5) recovered by summing branch weights
    for (k, target) in [(0usize, 0.6f64), (1, 0.4)] {
        let s: f64 = branches
            .iter()
            .zip(&populated)
            .filter(|(b, _)| b.outcome == k)
            .map(|(_, z)| z.norm_sqr())
            .sum();
        ensure((s.sqrt() - target.sqrt()).abs() < 1e-15, format!("coarse amplitude {k}"))?;
    }
    let s34 = finegrain::swap_admissibility(&psi, 2, 3).map_err(e)?;
    let s12 = finegrain::swap_admissibility(&psi, 0, 1).map_err(e)?;
    ensure(s34 == SwapVerdict::Dissimilar, "3↔4 not flagged")?;
    ensure(s12 == SwapVerdict::Admissible, "1↔2 not admissible")?;
    Ok("5 branches of weight 1/5; coarse (3/5, 2/5); 3↔4 dissimilar, 1↔2 admissible".into())
}

fn criterion_2() -> Outcome {
    let law = ProbabilityLaw::born();
    let mut worst_sum: f64 = 0.0;
    for (i, n) in [2usize, 3, 5, 8].into_iter().enumerate() {
        let r = born::check_constraints(&law, n, 2000, 100 + i as u64).map_err(e)?;
        let v = r.max_sum_violation.max(r.max_range_violation);
        ensure(v <= 1e-12, format!("n = {n}: violation {v:e}"))?;
        worst_sum = worst_sum.max(v);
    }
    let a = [0.5f64.sqrt(), 0.3f64.sqrt(), 0.2f64.sqrt()];
    let lag = born::lagrange_residual(&law, &a, born::DEFAULT_FD_STEP).map_err(e)?;
    let lag_dev = lag.values.iter().flatten().map(|v| (v - 2.0).abs()).fold(0.0, f64::max);
    ensure(lag.values.iter().all(Option::is_some), "lagrange point skipped")?;
    ensure(lag_dev <= 1e-6, format!("lagrange deviation {lag_dev:e}"))?;
    let s2 = std::f64::consts::FRAC_1_SQRT_2;
    let s3 = 1.0 / 3f64.sqrt();
    let comp = born::compose_auxiliary(&law, &[0.6f64.sqrt(), 0.4f64.sqrt()], &[vec![s3, s3, s3], vec![s2, s2]])
        .map_err(e)?;
    ensure(comp.max_violation <= 1e-14, format!("composition {:e}", comp.max_violation))?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let probes: Vec<_> = (0..6).map(|_| AuxProbe::random(3, 3, &mut rng)).collect();
    let d = born::derive_born(&probes).map_err(e)?;
    let derr = d.c.iter().map(|c| c.abs()).fold((d.lambda - 2.0).abs(), f64::max);
    ensure(derr <= 1e-10, format!("derived λ = {}, c = {:?}", d.lambda, d.c))?;
    Ok(format!(
        "constraints ≤ {worst_sum:.1e}, |λ−2| ≤ {lag_dev:.1e}, composition {:.1e}, derived λ = {:.15}",
        comp.max_violation, d.lambda
    ))
}

fn criterion_3() -> Outcome {
    let eps = 0.05;
    let law = born::counterexample_law(eps).map_err(e)?;
    let two = born::check_constraints(&law, 2, 2000, 31).map_err(e)?;
    ensure(two.max_sum_violation <= 1e-12, format!("n = 2 violation {:e}", two.max_sum_violation))?;
    let probe = [0.5f64.sqrt(), 0.3f64.sqrt(), 0.2f64.sqrt()];
    let three = born::sum_violation(&law, &probe).abs();
    ensure(three > 0.01, format!("n = 3 violation {three}"))?;
    let s2 = std::f64::consts::FRAC_1_SQRT_2;
    let comp = born::compose_auxiliary(&law, &[0.9f64.sqrt(), 0.1f64.sqrt()], &[vec![s2, s2], vec![s2, s2]])
        .map_err(e)?;
    let p = |x: f64| x + eps * (2.0 * std::f64::consts::PI * x).sin();
    let hand = (p(0.45) - 0.5 * p(0.9)).abs();
    ensure((comp.max_violation - hand).abs() < 1e-12, "composition differs from the hand computation")?;
    let ratio = comp.max_violation / eps;
    ensure((ratio - 0.603).abs() <= 0.05 * 0.603, format!("violation/ε = {ratio}"))?;
    Ok(format!(
        "n=2 {:.1e}, n=3 {three:.4}, composition {:.5} = {ratio:.4}·ε",
        two.max_sum_violation, comp.max_violation
    ))
}

fn criterion_4() -> Outcome {
    let d = largen::induced_macro_distribution(&ProbabilityLaw::born(), 10_000, 0.9).map_err(e)?;
    let total = d.total_weight();
    ensure((total - 1.0).abs() <= 1e-10, format!("Σ = {total}"))?;
    ensure(d.mode() == 9_000, format!("mode {}", d.mode()))?;
    let sigma = d.std_dev();
    ensure((sigma / 30.0 - 1.0).abs() <= 0.01, format!("σ = {sigma}"))?;
    let p = BigRational::from_float(0.9).unwrap();
    let mut worst: f64 = 0.0;
    for n in 0..=20 {
        let exact = largen::branch_class_weight_exact(20, n, &p).map_err(e)?;
        let x = exact.to_f64().ok_or("exact weight not representable")?;
        let l = largen::branch_class_amplitude(20, n, 0.9).map_err(e)?.exp();
        worst = worst.max((l - x).abs() / x);
    }
    ensure(worst <= 1e-10, format!("N = 20 relative error {worst:e}"))?;
    Ok(format!("Σ−1 = {:.1e}, mode 9000, σ = {sigma:.6}, N=20 rel. err {worst:.1e}", total - 1.0))
}

fn criterion_5() -> Outcome {
    let v = largen::versions_count(10_000).map_err(e)?;
    let digits = v.to_string().len();
    ensure(digits == 3_011, format!("{digits} digits"))?;
    let r = largen::branch_count_ratio(10_000, 5_000, 9_000).map_err(e)?;
    // independent exact path: integer quotient keeps every leading digit
    let c1 = largen::exact_binomial(10_000, 5_000);
    let c2 = largen::exact_binomial(10_000, 9_000);
    let quotient: BigUint = &c1 / &c2;
    let qdigits = quotient.to_string();
    let lead: f64 = format!("{}.{}", &qdigits[..1], &qdigits[1..16]).parse().unwrap();
    let exact_log10 = (qdigits.len() - 1) as f64 + lead.log10();
    ensure((r.log10_ratio - exact_log10).abs() < 1e-9, format!("{} vs {exact_log10}", r.log10_ratio))?;
    let cmp = largen::compare_with_quoted(r.log10_ratio, 800.0, 0.1);
    ensure(!cmp.agrees, "quoted 10^800 flagged as agreeing")?;
    Ok(format!(
        "3011 digits; exact log10 ratio = {:.6} vs quoted ~800: {}",
        r.log10_ratio,
        if cmp.agrees { "agrees" } else { "DISCREPANCY flagged" }
    ))
}

fn criterion_6() -> Outcome {
    let law = ProbabilityLaw::affine_quadratic(0.8, 0.2);
    for big_n in [100u64, 1_000, 10_000] {
        let d = largen::induced_macro_distribution(&law, big_n, 0.9).map_err(e)?;
        let frac = d.mode() as f64 / big_n as f64;
        ensure(frac == 0.9, format!("N = {big_n}: mode/N = {frac}"))?;
        let q = largen::quadratic_term_mass(0.8, 0.2, big_n, 0.9).map_err(e)?;
        let bound = 0.2f64.ln() + big_n as f64 * 0.82f64.ln();
        ensure(q.ln_mass <= bound + 1e-9, format!("N = {big_n}: quadratic mass above bound"))?;
    }
    let r = largen::run_by_run_experiment(&law, 10_000, 0.9, 10_000, 6).map_err(e)?;
    let q = (0.8 * 0.9 + 0.2 * 0.81) / (0.8 * 0.9 + 0.2 * 0.81 + 0.8 * 0.1 + 0.2 * 0.01);
    ensure((r.per_run_probability - q).abs() < 1e-15, "closed-form per-run probability")?;
    let f = r.per_run_frequency.unwrap();
    let s = r.sigma.unwrap();
    ensure((f - q).abs() <= 3.0 * s, format!("frequency {f} vs {q} ± {s}"))?;
    ensure((f - 0.9).abs() > 3.0 * s, format!("frequency {f} indistinguishable from 0.9"))?;
    ensure(r.macro_mode_fraction == 0.9, "macro mode moved")?;
    Ok(format!("mode/N = 0.9 at N ∈ {{10², 10³, 10⁴}}; per-run frequency {f:.4} (law {q:.4}) vs macro 0.9"))
}

fn criterion_7() -> Outcome {
    let times = [0.0, 0.25, 0.5, 1.0, 2.0];
    let mut contradictions = 0;
    for f in 0..100u64 {
        let n = 2 + (f % 3) as usize;
        let fam = LinearEvolutionFamily::random_block(n, 3, &times, 7_000 + f).map_err(e)?;
        let mut rng = ChaCha8Rng::seed_from_u64(8_000 + f);
        let lists: Vec<Vec<Complex64>> = (0..10)
            .map(|_| collapse::real_amplitudes(&tensor::random::positive_sphere_point(n, &mut rng)))
            .collect();
        for run in 0..fam.runs() {
            let base = collapse::linear_x(&fam, &lists[0], run).map_err(e)?;
            for a in &lists[1..] {
                let other = collapse::linear_x(&fam, a, run).map_err(e)?;
                let same = base
                    .weights
                    .iter()
                    .flatten()
                    .zip(other.weights.iter().flatten())
                    .all(|(x, y)| x.to_bits() == y.to_bits());
                ensure(same, format!("family {f}: X depends on a"))?;
            }
        }
        let cert = collapse::born_violation_certificate(&fam, &lists, fam.runs()).map_err(e)?;
        contradictions += cert.contradiction as usize;
    }
    ensure(contradictions == 100, format!("{contradictions}/100 contradictions"))?;
    let params = CollapseParams::default();
    let mut zs = Vec::new();
    for (i, w) in [vec![0.9, 0.1], vec![0.5, 0.5], vec![0.5, 0.3, 0.2]].iter().enumerate() {
        let s = collapse::collapse_statistics(&sqrt_amps(w), 10_000, &params, 70 + i as u64).map_err(e)?;
        ensure(s.unresolved == 0, format!("{} unresolved", s.unresolved))?;
        ensure(s.within_three_sigma, format!("{w:?}: frequencies {:?}", s.frequencies))?;
        zs.push(s.z_scores.iter().fold(0.0f64, |m, z| m.max(z.abs())));
    }
    Ok(format!("100/100 families invariant and contradictory; surrogate max |z| = {zs:.2?}"))
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_gram: f64 = 0.0;
    let mut worst_inter: f64 = 0.0;
    let mut worst_drift: f64 = 0.0;
    let mut worst_nc: f64 = 0.0;
    for n in [2usize, 3] {
        let a = sqrt_amps(&tensor::random::positive_sphere_point(n, &mut rng).iter().map(|x| x * x).collect::<Vec<_>>());
        let pre = branching::premeasurement(&a, n).map_err(e)?;
        let observed = branching::couple_observer(&branching::couple_detectors(&pre).map_err(e)?).map_err(e)?;
        let written = branching::couple_writer(&observed).map_err(e)?;
        let g = written.gram_matrix().map_err(e)?;
        for j in 0..n {
            for k in 0..n {
                let t = if j == k { 1.0 } else { 0.0 };
                worst_gram = worst_gram.max((g[(j, k)] - Complex64::new(t, 0.0)).norm());
            }
        }
        for _ in 0..50 {
            let h = branching::BlockHamiltonian::random(n, &mut rng);
            worst_inter = worst_inter.max(branching::interbranch_elements(&h, &written).map_err(e)?.max_offdiagonal);
            worst_drift = worst_drift.max(branching::evolve_and_check_weights(&h, &written, 1.0).map_err(e)?.max_deviation);
        }
        for _ in 0..100 {
            let u = branching::random_observer_rotation(n, &mut rng);
            let after = branching::nonclassical_weight(&written.reexpress_observer(&u).map_err(e)?).map_err(e)?;
            let before = branching::nonclassical_weight(
                &branching::couple_writer(&observed.rotate_observer(&u).map_err(e)?).map_err(e)?,
            )
            .map_err(e)?;
            worst_nc = worst_nc.max(after).max(before);
        }
        if n == 2 {
            let mixed = branching::mixed_observer_states(&observed).map_err(e)?;
            for part in [&mixed.a, &mixed.b] {
                let w = branching::couple_writer(part).map_err(e)?;
                worst_nc = worst_nc.max(branching::nonclassical_weight(&w).map_err(e)?);
            }
            for s in [&pre, &observed, &written] {
                if s.stage() >= branching::Stage::Detected {
                    let c = branching::color_signal(s).map_err(e)?;
                    ensure(!c.green_seen, "green signal")?;
                }
            }
        }
        let c = branching::color_scan(&written.record_state().map_err(e)?).map_err(e)?;
        ensure(!c.green_seen, "green signal")?;
    }
    ensure(worst_gram <= 1e-12, format!("Gram deviation {worst_gram:e}"))?;
    ensure(worst_inter <= 1e-12, format!("inter-branch element {worst_inter:e}"))?;
    ensure(worst_drift <= 1e-10, format!("weight drift {worst_drift:e}"))?;
    ensure(worst_nc <= 1e-12, format!("nonclassical weight {worst_nc:e}"))?;
    Ok(format!(
        "Gram {worst_gram:.1e}, inter-branch {worst_inter:.1e}, drift {worst_drift:.1e}, nonclassical {worst_nc:.1e}, no green"
    ))
}

fn criterion_9() -> Outcome {
    let mut msg = Vec::new();
    for (i, p1) in [0.9, 0.5].into_iter().enumerate() {
        let p = PacketPair::standard(p1).map_err(e)?;
        let r = bohm::equivariance_report(&p, 10_000, 90 + i as u64, InitialDensity::Equilibrium).map_err(e)?;
        ensure(r.unresolved == 0, "unresolved trajectories")?;
        ensure(r.within_three_sigma, format!("{p1}: fractions {:?}", r.fractions))?;
        msg.push(format!("{:.4}", r.fractions[0]));
    }
    let p = PacketPair::standard(0.9).map_err(e)?;
    let nc = bohm::no_crossing_check(&p, 1_000, 0.05, 92).map_err(e)?;
    ensure(nc.violations == 0 && nc.stalled == 0, format!("{} crossings, {} stalled", nc.violations, nc.stalled))?;
    let wrong = bohm::equivariance_report(&p, 10_000, 93, InitialDensity::Shifted { shift: 1.0 }).map_err(e)?;
    let z = wrong.z_scores[0].abs();
    ensure(z > 5.0, format!("non-equilibrium start only {z:.2}σ off"))?;
    Ok(format!("fractions {} at 10⁴; 1000 pairs ordered; shifted start {z:.1}σ off", msg.join(", ")))
}

fn read_outputs(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(e)? {
        let path = entry.map_err(e)?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let mut bytes = std::fs::read(&path).map_err(e)?;
        if name == runner::MANIFEST_FILE {
            let mut m: serde_json::Value = serde_json::from_slice(&bytes).map_err(e)?;
            let obj = m.as_object_mut().ok_or("manifest is not an object")?;
            for timing in ["started_unix_seconds", "wall_clock_seconds", "output_dir"] {
                obj.remove(timing);
            }
            bytes = serde_json::to_vec(&m).map_err(e)?;
        }
        files.insert(name, bytes);
    }
    Ok(files)
}

fn criterion_10() -> Outcome {
    let root = tempfile::tempdir().map_err(e)?;
    let mut count = 0;
    for id in ExperimentId::ALL {
        let mut cfg = ExperimentConfig::new(id);
        cfg.master_seed = 2024;
        cfg.serial = true;
        let a = root.path().join(format!("{}-a", id.name()));
        let b = root.path().join(format!("{}-b", id.name()));
        runner::run_in(&cfg, &a).map_err(e)?;
        runner::run_in(&cfg, &b).map_err(e)?;
        let (fa, fb) = (read_outputs(&a)?, read_outputs(&b)?);
        ensure(fa.keys().eq(fb.keys()), format!("{}: different file sets", id.name()))?;
        for (name, bytes) in &fa {
            ensure(bytes == &fb[name], format!("{}: {name} differs", id.name()))?;
            count += 1;
        }
    }
    Ok(format!("{count} files byte-identical across serial re-runs of all six experiments"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 fine-graining reconstruction", criterion_1),
        ("2 Born derivation suite", criterion_2),
        ("3 counterexample scoping", criterion_3),
        ("4 branch-class concentration", criterion_4),
        ("5 branch counting", criterion_5),
        ("6 micro-law washout", criterion_6),
        ("7 collapse linearity theorem", criterion_7),
        ("8 branch classicality", criterion_8),
        ("9 Bohmian equivariance", criterion_9),
        ("10 reproducibility", criterion_10),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(msg) => println!("PASS criterion {name} ({secs:.1}s): {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {name} ({secs:.1}s): {msg}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
