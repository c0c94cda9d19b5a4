use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::*;
use super::{derive_seed, num, Recorder};
use crate::error::{invalid, Result};
use crate::{bohm, born, branching, collapse, finegrain, largen, tensor};

pub(super) fn dispatch(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    match cfg.experiment {
        ExperimentId::BranchDemo => branch_demo(cfg, rec),
        ExperimentId::BornDerive => born_derive(cfg, rec),
        ExperimentId::LargeN => large_n(cfg, rec),
        ExperimentId::Collapse => collapse_experiment(cfg, rec),
        ExperimentId::Finegrain => finegrain_experiment(cfg, rec),
        ExperimentId::Bohm => bohm_experiment(cfg, rec),
    }
}

fn rng(cfg: &ExperimentConfig, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, stream))
}

fn le(value: f64, tol: f64) -> bool {
    value <= tol
}

fn branch_demo(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let p: BranchDemoParams = cfg.params()?;
    let a = collapse::real_amplitudes(&p.amplitudes);
    let n = a.len();
    let prepared = branching::premeasurement(&a, n)?;
    let observed = branching::couple_observer(&branching::couple_detectors(&prepared)?)?;
    let written = branching::couple_writer(&observed)?;

    let weights = written.branch_weights()?;
    let gram = written.gram_matrix()?;
    let mut gram_dev: f64 = 0.0;
    for j in 0..n {
        for k in 0..n {
            if weights[j] > 0.0 && weights[k] > 0.0 {
                let target = if j == k { 1.0 } else { 0.0 };
                gram_dev = gram_dev.max((gram[(j, k)] - Complex64::new(target, 0.0)).norm());
            }
        }
    }
    rec.check("gram_identity", le(gram_dev, 1e-12), gram_dev, Some(1e-12), "max |G − I| over populated branches")?;

    let mut hrng = rng(cfg, 0);
    let (mut inter, mut drift): (f64, f64) = (0.0, 0.0);
    for _ in 0..p.hamiltonians {
        let h = branching::BlockHamiltonian::random(n, &mut hrng);
        inter = inter.max(branching::interbranch_elements(&h, &written)?.max_offdiagonal);
        drift = drift.max(branching::evolve_and_check_weights(&h, &written, p.evolve_time)?.max_deviation);
    }
    let detail = format!("{} random block hamiltonians", p.hamiltonians);
    rec.check("interbranch_elements", le(inter, 1e-12), inter, Some(1e-12), detail.clone())?;
    rec.check("weights_conserved", le(drift, 1e-10), drift, Some(1e-10), detail)?;

    let mut rrng = rng(cfg, 1);
    let mut rows = Vec::with_capacity(p.rotations);
    let mut worst: f64 = branching::nonclassical_weight(&written)?;
    for i in 0..p.rotations {
        let u = branching::random_observer_rotation(n, &mut rrng);
        let after = branching::nonclassical_weight(&written.reexpress_observer(&u)?)?;
        let before = branching::nonclassical_weight(&branching::couple_writer(&observed.rotate_observer(&u)?)?)?;
        worst = worst.max(after).max(before);
        rows.push(vec![i.to_string(), num(after), num(before)]);
    }
    if n == 2 {
        let mixed = branching::mixed_observer_states(&observed)?;
        for part in [&mixed.a, &mixed.b] {
            worst = worst.max(branching::nonclassical_weight(&branching::couple_writer(part)?)?);
        }
        rec.observe("mixed_state_coefficients", [
            [mixed.coefficients.0.re, mixed.coefficients.0.im],
            [mixed.coefficients.1.re, mixed.coefficients.1.im],
        ])?;
    }
    rec.check(
        "nonclassical_weight",
        le(worst, 1e-12),
        worst,
        Some(1e-12),
        format!("{} observer rotations before and after writing", p.rotations),
    )?;

    let mut green: f64 = 0.0;
    for s in [&prepared, &observed, &written] {
        let state = s.record_state()?;
        if state.factor(branching::DETECTOR).is_some() {
            green = green.max(branching::color_scan(&state)?.green_weight);
        }
    }
    rec.check("no_green", green == 0.0, green, Some(0.0), "weight on both-detectors-yes records")?;
    if n <= 2 {
        rec.observe("colors", branching::color_signal(&written)?)?;
    }

    let mut overlap_rows = Vec::new();
    for &eps in &p.overlap_epsilons {
        let d = branching::couple_detectors_with_overlap(&prepared, eps)?;
        let misrecord = tensor::subspace_weight(d.state(), |t| {
            t.index(branching::DETECTOR)
                .map(|r| r != 0 && Some(r - 1) != t.index(branching::SYSTEM))
                .unwrap_or(false)
        });
        overlap_rows.push(vec![num(eps), num(misrecord)]);
        rec.observe(&format!("misrecord_weight_eps_{eps}"), misrecord)?;
    }

    rec.csv(
        "branches.csv",
        &["branch", "weight"],
        weights.iter().enumerate().map(|(k, w)| vec![(k + 1).to_string(), num(*w)]),
    )?;
    rec.csv(
        "gram.csv",
        &["j", "k", "re", "im"],
        (0..n).flat_map(|j| (0..n).map(move |k| (j, k))).map(|(j, k)| {
            vec![(j + 1).to_string(), (k + 1).to_string(), num(gram[(j, k)].re), num(gram[(j, k)].im)]
        }),
    )?;
    rec.csv("rotations.csv", &["rotation", "nonclassical_after_writing", "nonclassical_before_writing"], rows)?;
    rec.csv("overlap.csv", &["epsilon", "misrecord_weight"], overlap_rows)?;
    rec.json("state.json", &written.to_document())?;
    rec.observe("branch_weights", &weights)?;
    Ok(())
}

fn born_derive(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let p: BornDeriveParams = cfg.params()?;
    let law = p.law.build()?;
    rec.observe("law", law.id())?;

    #[derive(Serialize)]
    struct Report {
        constraints: Vec<born::ConstraintReport>,
        lagrange: born::LagrangeReport,
        composition: born::CompositionReport,
        derived: born::DerivedLaw,
    }

    let mut constraints = Vec::new();
    for &n in &p.sizes {
        let r = born::check_constraints(&law, n, p.samples, derive_seed(cfg.master_seed, 100 + n as u64))?;
        let v = r.max_sum_violation.max(r.max_range_violation);
        rec.check(
            &format!("constraints_n{n}"),
            le(v, 1e-12),
            v,
            Some(1e-12),
            format!("sum and range over {} points on the sphere", p.samples),
        )?;
        constraints.push(r);
    }

    let lagrange = born::lagrange_residual(&law, &p.lagrange_point, p.fd_step)?;
    let dev = lagrange
        .values
        .iter()
        .flatten()
        .map(|v| (v - 2.0).abs())
        .fold(lagrange.max_residual, f64::max);
    rec.check("lagrange_multiplier", le(dev, 1e-6), dev, Some(1e-6), "max |λ_k − 2| and pairwise residual")?;

    let composition = born::compose_auxiliary(&law, &p.composition_a, &p.composition_b)?;
    rec.check(
        "composition",
        le(composition.max_violation, 1e-14),
        composition.max_violation,
        Some(1e-14),
        "joint vs product probability",
    )?;

    let n = p.lagrange_point.len();
    let mut prng = rng(cfg, 1);
    let probes: Vec<born::AuxProbe> = (0..p.probes).map(|_| born::AuxProbe::random(n, p.aux_outcomes, &mut prng)).collect();
    let derived = born::derive_born(&probes)?;
    let err = derived.c.iter().map(|c| c.abs()).fold((derived.lambda - 2.0).abs(), f64::max);
    rec.check("derive_born", le(err, 1e-10), err, Some(1e-10), "max(|λ − 2|, |c_k|)")?;
    rec.observe("derived_lambda", derived.lambda)?;
    rec.observe("derived_c", &derived.c)?;

    rec.csv(
        "constraints.csv",
        &["n", "samples", "max_sum_violation", "max_range_violation"],
        constraints
            .iter()
            .map(|r| vec![r.n.to_string(), r.samples.to_string(), num(r.max_sum_violation), num(r.max_range_violation)]),
    )?;
    rec.csv(
        "lagrange.csv",
        &["k", "value"],
        lagrange
            .values
            .iter()
            .enumerate()
            .map(|(k, v)| vec![(k + 1).to_string(), v.map(num).unwrap_or_default()]),
    )?;
    rec.csv(
        "composition.csv",
        &["k", "j", "joint", "product", "violation"],
        composition
            .entries
            .iter()
            .map(|e| vec![e.k.to_string(), e.j.to_string(), num(e.joint), num(e.product), num(e.violation)]),
    )?;
    rec.json("report.json", &Report { constraints, lagrange, composition, derived })
}

fn large_n(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let p: LargeNParams = cfg.params()?;
    let law = p.law.build()?;
    rec.observe("law", law.id())?;
    let big_n = p.big_n;

    let dist = largen::induced_macro_distribution(&law, big_n, p.p)?;
    let total = dist.total_weight();
    rec.check("total_weight", le((total - 1.0).abs(), 1e-10), (total - 1.0).abs(), Some(1e-10), "|Σ weight − 1|")?;
    let mode = dist.mode();
    let expected_mode = ((big_n + 1) as f64 * p.p).floor() as u64;
    rec.check("mode", mode == expected_mode, mode as f64, None, format!("expected ⌊(N+1)p⌋ = {expected_mode}"))?;
    let sigma = dist.std_dev();
    let binomial_sigma = (big_n as f64 * p.p * (1.0 - p.p)).sqrt();
    let rel = (sigma / binomial_sigma - 1.0).abs();
    rec.check("width", le(rel, 0.01), sigma, Some(0.01), format!("relative to √(Np(1−p)) = {binomial_sigma}"))?;
    rec.observe("mode_fraction", mode as f64 / big_n as f64)?;

    let small = p.exact_check_n;
    let p_exact = BigRational::from_float(p.p).ok_or_else(|| invalid("p is not finite"))?;
    let mut worst: f64 = 0.0;
    for n in 0..=small {
        let exact = largen::branch_class_weight_exact(small, n, &p_exact)?;
        let exact_f = ratio_to_f64(&exact);
        let logspace = largen::branch_class_amplitude(small, n, p.p)?.exp();
        if exact_f > 0.0 {
            worst = worst.max((logspace - exact_f).abs() / exact_f);
        }
    }
    rec.check("exact_vs_log", le(worst, 1e-10), worst, Some(1e-10), format!("N = {small}, all classes"))?;

    let versions = largen::versions_count(big_n)?;
    let digits = versions.to_string().len();
    let expected_digits = (big_n as f64 * std::f64::consts::LOG10_2).floor() as usize + 1;
    rec.check("versions_digits", digits == expected_digits, digits as f64, None, format!("2^{big_n}"))?;

    let ratio = largen::branch_count_ratio(big_n, p.ratio_n1, p.ratio_n2)?;
    let comparison = largen::compare_with_quoted(ratio.log10_ratio, p.quoted_log10_ratio, p.quoted_tolerance);
    rec.observe("branch_count_ratio_log10", ratio.log10_ratio)?;
    rec.observe("quoted_comparison", &comparison)?;

    if let born::LawKind::AffineQuadratic { alpha, beta } = law.kind() {
        let q = largen::quadratic_term_mass(*alpha, *beta, big_n, p.p)?;
        rec.check(
            "quadratic_mass_bound",
            q.ln_mass <= q.ln_bound + 1e-12,
            q.ln_mass,
            Some(q.ln_bound),
            "ln mass ≤ ln[β (p² + (1−p)²)^N]",
        )?;
        rec.observe("quadratic_fraction", q.fraction)?;
    }

    let rbr = largen::run_by_run_experiment(&law, big_n, p.p, p.runs, derive_seed(cfg.master_seed, 1))?;
    if let (Some(freq), Some(s)) = (rbr.per_run_frequency, rbr.sigma) {
        let z = if s > 0.0 { (freq - rbr.per_run_probability) / s } else { 0.0 };
        rec.check(
            "run_by_run_frequency",
            z.abs() <= 3.0,
            z,
            Some(3.0),
            format!("per-run frequency {freq} vs law value {}", rbr.per_run_probability),
        )?;
    }
    rec.observe("run_by_run", &rbr)?;

    rec.csv(
        "macro.csv",
        &["n", "weight", "ln_weight"],
        dist.weights
            .iter()
            .zip(&dist.ln_weights)
            .enumerate()
            .map(|(n, (w, l))| vec![n.to_string(), num(*w), num(*l)]),
    )?;
    #[derive(Serialize)]
    struct Report<'a> {
        law: String,
        convention: &'a str,
        big_n: u64,
        p: f64,
        mode: u64,
        std_dev: f64,
        versions_digits: usize,
        ratio: &'a largen::BranchCountRatio,
        quoted: &'a largen::QuotedComparison,
        run_by_run: &'a largen::RunByRunReport,
    }
    rec.json(
        "report.json",
        &Report {
            law: law.id(),
            convention: dist.convention,
            big_n,
            p: p.p,
            mode,
            std_dev: sigma,
            versions_digits: digits,
            ratio: &ratio,
            quoted: &comparison,
            run_by_run: &rbr,
        },
    )
}

/// `f64` value of a possibly tiny or huge rational, via its base-2 exponent.
fn ratio_to_f64(r: &BigRational) -> f64 {
    let (n, d) = (r.numer(), r.denom());
    if n == &BigInt::from(0) {
        return 0.0;
    }
    let shift = n.bits() as i64 - d.bits() as i64;
    let scaled = if shift > 0 {
        BigRational::new(n.clone(), d.clone() << (shift as usize))
    } else {
        BigRational::new(n.clone() << ((-shift) as usize), d.clone())
    };
    scaled.to_f64().unwrap_or(f64::NAN) * 2f64.powi(shift as i32)
}

fn collapse_experiment(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let p: CollapseExperimentParams = cfg.params()?;
    let params = collapse::CollapseParams {
        sigma: p.sigma,
        dt: p.dt,
        max_steps: p.max_steps,
        record_every: p.record_every,
    };

    let mut invariant = 0usize;
    let mut contradictions = 0usize;
    let mut cert_rows = Vec::new();
    for f in 0..p.families {
        let n = 2 + f % 3;
        let fam = collapse::LinearEvolutionFamily::random_block(
            n,
            p.family_runs,
            &p.family_times,
            derive_seed(cfg.master_seed, 1_000 + f as u64),
        )?;
        let mut arng = rng(cfg, 2_000 + f as u64);
        let lists: Vec<Vec<Complex64>> = (0..p.amplitude_lists)
            .map(|_| collapse::real_amplitudes(&tensor::random::positive_sphere_point(n, &mut arng)))
            .collect();
        let mut same = true;
        for run in 0..fam.runs() {
            let reference = collapse::linear_x(&fam, &lists[0], run)?;
            for a in &lists[1..] {
                let other = collapse::linear_x(&fam, a, run)?;
                same &= reference
                    .weights
                    .iter()
                    .flatten()
                    .zip(other.weights.iter().flatten())
                    .all(|(x, y)| x.to_bits() == y.to_bits());
            }
        }
        invariant += same as usize;
        let cert = collapse::born_violation_certificate(&fam, &lists, fam.runs())?;
        contradictions += cert.contradiction as usize;
        cert_rows.push(vec![
            f.to_string(),
            n.to_string(),
            same.to_string(),
            cert.contradiction.to_string(),
            num(cert.mismatch[cert.worst]),
        ]);
    }
    rec.check(
        "linearity_invariance",
        invariant == p.families,
        invariant as f64,
        None,
        format!("families with bitwise identical X across {} amplitude lists", p.amplitude_lists),
    )?;
    rec.check(
        "certificate_contradiction",
        contradictions == p.families,
        contradictions as f64,
        None,
        format!("of {} families", p.families),
    )?;

    let mut stats = Vec::new();
    let (mut resolved, mut total, mut proj): (u64, u64, f64) = (0, 0, 0.0);
    for (i, amps) in p.amplitudes.iter().enumerate() {
        let a = collapse::real_amplitudes(amps);
        let s = collapse::collapse_statistics(&a, p.runs, &params, derive_seed(cfg.master_seed, 3_000 + i as u64))?;
        let zmax = s.z_scores.iter().fold(0.0f64, |m, z| m.max(z.abs()));
        rec.check(
            &format!("frequencies_{i}"),
            s.within_three_sigma,
            zmax,
            Some(3.0),
            format!("targets {:?}, frequencies {:?}", s.targets, s.frequencies),
        )?;
        resolved += s.runs - s.unresolved;
        total += s.runs;
        proj = proj.max(s.projection_fraction);

        let traj = collapse::stochastic_collapse_run(&a, &params, derive_seed(cfg.master_seed, 4_000 + i as u64))?;
        let mut header = vec!["time".to_string()];
        header.extend((1..=a.len()).map(|k| format!("x_{k}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        rec.csv(
            &format!("trajectory_{i}.csv"),
            &header,
            traj.times.iter().zip(&traj.weights).map(|(t, w)| {
                std::iter::once(num(*t)).chain(w.iter().map(|x| num(*x))).collect()
            }),
        )?;
        stats.push(s);
    }
    if total > 0 {
        let frac = resolved as f64 / total as f64;
        rec.check("absorption", frac >= 0.999, frac, Some(0.999), "share of runs reaching a vertex")?;
        rec.check("projection_rate", proj < 1e-3, proj, Some(1e-3), "share of steps clipped to the simplex")?;
    }

    rec.csv(
        "certificates.csv",
        &["family", "n", "bitwise_invariant", "contradiction", "worst_mismatch"],
        cert_rows,
    )?;
    rec.csv(
        "frequencies.csv",
        &["case", "outcome", "target", "frequency", "sigma", "z"],
        stats.iter().enumerate().flat_map(|(i, s)| {
            (0..s.targets.len()).map(move |k| {
                vec![
                    i.to_string(),
                    (k + 1).to_string(),
                    num(s.targets[k]),
                    num(s.frequencies[k]),
                    num(s.sigmas[k]),
                    num(s.z_scores[k]),
                ]
            })
        }),
    )?;
    rec.json("report.json", &stats)
}

fn finegrain_experiment(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let p: FinegrainParams = cfg.params()?;
    let weights = p
        .weights
        .iter()
        .map(|s| finegrain::parse_rational(s))
        .collect::<Result<Vec<_>>>()?;
    let report = finegrain::report(&weights)?;
    let state = finegrain::fine_grain(&weights)?;
    let m_total = report.plan.m_total;

    let populated: Vec<usize> = (0..state.dim()).filter(|&i| state.amps()[i].norm_sqr() > 0.0).collect();
    let uniform = report.branches.len() as i64 == m_total
        && populated.iter().all(|&i| state.amps()[i] == Complex64::new((1.0 / m_total as f64).sqrt(), 0.0));
    rec.check(
        "uniform_branches",
        uniform,
        report.branches.len() as f64,
        None,
        format!("{} branches of squared amplitude {}", m_total, report.branch_weight),
    )?;
    let coarse = finegrain::coarse_probabilities(&state)?;
    rec.check(
        "coarse_probabilities",
        coarse == report.plan.weights && report.probabilities == report.plan.weights,
        0.0,
        None,
        format!("{:?}", coarse.iter().map(|r| r.to_string()).collect::<Vec<_>>()),
    )?;
    let mut gram_dev: f64 = 0.0;
    for &i in &populated {
        for &j in &populated {
            let bi = state.project(|t| t.indices() == state.basis_tuple(i).indices());
            let bj = state.project(|t| t.indices() == state.basis_tuple(j).indices());
            let g = tensor::inner_product(&bi.normalize()?, &bj.normalize()?)?;
            let target = if i == j { 1.0 } else { 0.0 };
            gram_dev = gram_dev.max((g - Complex64::new(target, 0.0)).norm());
        }
    }
    rec.check("orthogonality", gram_dev == 0.0, gram_dev, Some(0.0), "Gram matrix of populated branches")?;

    let mut swap_rows = Vec::new();
    for [i, j] in &p.swaps {
        let verdict = finegrain::swap_admissibility(&state, *i, *j)?;
        rec.observe(&format!("swap_{i}_{j}"), verdict)?;
        swap_rows.push(vec![i.to_string(), j.to_string(), serde_json::to_value(verdict)?.as_str().unwrap_or("").to_string()]);
    }

    if weights.len() == 2 {
        let padded = finegrain::uniformize_workaround(&weights)?;
        let padded_probs = finegrain::coarse_probabilities(&padded)?;
        rec.check("padding_neutral", padded_probs == report.plan.weights, 0.0, None, "coarse probabilities after padding")?;
        let nb = finegrain::branches(&padded)?.len();
        let all_admissible = (0..nb)
            .flat_map(|i| (0..nb).map(move |j| (i, j)))
            .all(|(i, j)| matches!(finegrain::swap_admissibility(&padded, i, j), Ok(finegrain::SwapVerdict::Admissible)));
        rec.observe("padded_all_swaps_admissible", all_admissible)?;
        rec.json("padded_state.json", &padded.to_document())?;
    }

    rec.csv(
        "branches.csv",
        &["branch", "outcome", "ancilla_symbol", "ancilla_size", "weight_numerator", "weight_denominator"],
        report.branches.iter().enumerate().map(|(i, b)| {
            vec![
                i.to_string(),
                (b.outcome + 1).to_string(),
                b.ancilla_symbol.clone(),
                b.ancilla_size.to_string(),
                report.branch_weight.numer().to_string(),
                report.branch_weight.denom().to_string(),
            ]
        }),
    )?;
    rec.csv("swaps.csv", &["i", "j", "verdict"], swap_rows)?;
    rec.json("report.json", &report)
}

fn bohm_experiment(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let p: BohmParams = cfg.params()?;
    if p.weights.is_empty() {
        return Err(invalid("bohm needs at least one weight"));
    }
    let pair = |p1: f64| {
        bohm::PacketPair::new(
            [Complex64::new(p1.sqrt(), 0.0), Complex64::new((1.0 - p1).sqrt(), 0.0)],
            [0.0, 0.0],
            [p.velocity, -p.velocity],
            p.width,
        )
    };

    let mut reports = Vec::new();
    for (i, &p1) in p.weights.iter().enumerate() {
        let pp = pair(p1)?;
        let r = bohm::equivariance_report(&pp, p.samples, derive_seed(cfg.master_seed, 10 + i as u64), bohm::InitialDensity::Equilibrium)?;
        let zmax = r.z_scores.iter().fold(0.0f64, |m, z| m.max(z.abs()));
        rec.check(
            &format!("equivariance_{i}"),
            r.within_three_sigma,
            zmax,
            Some(3.0),
            format!("|a1|² = {p1}, fractions {:?}", r.fractions),
        )?;
        reports.push(r);
    }

    let first = pair(p.weights[0])?;
    rec.observe("t_sep", first.t_sep()?)?;
    let wrong = bohm::equivariance_report(&first, p.samples, derive_seed(cfg.master_seed, 20), p.nonequilibrium)?;
    let zmax = wrong.z_scores.iter().fold(0.0f64, |m, z| m.max(z.abs()));
    rec.check(
        "nonequilibrium_violation",
        zmax > 5.0,
        zmax,
        Some(5.0),
        format!("fractions {:?} from a non-|ψ|² start", wrong.fractions),
    )?;
    reports.push(wrong);

    let nc = bohm::no_crossing_check(&first, p.pairs, p.dt, derive_seed(cfg.master_seed, 30))?;
    rec.check(
        "no_crossing",
        nc.violations == 0 && nc.stalled == 0,
        nc.violations as f64,
        Some(0.0),
        format!("{} pairs, min gap {:e}", nc.pairs, nc.min_gap),
    )?;

    let transport = bohm::density_transport(&first, p.transport_time, p.samples, p.transport_bins, derive_seed(cfg.master_seed, 40))?;
    rec.check(
        "density_transport",
        transport.pass,
        transport.p_value,
        Some(0.01),
        format!("χ² = {} with {} dof", transport.chi2, transport.dof),
    )?;

    if let Some(b) = reports[0].boundary {
        let at = bohm::contextuality_probe(&first, b, p.probe_delta)?;
        let far = bohm::contextuality_probe(&first, b + 2.0 * p.width, p.probe_delta)?;
        rec.observe("probe_at_boundary", &at)?;
        rec.observe("probe_inside_basin", &far)?;
    }

    let t_end = first.t_sep()?;
    let starts = bohm::sample_initial(&first, &bohm::InitialDensity::Equilibrium, 20, derive_seed(cfg.master_seed, 50))?;
    let mut rows = Vec::new();
    for (i, x0) in starts.iter().enumerate() {
        let tr = bohm::integrate_trajectory(&first, *x0, p.dt, t_end)?;
        for (t, x) in tr.times.iter().zip(&tr.positions) {
            rows.push(vec![i.to_string(), num(*t), num(*x), tr.branch.map(|b| b.to_string()).unwrap_or_default()]);
        }
    }
    rec.csv("trajectories.csv", &["trajectory", "time", "x", "branch"], rows)?;
    rec.csv(
        "equivariance.csv",
        &["case", "density", "samples", "fraction_1", "fraction_2", "target_1", "target_2", "z_1", "z_2"],
        reports.iter().enumerate().map(|(i, r)| {
            vec![
                i.to_string(),
                serde_json::to_value(r.density).map(|v| v["kind"].as_str().unwrap_or("").to_string()).unwrap_or_default(),
                r.samples.to_string(),
                num(r.fractions[0]),
                num(r.fractions[1]),
                num(r.targets[0]),
                num(r.targets[1]),
                num(r.z_scores[0]),
                num(r.z_scores[1]),
            ]
        }),
    )?;
    #[derive(Serialize)]
    struct Report<'a> {
        equivariance: &'a [bohm::EquivarianceReport],
        no_crossing: bohm::NoCrossingReport,
        transport: bohm::DensityTransportReport,
    }
    rec.json("report.json", &Report { equivariance: &reports, no_crossing: nc, transport })
}
