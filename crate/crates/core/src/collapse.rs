//! Collapse under linear evolution, and a nonlinear stochastic surrogate.
//!
//! Under any linear `T(t)`, the branch coefficient `β(k,t)` is fixed by how
//! `T(t)` acts on `|k⟩|D:k,yes⟩` alone. The normalized weights
//! `X(k,t) = |β(k,t)|² / Σ_j |β(j,t)|²` therefore cannot depend on the initial
//! amplitudes `a(k)`. [`linear_x`] computes `X` that way and also evolves the full
//! state to confirm linearity numerically.
//!
//! The stochastic model is not GRW: it is the replicator-noise diffusion
//! `dx_k = σ x_k (dW_k − Σ_j x_j dW_j)` on the probability simplex, a bounded
//! martingale that absorbs at a vertex.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::runner::derive_seed;
use crate::tensor::{self, LinearOperator};

pub const ABSORPTION_THRESHOLD: f64 = 1.0 - 1e-6;
pub const SIMPLEX_TOL: f64 = 1e-9;

fn check_normalized(a: &[Complex64]) -> Result<()> {
    if a.is_empty() {
        return Err(invalid("amplitude list is empty"));
    }
    let s: f64 = a.iter().map(|z| z.norm_sqr()).sum();
    if (s - 1.0).abs() > 1e-10 {
        return Err(Error::Unnormalized(s));
    }
    Ok(())
}

pub fn real_amplitudes(a: &[f64]) -> Vec<Complex64> {
    a.iter().map(|&x| Complex64::new(x, 0.0)).collect()
}

/// Coefficients and normalized weights over time for one run.
#[derive(Clone, Debug, Serialize)]
pub struct CollapseTrajectory {
    pub times: Vec<f64>,
    /// `β(k, t)`; for the stochastic model `β = √x`.
    pub beta: Vec<Vec<Complex64>>,
    /// `X(k, t)`, summing to one at each time.
    pub weights: Vec<Vec<f64>>,
    /// Winning outcome (0-based) once a vertex is reached.
    pub outcome: Option<usize>,
    pub resolved: bool,
    pub steps: u64,
    /// Steps whose Euler update left the simplex and had to be projected back.
    pub projections: u64,
    /// Max over times of `|‖Π_k T Ψ‖ − |a_k| |β_k||`; zero for the stochastic model.
    pub linearity_residual: f64,
}

/// Linear, possibly non-unitary, evolution on the `|k⟩|D:k,yes⟩` pair space.
///
/// Each operator acts on `system ⊗ record` (dimension `n²`, system index
/// slowest) and must preserve every record subspace. `operators[m][i]` is
/// `T_m(times[i])`, so different runs may use different families.
#[derive(Clone, Debug)]
pub struct LinearEvolutionFamily {
    n: usize,
    times: Vec<f64>,
    operators: Vec<Vec<LinearOperator>>,
}

fn record_projector_pair(n: usize, r: usize) -> LinearOperator {
    let m = DMatrix::from_fn(n, n, |i, j| {
        if i == r && j == r {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    LinearOperator::identity(n).kron(&LinearOperator::general(m).expect("square"))
}

/// `Σ_k B_k ⊗ Π_k`.
fn block_sum(n: usize, blocks: &[LinearOperator]) -> LinearOperator {
    let mut m = DMatrix::zeros(n * n, n * n);
    for (k, b) in blocks.iter().enumerate() {
        let mut p = DMatrix::zeros(n, n);
        p[(k, k)] = Complex64::new(1.0, 0.0);
        m += b.kron(&LinearOperator::general(p).expect("square")).matrix();
    }
    LinearOperator::general(m).expect("square")
}

impl LinearEvolutionFamily {
    pub fn new(n: usize, times: Vec<f64>, operators: Vec<Vec<LinearOperator>>) -> Result<Self> {
        if n == 0 || times.is_empty() || operators.is_empty() {
            return Err(invalid("family needs n ≥ 1, at least one time, and at least one run"));
        }
        for run in &operators {
            if run.len() != times.len() {
                return Err(Error::DimensionMismatch { expected: times.len(), got: run.len() });
            }
            for t in run {
                if t.dim() != n * n {
                    return Err(Error::DimensionMismatch { expected: n * n, got: t.dim() });
                }
                for r in 0..n {
                    let p = record_projector_pair(n, r);
                    let c = t.matrix() * p.matrix() - p.matrix() * t.matrix();
                    let defect = c.iter().map(|z| z.norm()).fold(0.0, f64::max);
                    if defect > 1e-12 * (1.0 + t.matrix().norm()) {
                        return Err(invalid(format!("operator mixes record subspaces (defect {defect:e})")));
                    }
                }
            }
        }
        Ok(LinearEvolutionFamily { n, times, operators })
    }

    /// Random non-unitary block family: `T_m(0) = 1`, and at later times each
    /// record block is a random complex matrix scaled by `exp(g t)` with `g ~ N(0,1)`.
    pub fn random_block(n: usize, runs: usize, times: &[f64], seed: u64) -> Result<Self> {
        Self::random_with(n, runs, times, seed, |rng| tensor::random::general(n, rng))
    }

    /// As [`Self::random_block`] but with diagonal blocks.
    pub fn random_diagonal(n: usize, runs: usize, times: &[f64], seed: u64) -> Result<Self> {
        Self::random_with(n, runs, times, seed, |rng| {
            let d: Vec<Complex64> = (0..n).map(|_| tensor::random::complex_gaussian(rng)).collect();
            LinearOperator::general(DMatrix::from_fn(n, n, |i, j| if i == j { d[i] } else { Complex64::new(0.0, 0.0) }))
                .expect("square")
        })
    }

    /// Unitary blocks at every time.
    pub fn random_unitary(n: usize, runs: usize, times: &[f64], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let operators = (0..runs)
            .map(|_| {
                times
                    .iter()
                    .map(|_| block_sum(n, &(0..n).map(|_| tensor::random::unitary(n, &mut rng)).collect::<Vec<_>>()))
                    .collect()
            })
            .collect();
        Self::new(n, times.to_vec(), operators)
    }

    fn random_with<F>(n: usize, runs: usize, times: &[f64], seed: u64, mut block: F) -> Result<Self>
    where
        F: FnMut(&mut ChaCha8Rng) -> LinearOperator,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let operators = (0..runs)
            .map(|_| {
                let rates: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                times
                    .iter()
                    .map(|&t| {
                        if t == 0.0 {
                            return LinearOperator::identity(n * n);
                        }
                        let blocks: Vec<_> = rates
                            .iter()
                            .map(|g| {
                                let b = block(&mut rng);
                                LinearOperator::general(b.matrix().map(|z| z * (g * t).exp())).expect("square")
                            })
                            .collect();
                        block_sum(n, &blocks)
                    })
                    .collect()
            })
            .collect();
        Self::new(n, times.to_vec(), operators)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn runs(&self) -> usize {
        self.operators.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }
}

/// `X(k, t)` for run `run` of a linear family.
pub fn linear_x(fam: &LinearEvolutionFamily, a: &[Complex64], run: usize) -> Result<CollapseTrajectory> {
    let n = fam.n;
    if a.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: a.len() });
    }
    check_normalized(a)?;
    let ops = fam
        .operators
        .get(run)
        .ok_or_else(|| invalid(format!("run {run} out of range ({} runs)", fam.runs())))?;

    let mut beta = Vec::with_capacity(ops.len());
    let mut weights = Vec::with_capacity(ops.len());
    let mut linearity_residual: f64 = 0.0;
    let initial: Vec<Complex64> = {
        let mut v = vec![Complex64::new(0.0, 0.0); n * n];
        for (k, ak) in a.iter().enumerate() {
            v[k * n + k] = *ak;
        }
        v
    };

    for t in ops {
        let m = t.matrix();
        // β(k): T applied to the branch basis vector |k⟩|D:k⟩ alone
        let betas: Vec<Complex64> = (0..n)
            .map(|k| {
                let col = k * n + k;
                let norm = (0..n * n).map(|i| m[(i, col)].norm_sqr()).sum::<f64>().sqrt();
                let diag = m[(col, col)];
                let phase = if diag.norm() > 0.0 { diag / diag.norm() } else { Complex64::new(1.0, 0.0) };
                phase * norm
            })
            .collect();
        let total: f64 = betas.iter().map(|b| b.norm_sqr()).sum();
        if total == 0.0 {
            return Err(Error::Degenerate("evolution annihilates every branch".into()));
        }
        weights.push(betas.iter().map(|b| b.norm_sqr() / total).collect());

        let evolved = t.apply_vec(&initial)?;
        for (k, (ak, bk)) in a.iter().zip(&betas).enumerate() {
            let branch_norm = (0..n)
                .map(|s| evolved[s * n + k].norm_sqr())
                .sum::<f64>()
                .sqrt();
            linearity_residual = linearity_residual.max((branch_norm - ak.norm() * bk.norm()).abs());
        }
        beta.push(betas);
    }

    Ok(CollapseTrajectory {
        times: fam.times.clone(),
        beta,
        weights,
        outcome: None,
        resolved: false,
        steps: fam.times.len() as u64,
        projections: 0,
        linearity_residual,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ViolationCertificate {
    pub runs: usize,
    /// `(1/N) Σ_m X_m(k, t_final)` for each amplitude list.
    pub averages: Vec<Vec<f64>>,
    /// `|a(k)|²` for each amplitude list.
    pub targets: Vec<Vec<f64>>,
    /// The averages agree bit for bit across all amplitude lists.
    pub averages_identical: bool,
    /// Per amplitude list: `max_k |average − |a(k)|²|`.
    pub mismatch: Vec<f64>,
    /// Index of the amplitude list the averages fail worst.
    pub worst: usize,
    /// Fewer than two distinct `|a|²` profiles, so no contradiction is possible.
    pub vacuous: bool,
    /// The averages are identical while the targets differ, so the
    /// run-average law fails for at least one list.
    pub contradiction: bool,
}

pub fn born_violation_certificate(
    fam: &LinearEvolutionFamily,
    a_set: &[Vec<Complex64>],
    runs: usize,
) -> Result<ViolationCertificate> {
    if runs == 0 || runs > fam.runs() {
        return Err(invalid(format!("runs must be in 1..={}", fam.runs())));
    }
    let mut averages = Vec::with_capacity(a_set.len());
    let mut targets = Vec::with_capacity(a_set.len());
    for a in a_set {
        let mut avg = vec![0.0; fam.n];
        for m in 0..runs {
            let traj = linear_x(fam, a, m)?;
            let last = traj.weights.last().expect("family has at least one time");
            for (s, x) in avg.iter_mut().zip(last) {
                *s += x;
            }
        }
        avg.iter_mut().for_each(|s| *s /= runs as f64);
        averages.push(avg);
        targets.push(a.iter().map(|z| z.norm_sqr()).collect::<Vec<f64>>());
    }
    let averages_identical = averages
        .windows(2)
        .all(|w| w[0].iter().zip(&w[1]).all(|(x, y)| x.to_bits() == y.to_bits()));
    let mismatch: Vec<f64> = averages
        .iter()
        .zip(&targets)
        .map(|(avg, tgt)| avg.iter().zip(tgt).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
        .collect();
    let worst = mismatch
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &m)| if m > b.1 { (i, m) } else { b })
        .0;
    let distinct_targets = targets
        .windows(2)
        .any(|w| w[0].iter().zip(&w[1]).any(|(x, y)| (x - y).abs() > 1e-12))
        || targets.iter().skip(1).any(|t| t.iter().zip(&targets[0]).any(|(x, y)| (x - y).abs() > 1e-12));
    let vacuous = !distinct_targets;
    Ok(ViolationCertificate {
        runs,
        averages,
        targets,
        averages_identical,
        mismatch,
        worst,
        vacuous,
        contradiction: averages_identical && !vacuous,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseParams {
    pub sigma: f64,
    pub dt: f64,
    pub max_steps: u64,
    /// Record every this many steps in trajectories; the final state is always recorded.
    pub record_every: u64,
}

impl Default for CollapseParams {
    fn default() -> Self {
        CollapseParams { sigma: 1.0, dt: 1e-3, max_steps: 1_000_000, record_every: 100 }
    }
}

impl CollapseParams {
    fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.dt > 0.0) || !self.sigma.is_finite() || !self.dt.is_finite() {
            return Err(invalid("sigma and dt must be positive and finite"));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every must be at least 1"));
        }
        Ok(())
    }
}

struct Walker {
    x: Vec<f64>,
    dw: Vec<f64>,
    rng: ChaCha8Rng,
    scale: f64,
    projections: u64,
}

impl Walker {
    fn new(x0: Vec<f64>, params: &CollapseParams, seed: u64) -> Self {
        let n = x0.len();
        Walker {
            x: x0,
            dw: vec![0.0; n],
            rng: ChaCha8Rng::seed_from_u64(seed),
            scale: params.sigma * params.dt.sqrt(),
            projections: 0,
        }
    }

    fn leader(&self) -> (usize, f64) {
        self.x
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
    }

    fn absorbed(&self) -> Option<usize> {
        let (k, v) = self.leader();
        (v > ABSORPTION_THRESHOLD).then_some(k)
    }

    fn step(&mut self) {
        for d in self.dw.iter_mut() {
            *d = self.scale * self.rng.sample::<f64, _>(StandardNormal);
        }
        let mean: f64 = self.x.iter().zip(&self.dw).map(|(x, d)| x * d).sum();
        let mut clipped = false;
        for (x, d) in self.x.iter_mut().zip(&self.dw) {
            *x += *x * (d - mean);
            if *x < 0.0 {
                *x = 0.0;
                clipped = true;
            }
        }
        if clipped {
            self.projections += 1;
            let s: f64 = self.x.iter().sum();
            self.x.iter_mut().for_each(|x| *x /= s);
        }
    }
}

fn initial_weights(a: &[Complex64]) -> Result<Vec<f64>> {
    check_normalized(a)?;
    let x: Vec<f64> = a.iter().map(|z| z.norm_sqr()).collect();
    let s: f64 = x.iter().sum();
    Ok(x.into_iter().map(|v| v / s).collect())
}

/// One run of the martingale surrogate, recording `x(t)` along the way.
pub fn stochastic_collapse_run(a: &[Complex64], params: &CollapseParams, seed: u64) -> Result<CollapseTrajectory> {
    params.validate()?;
    let mut w = Walker::new(initial_weights(a)?, params, seed);
    let mut times = vec![0.0];
    let mut weights = vec![w.x.clone()];
    let mut steps = 0u64;
    let mut outcome = w.absorbed();
    while outcome.is_none() && steps < params.max_steps {
        w.step();
        steps += 1;
        let sum: f64 = w.x.iter().sum();
        debug_assert!((sum - 1.0).abs() <= SIMPLEX_TOL, "simplex drift {sum}");
        outcome = w.absorbed();
        if steps.is_multiple_of(params.record_every) || outcome.is_some() {
            times.push(steps as f64 * params.dt);
            weights.push(w.x.clone());
        }
    }
    if times.len() == 1 || *times.last().unwrap() != steps as f64 * params.dt {
        times.push(steps as f64 * params.dt);
        weights.push(w.x.clone());
    }
    let beta = weights
        .iter()
        .map(|row| row.iter().map(|x| Complex64::new(x.sqrt(), 0.0)).collect())
        .collect();
    Ok(CollapseTrajectory {
        times,
        beta,
        weights,
        outcome,
        resolved: outcome.is_some(),
        steps,
        projections: w.projections,
        linearity_residual: 0.0,
    })
}

/// Outcome of one run without storing the path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOutcome {
    pub outcome: Option<usize>,
    pub steps: u64,
    pub projections: u64,
    pub max_simplex_defect: f64,
}

pub fn stochastic_collapse_outcome(x0: &[f64], params: &CollapseParams, seed: u64) -> RunOutcome {
    let mut w = Walker::new(x0.to_vec(), params, seed);
    let mut steps = 0u64;
    let mut outcome = w.absorbed();
    let mut max_defect: f64 = 0.0;
    while outcome.is_none() && steps < params.max_steps {
        w.step();
        steps += 1;
        max_defect = max_defect.max((w.x.iter().sum::<f64>() - 1.0).abs());
        outcome = w.absorbed();
    }
    RunOutcome { outcome, steps, projections: w.projections, max_simplex_defect: max_defect }
}

/// Snapshot `x(t)` at fixed step counts (held at the stopping value after absorption).
pub fn stochastic_snapshots(x0: &[f64], params: &CollapseParams, seed: u64, at_steps: &[u64]) -> Vec<Vec<f64>> {
    let mut w = Walker::new(x0.to_vec(), params, seed);
    let mut steps = 0u64;
    let mut out = Vec::with_capacity(at_steps.len());
    let mut stopped = w.absorbed().is_some();
    for &target in at_steps {
        while !stopped && steps < target {
            w.step();
            steps += 1;
            stopped = w.absorbed().is_some();
        }
        out.push(w.x.clone());
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct CollapseStatistics {
    pub runs: u64,
    pub seed: u64,
    pub params: CollapseParams,
    pub counts: Vec<u64>,
    pub unresolved: u64,
    pub frequencies: Vec<f64>,
    /// `|a(k)|²`.
    pub targets: Vec<f64>,
    /// Binomial standard error at the target.
    pub sigmas: Vec<f64>,
    pub z_scores: Vec<f64>,
    pub within_three_sigma: bool,
    pub mean_steps: f64,
    /// Share of Euler steps that needed projection back onto the simplex.
    pub projection_fraction: f64,
    pub max_simplex_defect: f64,
}

pub fn collapse_statistics(a: &[Complex64], runs: u64, params: &CollapseParams, seed: u64) -> Result<CollapseStatistics> {
    if runs < 100 {
        return Err(invalid(format!("need at least 100 runs, got {runs}")));
    }
    params.validate()?;
    let x0 = initial_weights(a)?;
    let n = x0.len();
    let results: Vec<RunOutcome> = (0..runs)
        .into_par_iter()
        .map(|i| stochastic_collapse_outcome(&x0, params, derive_seed(seed, i)))
        .collect();
    let mut counts = vec![0u64; n];
    let mut unresolved = 0;
    let mut total_steps = 0u64;
    let mut total_proj = 0u64;
    let mut max_defect: f64 = 0.0;
    for r in &results {
        match r.outcome {
            Some(k) => counts[k] += 1,
            None => unresolved += 1,
        }
        total_steps += r.steps;
        total_proj += r.projections;
        max_defect = max_defect.max(r.max_simplex_defect);
    }
    let rf = runs as f64;
    let frequencies: Vec<f64> = counts.iter().map(|&c| c as f64 / rf).collect();
    let sigmas: Vec<f64> = x0.iter().map(|p| (p * (1.0 - p) / rf).sqrt()).collect();
    let z_scores: Vec<f64> = frequencies
        .iter()
        .zip(&x0)
        .zip(&sigmas)
        .map(|((f, p), s)| {
            if *s > 0.0 {
                (f - p) / s
            } else if (f - p).abs() == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let within_three_sigma = z_scores.iter().all(|z| z.abs() <= 3.0);
    Ok(CollapseStatistics {
        runs,
        seed,
        params: *params,
        counts,
        unresolved,
        frequencies,
        targets: x0,
        sigmas,
        z_scores,
        within_three_sigma,
        mean_steps: total_steps as f64 / rf,
        projection_fraction: if total_steps == 0 { 0.0 } else { total_proj as f64 / total_steps as f64 },
        max_simplex_defect: max_defect,
    })
}
