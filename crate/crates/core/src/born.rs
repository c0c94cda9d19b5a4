//! Candidate probability laws and the checks that single out `P = |a|²`.
//!
//! A law maps an outcome index `k` (0-based) and a squared amplitude
//! `x ∈ [0, 1]` to a probability. Laws only ever see `(k, x)`; nothing else
//! about the state is visible to them.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::{self, inner_product, StateVector};

pub const MAX_COUNTEREXAMPLE_EPSILON: f64 = 0.1;
pub const DEFAULT_FD_STEP: f64 = 1e-5;

type LawFn = Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum LawKind {
    /// `P = x`.
    Born,
    /// `P = α x + β x²`.
    AffineQuadratic { alpha: f64, beta: f64 },
    /// `P = x + ε sin(2πx)`; the perturbation is odd about `x = 1/2`.
    OddCounterexample { epsilon: f64 },
    /// `P_k = (λ/2) x + c(k)`; a single `c` entry applies to every `k`.
    GeneralAffine { lambda: f64, c: Vec<f64> },
    Custom { name: String, f: LawFn },
}

/// For which outcome counts the law claims `Σ_k P_k = 1` on the sphere.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SumClaim {
    AllN,
    Only(Vec<usize>),
    Unclaimed,
}

#[derive(Clone)]
pub struct ProbabilityLaw {
    kind: LawKind,
    sum_claim: SumClaim,
}

impl fmt::Debug for ProbabilityLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProbabilityLaw").field("id", &self.id()).field("sum_claim", &self.sum_claim).finish()
    }
}

impl ProbabilityLaw {
    pub fn born() -> Self {
        ProbabilityLaw { kind: LawKind::Born, sum_claim: SumClaim::AllN }
    }

    pub fn affine_quadratic(alpha: f64, beta: f64) -> Self {
        ProbabilityLaw { kind: LawKind::AffineQuadratic { alpha, beta }, sum_claim: SumClaim::Unclaimed }
    }

    pub fn general_affine(lambda: f64, c: Vec<f64>) -> Self {
        ProbabilityLaw { kind: LawKind::GeneralAffine { lambda, c }, sum_claim: SumClaim::Unclaimed }
    }

    pub fn custom(name: impl Into<String>, f: impl Fn(usize, f64) -> f64 + Send + Sync + 'static) -> Self {
        ProbabilityLaw { kind: LawKind::Custom { name: name.into(), f: Arc::new(f) }, sum_claim: SumClaim::Unclaimed }
    }

    pub fn kind(&self) -> &LawKind {
        &self.kind
    }

    pub fn sum_claim(&self) -> &SumClaim {
        &self.sum_claim
    }

    pub fn id(&self) -> String {
        match &self.kind {
            LawKind::Born => "born".into(),
            LawKind::AffineQuadratic { alpha, beta } => format!("affine_quadratic(alpha={alpha}, beta={beta})"),
            LawKind::OddCounterexample { epsilon } => format!("odd_counterexample(epsilon={epsilon})"),
            LawKind::GeneralAffine { lambda, c } => format!("general_affine(lambda={lambda}, c={c:?})"),
            LawKind::Custom { name, .. } => format!("custom({name})"),
        }
    }

    pub fn eval(&self, k: usize, x: f64) -> f64 {
        match &self.kind {
            LawKind::Born => x,
            LawKind::AffineQuadratic { alpha, beta } => alpha * x + beta * x * x,
            LawKind::OddCounterexample { epsilon } => x + epsilon * (2.0 * std::f64::consts::PI * x).sin(),
            LawKind::GeneralAffine { lambda, c } => 0.5 * lambda * x + affine_offset(c, k),
            LawKind::Custom { f, .. } => f(k, x),
        }
    }

    /// `ln P(k, x)` given `ln x`, usable where `x` itself underflows.
    pub fn ln_eval(&self, k: usize, ln_x: f64) -> f64 {
        match &self.kind {
            LawKind::Born => ln_x,
            LawKind::AffineQuadratic { alpha, beta } => {
                let mut terms = Vec::with_capacity(2);
                if *alpha > 0.0 {
                    terms.push(alpha.ln() + ln_x);
                }
                if *beta > 0.0 {
                    terms.push(beta.ln() + 2.0 * ln_x);
                }
                if *alpha < 0.0 || *beta < 0.0 {
                    return self.eval(k, ln_x.exp()).ln();
                }
                log_sum_exp(&terms)
            }
            LawKind::OddCounterexample { epsilon } => {
                if ln_x > -30.0 {
                    self.eval(k, ln_x.exp()).ln()
                } else {
                    // sin(2πx) = 2πx to double precision here
                    ln_x + (1.0 + 2.0 * std::f64::consts::PI * epsilon).ln()
                }
            }
            LawKind::GeneralAffine { lambda, c } => {
                let off = affine_offset(c, k);
                if *lambda >= 0.0 && off >= 0.0 {
                    let mut terms = Vec::with_capacity(2);
                    if *lambda > 0.0 {
                        terms.push((0.5 * lambda).ln() + ln_x);
                    }
                    if off > 0.0 {
                        terms.push(off.ln());
                    }
                    log_sum_exp(&terms)
                } else {
                    self.eval(k, ln_x.exp()).ln()
                }
            }
            LawKind::Custom { f, .. } => f(k, ln_x.exp()).ln(),
        }
    }

    /// Largest excursion of `P(k, x)` outside `[0, 1]` on a uniform grid of `x`, for `k < n`.
    pub fn range_violation(&self, n: usize, grid: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..n {
            for i in 0..=grid {
                let p = self.eval(k, i as f64 / grid as f64);
                worst = worst.max(-p).max(p - 1.0);
            }
        }
        worst.max(0.0)
    }
}

fn affine_offset(c: &[f64], k: usize) -> f64 {
    c.get(k).or_else(|| c.last()).copied().unwrap_or(0.0)
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// `P(x) = x + ε sin(2πx)`, satisfying the two-outcome sum constraint exactly.
pub fn counterexample_law(epsilon: f64) -> Result<ProbabilityLaw> {
    if !(0.0..=MAX_COUNTEREXAMPLE_EPSILON).contains(&epsilon) {
        return Err(invalid(format!("epsilon must lie in [0, {MAX_COUNTEREXAMPLE_EPSILON}], got {epsilon}")));
    }
    Ok(ProbabilityLaw { kind: LawKind::OddCounterexample { epsilon }, sum_claim: SumClaim::Only(vec![2]) })
}

/// Serializable law selection, as used in configs and on the command line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawSpec {
    Born,
    AffineQuadratic { alpha: f64, beta: f64 },
    OddCounterexample { epsilon: f64 },
    GeneralAffine { lambda: f64, c: Vec<f64> },
}

impl LawSpec {
    pub fn build(&self) -> Result<ProbabilityLaw> {
        Ok(match self {
            LawSpec::Born => ProbabilityLaw::born(),
            LawSpec::AffineQuadratic { alpha, beta } => ProbabilityLaw::affine_quadratic(*alpha, *beta),
            LawSpec::OddCounterexample { epsilon } => counterexample_law(*epsilon)?,
            LawSpec::GeneralAffine { lambda, c } => ProbabilityLaw::general_affine(*lambda, c.clone()),
        })
    }
}

/// Result of splitting `ψ` into its component along one detected state and the rest.
#[derive(Clone, Debug)]
pub struct Reduction {
    /// `|⟨target|ψ⟩|`.
    pub a1: f64,
    /// Unit phase of `⟨target|ψ⟩`, absorbed into the first basis vector.
    pub phase: Complex64,
    /// Normalized remainder orthogonal to `target`; `None` when degenerate.
    pub remainder: Option<StateVector>,
    pub degenerate: bool,
}

impl Reduction {
    pub fn a2(&self) -> f64 {
        (1.0 - self.a1 * self.a1).max(0.0).sqrt()
    }

    /// `a1 · phase · target + √(1−a1²) · remainder`.
    pub fn reconstruct(&self, target: &StateVector) -> Result<StateVector> {
        let first = target.scale(self.phase * self.a1);
        match &self.remainder {
            Some(r) => first.add_scaled(Complex64::new(self.a2(), 0.0), r),
            None => Ok(first),
        }
    }
}

const DEGENERATE_A1: f64 = 1.0 - 1e-12;

/// Rewrite `ψ = a1 |1⟩ + √(1−a1²) |2'⟩` with `|1⟩` the (phase-adjusted) target.
pub fn single_detector_reduction(psi: &StateVector, target: &StateVector) -> Result<Reduction> {
    if !psi.is_normalized(tensor::NORM_TOL) {
        return Err(Error::Unnormalized(psi.norm_sqr()));
    }
    if !target.is_normalized(tensor::NORM_TOL) {
        return Err(Error::Unnormalized(target.norm_sqr()));
    }
    let overlap = inner_product(target, psi)?;
    let a1 = overlap.norm().min(1.0);
    let phase = if a1 > 0.0 { overlap / a1 } else { Complex64::new(1.0, 0.0) };
    if a1 >= DEGENERATE_A1 {
        return Ok(Reduction { a1, phase, remainder: None, degenerate: true });
    }
    let rest = psi.add_scaled(-overlap, target)?;
    let remainder = rest.scale(Complex64::new(1.0 / (1.0 - a1 * a1).sqrt(), 0.0));
    Ok(Reduction { a1, phase, remainder: Some(remainder), degenerate: false })
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ConstraintReport {
    pub law: String,
    pub n: usize,
    pub samples: usize,
    /// `max |Σ_k P_k − 1|` over the sampled points.
    pub max_sum_violation: f64,
    /// Largest excursion of any `P_k` outside `[0, 1]`.
    pub max_range_violation: f64,
    pub worst_point: Vec<f64>,
}

/// `Σ_k P(k, a_k²) − 1` at a single amplitude point.
pub fn sum_violation(law: &ProbabilityLaw, a: &[f64]) -> f64 {
    a.iter().enumerate().map(|(k, x)| law.eval(k, x * x)).sum::<f64>() - 1.0
}

/// Sample the positive orthant of the real unit sphere and check the
/// sum-to-one and range constraints.
pub fn check_constraints(law: &ProbabilityLaw, n: usize, samples: usize, seed: u64) -> Result<ConstraintReport> {
    if n < 2 {
        return Err(invalid("constraint checks need n ≥ 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_sum: f64 = 0.0;
    let mut max_range: f64 = 0.0;
    let mut worst = vec![0.0; n];
    for _ in 0..samples {
        let a = tensor::random::positive_sphere_point(n, &mut rng);
        let v = sum_violation(law, &a).abs();
        if v >= max_sum {
            max_sum = v;
            worst = a.clone();
        }
        for (k, x) in a.iter().enumerate() {
            let p = law.eval(k, x * x);
            max_range = max_range.max(-p).max(p - 1.0);
        }
    }
    Ok(ConstraintReport {
        law: law.id(),
        n,
        samples,
        max_sum_violation: max_sum,
        max_range_violation: max_range.max(0.0),
        worst_point: worst,
    })
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct LagrangeReport {
    /// `(1/a_k) ∂P_k/∂a_k` by central differences; `None` for skipped components.
    pub values: Vec<Option<f64>>,
    /// Components too close to zero to difference (`a_k < 10·step`).
    pub skipped: Vec<usize>,
    /// `(j, k, value_j − value_k)` for every evaluated pair `j < k`.
    pub residuals: Vec<(usize, usize, f64)>,
    pub max_residual: f64,
}

pub fn lagrange_residual(law: &ProbabilityLaw, a: &[f64], fd_step: f64) -> Result<LagrangeReport> {
    if !(fd_step > 0.0) {
        return Err(invalid("finite-difference step must be positive"));
    }
    let mut skipped = Vec::new();
    let values: Vec<Option<f64>> = a
        .iter()
        .enumerate()
        .map(|(k, &ak)| {
            if ak < 10.0 * fd_step {
                skipped.push(k);
                return None;
            }
            let up = law.eval(k, (ak + fd_step).powi(2));
            let down = law.eval(k, (ak - fd_step).powi(2));
            Some((up - down) / (2.0 * fd_step) / ak)
        })
        .collect();
    let mut residuals = Vec::new();
    for j in 0..a.len() {
        for k in j + 1..a.len() {
            if let (Some(vj), Some(vk)) = (values[j], values[k]) {
                residuals.push((j, k, vj - vk));
            }
        }
    }
    let max_residual = residuals.iter().map(|r| r.2.abs()).fold(0.0, f64::max);
    Ok(LagrangeReport { values, skipped, residuals, max_residual })
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct CompositionEntry {
    pub k: usize,
    pub j: usize,
    /// Law applied to the composed system: `P(index(k,j), |a_k b_kj|²)`.
    pub joint: f64,
    /// `P(k, |a_k|²) · P(j, |b_kj|²)`.
    pub product: f64,
    pub violation: f64,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct CompositionReport {
    pub law: String,
    /// Amplitudes `a_k b_kj` of the composed system, in `(k, j)` order.
    pub composed: Vec<f64>,
    pub entries: Vec<CompositionEntry>,
    pub max_violation: f64,
}

fn require_normalized(v: &[f64], what: &str) -> Result<()> {
    let s: f64 = v.iter().map(|x| x * x).sum();
    if (s - 1.0).abs() > 1e-10 {
        return Err(invalid(format!("{what} is not normalized (Σ|·|² = {s})")));
    }
    Ok(())
}

/// Follow an `n`-outcome measurement by an auxiliary `m_k`-outcome measurement
/// conditioned on `k`, and compare the law applied to the composed system with
/// the product of marginal and conditional probabilities.
pub fn compose_auxiliary(law: &ProbabilityLaw, a: &[f64], b: &[Vec<f64>]) -> Result<CompositionReport> {
    require_normalized(a, "a")?;
    if b.len() != a.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    for (k, bk) in b.iter().enumerate() {
        if bk.is_empty() {
            return Err(invalid(format!("b({k}) is empty")));
        }
        require_normalized(bk, &format!("b({k})"))?;
    }
    let mut composed = Vec::new();
    let mut entries = Vec::new();
    let mut index = 0;
    for (k, (&ak, bk)) in a.iter().zip(b).enumerate() {
        let pk = law.eval(k, ak * ak);
        for (j, &bkj) in bk.iter().enumerate() {
            let amp = ak * bkj;
            composed.push(amp);
            let joint = law.eval(index, amp * amp);
            let product = pk * law.eval(j, bkj * bkj);
            entries.push(CompositionEntry { k, j, joint, product, violation: (joint - product).abs() });
            index += 1;
        }
    }
    let max_violation = entries.iter().map(|e| e.violation).fold(0.0, f64::max);
    Ok(CompositionReport { law: law.id(), composed, entries, max_violation })
}

/// One auxiliary-experiment probe: base amplitudes and per-outcome auxiliary amplitudes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxProbe {
    pub a: Vec<f64>,
    pub b: Vec<Vec<f64>>,
}

impl AuxProbe {
    /// A random probe with `n` base outcomes and `m` auxiliary outcomes each.
    pub fn random<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Self {
        AuxProbe {
            a: tensor::random::positive_sphere_point(n, rng),
            b: (0..n).map(|_| tensor::random::positive_sphere_point(m, rng)).collect(),
        }
    }
}

/// Linear conditions on the affine-family parameters.
///
/// Unknowns are `[ρ, μ, c_1..c_n]` where `P_k(x) = μ x + c_k` and `ρ` is the
/// ratio of the composed-system slope to the conditional slope. Each `(k, j)`
/// of each probe contributes the `∂/∂|b_kj|²` identity `ρ A_k − μ A_k − c_k = 0`
/// with `A_k = |a_k|²`; each probe adds the sum rule `μ Σ A_k + Σ c_k = 1`.
#[derive(Clone, Debug)]
pub struct ConditionSystem {
    pub n: usize,
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct DerivedLaw {
    pub lambda: f64,
    pub c: Vec<f64>,
    /// Ratio of the composed and conditional slopes.
    pub slope_ratio: f64,
    pub residual_norm: f64,
}

pub fn condition_system(probes: &[AuxProbe]) -> Result<ConditionSystem> {
    let n = probes.first().map(|p| p.a.len()).ok_or_else(|| invalid("no probes"))?;
    if n == 0 {
        return Err(invalid("probes need at least one outcome"));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs = Vec::new();
    for p in probes {
        if p.a.len() != n || p.b.len() != n {
            return Err(invalid("all probes must share the same outcome count"));
        }
        require_normalized(&p.a, "probe a")?;
        for bk in &p.b {
            if bk.is_empty() {
                return Err(invalid("probe b(k) is empty"));
            }
            require_normalized(bk, "probe b(k)")?;
        }
        for (k, (ak, bk)) in p.a.iter().zip(&p.b).enumerate() {
            let big_a = ak * ak;
            for _ in bk {
                let mut row = vec![0.0; n + 2];
                row[0] = big_a;
                row[1] = -big_a;
                row[2 + k] = -1.0;
                rows.push(row);
                rhs.push(0.0);
            }
        }
        let mut row = vec![1.0; n + 2];
        row[0] = 0.0;
        row[1] = p.a.iter().map(|x| x * x).sum();
        rows.push(row);
        rhs.push(1.0);
    }
    for k in 0..n {
        let first = probes[0].a[k].powi(2);
        if probes.iter().all(|p| (p.a[k].powi(2) - first).abs() < 1e-9) {
            return Err(Error::Degenerate(format!(
                "outcome {k} takes a single |a|² value across probes; the slope and offset cannot be separated"
            )));
        }
    }
    let matrix = DMatrix::from_fn(rows.len(), n + 2, |i, j| rows[i][j]);
    Ok(ConditionSystem { n, matrix, rhs: DVector::from_vec(rhs) })
}

impl ConditionSystem {
    /// Add independent Gaussian noise of scale `sigma` to every nonzero coefficient.
    pub fn perturbed(&self, sigma: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let matrix = self.matrix.map(|x| if x != 0.0 { x + sigma * rng.sample::<f64, _>(StandardNormal) } else { x });
        ConditionSystem { n: self.n, matrix, rhs: self.rhs.clone() }
    }

    /// Least-squares solution; rejects rank-deficient systems.
    pub fn solve(&self) -> Result<DerivedLaw> {
        let svd = self.matrix.clone().svd(true, true);
        let max_sv = svd.singular_values.max();
        let min_sv = svd.singular_values.min();
        if min_sv <= 1e-9 * max_sv {
            return Err(Error::Degenerate(format!("condition matrix is rank deficient (σ_min/σ_max = {:e})", min_sv / max_sv)));
        }
        let x = svd.solve(&self.rhs, 0.0).map_err(|e| Error::Degenerate(e.to_string()))?;
        let residual_norm = (&self.matrix * &x - &self.rhs).norm();
        Ok(DerivedLaw {
            lambda: 2.0 * x[1],
            c: x.iter().skip(2).copied().collect(),
            slope_ratio: x[0],
            residual_norm,
        })
    }
}

/// Solve for the affine law consistent with every auxiliary composition.
pub fn derive_born(probes: &[AuxProbe]) -> Result<DerivedLaw> {
    condition_system(probes)?.solve()
}
